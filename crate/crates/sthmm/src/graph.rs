//! Spatial neighbourhood systems.
//!
//! The latent field shares one undirected graph over sites for every time
//! point. Edges are kept in canonical ordered-pair form `(i, j)` with
//! `i < j`, which is also the summation order of the spatial interaction
//! terms in the potential; enumerating each edge exactly once in that
//! orientation is what keeps the interaction matrices identifiable.
//!
//! Sites are 0-based in the API and 1-based in the edge-list text format.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("grid dimension must be at least 1")]
    InvalidDimension,
    #[error("requested {requested} edges but {n} nodes admit at most {max}")]
    InvalidEdgeCount {
        requested: usize,
        n: usize,
        max: usize,
    },
    #[error("site index {0} out of range for {1} sites")]
    SiteOutOfRange(usize, usize),
    #[error("self-loop at site {0}")]
    SelfLoop(usize),
    #[error("edge list parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Undirected graph over sites, fixed in time.
///
/// Stores both the canonical edge set (each edge once, smaller endpoint
/// first) and per-site sorted neighbour lists; the two views always describe
/// the same graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborhoodSystem {
    n_sites: usize,
    edges: BTreeSet<(usize, usize)>,
    adjacency: Vec<Vec<usize>>,
}

impl NeighborhoodSystem {
    /// Builds a graph from 0-based endpoint pairs. Orientation and
    /// duplicates are normalized away; self-loops and out-of-range indices
    /// are rejected.
    pub fn from_edges<I>(n_sites: usize, pairs: I) -> Result<Self, GraphError>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        let mut edges = BTreeSet::new();
        for (a, b) in pairs {
            if a == b {
                return Err(GraphError::SelfLoop(a));
            }
            for &s in &[a, b] {
                if s >= n_sites {
                    return Err(GraphError::SiteOutOfRange(s, n_sites));
                }
            }
            edges.insert((a.min(b), a.max(b)));
        }
        let mut adjacency = vec![Vec::new(); n_sites];
        for &(i, j) in &edges {
            adjacency[i].push(j);
            adjacency[j].push(i);
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }
        Ok(Self {
            n_sites,
            edges,
            adjacency,
        })
    }

    /// The z×z rook-adjacency lattice, sites numbered row-major.
    ///
    /// Has z² sites and 2z(z−1) edges.
    pub fn grid(z: usize) -> Result<Self, GraphError> {
        if z == 0 {
            return Err(GraphError::InvalidDimension);
        }
        let mut pairs = Vec::with_capacity(2 * z * (z - 1));
        for row in 0..z {
            for col in 0..z {
                let s = row * z + col;
                if col + 1 < z {
                    pairs.push((s, s + 1));
                }
                if row + 1 < z {
                    pairs.push((s, s + z));
                }
            }
        }
        Self::from_edges(z * z, pairs)
    }

    /// A graph drawn uniformly from all simple graphs with `n` nodes and
    /// exactly `m` edges (the G(n, M) model). Deterministic given `seed`.
    pub fn erdos_renyi(n: usize, m: usize, seed: u64) -> Result<Self, GraphError> {
        let max = n * n.saturating_sub(1) / 2;
        if m > max {
            return Err(GraphError::InvalidEdgeCount {
                requested: m,
                n,
                max,
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Floyd's algorithm: uniform m-subset of the pair indices 0..max.
        let mut chosen = BTreeSet::new();
        for j in (max - m)..max {
            let t = rng.random_range(0..=j);
            if !chosen.insert(t) {
                chosen.insert(j);
            }
        }
        let pairs = chosen.into_iter().map(|idx| decode_pair(n, idx));
        Self::from_edges(n, pairs)
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    /// Sorted neighbours of site `i`.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adjacency[i]
    }

    /// Every edge exactly once as `(i, j)` with `i < j`, lexicographically
    /// sorted. This is the summation range of the spatial potential terms.
    pub fn ordered_pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    /// Writes the edge-list text format: a header line `N <n>` followed by
    /// one `i j` line per edge, 1-based, in ordered-pair order.
    pub fn save_edge_list<W: Write>(&self, sink: &mut W) -> Result<(), GraphError> {
        writeln!(sink, "N {}", self.n_sites)?;
        for (i, j) in self.ordered_pairs() {
            writeln!(sink, "{} {}", i + 1, j + 1)?;
        }
        Ok(())
    }

    /// Parses the edge-list text format written by [`save_edge_list`].
    ///
    /// Rejects self-loops, duplicate edges and out-of-range indices with the
    /// offending line number.
    ///
    /// [`save_edge_list`]: NeighborhoodSystem::save_edge_list
    pub fn load_edge_list<R: BufRead>(source: R) -> Result<Self, GraphError> {
        let parse = |line_no: usize, msg: String| GraphError::Parse { line: line_no, msg };
        let mut n_sites = None;
        let mut seen = BTreeSet::new();
        let mut pairs = Vec::new();
        for (idx, line) in source.lines().enumerate() {
            let line_no = idx + 1;
            let line = line?;
            let text = line.trim();
            if text.is_empty() {
                continue;
            }
            if n_sites.is_none() {
                let rest = text
                    .strip_prefix('N')
                    .ok_or_else(|| parse(line_no, format!("expected header `N <n>`, got `{text}`")))?;
                let n: usize = rest
                    .trim()
                    .parse()
                    .map_err(|_| parse(line_no, format!("invalid site count `{}`", rest.trim())))?;
                n_sites = Some(n);
                continue;
            }
            let n = n_sites.unwrap();
            let mut fields = text.split_whitespace();
            let (a, b) = match (fields.next(), fields.next(), fields.next()) {
                (Some(a), Some(b), None) => (a, b),
                _ => return Err(parse(line_no, format!("expected `i j`, got `{text}`"))),
            };
            let a: usize = a
                .parse()
                .map_err(|_| parse(line_no, format!("invalid site index `{a}`")))?;
            let b: usize = b
                .parse()
                .map_err(|_| parse(line_no, format!("invalid site index `{b}`")))?;
            if a == 0 || b == 0 || a > n || b > n {
                return Err(parse(
                    line_no,
                    format!("site index out of range 1..={n} in `{text}`"),
                ));
            }
            if a == b {
                return Err(parse(line_no, format!("self-loop at site {a}")));
            }
            let key = (a.min(b), a.max(b));
            if !seen.insert(key) {
                return Err(parse(
                    line_no,
                    format!("duplicate edge {}-{}", key.0, key.1),
                ));
            }
            pairs.push((a - 1, b - 1));
        }
        let n = n_sites.ok_or_else(|| parse(1, "missing header `N <n>`".to_string()))?;
        Self::from_edges(n, pairs)
    }
}

/// Maps a pair index in 0..n(n−1)/2 to the lexicographically ordered pair
/// (i, j), i < j.
fn decode_pair(n: usize, index: usize) -> (usize, usize) {
    let mut idx = index;
    for i in 0..n {
        let row = n - 1 - i;
        if idx < row {
            return (i, i + 1 + idx);
        }
        idx -= row;
    }
    unreachable!("pair index out of range");
}
