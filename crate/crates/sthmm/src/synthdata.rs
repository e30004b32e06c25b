//! Synthetic scenario generation.
//!
//! The four benchmark scenarios share the same recipe: draw a neighbourhood
//! graph (a fixed 3×3 lattice for A, a fresh 40-node/20-edge uniform random
//! graph per replicate for B-D), run a long Gibbs burn under the true θ to
//! get an approximate draw of the latent field, then emit Gaussian
//! observations around the per-state means. Everything is deterministic in
//! (seed, replicate): replicate r uses the stream seeded with seed ⊕ r.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::emission::{Dataset, EmissionParams, GroundTruth};
use crate::graph::{GraphError, NeighborhoodSystem};
use crate::latent::{gibbs_sweep, LatentError, LatentField, LatentParams, ParsimonyFlags};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("unknown scenario `{0}` (expected A, B, C or D)")]
    UnknownScenario(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Latent(#[from] LatentError),
    #[error("emission failure: {0}")]
    Emission(#[from] crate::emission::EmissionError),
}

/// How the neighbourhood system of a scenario is produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphRecipe {
    /// A z×z rook lattice, shared by every replicate.
    Grid { z: usize },
    /// A uniform G(n, M) draw, fresh for every replicate.
    ErdosRenyi { n: usize, m: usize },
}

impl GraphRecipe {
    fn build(&self, seed: u64) -> Result<NeighborhoodSystem, GraphError> {
        match *self {
            GraphRecipe::Grid { z } => NeighborhoodSystem::grid(z),
            GraphRecipe::ErdosRenyi { n, m } => NeighborhoodSystem::erdos_renyi(n, m, seed),
        }
    }
}

/// A full generating recipe: dimensions, graph, truth and replication plan.
#[derive(Debug, Clone)]
pub struct ScenarioSpec {
    pub name: String,
    pub n_sites: usize,
    pub t_len: usize,
    pub k: usize,
    pub d: usize,
    pub graph: GraphRecipe,
    pub theta: LatentParams,
    pub emission: EmissionParams,
    pub replicates: usize,
    pub seed: u64,
    pub burn_sweeps: usize,
}

fn offdiag(k: usize, entries: &[(usize, usize, f64)]) -> Vec<Vec<f64>> {
    let mut m = vec![vec![0.0; k]; k];
    for &(u, v, x) in entries {
        m[u][v] = x;
    }
    m
}

fn constant_offdiag(k: usize, x: f64) -> Vec<Vec<f64>> {
    let mut m = vec![vec![0.0; k]; k];
    for (u, row) in m.iter_mut().enumerate() {
        for (v, slot) in row.iter_mut().enumerate() {
            if u != v {
                *slot = x;
            }
        }
    }
    m
}

fn identity_covs(k: usize, d: usize) -> Vec<DMatrix<f64>> {
    (0..k).map(|_| DMatrix::identity(d, d)).collect()
}

/// The named presets. All carry the reference parameter values:
///
/// * A: 3×3 grid, T=5, K=2, β₁=β*₁=2, γ=γ*=[[0,−1],[1,0]], δ=[[0,−1],[−1,0]],
///   μ₁=(−3,−3), μ₂=(3,3), Σ=I;
/// * B: 40 sites / 20 random edges, T=5, K=2, interactions doubled to ±2
///   and δ=−2 off-diagonal;
/// * C: as B with T=10 and δ back to −1 off-diagonal;
/// * D: 40 sites / 20 random edges, T=5, K=3, all β=0, γ=γ*=−2 and δ=−1
///   off-diagonal, μ₁=(−5,−5), μ₂=(0,5), μ₃=(5,−5), Σ=I.
pub fn scenario_preset(name: &str) -> Result<ScenarioSpec, SynthError> {
    let flags = ParsimonyFlags::default();
    let spec = match name.to_ascii_uppercase().as_str() {
        "A" => {
            let k = 2;
            let theta = LatentParams::new(
                k,
                vec![2.0, 0.0],
                vec![2.0, 0.0],
                offdiag(k, &[(0, 1, -1.0), (1, 0, 1.0)]),
                offdiag(k, &[(0, 1, -1.0), (1, 0, 1.0)]),
                offdiag(k, &[(0, 1, -1.0), (1, 0, -1.0)]),
                flags,
            )?;
            let emission = EmissionParams::new(
                vec![DVector::from_element(2, -3.0), DVector::from_element(2, 3.0)],
                identity_covs(k, 2),
            )?;
            ScenarioSpec {
                name: "A".to_string(),
                n_sites: 9,
                t_len: 5,
                k,
                d: 2,
                graph: GraphRecipe::Grid { z: 3 },
                theta,
                emission,
                replicates: 50,
                seed: 0,
                burn_sweeps: 500,
            }
        }
        "B" => {
            let k = 2;
            let theta = LatentParams::new(
                k,
                vec![2.0, 0.0],
                vec![2.0, 0.0],
                offdiag(k, &[(0, 1, -2.0), (1, 0, 2.0)]),
                offdiag(k, &[(0, 1, -2.0), (1, 0, 2.0)]),
                offdiag(k, &[(0, 1, -2.0), (1, 0, -2.0)]),
                flags,
            )?;
            let emission = EmissionParams::new(
                vec![DVector::from_element(2, -3.0), DVector::from_element(2, 3.0)],
                identity_covs(k, 2),
            )?;
            ScenarioSpec {
                name: "B".to_string(),
                n_sites: 40,
                t_len: 5,
                k,
                d: 2,
                graph: GraphRecipe::ErdosRenyi { n: 40, m: 20 },
                theta,
                emission,
                replicates: 50,
                seed: 0,
                burn_sweeps: 500,
            }
        }
        "C" => {
            let mut spec = scenario_preset("B")?;
            spec.name = "C".to_string();
            spec.t_len = 10;
            let k = 2;
            spec.theta = LatentParams::new(
                k,
                vec![2.0, 0.0],
                vec![2.0, 0.0],
                offdiag(k, &[(0, 1, -2.0), (1, 0, 2.0)]),
                offdiag(k, &[(0, 1, -2.0), (1, 0, 2.0)]),
                offdiag(k, &[(0, 1, -1.0), (1, 0, -1.0)]),
                flags,
            )?;
            spec
        }
        "D" => {
            let k = 3;
            let theta = LatentParams::new(
                k,
                vec![0.0; 3],
                vec![0.0; 3],
                constant_offdiag(k, -2.0),
                constant_offdiag(k, -2.0),
                constant_offdiag(k, -1.0),
                flags,
            )?;
            let emission = EmissionParams::new(
                vec![
                    DVector::from_vec(vec![-5.0, -5.0]),
                    DVector::from_vec(vec![0.0, 5.0]),
                    DVector::from_vec(vec![5.0, -5.0]),
                ],
                identity_covs(k, 2),
            )?;
            ScenarioSpec {
                name: "D".to_string(),
                n_sites: 40,
                t_len: 5,
                k,
                d: 2,
                graph: GraphRecipe::ErdosRenyi { n: 40, m: 20 },
                theta,
                emission,
                replicates: 50,
                seed: 0,
                burn_sweeps: 500,
            }
        }
        other => return Err(SynthError::UnknownScenario(other.to_string())),
    };
    Ok(spec)
}

/// Documented stream-split rule: replicate r of a run seeded with s draws
/// everything from the stream seeded with s ⊕ r.
pub fn replicate_seed(master: u64, replicate: u64) -> u64 {
    master ^ replicate
}

/// Approximate draw from p(u | θ): a uniform random field advanced by
/// `burn_sweeps` systematic Gibbs sweeps (no emission terms).
pub fn sample_latent_field<R: Rng + ?Sized>(
    theta: &LatentParams,
    graph: &NeighborhoodSystem,
    t_len: usize,
    burn_sweeps: usize,
    rng: &mut R,
) -> Result<LatentField, LatentError> {
    let mut field = LatentField::uniform_random(graph.n_sites(), t_len, theta.k(), rng);
    for _ in 0..burn_sweeps {
        gibbs_sweep(&mut field, theta, graph, rng)?;
    }
    Ok(field)
}

/// Generates replicate `replicate_index` of a scenario: graph, latent field
/// and observations, with the generating truth recorded in the dataset.
pub fn sample_dataset(spec: &ScenarioSpec, replicate_index: u64) -> Result<Dataset, SynthError> {
    let stream = replicate_seed(spec.seed, replicate_index);
    let mut rng = ChaCha8Rng::seed_from_u64(stream);
    let graph = spec.graph.build(stream)?;
    let field = sample_latent_field(&spec.theta, &graph, spec.t_len, spec.burn_sweeps, &mut rng)?;
    let chols: Vec<Cholesky<f64, nalgebra::Dyn>> = (0..spec.k)
        .map(|u| Cholesky::new(spec.emission.cov(u).clone()).expect("truth covariance is SPD"))
        .collect();
    let mut y = Vec::with_capacity(spec.n_sites * spec.t_len);
    for i in 0..spec.n_sites {
        for t in 0..spec.t_len {
            let u = field.get(i, t);
            let z = DVector::from_fn(spec.d, |_, _| rng.sample(StandardNormal));
            y.push(spec.emission.mean(u) + chols[u].l() * z);
        }
    }
    let truth = GroundTruth {
        theta: spec.theta.clone(),
        emission: spec.emission.clone(),
        field,
    };
    Ok(Dataset::new(y, spec.n_sites, spec.t_len, graph, Some(truth))?)
}
