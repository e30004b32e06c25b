//! File formats: observation/field/chain CSVs, the truth JSON and dataset
//! bundle directories.
//!
//! All text formats are 1-based on sites, times and state labels. Floats are
//! written with Rust's shortest round-trip formatting, so identical values
//! always serialize to identical bytes; reruns of a deterministic command
//! therefore produce byte-identical files.
//!
//! A dataset bundle is a directory holding `observations.csv`
//! (`site,time,y1..yd`), `edges.txt` (the graph module's edge-list format)
//! and, for synthetic data, `truth.json` with the generating θ, emission
//! parameters and latent field.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diagnostics::DiagnosticsReport;
use crate::emission::{Dataset, EmissionParams, GroundTruth};
use crate::graph::{GraphError, NeighborhoodSystem};
use crate::latent::{LatentField, LatentParams, ParsimonyFlags};
use crate::samplers::ChainOutput;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("{file} line {line}: {msg}")]
    Parse {
        file: String,
        line: usize,
        msg: String,
    },
    #[error("json error in {file}: {msg}")]
    Json { file: String, msg: String },
    #[error("inconsistent data: {0}")]
    Inconsistent(String),
}

fn parse_err(file: &str, line: usize, msg: impl Into<String>) -> IoError {
    IoError::Parse {
        file: file.to_string(),
        line,
        msg: msg.into(),
    }
}

/// Writes `site,time,y1..yd` rows, site-major.
pub fn write_observations_csv<W: Write>(dataset: &Dataset, sink: &mut W) -> Result<(), IoError> {
    let d = dataset.d();
    write!(sink, "site,time")?;
    for c in 0..d {
        write!(sink, ",y{}", c + 1)?;
    }
    writeln!(sink)?;
    for i in 0..dataset.n_sites() {
        for t in 0..dataset.t_len() {
            write!(sink, "{},{}", i + 1, t + 1)?;
            for c in 0..d {
                write!(sink, ",{}", dataset.y(i, t)[c])?;
            }
            writeln!(sink)?;
        }
    }
    Ok(())
}

/// Parsed observation panel: the site-major values plus (n_sites, t_len, d).
pub type ObservationPanel = (Vec<DVector<f64>>, usize, usize, usize);

/// Parses an observation CSV. Rows may come in any order but must cover
/// every (site, time) pair of the implied panel exactly once.
pub fn read_observations_csv<R: BufRead>(
    source: R,
    file: &str,
) -> Result<ObservationPanel, IoError> {
    let mut lines = source.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(file, 1, "empty file"))?;
    let header = header?;
    let cols: Vec<&str> = header.trim().split(',').collect();
    if cols.len() < 3 || cols[0] != "site" || cols[1] != "time" {
        return Err(parse_err(
            file,
            1,
            format!("expected header `site,time,y1..`, got `{header}`"),
        ));
    }
    let d = cols.len() - 2;
    let mut entries: Vec<(usize, usize, Vec<f64>)> = Vec::new();
    let mut max_site = 0usize;
    let mut max_time = 0usize;
    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line?;
        let text = line.trim();
        if text.is_empty() {
            continue;
        }
        let fields: Vec<&str> = text.split(',').collect();
        if fields.len() != d + 2 {
            return Err(parse_err(
                file,
                line_no,
                format!("expected {} fields, got {}", d + 2, fields.len()),
            ));
        }
        let site: usize = fields[0]
            .parse()
            .map_err(|_| parse_err(file, line_no, format!("bad site `{}`", fields[0])))?;
        let time: usize = fields[1]
            .parse()
            .map_err(|_| parse_err(file, line_no, format!("bad time `{}`", fields[1])))?;
        if site == 0 || time == 0 {
            return Err(parse_err(file, line_no, "site and time are 1-based"));
        }
        let mut y = Vec::with_capacity(d);
        for f in &fields[2..] {
            let v: f64 = f
                .parse()
                .map_err(|_| parse_err(file, line_no, format!("bad value `{f}`")))?;
            y.push(v);
        }
        max_site = max_site.max(site);
        max_time = max_time.max(time);
        entries.push((site - 1, time - 1, y));
    }
    if entries.is_empty() {
        return Err(parse_err(file, 1, "no observation rows"));
    }
    let mut grid: Vec<Option<DVector<f64>>> = vec![None; max_site * max_time];
    for (site, time, y) in entries {
        let slot = &mut grid[site * max_time + time];
        if slot.is_some() {
            return Err(IoError::Inconsistent(format!(
                "duplicate observation for site {} time {}",
                site + 1,
                time + 1
            )));
        }
        *slot = Some(DVector::from_vec(y));
    }
    let mut y = Vec::with_capacity(grid.len());
    for (idx, slot) in grid.into_iter().enumerate() {
        let v = slot.ok_or_else(|| {
            IoError::Inconsistent(format!(
                "missing observation for site {} time {}",
                idx / max_time + 1,
                idx % max_time + 1
            ))
        })?;
        y.push(v);
    }
    Ok((y, max_site, max_time, d))
}

/// Writes `site,time,state` rows (1-based labels), site-major.
pub fn write_field_csv<W: Write>(field: &LatentField, sink: &mut W) -> Result<(), IoError> {
    writeln!(sink, "site,time,state")?;
    for i in 0..field.n_sites() {
        for t in 0..field.t_len() {
            writeln!(sink, "{},{},{}", i + 1, t + 1, field.get(i, t) + 1)?;
        }
    }
    Ok(())
}

/// Parses a `site,time,state` CSV; the state count is the largest label
/// seen.
pub fn read_field_csv<R: BufRead>(source: R, file: &str) -> Result<LatentField, IoError> {
    let mut lines = source.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(file, 1, "empty file"))?;
    let header = header?;
    if header.trim() != "site,time,state" {
        return Err(parse_err(file, 1, "expected header `site,time,state`"));
    }
    let mut entries = Vec::new();
    let (mut max_site, mut max_time, mut max_state) = (0usize, 0usize, 0usize);
    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line?;
        let text = line.trim();
        if text.is_empty() {
            continue;
        }
        let fields: Vec<&str> = text.split(',').collect();
        if fields.len() != 3 {
            return Err(parse_err(file, line_no, "expected `site,time,state`"));
        }
        let nums: Vec<usize> = fields
            .iter()
            .map(|f| f.parse::<usize>())
            .collect::<Result<_, _>>()
            .map_err(|_| parse_err(file, line_no, format!("bad integer in `{text}`")))?;
        if nums.contains(&0) {
            return Err(parse_err(file, line_no, "site, time and state are 1-based"));
        }
        max_site = max_site.max(nums[0]);
        max_time = max_time.max(nums[1]);
        max_state = max_state.max(nums[2]);
        entries.push((nums[0] - 1, nums[1] - 1, nums[2] - 1));
    }
    let mut values = vec![u8::MAX; max_site * max_time];
    for (site, time, state) in entries {
        values[site * max_time + time] = state as u8;
    }
    if values.contains(&u8::MAX) {
        return Err(IoError::Inconsistent(
            "field file does not cover every (site, time) pair".to_string(),
        ));
    }
    LatentField::from_values(max_site, max_time, max_state, values)
        .map_err(|e| IoError::Inconsistent(e.to_string()))
}

/// Writes the chain draws: one column per scalar parameter, one row per
/// stored draw (the row number is the draw index).
pub fn write_chain_csv<W: Write>(output: &ChainOutput, sink: &mut W) -> Result<(), IoError> {
    writeln!(sink, "{}", output.param_names.join(","))?;
    for row in &output.draws {
        let mut first = true;
        for v in row {
            if !first {
                write!(sink, ",")?;
            }
            write!(sink, "{v}")?;
            first = false;
        }
        writeln!(sink)?;
    }
    Ok(())
}

/// Writes the stored latent fields as `draw,site,time,state` rows keyed by
/// draw index.
pub fn write_field_draws_csv<W: Write>(output: &ChainOutput, sink: &mut W) -> Result<(), IoError> {
    writeln!(sink, "draw,site,time,state")?;
    for (draw, field) in &output.field_draws {
        for i in 0..field.n_sites() {
            for t in 0..field.t_len() {
                writeln!(sink, "{},{},{},{}", draw, i + 1, t + 1, field.get(i, t) + 1)?;
            }
        }
    }
    Ok(())
}

/// Writes per-parameter acceptance statistics.
pub fn write_acceptance_csv<W: Write>(output: &ChainOutput, sink: &mut W) -> Result<(), IoError> {
    writeln!(sink, "parameter,proposed,accepted,rate")?;
    for acc in &output.acceptance {
        writeln!(
            sink,
            "{},{},{},{}",
            acc.name,
            acc.proposed,
            acc.accepted,
            acc.rate()
        )?;
    }
    Ok(())
}

/// Writes the per-parameter diagnostics table.
pub fn write_report_csv<W: Write>(report: &DiagnosticsReport, sink: &mut W) -> Result<(), IoError> {
    writeln!(
        sink,
        "parameter,posterior_mean,mcse,geweke_z,geweke_pass,truth,abs_error"
    )?;
    for p in &report.parameters {
        let truth = p.truth.map(|v| v.to_string()).unwrap_or_default();
        let err = p.abs_error.map(|v| v.to_string()).unwrap_or_default();
        writeln!(
            sink,
            "{},{},{},{},{},{},{}",
            p.name, p.posterior_mean, p.mcse, p.geweke_z, p.geweke_pass, truth, err
        )?;
    }
    Ok(())
}

/// Serializable form of θ.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ThetaRecord {
    pub beta: Vec<f64>,
    pub beta_star: Vec<f64>,
    pub gamma: Vec<Vec<f64>>,
    pub gamma_star: Vec<Vec<f64>>,
    pub delta: Vec<Vec<f64>>,
    #[serde(default)]
    pub symmetric_interactions: bool,
    #[serde(default)]
    pub shared_time: bool,
}

impl From<&LatentParams> for ThetaRecord {
    fn from(theta: &LatentParams) -> Self {
        Self {
            beta: theta.beta_vec().to_vec(),
            beta_star: theta.beta_star_vec().to_vec(),
            gamma: theta.gamma_matrix(),
            gamma_star: theta.gamma_star_matrix(),
            delta: theta.delta_matrix(),
            symmetric_interactions: theta.flags().symmetric_interactions,
            shared_time: theta.flags().shared_time,
        }
    }
}

impl ThetaRecord {
    pub fn into_params(self) -> Result<LatentParams, IoError> {
        LatentParams::new(
            self.beta.len(),
            self.beta,
            self.beta_star,
            self.gamma,
            self.gamma_star,
            self.delta,
            ParsimonyFlags {
                symmetric_interactions: self.symmetric_interactions,
                shared_time: self.shared_time,
            },
        )
        .map_err(|e| IoError::Inconsistent(e.to_string()))
    }
}

/// Serializable form of the emission parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmissionRecord {
    pub means: Vec<Vec<f64>>,
    pub covs: Vec<Vec<Vec<f64>>>,
}

impl From<&EmissionParams> for EmissionRecord {
    fn from(p: &EmissionParams) -> Self {
        let d = p.d();
        Self {
            means: (0..p.k()).map(|u| p.mean(u).iter().copied().collect()).collect(),
            covs: (0..p.k())
                .map(|u| {
                    (0..d)
                        .map(|h| (0..d).map(|l| p.cov(u)[(h, l)]).collect())
                        .collect()
                })
                .collect(),
        }
    }
}

impl EmissionRecord {
    pub fn into_params(self) -> Result<EmissionParams, IoError> {
        let means = self.means.into_iter().map(DVector::from_vec).collect();
        let covs = self
            .covs
            .into_iter()
            .map(|rows| {
                let d = rows.len();
                DMatrix::from_fn(d, d, |h, l| rows[h][l])
            })
            .collect();
        EmissionParams::new(means, covs).map_err(|e| IoError::Inconsistent(e.to_string()))
    }
}

/// `truth.json` schema.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TruthRecord {
    pub k: usize,
    pub d: usize,
    pub theta: ThetaRecord,
    pub emission: EmissionRecord,
    /// 1-based labels indexed `[site][time]`.
    pub field: Vec<Vec<usize>>,
}

impl From<&GroundTruth> for TruthRecord {
    fn from(truth: &GroundTruth) -> Self {
        let f = &truth.field;
        Self {
            k: truth.theta.k(),
            d: truth.emission.d(),
            theta: ThetaRecord::from(&truth.theta),
            emission: EmissionRecord::from(&truth.emission),
            field: (0..f.n_sites())
                .map(|i| (0..f.t_len()).map(|t| f.get(i, t) + 1).collect())
                .collect(),
        }
    }
}

impl TruthRecord {
    pub fn into_truth(self) -> Result<GroundTruth, IoError> {
        let n_sites = self.field.len();
        let t_len = self.field.first().map_or(0, |row| row.len());
        let mut values = Vec::with_capacity(n_sites * t_len);
        for row in &self.field {
            if row.len() != t_len {
                return Err(IoError::Inconsistent("ragged field in truth.json".to_string()));
            }
            for &s in row {
                if s == 0 || s > self.k {
                    return Err(IoError::Inconsistent(format!(
                        "field label {s} outside 1..={}",
                        self.k
                    )));
                }
                values.push((s - 1) as u8);
            }
        }
        let field = LatentField::from_values(n_sites, t_len, self.k, values)
            .map_err(|e| IoError::Inconsistent(e.to_string()))?;
        Ok(GroundTruth {
            theta: self.theta.into_params()?,
            emission: self.emission.into_params()?,
            field,
        })
    }
}

/// Writes a dataset bundle directory: `observations.csv`, `edges.txt` and,
/// when the dataset carries truth, `truth.json`.
pub fn write_dataset_bundle(dataset: &Dataset, dir: &Path) -> Result<(), IoError> {
    fs::create_dir_all(dir)?;
    let mut obs = fs::File::create(dir.join("observations.csv"))?;
    write_observations_csv(dataset, &mut obs)?;
    let mut edges = fs::File::create(dir.join("edges.txt"))?;
    dataset.graph.save_edge_list(&mut edges)?;
    if let Some(truth) = &dataset.truth {
        let record = TruthRecord::from(truth);
        let json = serde_json::to_string_pretty(&record).map_err(|e| IoError::Json {
            file: "truth.json".to_string(),
            msg: e.to_string(),
        })?;
        fs::write(dir.join("truth.json"), json)?;
    }
    Ok(())
}

/// Loads a dataset bundle written by [`write_dataset_bundle`].
pub fn read_dataset_bundle(dir: &Path) -> Result<Dataset, IoError> {
    let obs_path = dir.join("observations.csv");
    let edge_path = dir.join("edges.txt");
    read_dataset_files(&obs_path, &edge_path, Some(&dir.join("truth.json")))
}

/// Loads a dataset from explicit observation and edge-list paths, with an
/// optional truth file.
pub fn read_dataset_files(
    observations: &Path,
    edges: &Path,
    truth: Option<&Path>,
) -> Result<Dataset, IoError> {
    let obs_file = fs::File::open(observations).map_err(|e| {
        IoError::Inconsistent(format!("cannot open {}: {e}", observations.display()))
    })?;
    let (y, n_sites, t_len, _d) =
        read_observations_csv(BufReader::new(obs_file), &observations.display().to_string())?;
    let edge_file = fs::File::open(edges)
        .map_err(|e| IoError::Inconsistent(format!("cannot open {}: {e}", edges.display())))?;
    let graph = NeighborhoodSystem::load_edge_list(BufReader::new(edge_file))?;
    let truth = match truth {
        Some(path) if path.exists() => {
            let text = fs::read_to_string(path)?;
            let record: TruthRecord = serde_json::from_str(&text).map_err(|e| IoError::Json {
                file: path.display().to_string(),
                msg: e.to_string(),
            })?;
            Some(record.into_truth()?)
        }
        _ => None,
    };
    Dataset::new(y, n_sites, t_len, graph, truth)
        .map_err(|e| IoError::Inconsistent(e.to_string()))
}
