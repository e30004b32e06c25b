//! Layered run configuration: a TOML file with one section per command,
//! overridden by command-line flags.
//!
//! Unknown keys anywhere in the file are rejected up front, so typos fail
//! fast instead of silently running defaults.

use std::path::Path;

use anyhow::{Context, Result};
use serde::Deserialize;

/// Whole config file; every section is optional.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub simulate: Option<SimulateSection>,
    pub fit: Option<FitSection>,
    pub benchmark: Option<BenchmarkSection>,
    pub preprocess: Option<PreprocessSection>,
    pub select_k: Option<SelectKSection>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    pub scenario: Option<String>,
    pub replicates: Option<u64>,
    pub seed: Option<u64>,
    pub burn_sweeps: Option<usize>,
    pub out: Option<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSection {
    pub algo: Option<String>,
    pub iters: Option<usize>,
    pub burnin: Option<usize>,
    pub thin: Option<usize>,
    pub aux: Option<usize>,
    pub aux_floor: Option<usize>,
    pub aux_decay_every: Option<usize>,
    pub noisy_j: Option<usize>,
    pub k: Option<usize>,
    pub seed: Option<u64>,
    pub warm_start: Option<bool>,
    pub field_thin: Option<usize>,
    pub theta_prior_std: Option<f64>,
    pub s_offdiag_sign: Option<f64>,
    pub target_acceptance: Option<f64>,
    pub adapt_constant: Option<f64>,
    pub moment_init: Option<bool>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkSection {
    pub scenario: Option<String>,
    pub replicates: Option<u64>,
    pub iters: Option<usize>,
    pub burnin: Option<usize>,
    pub thin: Option<usize>,
    pub aux: Option<usize>,
    pub seed: Option<u64>,
    pub theta_prior_std: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreprocessSection {
    pub input: Option<String>,
    pub output: Option<String>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectKSection {
    pub k_min: Option<usize>,
    pub k_max: Option<usize>,
    pub algo: Option<String>,
    pub iters: Option<usize>,
    pub burnin: Option<usize>,
    pub thin: Option<usize>,
    pub seed: Option<u64>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config file {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("invalid config file {}", path.display()))
    }
}

/// Command-line value, then config-file value, then the built-in default.
pub fn pick<T: Clone>(cli: Option<T>, file: Option<T>, default: T) -> T {
    cli.or(file).unwrap_or(default)
}

/// Like [`pick`] but with no default: one of the two layers must supply the
/// value.
pub fn require<T: Clone>(cli: Option<T>, file: Option<T>, what: &str) -> Result<T> {
    cli.or(file)
        .with_context(|| format!("missing required option `{what}` (flag or config file)"))
}
