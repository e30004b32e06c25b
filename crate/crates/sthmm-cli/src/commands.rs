//! Command implementations, callable directly from tests.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::Serialize;

use sthmm::diagnostics::{self, dic, relabel_by_mean_order, truth_values};
use sthmm::emission::{Dataset, EmissionPriors};
use sthmm::io::{
    read_dataset_bundle, read_dataset_files, write_acceptance_csv, write_chain_csv,
    write_dataset_bundle, write_field_draws_csv, write_report_csv,
};
use sthmm::samplers::{
    init_chain, run_chain, Algorithm, AuxSchedule, ChainOutput, EmissionInit, SamplerConfig,
    ThetaPriorStds,
};
use sthmm::synthdata::{replicate_seed, sample_dataset, scenario_preset};

/// Resolved sampler settings shared by `fit`, `benchmark` and `select-k`.
#[derive(Debug, Clone)]
pub struct FitSettings {
    pub algorithm: Algorithm,
    pub iterations: usize,
    pub burn_in: usize,
    pub thinning: usize,
    pub aux_sweeps: usize,
    /// When set, auxiliary sweeps follow the non-increasing schedule
    /// max(floor, aux_sweeps − r / every) instead of staying constant.
    pub aux_decay: Option<(usize, usize)>,
    pub noisy_j: usize,
    pub seed: u64,
    pub warm_start: bool,
    pub field_thinning: usize,
    pub theta_prior_std: f64,
    pub s_offdiag_sign: f64,
    pub target_acceptance: f64,
    pub adapt_constant: f64,
    pub moment_init: bool,
    pub relabel: bool,
}

impl Default for FitSettings {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Exchange,
            iterations: 10_000,
            burn_in: 5_000,
            thinning: 1,
            aux_sweeps: 5,
            aux_decay: None,
            noisy_j: 1,
            seed: 1,
            warm_start: true,
            field_thinning: 1,
            theta_prior_std: 1.0,
            s_offdiag_sign: 1.0,
            target_acceptance: 0.44,
            adapt_constant: 1.0,
            moment_init: false,
            relabel: false,
        }
    }
}

impl FitSettings {
    pub fn sampler_config(&self) -> SamplerConfig {
        SamplerConfig {
            iterations: self.iterations,
            burn_in: self.burn_in,
            thinning: self.thinning,
            algorithm: self.algorithm,
            aux_schedule: match self.aux_decay {
                Some((floor, every)) => AuxSchedule::Decreasing {
                    initial: self.aux_sweeps,
                    floor,
                    every,
                },
                None => AuxSchedule::Constant(self.aux_sweeps),
            },
            noisy_j: self.noisy_j,
            target_acceptance: self.target_acceptance,
            adapt_constant: self.adapt_constant,
            warm_start: self.warm_start,
            seed: self.seed,
            theta_priors: ThetaPriorStds::uniform(self.theta_prior_std),
            field_thinning: self.field_thinning,
            emission_init: if self.moment_init {
                EmissionInit::MomentMatched
            } else {
                EmissionInit::Prior
            },
            ..SamplerConfig::default()
        }
    }

    pub fn priors_for(&self, d: usize) -> EmissionPriors {
        if d == 1 {
            EmissionPriors::default_for_dim(1)
        } else {
            EmissionPriors::default_multivariate(d, self.s_offdiag_sign)
        }
    }
}

/// `simulate`: writes one bundle directory per replicate.
pub fn cmd_simulate(
    scenario: &str,
    replicates: u64,
    seed: u64,
    burn_sweeps: usize,
    out: &Path,
) -> Result<()> {
    let mut spec = scenario_preset(scenario)?;
    spec.seed = seed;
    spec.burn_sweeps = burn_sweeps;
    spec.replicates = replicates as usize;
    for r in 0..replicates {
        let data = sample_dataset(&spec, r)?;
        let dir = out.join(format!("replicate_{r:03}"));
        write_dataset_bundle(&data, &dir)
            .with_context(|| format!("writing bundle {}", dir.display()))?;
    }
    println!(
        "wrote {replicates} scenario-{} bundle(s) under {}",
        spec.name,
        out.display()
    );
    Ok(())
}

/// Loads a dataset either from a bundle directory or from explicit files.
pub fn load_input(
    data: Option<&Path>,
    obs: Option<&Path>,
    edges: Option<&Path>,
) -> Result<Dataset> {
    match (data, obs, edges) {
        (Some(dir), None, None) => {
            if !dir.join("observations.csv").exists() {
                bail!("no observations.csv under {}", dir.display());
            }
            if !dir.join("edges.txt").exists() {
                bail!("missing edge list {}", dir.join("edges.txt").display());
            }
            Ok(read_dataset_bundle(dir)?)
        }
        (None, Some(obs), Some(edges)) => {
            if !edges.exists() {
                bail!("missing edge list {}", edges.display());
            }
            Ok(read_dataset_files(obs, edges, None)?)
        }
        _ => bail!("provide either --data <bundle dir> or both --obs and --edges"),
    }
}

/// Runs one chain and writes its artifacts under `out`.
pub fn cmd_fit(dataset: &Dataset, k: usize, settings: &FitSettings, out: &Path) -> Result<ChainOutput> {
    let priors = settings.priors_for(dataset.d());
    let cfg = settings.sampler_config();
    let init = init_chain(dataset, k, &priors, &cfg)?;
    let output = run_chain(dataset, &priors, &cfg, init)?;
    let output = if settings.relabel {
        relabel_by_mean_order(&output)
    } else {
        output
    };
    fs::create_dir_all(out)?;
    let mut chain = fs::File::create(out.join("chain.csv"))?;
    write_chain_csv(&output, &mut chain)?;
    let mut fields = fs::File::create(out.join("fields.csv"))?;
    write_field_draws_csv(&output, &mut fields)?;
    let mut acc = fs::File::create(out.join("acceptance.csv"))?;
    write_acceptance_csv(&output, &mut acc)?;
    let report = diagnostics::report(&output, dataset)?;
    fs::write(
        out.join("report.json"),
        serde_json::to_string_pretty(&report)?,
    )?;
    let mut params = fs::File::create(out.join("report_params.csv"))?;
    write_report_csv(&report, &mut params)?;
    println!(
        "fit ({}) finished: {} stored draws, outputs under {}",
        settings.algorithm.name(),
        output.n_draws(),
        out.display()
    );
    Ok(output)
}

#[derive(Debug, Clone, Serialize)]
pub struct MaeRow {
    pub parameter: String,
    pub truth: f64,
    pub exchange: f64,
    pub pseudo: f64,
    pub best: String,
}

#[derive(Debug, Serialize)]
pub struct BenchmarkSummary {
    pub scenario: String,
    pub replicates: u64,
    pub iterations: usize,
    pub burn_in: usize,
    pub seed: u64,
    pub rows: Vec<MaeRow>,
    pub exchange_wins: usize,
    pub pseudo_wins: usize,
}

/// `benchmark`: fits both engines from identical initializations on every
/// replicate and tabulates per-parameter MAE.
pub fn cmd_benchmark(
    scenario: &str,
    replicates: u64,
    settings: &FitSettings,
    out: &Path,
) -> Result<BenchmarkSummary> {
    let mut spec = scenario_preset(scenario)?;
    spec.seed = settings.seed;
    spec.replicates = replicates as usize;
    let spec = &spec;
    let results: Vec<Result<(Vec<f64>, Vec<f64>)>> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let data = sample_dataset(spec, r)?;
            let priors = settings.priors_for(data.d());
            let mut cfg = settings.sampler_config();
            cfg.seed = replicate_seed(settings.seed, r);
            // Parameter-only comparison; keep field storage sparse.
            cfg.field_thinning = cfg.field_thinning.max(100);
            let cfg_ex = SamplerConfig {
                algorithm: Algorithm::Exchange,
                ..cfg.clone()
            };
            let cfg_ps = SamplerConfig {
                algorithm: Algorithm::Pseudo,
                ..cfg
            };
            // Identical starting values for both engines.
            let init = init_chain(&data, spec.k, &priors, &cfg_ex)?;
            let ex = relabel_by_mean_order(&run_chain(&data, &priors, &cfg_ex, init.clone())?);
            let ps = relabel_by_mean_order(&run_chain(&data, &priors, &cfg_ps, init)?);
            let means = |o: &ChainOutput| (0..o.n_theta).map(|i| o.posterior_mean(i)).collect();
            Ok((means(&ex), means(&ps)))
        })
        .collect();
    let mut exchange_est = Vec::with_capacity(replicates as usize);
    let mut pseudo_est = Vec::with_capacity(replicates as usize);
    for res in results {
        let (ex, ps) = res?;
        exchange_est.push(ex);
        pseudo_est.push(ps);
    }
    // θ truth values are shared by every replicate of a scenario.
    let names_truths: Vec<(String, f64)> = {
        let data = sample_dataset(spec, 0)?;
        truth_values(data.truth.as_ref().unwrap())
            .into_iter()
            .take(exchange_est[0].len())
            .collect()
    };
    let truths: Vec<f64> = names_truths.iter().map(|(_, v)| *v).collect();
    let mae_ex = diagnostics::mae(&exchange_est, &truths);
    let mae_ps = diagnostics::mae(&pseudo_est, &truths);
    let mut rows = Vec::new();
    let mut exchange_wins = 0;
    let mut pseudo_wins = 0;
    for (idx, (name, truth)) in names_truths.iter().enumerate() {
        let best = if mae_ex[idx] < mae_ps[idx] {
            exchange_wins += 1;
            "exchange"
        } else if mae_ps[idx] < mae_ex[idx] {
            pseudo_wins += 1;
            "pseudo"
        } else {
            "tie"
        };
        rows.push(MaeRow {
            parameter: name.clone(),
            truth: *truth,
            exchange: mae_ex[idx],
            pseudo: mae_ps[idx],
            best: best.to_string(),
        });
    }
    let summary = BenchmarkSummary {
        scenario: spec.name.clone(),
        replicates,
        iterations: settings.iterations,
        burn_in: settings.burn_in,
        seed: settings.seed,
        rows,
        exchange_wins,
        pseudo_wins,
    };

    fs::create_dir_all(out)?;
    let mut mae_file = fs::File::create(out.join("mae.csv"))?;
    writeln!(mae_file, "parameter,truth,exchange_mae,pseudo_mae,best")?;
    for row in &summary.rows {
        writeln!(
            mae_file,
            "{},{},{},{},{}",
            row.parameter, row.truth, row.exchange, row.pseudo, row.best
        )?;
    }
    fs::write(out.join("mae.json"), serde_json::to_string_pretty(&summary)?)?;
    let mut est = fs::File::create(out.join("estimates.csv"))?;
    writeln!(est, "replicate,algorithm,parameter,estimate,truth")?;
    for (r, rep) in exchange_est.iter().enumerate() {
        for (idx, v) in rep.iter().enumerate() {
            writeln!(
                est,
                "{},exchange,{},{},{}",
                r, names_truths[idx].0, v, truths[idx]
            )?;
        }
    }
    for (r, rep) in pseudo_est.iter().enumerate() {
        for (idx, v) in rep.iter().enumerate() {
            writeln!(
                est,
                "{},pseudo,{},{},{}",
                r, names_truths[idx].0, v, truths[idx]
            )?;
        }
    }
    println!(
        "benchmark scenario {} (D={replicates}, R={}): exchange wins {}/{} parameters",
        summary.scenario,
        settings.iterations,
        summary.exchange_wins,
        summary.rows.len()
    );
    Ok(summary)
}

/// `preprocess`: turns a levels CSV (`site,time,<name>`) into the relative
/// variation observation CSV, re-indexing times to 1..T−1.
pub fn cmd_preprocess_relative_variation(input: &Path, output: &Path) -> Result<()> {
    let file = fs::File::open(input)
        .with_context(|| format!("cannot open input {}", input.display()))?;
    let mut lines = BufReader::new(file).lines().enumerate();
    let (_, header) = lines.next().context("empty input file")?;
    let header = header?;
    let cols: Vec<&str> = header.trim().split(',').collect();
    if cols.len() != 3 || cols[0] != "site" || cols[1] != "time" {
        bail!("expected header `site,time,<value>`, got `{header}`");
    }
    let mut entries: Vec<(usize, usize, f64)> = Vec::new();
    let (mut max_site, mut max_time) = (0usize, 0usize);
    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line?;
        let text = line.trim();
        if text.is_empty() {
            continue;
        }
        let fields: Vec<&str> = text.split(',').collect();
        if fields.len() != 3 {
            bail!("line {line_no}: expected 3 fields, got {}", fields.len());
        }
        let site: usize = fields[0]
            .parse()
            .with_context(|| format!("line {line_no}: bad site `{}`", fields[0]))?;
        let time: usize = fields[1]
            .parse()
            .with_context(|| format!("line {line_no}: bad time `{}`", fields[1]))?;
        let value: f64 = fields[2]
            .parse()
            .with_context(|| format!("line {line_no}: bad value `{}`", fields[2]))?;
        if site == 0 || time == 0 {
            bail!("line {line_no}: site and time are 1-based");
        }
        max_site = max_site.max(site);
        max_time = max_time.max(time);
        entries.push((site - 1, time - 1, value));
    }
    if max_time < 2 {
        bail!("need at least two time points to compute relative variation");
    }
    let mut levels = vec![f64::NAN; max_site * max_time];
    for (site, time, value) in entries {
        levels[site * max_time + time] = value;
    }
    if levels.iter().any(|v| v.is_nan()) {
        bail!("levels do not cover every (site, time) pair");
    }
    let mut sink = fs::File::create(output)
        .with_context(|| format!("cannot create output {}", output.display()))?;
    writeln!(sink, "site,time,y1")?;
    for site in 0..max_site {
        for time in 1..max_time {
            let prev = levels[site * max_time + time - 1];
            if prev <= 0.0 {
                bail!(
                    "non-positive level at site {}, time {}: relative variation undefined",
                    site + 1,
                    time
                );
            }
            let y = (levels[site * max_time + time] - prev) / prev * 100.0;
            writeln!(sink, "{},{},{}", site + 1, time, y)?;
        }
    }
    println!(
        "wrote relative variations for {max_site} sites x {} transitions to {}",
        max_time - 1,
        output.display()
    );
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct DicRow {
    pub k: usize,
    pub dic: f64,
    pub p_d: f64,
    pub mean_deviance: f64,
    pub complete_dic: f64,
    pub complete_p_d: f64,
}

#[derive(Debug, Serialize)]
pub struct SelectKSummary {
    pub selected_k: usize,
    pub stopped_early: bool,
    pub evaluated: Vec<DicRow>,
}

/// `select-k`: fits `k_min..=k_max`, reporting DIC for each; stops early
/// once the DIC rises, and selects the argmin among the evaluated fits.
pub fn cmd_select_k(
    dataset: &Dataset,
    k_min: usize,
    k_max: usize,
    settings: &FitSettings,
    out: &Path,
) -> Result<SelectKSummary> {
    if k_min == 0 || k_min > k_max {
        bail!("need 1 <= k_min <= k_max, got {k_min}..{k_max}");
    }
    let priors = settings.priors_for(dataset.d());
    let mut evaluated: Vec<DicRow> = Vec::new();
    let mut stopped_early = false;
    for k in k_min..=k_max {
        let mut cfg = settings.sampler_config();
        cfg.field_thinning = 1; // the deviance average needs every stored field
        let init = init_chain(dataset, k, &priors, &cfg)?;
        let output = run_chain(dataset, &priors, &cfg, init)?;
        let result = dic(&output, dataset)?;
        println!(
            "k = {k}: DIC = {:.3} (p_D = {:.3})",
            result.dic, result.p_d
        );
        evaluated.push(DicRow {
            k,
            dic: result.dic,
            p_d: result.p_d,
            mean_deviance: result.mean_deviance,
            complete_dic: result.complete_dic,
            complete_p_d: result.complete_p_d,
        });
        if evaluated.len() >= 2 && result.dic > evaluated[evaluated.len() - 2].dic {
            stopped_early = k < k_max;
            break;
        }
    }
    let selected_k = evaluated
        .iter()
        .min_by(|a, b| a.dic.partial_cmp(&b.dic).unwrap())
        .map(|row| row.k)
        .unwrap();
    let summary = SelectKSummary {
        selected_k,
        stopped_early,
        evaluated,
    };
    fs::create_dir_all(out)?;
    let mut table = fs::File::create(out.join("dic.csv"))?;
    writeln!(table, "k,dic,p_d,mean_deviance,complete_dic,complete_p_d")?;
    for row in &summary.evaluated {
        writeln!(
            table,
            "{},{},{},{},{},{}",
            row.k, row.dic, row.p_d, row.mean_deviance, row.complete_dic, row.complete_p_d
        )?;
    }
    fs::write(
        out.join("selection.json"),
        serde_json::to_string_pretty(&summary)?,
    )?;
    println!("selected k = {selected_k}");
    Ok(summary)
}
