use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use sthmm_cli::commands::{
    cmd_benchmark, cmd_fit, cmd_preprocess_relative_variation, cmd_select_k, cmd_simulate,
    load_input, FitSettings,
};
use sthmm_cli::config::{pick, require, FileConfig};

/// Bayesian spatio-temporal hidden Markov models with an autologistic
/// latent field: simulation, pseudo-posterior and approximate-exchange
/// fitting, benchmarking and model selection.
///
/// Values come from flags first, then the optional TOML config file
/// (one section per subcommand), then built-in defaults. Replicated
/// commands parallelize across workers; set RAYON_NUM_THREADS to bound
/// the worker count.
#[derive(Parser)]
#[command(name = "sthmm", version)]
struct Cli {
    /// TOML config file with [simulate], [fit], [benchmark], [preprocess]
    /// and [select_k] sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct SamplerArgs {
    /// pseudo, exchange or noisy_exchange.
    #[arg(long)]
    algo: Option<String>,
    /// Total MCMC iterations.
    #[arg(long)]
    iters: Option<usize>,
    /// Burn-in iterations to discard.
    #[arg(long)]
    burnin: Option<usize>,
    /// Keep every n-th post-burn-in draw.
    #[arg(long)]
    thin: Option<usize>,
    /// Auxiliary Gibbs sweeps per exchange move.
    #[arg(long)]
    aux: Option<usize>,
    /// Floor of the non-increasing auxiliary schedule (requires
    /// --aux-decay-every; --aux is then the starting value).
    #[arg(long, requires = "aux_decay_every")]
    aux_floor: Option<usize>,
    /// Iterations per unit decrease of the auxiliary schedule.
    #[arg(long, requires = "aux_floor")]
    aux_decay_every: Option<usize>,
    /// Auxiliary replicates for the noisy exchange estimator.
    #[arg(long)]
    noisy_j: Option<usize>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Start the auxiliary chain from a fresh random field instead of the
    /// current latent field.
    #[arg(long)]
    cold_start: bool,
    /// Store every n-th stored draw's latent field.
    #[arg(long)]
    field_thin: Option<usize>,
    /// Prior standard deviation for every θ parameter.
    #[arg(long)]
    theta_prior_std: Option<f64>,
    /// Sign of the off-diagonal entries of the default Inverse-Wishart
    /// scale matrix (+1 or -1).
    #[arg(long)]
    s_offdiag_sign: Option<f64>,
    /// Initialize emission parameters from data moments instead of the
    /// prior.
    #[arg(long)]
    moment_init: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate replicate dataset bundles for a named scenario.
    Simulate {
        /// Scenario name: A, B, C or D.
        #[arg(long)]
        scenario: Option<String>,
        #[arg(long)]
        replicates: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Gibbs sweeps used to draw each latent field.
        #[arg(long)]
        burn_sweeps: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit one chain to a dataset and write chain, acceptance and report
    /// files.
    Fit {
        /// Dataset bundle directory (observations.csv + edges.txt
        /// [+ truth.json]).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Observation CSV (requires --edges).
        #[arg(long)]
        obs: Option<PathBuf>,
        /// Edge-list file (requires --obs).
        #[arg(long)]
        edges: Option<PathBuf>,
        /// Number of latent states.
        #[arg(long)]
        k: Option<usize>,
        /// Relabel draws by increasing first mean coordinate.
        #[arg(long)]
        relabel: bool,
        #[command(flatten)]
        sampler: SamplerArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit both engines on replicated scenario data and tabulate MAE.
    Benchmark {
        #[arg(long)]
        scenario: Option<String>,
        #[arg(long)]
        replicates: Option<u64>,
        #[command(flatten)]
        sampler: SamplerArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Convert a levels CSV into percentage relative variations.
    Preprocess {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Fit a range of state counts and select by DIC.
    SelectK {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        obs: Option<PathBuf>,
        #[arg(long)]
        edges: Option<PathBuf>,
        #[arg(long)]
        k_min: Option<usize>,
        #[arg(long)]
        k_max: Option<usize>,
        #[command(flatten)]
        sampler: SamplerArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Default)]
struct FileSampler {
    algo: Option<String>,
    iters: Option<usize>,
    burnin: Option<usize>,
    thin: Option<usize>,
    aux: Option<usize>,
    aux_floor: Option<usize>,
    aux_decay_every: Option<usize>,
    noisy_j: Option<usize>,
    seed: Option<u64>,
    field_thin: Option<usize>,
    theta_prior_std: Option<f64>,
    target_acceptance: Option<f64>,
    adapt_constant: Option<f64>,
    s_offdiag_sign: Option<f64>,
    moment_init: Option<bool>,
    warm_start: Option<bool>,
}


fn resolve_settings(cli: &SamplerArgs, file: FileSampler) -> Result<FitSettings> {
    let defaults = FitSettings::default();
    let algo_name = pick(cli.algo.clone(), file.algo, "exchange".to_string());
    let algorithm = algo_name.parse().map_err(anyhow::Error::msg)?;
    Ok(FitSettings {
        algorithm,
        iterations: pick(cli.iters, file.iters, defaults.iterations),
        burn_in: pick(cli.burnin, file.burnin, defaults.burn_in),
        thinning: pick(cli.thin, file.thin, defaults.thinning),
        aux_sweeps: pick(cli.aux, file.aux, defaults.aux_sweeps),
        aux_decay: match (
            pick(cli.aux_floor, file.aux_floor, 0),
            pick(cli.aux_decay_every, file.aux_decay_every, 0),
        ) {
            (0, _) | (_, 0) => None,
            (floor, every) => Some((floor, every)),
        },
        noisy_j: pick(cli.noisy_j, file.noisy_j, defaults.noisy_j),
        seed: pick(cli.seed, file.seed, defaults.seed),
        warm_start: if cli.cold_start {
            false
        } else {
            file.warm_start.unwrap_or(true)
        },
        field_thinning: pick(cli.field_thin, file.field_thin, defaults.field_thinning),
        theta_prior_std: pick(
            cli.theta_prior_std,
            file.theta_prior_std,
            defaults.theta_prior_std,
        ),
        s_offdiag_sign: pick(cli.s_offdiag_sign, file.s_offdiag_sign, defaults.s_offdiag_sign),
        target_acceptance: file.target_acceptance.unwrap_or(defaults.target_acceptance),
        adapt_constant: file.adapt_constant.unwrap_or(defaults.adapt_constant),
        moment_init: cli.moment_init || file.moment_init.unwrap_or(false),
        relabel: false,
    })
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    let file = FileConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Simulate {
            scenario,
            replicates,
            seed,
            burn_sweeps,
            out,
        } => {
            let section = file.simulate.unwrap_or_default();
            let scenario = require(scenario, section.scenario, "scenario")?;
            let out = require(out, section.out.map(PathBuf::from), "out")?;
            cmd_simulate(
                &scenario,
                pick(replicates, section.replicates, 1),
                pick(seed, section.seed, 0),
                pick(burn_sweeps, section.burn_sweeps, 500),
                &out,
            )
        }
        Command::Fit {
            data,
            obs,
            edges,
            k,
            relabel,
            sampler,
            out,
        } => {
            let section = file.fit.unwrap_or_default();
            let dataset = load_input(data.as_deref(), obs.as_deref(), edges.as_deref())?;
            let k = require(k, section.k, "k")?;
            let mut settings = resolve_settings(
                &sampler,
                FileSampler {
                    algo: section.algo,
                    iters: section.iters,
                    burnin: section.burnin,
                    thin: section.thin,
                    aux: section.aux,
                    aux_floor: section.aux_floor,
                    aux_decay_every: section.aux_decay_every,
                    noisy_j: section.noisy_j,
                    seed: section.seed,
                    field_thin: section.field_thin,
                    theta_prior_std: section.theta_prior_std,
                    target_acceptance: section.target_acceptance,
                    adapt_constant: section.adapt_constant,
                    s_offdiag_sign: section.s_offdiag_sign,
                    moment_init: section.moment_init,
                    warm_start: section.warm_start,
                },
            )?;
            settings.relabel = relabel;
            let out = out.unwrap_or_else(|| PathBuf::from("fit_out"));
            cmd_fit(&dataset, k, &settings, &out)?;
            Ok(())
        }
        Command::Benchmark {
            scenario,
            replicates,
            sampler,
            out,
        } => {
            let section = file.benchmark.unwrap_or_default();
            let scenario = require(scenario, section.scenario, "scenario")?;
            let settings = resolve_settings(
                &sampler,
                FileSampler {
                    iters: section.iters,
                    burnin: section.burnin,
                    thin: section.thin,
                    aux: section.aux,
                    seed: section.seed,
                    theta_prior_std: section.theta_prior_std,
                    ..FileSampler::default()
                },
            )?;
            let out = out.unwrap_or_else(|| PathBuf::from("benchmark_out"));
            cmd_benchmark(
                &scenario,
                pick(replicates, section.replicates, 10),
                &settings,
                &out,
            )?;
            Ok(())
        }
        Command::Preprocess { input, output } => {
            let section = file.preprocess.unwrap_or_default();
            let input = require(input, section.input.map(PathBuf::from), "input")?;
            let output = require(output, section.output.map(PathBuf::from), "output")?;
            cmd_preprocess_relative_variation(&input, &output)
        }
        Command::SelectK {
            data,
            obs,
            edges,
            k_min,
            k_max,
            sampler,
            out,
        } => {
            let section = file.select_k.unwrap_or_default();
            let dataset = load_input(data.as_deref(), obs.as_deref(), edges.as_deref())?;
            let settings = resolve_settings(
                &sampler,
                FileSampler {
                    algo: section.algo,
                    iters: section.iters,
                    burnin: section.burnin,
                    thin: section.thin,
                    seed: section.seed,
                    ..FileSampler::default()
                },
            )?;
            let out = out.unwrap_or_else(|| PathBuf::from("select_k_out"));
            cmd_select_k(
                &dataset,
                pick(k_min, section.k_min, 1),
                pick(k_max, section.k_max, 4),
                &settings,
                &out,
            )?;
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
