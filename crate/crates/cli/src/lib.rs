//! Command-line front end: `phibp <subcommand>`.
//!
//! Every subcommand writes into a fresh `<out>/<subcommand>-<timestamp>`
//! directory holding its outputs, the resolved `config.json` and a
//! `manifest.json` with input and output hashes. The output root defaults to
//! `$PHIBP_DATA_DIR/runs`, or `./runs` when the variable is unset.

mod commands;
pub mod run;
pub mod settings;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use phibp::levy::Family;

use settings::SimMethod;

#[derive(Debug, Parser)]
#[command(name = "phibp", version, about = "Poisson hierarchical IBP: simulate, fit, diagnose, predict")]
pub struct Cli {
    /// JSON config for the subcommand; flags override its fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Default location for inputs and the `runs/` output root.
    #[arg(long, global = true, env = "PHIBP_DATA_DIR")]
    pub data_dir: Option<PathBuf>,

    /// Root under which the run directory is created.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Worker threads (chains and per-draw work run in parallel).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Random seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build training and held-out panels from a case-count CSV.
    Ingest(IngestArgs),
    /// Simulate a synthetic panel from the model.
    Simulate(SimulateArgs),
    /// Run multi-chain MCMC for one model family.
    Fit(FitArgs),
    /// R̂ and ESS report for a fit.
    Diagnose(DiagnoseArgs),
    /// Predictive summaries, zero-pair predictions and held-out log-likelihood.
    Predict(PredictArgs),
    /// Posterior Shannon and Bray–Curtis diversities.
    Diversity(DiversityArgs),
    /// Run the quadrature, enumeration and goodness-of-fit checks.
    Oracle(OracleArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Input CSV (default: `$PHIBP_DATA_DIR/chhs.csv`).
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Drop diseases whose largest county-year count exceeds this.
    #[arg(long, conflicts_with = "no_threshold")]
    pub threshold: Option<u64>,
    /// Keep every disease.
    #[arg(long)]
    pub no_threshold: bool,
    #[arg(long, value_parser = settings::parse_years)]
    pub train_years: Option<(i32, i32)>,
    #[arg(long, value_parser = settings::parse_years)]
    pub test_years: Option<(i32, i32)>,
    /// `unit` or `population`.
    #[arg(long)]
    pub exposure: Option<phibp::dataset::ExposureMode>,
    #[arg(long)]
    pub per_year_exposure: Option<f64>,
    #[arg(long)]
    pub delimiter: Option<char>,
    #[arg(long)]
    pub sex: Option<String>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub family: Option<Family>,
    #[arg(long)]
    pub regions: Option<usize>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub train_samples: Option<usize>,
    #[arg(long)]
    pub theta0: Option<f64>,
    #[arg(long)]
    pub alpha0: Option<f64>,
    #[arg(long)]
    pub theta: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub exposure: Option<f64>,
    #[arg(long, value_enum)]
    pub method: Option<SimMethod>,
    #[arg(long)]
    pub eps: Option<f64>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Panels directory or `panels.json` (default: `$PHIBP_DATA_DIR/panels`).
    #[arg(long)]
    pub panels: Option<PathBuf>,
    /// Family used at every level.
    #[arg(long)]
    pub family: Option<Family>,
    #[arg(long)]
    pub chains: Option<usize>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub burnin: Option<usize>,
    #[arg(long)]
    pub thin: Option<usize>,
    /// Hold every α at its initial value.
    #[arg(long)]
    pub fix_alpha: bool,
    #[arg(long)]
    pub init_alpha: Option<f64>,
    /// Hyperparameter MH sweeps per iteration.
    #[arg(long)]
    pub mh_sweeps: Option<usize>,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    /// Run directory of a `fit`.
    #[arg(long)]
    pub fit: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub fit: Option<PathBuf>,
    #[arg(long)]
    pub panels: Option<PathBuf>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub test_exposure: Option<f64>,
    /// Only rows with zero training count.
    #[arg(long)]
    pub zero_pairs_only: bool,
    /// Score catalogue species only.
    #[arg(long)]
    pub no_novelty: bool,
}

#[derive(Debug, Args)]
pub struct DiversityArgs {
    #[arg(long)]
    pub fit: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[arg(long)]
    pub draws: Option<usize>,
}

/// Parses `argv` (program name first) and runs the subcommand. Returns the
/// process exit status.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .try_init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("thread pool already initialised: {e}");
        }
    }
    match commands::run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}
