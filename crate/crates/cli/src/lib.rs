//! Experiment runner for latent depth refinement.
//!
//! Every subcommand reads an optional JSON config (`--config`), applies the
//! flags given on the command line on top of it and writes its outputs below
//! the configured paths. Exit codes: 0 success, 2 configuration error,
//! 3 data error, 4 divergence.

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

pub mod commands;
pub mod config;

use config::{
    BasisModeChoice, CovisCommandConfig, EvalConfig, FitBasisConfig, MatrixModelConfig,
    RefineConfig, SynthConfig,
};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("{0}")]
    Diverged(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Diverged(_) => 4,
        }
    }
}

impl From<latent_depth::Error> for CliError {
    fn from(e: latent_depth::Error) -> Self {
        use latent_depth::Error as E;
        match e {
            E::InvalidArgument(_) => CliError::Config(e.to_string()),
            E::Diverged { .. } => CliError::Diverged(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "latent-depth",
    version,
    about = "Latent depth maps refined by multiview photoconsistency"
)]
pub struct Cli {
    /// More log output (repeat for debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Orthographic matrix-model study (with and without latent variables).
    MatrixModel(MatrixModelArgs),
    /// Render the synthetic benchmark scenes.
    Synth(SynthArgs),
    /// Build or fit a shape basis.
    FitBasis(FitBasisArgs),
    /// Refine latent codes of a co-visible set.
    Refine(RefineArgs),
    /// Evaluate predicted depth maps against ground truth.
    Eval(EvalArgs),
    /// Select co-visible sets.
    Covis(CovisArgs),
}

#[derive(Debug, Args)]
pub struct MatrixModelArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seeds: Option<u64>,
    #[arg(long)]
    pub base_seed: Option<u64>,
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    #[arg(long)]
    pub feature_dim: Option<usize>,
    #[arg(long)]
    pub latent_dim: Option<usize>,
    /// Output CSV path (stdout when absent).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    /// Suite name to write (repeatable).
    #[arg(long = "suite")]
    pub suites: Vec<String>,
}

#[derive(Debug, Args)]
pub struct FitBasisArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_parser = parse_mode)]
    pub mode: Option<BasisModeChoice>,
    #[arg(long)]
    pub latent_dim: Option<usize>,
    /// Training scene directory (repeatable).
    #[arg(long = "train")]
    pub train: Vec<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_mode(s: &str) -> Result<BasisModeChoice, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| format!("unknown basis mode '{s}'"))
}

#[derive(Debug, Args)]
pub struct RefineArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub scene: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub basis: Option<PathBuf>,
    #[arg(long)]
    pub initial_alpha: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub rel_tol: Option<f64>,
    #[arg(long)]
    pub mask_refresh: Option<usize>,
    #[arg(long)]
    pub optimize_alpha: bool,
    /// Sum per-pixel loss terms instead of averaging per neighbour.
    #[arg(long)]
    pub raw_sum: bool,
    #[arg(long)]
    pub median_scale: bool,
    #[arg(long)]
    pub threads: Option<usize>,
    /// Write per-category pair masks of the final depths.
    #[arg(long)]
    pub export_masks: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub pred: Option<PathBuf>,
    #[arg(long)]
    pub gt: Option<PathBuf>,
    #[arg(long)]
    pub median_scale: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CovisArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub scene: Option<PathBuf>,
    #[arg(long)]
    pub set_size: Option<usize>,
    #[arg(long)]
    pub overlap_min: Option<f64>,
    #[arg(long)]
    pub voxel_size: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn set<T>(target: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *target = v;
    }
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::MatrixModel(a) => {
            let mut c: MatrixModelConfig = config::load(a.config.as_deref())?;
            set(&mut c.seeds, a.seeds);
            set(&mut c.base_seed, a.base_seed);
            set(&mut c.noise_sigma, a.noise_sigma);
            set(&mut c.feature_dim, a.feature_dim);
            set(&mut c.latent_dim, a.latent_dim);
            if a.out.is_some() {
                c.out = a.out;
            }
            let report = commands::matrix_model::run(&c)?;
            if c.out.is_none() {
                print!("{}", report.csv());
            }
            eprintln!("{}", report.summary());
        }
        Command::Synth(a) => {
            let mut c: SynthConfig = config::load(a.config.as_deref())?;
            set(&mut c.out, a.out);
            set(&mut c.benchmark.seed, a.seed);
            set(&mut c.benchmark.noise_sigma, a.noise_sigma);
            if !a.suites.is_empty() {
                c.suites = a.suites;
            }
            for dir in commands::synth::run(&c)? {
                println!("{}", dir.display());
            }
        }
        Command::FitBasis(a) => {
            let mut c: FitBasisConfig = config::load(a.config.as_deref())?;
            set(&mut c.mode, a.mode);
            set(&mut c.latent_dim, a.latent_dim);
            set(&mut c.out, a.out);
            if !a.train.is_empty() {
                c.train = a.train;
            }
            let basis = commands::fit_basis::run(&c)?;
            println!(
                "{}: latent_dim {} ({})",
                c.out.display(),
                basis.latent_dim(),
                basis.provenance
            );
        }
        Command::Refine(a) => {
            let mut c: RefineConfig = config::load(a.config.as_deref())?;
            set(&mut c.scene, a.scene);
            set(&mut c.out, a.out);
            if a.basis.is_some() {
                c.basis = a.basis;
            }
            if a.initial_alpha.is_some() {
                c.initial_alpha = a.initial_alpha;
            }
            set(&mut c.optimizer.max_iters, a.max_iters);
            set(&mut c.optimizer.lr, a.lr);
            set(&mut c.optimizer.rel_tol, a.rel_tol);
            set(&mut c.optimizer.mask_refresh, a.mask_refresh);
            set(&mut c.threads, a.threads);
            c.optimizer.optimize_alpha |= a.optimize_alpha;
            c.loss.raw_sum |= a.raw_sum;
            c.median_scale |= a.median_scale;
            c.export_masks |= a.export_masks;
            let report = commands::refine::run_with_threads(&c)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Eval(a) => {
            let mut c: EvalConfig = config::load(a.config.as_deref())?;
            set(&mut c.pred, a.pred);
            set(&mut c.gt, a.gt);
            if a.out.is_some() {
                c.out = a.out;
            }
            c.median_scale |= a.median_scale;
            let report = commands::eval::run(&c)?;
            if c.out.is_none() {
                print!("{}", report.csv());
            }
        }
        Command::Covis(a) => {
            let mut c: CovisCommandConfig = config::load(a.config.as_deref())?;
            set(&mut c.scene, a.scene);
            set(&mut c.covis.set_size, a.set_size);
            set(&mut c.covis.overlap_min, a.overlap_min);
            if a.voxel_size.is_some() {
                c.covis.voxel_size = a.voxel_size;
            }
            if a.out.is_some() {
                c.out = a.out;
            }
            let sets = commands::covis::run(&c)?;
            if c.out.is_none() {
                for s in &sets {
                    println!("{}", serde_json::to_string(s)?);
                }
            }
        }
    }
    Ok(())
}

/// Parses `args` and runs the selected command.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).try_init();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
