use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod analyze;
mod config;
mod evaluate;
mod folds;
mod phantom;
mod preprocess;
mod volumes;

/// Prior-guided gradient-map preprocessing and segmentation evaluation.
#[derive(Debug, Parser)]
#[command(name = "gradseg", version)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// JSON run configuration; flags take precedence over its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads (defaults to the number of CPUs).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic longitudinal cohort.
    Phantom(phantom::PhantomArgs),
    /// Split patients into cross-validation folds.
    Folds(folds::FoldsArgs),
    /// Build two-channel samples (image + gradient map) for every patient.
    Preprocess(preprocess::PreprocessArgs),
    /// Score predicted masks against ground truth.
    Evaluate(evaluate::EvaluateArgs),
    /// Paired tests between reports and volume-binned correlations.
    Analyze(analyze::AnalyzeArgs),
    /// Tabulate pre-RT and mid-RT tumor volumes of a dataset.
    Volumes(volumes::VolumesArgs),
}

/// How a command failed; decides the exit code.
#[derive(Debug)]
pub enum Failure {
    /// Bad flags or configuration (exit 2).
    Usage(anyhow::Error),
    /// Anything else (exit 1).
    Runtime(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Runtime(e.into())
    }
}

pub type CmdResult = Result<(), Failure>;

pub trait UsageContext<T> {
    fn usage(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> UsageContext<T> for Result<T, E> {
    fn usage(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Usage(e.into()))
    }
}

fn run(cli: Cli) -> CmdResult {
    let cfg = config::RunConfig::load(cli.global.config.as_deref()).usage()?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.global.jobs {
        if n == 0 {
            return Err(Failure::Usage(anyhow::anyhow!("--jobs must be at least 1")));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool.build().usage()?;
    pool.install(|| match cli.command {
        Command::Phantom(a) => phantom::run(a, &cfg),
        Command::Folds(a) => folds::run(a, &cfg),
        Command::Preprocess(a) => preprocess::run(a, &cfg),
        Command::Evaluate(a) => evaluate::run(a, &cfg),
        Command::Analyze(a) => analyze::run(a, &cfg),
        Command::Volumes(a) => volumes::run(a, &cfg),
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        // help and version print and exit 0, parse errors exit 2
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
