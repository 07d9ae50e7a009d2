mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use mpb_core::MpbError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),

    #[error(transparent)]
    Core(MpbError),

    #[error("verification failed: {0}")]
    Check(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Core(e) if e.is_validation() => 2,
            CliError::Core(_) | CliError::Check(_) => 3,
        }
    }
}

/// Result of a command that produced its outputs.
pub enum Completion {
    Done,
    /// Outputs were written but the solver hit its iteration cap.
    NotConverged,
}

#[derive(Parser)]
#[command(name = "mpb", version, about = "Marginal product basis fitting and functional PCA for gridded multidimensional data")]
struct Cli {
    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum SelectMode {
    MarginalRank,
    GlobalRank,
    Cv,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Design {
    Product,
    Field,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model to a tensor file.
    Fit {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        tensor: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the seed in the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Penalized functional PCA of a fitted model.
    Fpca {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        lambda: f64,
        /// Number of components to keep.
        #[arg(long, conflicts_with = "threshold")]
        components: Option<usize>,
        /// Cumulative variance share that decides the number of components.
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Choose marginal ranks, the global rank or penalty weights.
    Select {
        mode: SelectMode,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        tensor: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Generate simulated data sets and score fits against the truth.
    Simulate {
        design: Design,
        /// Simulation config; built-in defaults when absent.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Re-check file integrity and FPCA constraints.
    Verify {
        #[arg(long)]
        tensor: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        /// FPCA output (`fpca.json`) to check against `--model`.
        #[arg(long, requires = "model")]
        fpca: Option<PathBuf>,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
    },
    /// Describe a tensor or model file, or the supported formats.
    Info {
        #[arg(long)]
        tensor: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<Completion, CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Input("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Input(format!("--threads: {e}")))?;
    }
    match cli.command {
        Command::Fit { config, tensor, out, seed } => commands::fit(&config, &tensor, out, seed),
        Command::Fpca { model, out, lambda, components, threshold } => {
            commands::fpca(&model, &out, lambda, components, threshold)
        }
        Command::Select { mode, config, tensor, out, seed } => commands::select(mode, &config, &tensor, out, seed),
        Command::Simulate { design, config, out, seed } => commands::simulate(design, config.as_deref(), &out, seed),
        Command::Verify { tensor, model, fpca, tol } => {
            commands::verify(tensor.as_deref(), model.as_deref(), fpca.as_deref(), tol)
        }
        Command::Info { tensor, model } => commands::info(tensor.as_deref(), model.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MPB_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(Completion::Done) => ExitCode::SUCCESS,
        Ok(Completion::NotConverged) => {
            eprintln!("warning: solver stopped at its iteration cap before converging");
            ExitCode::from(4)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
