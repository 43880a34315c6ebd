use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use gasnitrom_cli::commands;
use gasnitrom_cli::config::{
    read_toml, CompareConfig, EvaluateConfig, GenerateConfig, TrainConfigFile,
};
use gasnitrom_cli::error::{CliError, CliResult};

/// Batch front end for stable reduced-order modeling: data generation,
/// training, evaluation, comparison and model inspection.
#[derive(Parser)]
#[command(name = "gasnitrom", version, about)]
struct Cli {
    /// Thread cap for internal parallelism (1 = fully deterministic).
    /// Overrides the GASNITROM_THREADS environment variable.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonOverrides {
    /// Output directory/file override (also via GASNITROM_OUT).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed override.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a training protocol and write a dataset directory.
    Generate {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        overrides: CommonOverrides,
    },
    /// Train a model on a dataset and write model + history files.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Method override: gasnitrom|nitrom|opinf|gasopinf|pod-galerkin.
        #[arg(long)]
        method: Option<String>,
        /// Latent dimension override.
        #[arg(long)]
        r: Option<usize>,
        /// Dataset directory override.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Regularization override for the OpInf/GasOpInf objective.
        #[arg(long)]
        lambda: Option<f64>,
        #[command(flatten)]
        overrides: CommonOverrides,
    },
    /// Evaluate a model file against ground truth; writes an error-curve CSV.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        /// Model file override.
        #[arg(long)]
        model: Option<PathBuf>,
        #[command(flatten)]
        overrides: CommonOverrides,
    },
    /// Compare several model files on one test; writes aligned error curves.
    Compare {
        #[arg(long)]
        config: PathBuf,
        /// Model files (override the config list).
        #[arg(long, num_args = 2..)]
        models: Option<Vec<PathBuf>>,
        #[command(flatten)]
        overrides: CommonOverrides,
    },
    /// Print model metadata and stability diagnostics.
    Inspect {
        #[arg(long)]
        model: PathBuf,
    },
}

fn env_out() -> Option<PathBuf> {
    std::env::var_os("GASNITROM_OUT").map(PathBuf::from)
}

fn configure_threads(flag: Option<usize>) -> CliResult<()> {
    let from_env = std::env::var("GASNITROM_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok());
    if let Some(t) = flag.or(from_env) {
        if t == 0 {
            return Err(CliError::Config("--threads must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn run() -> CliResult<()> {
    let cli = Cli::parse();
    configure_threads(cli.threads)?;
    match cli.command {
        Command::Generate { config, overrides } => {
            let mut cfg: GenerateConfig = read_toml(&config)?;
            if let Some(out) = overrides.out.or_else(env_out) {
                cfg.output.dir = out;
            }
            if let Some(seed) = overrides.seed {
                cfg.fom.seed = Some(seed);
            }
            commands::cmd_generate(&cfg)
        }
        Command::Train {
            config,
            method,
            r,
            dataset,
            lambda,
            overrides,
        } => {
            let mut cfg: TrainConfigFile = read_toml(&config)?;
            if let Some(m) = method {
                cfg.method = m;
            }
            if let Some(r) = r {
                cfg.r = r;
            }
            if let Some(d) = dataset {
                cfg.dataset = d;
            }
            if let Some(l) = lambda {
                cfg.opinf.get_or_insert_with(Default::default).lambda = Some(l);
            }
            if let Some(out) = overrides.out.or_else(env_out) {
                cfg.out = out;
            }
            if let Some(seed) = overrides.seed {
                cfg.seed = Some(seed);
            }
            commands::cmd_train(&cfg)
        }
        Command::Evaluate {
            config,
            model,
            overrides,
        } => {
            let mut cfg: EvaluateConfig = read_toml(&config)?;
            if let Some(m) = model {
                cfg.model = m;
            }
            if let Some(out) = overrides.out.or_else(env_out) {
                cfg.out = out;
            }
            if let Some(seed) = overrides.seed {
                cfg.test.seed = Some(seed);
            }
            commands::cmd_evaluate(&cfg)
        }
        Command::Compare {
            config,
            models,
            overrides,
        } => {
            let mut cfg: CompareConfig = read_toml(&config)?;
            if let Some(m) = models {
                cfg.models = m;
            }
            if let Some(out) = overrides.out.or_else(env_out) {
                cfg.out = out;
            }
            if let Some(seed) = overrides.seed {
                cfg.test.seed = Some(seed);
            }
            commands::cmd_compare(&cfg)
        }
        Command::Inspect { model } => commands::cmd_inspect(&model),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
