use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use log::info;

use wrcp_cli::{commands, CliError, CliResult, Config};

#[derive(Parser)]
#[command(name = "wrcp", version, about = "Robust conformal prediction intervals under distribution shift")]
struct Cli {
    /// Worker threads for parallel stages.
    #[arg(long, global = true, env = "WRCP_JOBS")]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,

    /// Output directory, created if absent.
    #[arg(long)]
    out: PathBuf,

    /// Replaces the seed of the selected config section.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Draw source and target samples from a benchmark design.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Prediction intervals for unlabeled test covariates.
    Predict {
        #[command(flatten)]
        common: Common,
        /// Labeled source table (x0.., y).
        #[arg(long)]
        train: PathBuf,
        /// Test covariates (x0.., optional y for a coverage log line).
        #[arg(long)]
        test: PathBuf,
    },
    /// Counterfactual intervals under bounded hidden confounding.
    Sensitivity {
        #[command(flatten)]
        common: Common,
        /// Observational table (x0.., y, t).
        #[arg(long)]
        observational: PathBuf,
        /// Covariates of the units to predict for.
        #[arg(long)]
        targets: PathBuf,
    },
    /// Run a benchmark study and write its report.
    Experiment {
        #[command(flatten)]
        common: Common,
        /// Keep cells already present in the output report.
        #[arg(long)]
        resume: bool,
    },
}

fn load(common: &Common) -> CliResult<Config> {
    let mut cfg = Config::load(&common.config)?;
    if let Some(s) = common.seed {
        cfg.override_seed(s);
    }
    Ok(cfg)
}

fn section<T>(s: Option<T>, name: &str, path: &Path) -> CliResult<T> {
    s.ok_or_else(|| CliError::config(format!("{}: missing table [{name}]", path.display())))
}

fn run(cli: Cli) -> CliResult<PathBuf> {
    if let Some(n) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::config(format!("--jobs: {e}")))?;
    }
    match cli.command {
        Command::Simulate { common } => {
            let cfg = section(load(&common)?.simulate, "simulate", &common.config)?;
            commands::simulate(&cfg, &common.out)
        }
        Command::Predict { common, train, test } => {
            let cfg = section(load(&common)?.predict, "predict", &common.config)?;
            commands::predict(&cfg, &train, &test, &common.out)
        }
        Command::Sensitivity {
            common,
            observational,
            targets,
        } => {
            let cfg = section(load(&common)?.sensitivity, "sensitivity", &common.config)?;
            commands::sensitivity(&cfg, &observational, &targets, &common.out)
        }
        Command::Experiment { common, resume } => {
            let cfg = section(load(&common)?.experiment, "experiment", &common.config)?;
            commands::experiment(&cfg, &common.out, resume)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let start = Instant::now();
    match run(cli) {
        Ok(out) => {
            info!("wrote {} in {:.2?}", out.display(), start.elapsed());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
