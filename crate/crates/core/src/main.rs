use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use seasonal_did::cli::{self, CliError, Overrides, RunConfig, RunMode, EXIT_CONFIG};

#[derive(Parser)]
#[command(name = "seasonal-did", version, about = "Difference-in-differences estimates of seasonal import protection on weekly prices")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Propensity trim threshold, e.g. 0.95 or 0.99.
    #[arg(long)]
    trim: Option<f64>,
    /// Bootstrap replications.
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
    /// Report and skip invalid rows instead of failing.
    #[arg(long)]
    skip_bad_rows: bool,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            trim: self.trim,
            reps: self.reps,
            workers: self.workers,
            skip_bad_rows: self.skip_bad_rows,
        }
    }

    fn load(&self) -> Result<RunConfig, CliError> {
        let path = self
            .config
            .as_ref()
            .ok_or_else(|| CliError::Config("--config is required".into()))?;
        RunConfig::load(path, &self.overrides())
    }
}

#[derive(Subcommand)]
enum Command {
    /// Validate price files and print row counts.
    Ingest {
        #[command(flatten)]
        common: Common,
        /// Price files; defaults to those named in --config.
        files: Vec<PathBuf>,
    },
    /// Write a synthetic panel with a known effect.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "sim")]
        out: PathBuf,
    },
    /// Estimate every configured task and write the reports.
    Run {
        #[command(flatten)]
        common: Common,
    },
    /// Pre-trend placebo tests only.
    Pretrend {
        #[command(flatten)]
        common: Common,
    },
    /// Descriptive statistics by country and phase.
    Describe {
        #[command(flatten)]
        common: Common,
    },
    /// Regress estimated effects on product attributes.
    Heterogeneity {
        #[command(flatten)]
        common: Common,
        /// Effect table; defaults to effects.csv in the configured output directory.
        #[arg(long)]
        effects: Option<PathBuf>,
        /// Attribute file; defaults to the configured one.
        #[arg(long)]
        attributes: Option<PathBuf>,
        #[arg(long, default_value = "ipw")]
        method: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn dispatch(command: Command) -> Result<i32, CliError> {
    match command {
        Command::Ingest { common, files } => {
            let files = if files.is_empty() { common.load()?.prices.to_vec() } else { files };
            print!("{}", cli::ingest(&files, common.skip_bad_rows)?);
            Ok(cli::EXIT_OK)
        }
        Command::Simulate { common, out } => {
            print!("{}", cli::simulate(common.config.as_deref(), common.seed, &out)?);
            Ok(cli::EXIT_OK)
        }
        Command::Run { common } => {
            let summary = cli::run(&common.load()?, RunMode::Full)?;
            eprint!("{}", summary.log);
            Ok(summary.exit_code())
        }
        Command::Pretrend { common } => {
            let summary = cli::run(&common.load()?, RunMode::Pretrend)?;
            eprint!("{}", summary.log);
            Ok(summary.exit_code())
        }
        Command::Describe { common } => {
            eprint!("{}", cli::describe(&common.load()?)?);
            Ok(cli::EXIT_OK)
        }
        Command::Heterogeneity { common, effects, attributes, method, out } => {
            let cfg = match (&effects, &attributes, &out) {
                (Some(_), Some(_), Some(_)) => None,
                _ => Some(common.load()?),
            };
            let effects = effects
                .or_else(|| cfg.as_ref().map(|c| c.output_dir.join("effects.csv")))
                .expect("config loaded");
            let attributes = attributes
                .or_else(|| cfg.as_ref().and_then(|c| c.attributes.clone()))
                .ok_or_else(|| CliError::Config("no attribute file given".into()))?;
            let out = out
                .or_else(|| cfg.as_ref().map(|c| c.output_dir.join("heterogeneity.csv")))
                .expect("config loaded");
            eprint!("{}", cli::heterogeneity(&effects, &attributes, &method, &out)?);
            Ok(cli::EXIT_OK)
        }
    }
}

fn main() -> ExitCode {
    let args = Cli::parse();
    match dispatch(args.command) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_CONFIG as u8)
        }
    }
}
