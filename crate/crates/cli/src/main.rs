use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use shapval_cli::commands::{self, SimulateArgs};
use shapval_cli::{load, CliError, CliResult, Ctx};

#[derive(Parser)]
#[command(name = "shapval", version, about = "Shapley-variant audit pipeline")]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; defaults to the config's `out_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Split and preprocess every dataset.
    PrepareData,
    /// Train both model families per dataset.
    TrainModels,
    /// Train one amortizer per variant and (dataset, model).
    TrainAmortizers,
    /// KernelSHAP reference attributions on the test split.
    ComputeOracle,
    /// Metric report, agreement matrices and per-case metrics.
    EvaluateMetrics,
    /// Run the study service until interrupted.
    ServeStudy,
    /// Write a synthetic review log with planted arm effects.
    SimulateAnalysts {
        #[arg(long)]
        n: Option<usize>,
        /// Accuracy odds ratio for every explanation arm.
        #[arg(long)]
        accuracy_or: Option<f64>,
        /// Latent confidence shift (log-odds) for every explanation arm.
        #[arg(long)]
        confidence_shift: Option<f64>,
        #[arg(long)]
        clarity_or: Option<f64>,
        #[arg(long)]
        time_multiplier: Option<f64>,
    },
    /// Fit the outcome models to a review log.
    AnalyzeLogs {
        /// Defaults to the simulated log in the output directory.
        #[arg(long)]
        log: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> CliResult<serde_json::Value> {
    let config = cli.config.ok_or_else(|| CliError::Usage("--config is required".into()))?;
    let loaded = load(&config, cli.seed, cli.out.as_deref())?;
    let ctx = Ctx::new(&loaded);
    match cli.command {
        Command::PrepareData => commands::prepare_data(&ctx),
        Command::TrainModels => commands::train_models(&ctx),
        Command::TrainAmortizers => commands::train_amortizers(&ctx),
        Command::ComputeOracle => commands::compute_oracle(&ctx),
        Command::EvaluateMetrics => commands::evaluate_metrics(&ctx),
        Command::ServeStudy => commands::serve_study(&ctx),
        Command::SimulateAnalysts { n, accuracy_or, confidence_shift, clarity_or, time_multiplier } => {
            commands::simulate(&ctx, &SimulateArgs { n, accuracy_or, confidence_shift, clarity_or, time_multiplier })
        }
        Command::AnalyzeLogs { log } => commands::analyze(&ctx, log),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SHAPVAL_LOG_LEVEL", "info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => e.exit(),
        Err(e) => {
            let err = CliError::Usage(e.to_string().trim().to_string());
            eprintln!("{}", err.to_json());
            return ExitCode::from(err.exit_code() as u8);
        }
    };
    match run(cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
