use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use harp_cli::{predict, rate_fit, run_experiment, CliError, ExperimentConfig};

#[derive(Parser)]
#[command(name = "harp", version, about = "Hessian-aware randomized perturbation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every configured algorithm and write CSV results.
    Run {
        config: PathBuf,
        /// Output directory; overrides `run.output_dir` and HARP_OUTPUT_DIR.
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Override a config entry, e.g. `--set run.replicates=10`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Print asymptotic predictions for the configured gains.
    Predict {
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Fit the log-log slope of RMS distance in a curves.csv.
    RateFit {
        curves: PathBuf,
        #[arg(long, num_args = 2, value_names = ["LO", "HI"])]
        window: Option<Vec<usize>>,
    },
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run { config, output, set } => {
            let cfg = ExperimentConfig::load(&config, &set)?;
            let dir = cfg.output_dir(output.as_deref());
            let summary = run_experiment(&cfg, &dir)?;
            print!("{}", summary.report);
            println!("results written to {}", summary.output_dir.display());
            if !summary.failed.is_empty() {
                return Err(CliError::Numerical(format!("every replicate diverged for {}", summary.failed.join(", "))));
            }
        }
        Command::Predict { config, set } => {
            let cfg = ExperimentConfig::load(&config, &set)?;
            print!("{}", predict(&cfg)?);
        }
        Command::RateFit { curves, window } => {
            let window = window.map(|w| (w[0], w[1]));
            print!("{}", rate_fit(&curves, window)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
