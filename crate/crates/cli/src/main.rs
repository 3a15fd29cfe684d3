use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

mod commands;

/// Nominal and robust logit estimation for discrete choice data.
#[derive(Debug, Parser)]
#[command(name = "robust-choice", version, about)]
struct Cli {
    /// Worker threads for parallel fits and replications (default: one per core).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Exit with status 3 when any fit fails to converge.
    #[arg(long, global = true)]
    strict: bool,

    /// Log more (-v info, -vv debug). RUST_LOG also works.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Preset {
    /// walk vs bus, four features
    Binary,
    /// train / Swissmetro / car, eight features
    ThreeMode,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit the `[estimator]` of the config; prints the coefficient table and writes JSON.
    Fit {
        data: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Where to write the fit as JSON.
        #[arg(long, default_value = "fit.json")]
        out: PathBuf,
    },
    /// Log-likelihood and accuracy of saved coefficients on a dataset.
    Evaluate {
        data: PathBuf,
        #[arg(long)]
        beta: PathBuf,
    },
    /// Fit a test mechanism on clean data, re-simulate choices, and perturb them.
    Synth {
        clean_test: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Output directory (created if missing).
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit every model once and score it on repeatedly perturbed test sets.
    Experiment {
        train: PathBuf,
        clean_test: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Output directory (created if missing).
        #[arg(long)]
        out: PathBuf,
    },
    /// Hold-out grid search over rho or gamma.
    Tune {
        train: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Also write the score table as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Revenue-maximizing price multiplier for the `[pricing]` product.
    Price {
        data: PathBuf,
        #[arg(long)]
        beta: PathBuf,
        #[arg(long)]
        beta_true: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Unperturbed attributes for the realized revenue (default: `data`).
        #[arg(long)]
        clean: Option<PathBuf>,
    },
    /// Fisher traces, prediction-error bound, and bound sandwich for saved coefficients.
    Diagnose {
        data: PathBuf,
        #[arg(long)]
        beta: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Nominal coefficients to compare the robust trace against (default: `--beta`).
        #[arg(long)]
        beta_mle: Option<PathBuf>,
        /// Observations used for the bound sandwich.
        #[arg(long, default_value_t = 50)]
        subsample: usize,
        #[arg(long, default_value_t = 1.0)]
        lipschitz: f64,
        /// E‖Δx‖₂ (default: the root mean square under the `[experiment]` noise).
        #[arg(long)]
        perturbation_l2: Option<f64>,
        /// Error rate on clean data (default: 1 − accuracy on `data`).
        #[arg(long)]
        baseline_error: Option<f64>,
        /// Also write the report as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate a dataset from a built-in design with known coefficients.
    Simulate {
        #[arg(long, value_enum)]
        preset: Preset,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        /// Default: ROBUST_CHOICE_SEED, else 0.
        #[arg(long)]
        seed: Option<u64>,
        /// Dataset CSV to write.
        #[arg(long)]
        out: PathBuf,
        /// Also write a config holding the preset's `[model]` section.
        #[arg(long)]
        model_out: Option<PathBuf>,
        /// Also write the true coefficients as JSON.
        #[arg(long)]
        beta_out: Option<PathBuf>,
    },
}

/// Why a command stopped.
pub enum Failure {
    Error(robust_choice::Error),
    NotConverged(String),
}

impl From<robust_choice::Error> for Failure {
    fn from(e: robust_choice::Error) -> Self {
        Failure::Error(e)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).format_timestamp(None).init();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match commands::run(cli.command, cli.strict) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::NotConverged(what)) => {
            eprintln!("error: {what} did not converge");
            ExitCode::from(3)
        }
        Err(Failure::Error(e)) => {
            let mut msg = e.to_string();
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                let text = s.to_string();
                if !msg.contains(&text) {
                    msg.push_str(": ");
                    msg.push_str(&text);
                }
                source = s.source();
            }
            eprintln!("error: {msg}");
            ExitCode::from(if e.is_validation() { 2 } else { 1 })
        }
    }
}
