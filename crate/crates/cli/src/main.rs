mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::error::CliError;

#[derive(Parser)]
#[command(name = "longsurv", version, about = "Survival prediction from longitudinal images")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
pub struct Common {
    /// Flat key = value settings file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one setting, e.g. `--set epochs=50`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Only log warnings and errors.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort.
    Simulate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        cohort: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Fit the transformer at one landmark time.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        landmark_months: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Cross-validate methods over landmark scenarios.
    Evaluate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma list of surlonformer, fpca-cox, oracle.
        #[arg(long)]
        methods: Option<String>,
        /// `standard` or a comma list of `t*:dt` pairs in months.
        #[arg(long)]
        scenarios: Option<String>,
        #[arg(long)]
        folds: Option<usize>,
        #[arg(long)]
        runs: Option<usize>,
        /// Take the transformer architecture from this checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Occlusion sensitivity maps for one patient.
    Occlude {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        patient: String,
        #[arg(long)]
        landmark_months: Option<f64>,
        #[arg(long)]
        region: Option<usize>,
        #[arg(long)]
        fill: Option<f64>,
        /// Keep the sign of the risk change.
        #[arg(long)]
        signed: bool,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Dynamic survival curve for one patient.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Breslow table; defaults to baseline.csv beside the checkpoint.
        #[arg(long)]
        baseline: Option<PathBuf>,
        #[arg(long, required_unless_present = "baseline_patient")]
        data: Option<PathBuf>,
        #[arg(long, required_unless_present = "baseline_patient")]
        patient: Option<String>,
        /// Use risk 0 instead of a patient's images.
        #[arg(long)]
        baseline_patient: bool,
        #[arg(long)]
        landmark_months: Option<f64>,
        /// Comma list of increments in months.
        #[arg(long)]
        grid: Option<String>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

fn init_logging(quiet: bool) {
    let level = if quiet { log::LevelFilter::Warn } else { log::LevelFilter::Info };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .format_target(false)
        .init();
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate { out, cohort, common } => {
            init_logging(common.quiet);
            let mut s = commands::settings(&common)?;
            if let Some(c) = cohort {
                s.sim.cohort = c;
            }
            commands::simulate(&s, &out)
        }
        Command::Train { data, out, landmark_months, epochs, common } => {
            init_logging(common.quiet);
            let mut s = commands::settings(&common)?;
            if let Some(t) = landmark_months {
                s.landmark_months = t;
            }
            if let Some(e) = epochs {
                s.train.epochs = e;
            }
            commands::train(s, &data, &out)
        }
        Command::Evaluate { data, out, methods, scenarios, folds, runs, checkpoint, common } => {
            init_logging(common.quiet);
            let mut s = commands::settings(&common)?;
            if let Some(m) = methods {
                s.set("methods", &m).map_err(CliError::Usage)?;
            }
            if let Some(sc) = scenarios {
                s.set("scenarios", &sc).map_err(CliError::Usage)?;
            }
            if let Some(f) = folds {
                s.folds = f;
            }
            if let Some(r) = runs {
                s.runs = r;
            }
            commands::evaluate(s, &data, &out, checkpoint.as_deref())
        }
        Command::Occlude { checkpoint, data, patient, landmark_months, region, fill, signed, out, common } => {
            init_logging(common.quiet);
            let mut s = commands::settings(&common)?;
            if let Some(t) = landmark_months {
                s.landmark_months = t;
            }
            if let Some(r) = region {
                s.region_side = r;
            }
            if let Some(f) = fill {
                s.fill = f;
            }
            s.signed |= signed;
            commands::occlude(&s, &checkpoint, &data, &patient, &out)
        }
        Command::Predict {
            checkpoint,
            baseline,
            data,
            patient,
            baseline_patient,
            landmark_months,
            grid,
            out,
            common,
        } => {
            init_logging(common.quiet);
            let mut s = commands::settings(&common)?;
            if let Some(t) = landmark_months {
                s.landmark_months = t;
            }
            if let Some(g) = grid {
                s.set("grid_months", &g).map_err(CliError::Usage)?;
            }
            let target = if baseline_patient {
                None
            } else {
                // clap guarantees both are present without the flag
                Some((data.unwrap_or_default(), patient.unwrap_or_default()))
            };
            commands::predict(&s, &checkpoint, baseline.as_deref(), target, &out)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
