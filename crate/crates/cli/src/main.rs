mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use prnet_core::data::SynthSpec;

use commands::{GenerateArgs, Layers};
use config::{parse_ratios, SEED_ENV};

#[derive(Parser, Debug)]
#[command(
    name = "prnet",
    version,
    about = "Periodic-residual forecasting of grid crowd flows",
    after_help = "Exit codes: 0 success, 1 usage or I/O error, 2 numerical failure.\n\
                  Config precedence: defaults < stored model config < --config < PRNET_SEED < flags."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct ConfigArgs {
    /// `key = value` config file [default: none, built-in defaults apply]
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override one config key; repeatable [default: none]
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Seed for initialization, shuffling and the split [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on it [default: 1]
    #[arg(long)]
    threads: Option<usize>,
}

impl ConfigArgs {
    fn layers(&self, base_dir: Option<PathBuf>, extra: Vec<String>) -> Layers {
        let mut overrides = self.set.clone();
        overrides.extend(extra);
        if let Some(seed) = self.seed {
            overrides.push(format!("seed={seed}"));
        }
        if let Some(threads) = self.threads {
            overrides.push(format!("threads={threads}"));
        }
        Layers {
            base_dir,
            file: self.config.clone(),
            env_seed: std::env::var(SEED_ENV).ok(),
            overrides,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic flow series with weekly periodicity
    Generate {
        /// Output series file
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
        /// Grid size as HxW
        #[arg(long, default_value = "8x8")]
        grid: String,
        /// Number of weeks
        #[arg(long, default_value_t = 8)]
        weeks: usize,
        /// Time steps per day
        #[arg(long, default_value_t = 24)]
        steps_per_day: usize,
        /// Standard deviation of additive Gaussian noise
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        /// Linear trend added per step
        #[arg(long, default_value_t = 0.0)]
        trend: f64,
        /// Generator seed; PRNET_SEED applies when absent [default: 0]
        #[arg(long)]
        seed: Option<u64>,
        /// Periodic segments the data must support
        #[arg(long, default_value_t = 3)]
        periods: usize,
    },
    /// Split, scale and train; writes a checkpoint and history.csv
    Train {
        /// Series file (.prnf with sidecar, or .csv)
        #[arg(long, value_name = "PATH")]
        data: PathBuf,
        /// Output directory
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Fraction of training windows to keep, earliest first [default: 1]
        #[arg(long)]
        budget_ratio: Option<f64>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Score a checkpoint and the historical average on the test split
    Evaluate {
        /// Checkpoint directory written by `train`
        #[arg(long, value_name = "DIR")]
        model: PathBuf,
        /// Series file
        #[arg(long, value_name = "PATH")]
        data: PathBuf,
        /// Directory for report.json and report.csv
        #[arg(long, value_name = "DIR")]
        report: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Forecast the window starting at one absolute time index
    Predict {
        /// Checkpoint directory written by `train`
        #[arg(long, value_name = "DIR")]
        model: PathBuf,
        /// Series file
        #[arg(long, value_name = "PATH")]
        data: PathBuf,
        /// Absolute index of the first predicted step
        #[arg(long)]
        at: usize,
        /// Output PRNF file with shape [H, W, 2, T_pred]
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
        /// Clamp emitted flows at zero [default: true]
        #[arg(long, value_name = "BOOL", num_args = 0..=1, default_missing_value = "true")]
        clamp_nonneg: Option<bool>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Train on growing fractions of the training set and score each
    Sweep {
        /// Series file
        #[arg(long, value_name = "PATH")]
        data: PathBuf,
        /// Comma-separated ratios in (0, 1] [default: 0.1,0.5,1]
        #[arg(long)]
        ratios: Option<String>,
        /// Output directory for sweep.csv
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate {
            out,
            grid,
            weeks,
            steps_per_day,
            noise,
            trend,
            seed,
            periods,
        } => {
            let (height, width) = commands::parse_grid(&grid)?;
            let seed = match seed {
                Some(s) => s,
                None => match std::env::var(SEED_ENV) {
                    Ok(v) => v.trim().parse().with_context(|| format!("reading {SEED_ENV}"))?,
                    Err(_) => 0,
                },
            };
            commands::generate(&GenerateArgs {
                out,
                spec: SynthSpec {
                    height,
                    width,
                    weeks,
                    steps_per_day,
                    noise_sd: noise,
                    trend_slope: trend,
                    seed,
                },
                periods,
            })
        }
        Command::Train {
            data,
            out,
            budget_ratio,
            config,
        } => {
            let extra = budget_ratio.map(|r| format!("budget_ratio={r}")).into_iter().collect();
            let run = config.layers(None, extra).resolve()?;
            commands::train_cmd(&data, &out, &run)
        }
        Command::Evaluate {
            model,
            data,
            report,
            config,
        } => {
            let run = config.layers(Some(model.clone()), Vec::new()).resolve()?;
            commands::evaluate_cmd(&model, &data, &report, &run)
        }
        Command::Predict {
            model,
            data,
            at,
            out,
            clamp_nonneg,
            config,
        } => {
            let extra = clamp_nonneg.map(|c| format!("clamp_nonneg={c}")).into_iter().collect();
            let run = config.layers(Some(model.clone()), extra).resolve()?;
            commands::predict_cmd(&model, &data, at, &out, &run)
        }
        Command::Sweep {
            data,
            ratios,
            out,
            config,
        } => {
            let mut extra = Vec::new();
            if let Some(r) = ratios {
                parse_ratios(&r)?;
                extra.push(format!("ratios={r}"));
            }
            let run = config.layers(None, extra).resolve()?;
            commands::sweep_cmd(&data, &out, &run)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
