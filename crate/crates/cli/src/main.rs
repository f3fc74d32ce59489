//! `roughness`: simulate courses, label them from shocks, train the patch
//! classifier, and evaluate it.

// Range checks are written `!(x > lo)` so that NaN fails them too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::CliError;

#[derive(Debug, Parser)]
#[command(name = "roughness", version, about = "Self-supervised terrain roughness pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Pipeline config (TOML); flags override its values.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct Span {
    /// Keep only the part of the log after this along-track position (m).
    #[arg(long, value_name = "M")]
    from: Option<f64>,
    /// Keep only the part of the log up to this along-track position (m).
    #[arg(long, value_name = "M")]
    to: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ScorerKind {
    /// The trained model from --model.
    Model,
    /// Each patch's own label (a perfect ranking).
    Oracle,
    /// Largest height spread under either wheel.
    Baseline,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic course and record a sensor log.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Seed for terrain, pose error and IMU noise.
        #[arg(long)]
        seed: Option<u64>,
        /// Course length in metres.
        #[arg(long, value_name = "M")]
        length: Option<f64>,
        /// Expected bumps per kilometre.
        #[arg(long, value_name = "PER_KM")]
        density: Option<f64>,
    },
    /// Detect shock events and write per-patch labels.
    Label {
        #[command(flatten)]
        common: Common,
        /// Log directory written by `simulate`.
        #[arg(long, value_name = "DIR")]
        log: Option<PathBuf>,
        #[command(flatten)]
        span: Span,
    },
    /// Fit the classifier to a labeled log.
    Train {
        #[command(flatten)]
        common: Common,
        /// Log directory written by `simulate`.
        #[arg(long, value_name = "DIR")]
        log: Option<PathBuf>,
        #[command(flatten)]
        span: Span,
        /// Weight of the false-positive rate in the objective.
        #[arg(long)]
        lambda: Option<f64>,
        /// Coordinate-ascent rounds; the step sizes halve after each.
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// ROC analysis of a scorer on one or more logs.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Model file written by `train`.
        #[arg(long, value_name = "FILE")]
        model: Option<PathBuf>,
        /// A log to evaluate, as NAME=DIR; repeatable.
        #[arg(long = "log", value_name = "NAME=DIR")]
        logs: Vec<String>,
        /// How patches are ranked.
        #[arg(long, value_enum, default_value_t = ScorerKind::Model)]
        scorer: ScorerKind,
    },
    /// Reactive versus proactive speed-control trade-off on one log.
    Speedsim {
        #[command(flatten)]
        common: Common,
        /// Model file written by `train`.
        #[arg(long, value_name = "FILE")]
        model: Option<PathBuf>,
        /// Log directory written by `simulate`.
        #[arg(long, value_name = "DIR")]
        log: Option<PathBuf>,
        #[command(flatten)]
        span: Span,
        /// How patches are ranked.
        #[arg(long, value_enum, default_value_t = ScorerKind::Model)]
        scorer: ScorerKind,
        /// Distance ahead of a flagged patch at which to slow (m).
        #[arg(long, value_name = "M")]
        lookahead: Option<f64>,
        /// Slowed speed as a fraction of the planned speed.
        #[arg(long)]
        slow_fraction: Option<f64>,
        /// Speed recovery rate (mph/s).
        #[arg(long)]
        recovery_rate: Option<f64>,
    },
}

fn required<T>(value: Option<T>, flag: &str) -> Result<T, CliError> {
    value.ok_or_else(|| CliError::Usage(format!("missing required --{flag}")))
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate { common, seed, length, density } => {
            let out = required(common.out, "out")?;
            let mut cfg = config::PipelineConfig::load(common.config.as_deref())?;
            if let Some(seed) = seed {
                cfg.sim.seed = seed;
            }
            if let Some(length) = length {
                cfg.sim.track_length = length;
            }
            if let Some(density) = density {
                cfg.sim.terrain.bump_density = density;
            }
            commands::simulate(&cfg, &out)
        }
        Command::Label { common, log, span } => {
            let out = required(common.out, "out")?;
            let log = required(log, "log")?;
            let cfg = config::PipelineConfig::load(common.config.as_deref())?;
            commands::label(&cfg, &log, (span.from, span.to), &out)
        }
        Command::Train { common, log, span, lambda, iterations } => {
            let out = required(common.out, "out")?;
            let log = required(log, "log")?;
            let mut cfg = config::PipelineConfig::load(common.config.as_deref())?;
            if let Some(lambda) = lambda {
                cfg.training.lambda = lambda;
            }
            if let Some(iterations) = iterations {
                cfg.training.iterations = iterations;
            }
            commands::train(&cfg, &log, (span.from, span.to), &out)
        }
        Command::Eval { common, model, logs, scorer } => {
            let out = required(common.out, "out")?;
            if logs.is_empty() {
                return Err(CliError::Usage("at least one --log NAME=DIR is required".into()));
            }
            let logs = logs
                .iter()
                .map(|spec| match spec.split_once('=') {
                    Some((name, dir)) if commands::valid_label(name) && !dir.is_empty() => {
                        Ok((name.to_string(), PathBuf::from(dir)))
                    }
                    _ => Err(CliError::Usage(format!(
                        "--log expects NAME=DIR with NAME made of letters, digits, '-' or '_'; got {spec:?}"
                    ))),
                })
                .collect::<Result<Vec<_>, _>>()?;
            let cfg = config::PipelineConfig::load(common.config.as_deref())?;
            let model = commands::scorer_model(scorer == ScorerKind::Model, model.as_deref())?;
            commands::eval(&cfg, model.as_ref(), scorer_name(scorer), &logs, &out)
        }
        Command::Speedsim { common, model, log, span, scorer, lookahead, slow_fraction, recovery_rate } => {
            let out = required(common.out, "out")?;
            let log = required(log, "log")?;
            let mut cfg = config::PipelineConfig::load(common.config.as_deref())?;
            if let Some(lookahead) = lookahead {
                cfg.sweep.lookahead = lookahead;
            }
            if let Some(f) = slow_fraction {
                cfg.sweep.policy.slow_fraction = f;
            }
            if let Some(r) = recovery_rate {
                cfg.sweep.policy.recovery_rate = r;
            }
            let model = commands::scorer_model(scorer == ScorerKind::Model, model.as_deref())?;
            commands::speedsim(&cfg, model.as_ref(), scorer_name(scorer), &log, (span.from, span.to), &out)
        }
    }
}

fn scorer_name(kind: ScorerKind) -> &'static str {
    match kind {
        ScorerKind::Model => "model",
        ScorerKind::Oracle => "oracle",
        ScorerKind::Baseline => "baseline",
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("roughness: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
