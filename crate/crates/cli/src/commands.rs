use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use roughness::evaluation::{compare_controllers, labeled_scores, roc_curve, PatchScorer, TradeoffPoint};
use roughness::logio::{self, LogIoError, Manifest};
use roughness::pipeline::{label_log, LabeledPatches};
use roughness::scoring::PARAMETER_NAMES;
use roughness::simworld::{generate_terrain, simulate_traversal, split_log};
use roughness::training::{coordinate_ascent, TrainingError};
use roughness::{ClassifierModel, SensorLog};
use toml::{Table, Value};

use crate::config::{CliError, PipelineConfig};

pub const SUMMARY_FILE: &str = "summary.txt";
pub const LABELS_FILE: &str = "labels.txt";
pub const EVENTS_FILE: &str = "events.txt";
pub const MODEL_FILE: &str = "model.txt";
pub const PROGRESS_FILE: &str = "progress.txt";
pub const REACTIVE_FILE: &str = "tradeoff_reactive.txt";
pub const PROACTIVE_FILE: &str = "tradeoff_proactive.txt";

/// False-positive rates reported alongside each ROC curve.
const FP_REPORT: [(f64, &str); 5] = [(0.01, "01"), (0.02, "02"), (0.05, "05"), (0.10, "10"), (0.20, "20")];

/// Optional along-track window applied to a loaded log.
pub type SpanArgs = (Option<f64>, Option<f64>);

pub fn valid_label(name: &str) -> bool {
    !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

fn data(e: impl std::fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

fn log_error(e: LogIoError) -> CliError {
    match e {
        LogIoError::Manifest { .. } => CliError::Schema(e.to_string()),
        other => CliError::Data(other.to_string()),
    }
}

fn training_error(e: TrainingError) -> CliError {
    match e {
        TrainingError::Config(_) => CliError::Schema(e.to_string()),
        other => CliError::Data(other.to_string()),
    }
}

fn write(dir: &Path, name: &str, text: &str) -> Result<(), CliError> {
    let path = dir.join(name);
    fs::write(&path, text).map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

fn write_summary(dir: &Path, summary: &Table) -> Result<(), CliError> {
    write(dir, SUMMARY_FILE, &toml::to_string(summary).expect("summary serializes"))
}

fn int(n: usize) -> Value {
    Value::Integer(i64::try_from(n).expect("count fits in i64"))
}

/// Loads a log and keeps only the requested along-track window.
fn load_log(dir: &Path, (from, to): SpanArgs) -> Result<(SensorLog, Manifest), CliError> {
    let (mut log, manifest) = logio::read_log(dir).map_err(log_error)?;
    if let Some(from) = from {
        log = split_log(&log, from).map_err(data)?.1;
    }
    if let Some(to) = to {
        log = split_log(&log, to).map_err(data)?.0;
    }
    Ok((log, manifest))
}

fn labeled(cfg: &PipelineConfig, log: &SensorLog) -> Result<LabeledPatches, CliError> {
    label_log(log, &cfg.grid, &cfg.labels).map_err(data)
}

/// The model, when the scorer needs one.
pub fn scorer_model(needed: bool, path: Option<&Path>) -> Result<Option<ClassifierModel>, CliError> {
    if !needed {
        return Ok(None);
    }
    let path = path.ok_or_else(|| CliError::Usage("--model is required with --scorer model".into()))?;
    let text = fs::read_to_string(path).map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    ClassifierModel::from_document(&text).map(Some).map_err(|e| CliError::Schema(format!("{}: {e}", path.display())))
}

fn scorer(model: Option<&ClassifierModel>) -> PatchScorer<'_> {
    model.map_or(PatchScorer::Oracle, PatchScorer::Model)
}

fn pick_scorer<'a>(name: &str, model: Option<&'a ClassifierModel>) -> PatchScorer<'a> {
    match name {
        "baseline" => PatchScorer::Baseline,
        _ => scorer(model),
    }
}

pub fn simulate(cfg: &PipelineConfig, out: &Path) -> Result<(), CliError> {
    cfg.validate()?;
    let hash = cfg.record(out)?;
    let terrain = generate_terrain(cfg.sim.seed, cfg.sim.track_length, &cfg.sim.terrain).map_err(data)?;
    let log = simulate_traversal(&terrain, &cfg.sim).map_err(data)?;
    let mut manifest = Manifest {
        seed: cfg.sim.seed,
        config_hash: hash,
        bump_count: terrain.bumps.len(),
        patch_count: 0,
        positive_label_rate: 0.0,
        sim: cfg.sim.clone(),
    };
    logio::write_log(out, &log, &manifest).map_err(data)?;
    // Label what was written, so the manifest agrees with a later `label` run.
    let (stored, _) = logio::read_log(out).map_err(log_error)?;
    let labeled = labeled(cfg, &stored)?;
    manifest.patch_count = labeled.patches.len();
    manifest.positive_label_rate = labeled.positive_rate(cfg.training.ruggedness_threshold);
    logio::write_manifest(out, &manifest).map_err(data)
}

pub fn label(cfg: &PipelineConfig, log_dir: &Path, span: SpanArgs, out: &Path) -> Result<(), CliError> {
    cfg.validate()?;
    let hash = cfg.record(out)?;
    let (log, _) = load_log(log_dir, span)?;
    let labeled = labeled(cfg, &log)?;
    let th = cfg.training.ruggedness_threshold;

    let mut labels =
        String::from("# start_m end_m location_m left_points right_points ruggedness_g_per_mph positive\n");
    for p in &labeled.patches {
        let s = &p.sample;
        writeln!(
            labels,
            "{} {} {} {} {} {} {}",
            p.start,
            p.end,
            s.location,
            s.left_points.len(),
            s.right_points.len(),
            s.ruggedness_label,
            u8::from(s.is_positive(th))
        )
        .expect("write to string");
    }
    write(out, LABELS_FILE, &labels)?;

    let mut events = String::from("# t_peak_s peak_g speed_mph ruggedness_g_per_mph position_m\n");
    for e in &labeled.events {
        writeln!(events, "{} {} {} {} {}", e.t_peak, e.peak_accel, e.speed, e.ruggedness, e.position)
            .expect("write to string");
    }
    write(out, EVENTS_FILE, &events)?;

    let positives = labeled.patches.iter().filter(|p| p.sample.is_positive(th)).count();
    let scorable = labeled.patches.iter().filter(|p| p.sample.is_scorable()).count();
    let mut summary = Table::new();
    summary.insert("config_hash".into(), Value::String(hash));
    summary.insert("patches".into(), int(labeled.patches.len()));
    summary.insert("scorable_patches".into(), int(scorable));
    summary.insert("positive_patches".into(), int(positives));
    summary.insert("positive_rate".into(), Value::Float(labeled.positive_rate(th)));
    summary.insert("events".into(), int(labeled.events.len()));
    summary.insert("discarded_events".into(), int(labeled.discarded));
    summary.insert("ruggedness_threshold".into(), Value::Float(th));
    write_summary(out, &summary)
}

pub fn train(cfg: &PipelineConfig, log_dir: &Path, span: SpanArgs, out: &Path) -> Result<(), CliError> {
    cfg.validate()?;
    let hash = cfg.record(out)?;
    let (log, _) = load_log(log_dir, span)?;
    let dataset = labeled(cfg, &log)?.dataset();
    let outcome = coordinate_ascent(&dataset, &cfg.training).map_err(training_error)?;

    write(out, MODEL_FILE, &outcome.model.to_document())?;
    let mut progress = String::from("# round coordinate name sign objective mu\n");
    for r in &outcome.progress {
        writeln!(
            progress,
            "{} {} {} {} {} {}",
            r.round, r.coordinate, PARAMETER_NAMES[r.coordinate], r.sign, r.objective, r.mu
        )
        .expect("write to string");
    }
    write(out, PROGRESS_FILE, &progress)?;

    let rates = outcome.rates;
    let mut summary = Table::new();
    summary.insert("config_hash".into(), Value::String(hash));
    summary.insert("patches".into(), int(dataset.len()));
    summary.insert("objective".into(), Value::Float(outcome.objective));
    summary.insert("tp_rate".into(), Value::Float(rates.tp_rate));
    summary.insert("fp_rate".into(), Value::Float(rates.fp_rate));
    summary.insert("tp".into(), int(rates.tp));
    summary.insert("fp".into(), int(rates.fp));
    summary.insert("tn".into(), int(rates.tn));
    summary.insert("fn".into(), int(rates.fn_));
    summary.insert("mu".into(), Value::Float(outcome.model.mu));
    summary.insert("saved_mu".into(), Value::Float(outcome.saved_mu));
    summary.insert("accepted_moves".into(), int(outcome.progress.len()));
    summary.insert("evaluations".into(), int(outcome.evaluations));
    write_summary(out, &summary)
}

pub fn eval(
    cfg: &PipelineConfig,
    model: Option<&ClassifierModel>,
    scorer_name: &str,
    logs: &[(String, PathBuf)],
    out: &Path,
) -> Result<(), CliError> {
    cfg.validate()?;
    let mut names: Vec<&str> = logs.iter().map(|(n, _)| n.as_str()).collect();
    names.sort_unstable();
    if names.windows(2).any(|w| w[0] == w[1]) {
        return Err(CliError::Usage("--log names must be distinct".into()));
    }
    let hash = cfg.record(out)?;
    let scorer = pick_scorer(scorer_name, model);
    let mut summary = Table::new();
    summary.insert("config_hash".into(), Value::String(hash));
    summary.insert("scorer".into(), Value::String(scorer_name.into()));
    for (name, dir) in logs {
        let (log, _) = load_log(dir, (None, None))?;
        let dataset = labeled(cfg, &log)?.dataset();
        let scores = labeled_scores(&dataset, scorer, cfg.training.ruggedness_threshold);
        let roc = roc_curve(&scores).map_err(|e| CliError::Data(format!("log {name}: {e}")))?;
        let mut text = String::from("# fp_rate tp_rate\n");
        for (fp, tp) in &roc.points {
            writeln!(text, "{fp} {tp}").expect("write to string");
        }
        write(out, &format!("roc_{name}.txt"), &text)?;
        summary.insert(format!("patches_{name}"), int(dataset.len()));
        summary.insert(format!("positives_{name}"), int(scores.iter().filter(|s| s.1).count()));
        summary.insert(format!("auc_{name}"), Value::Float(roc.auc));
        for (fp, tag) in FP_REPORT {
            summary.insert(format!("tp_at_fp{tag}_{name}"), Value::Float(roc.tp_at_fp(fp)));
        }
    }
    write_summary(out, &summary)
}

fn write_curve(dir: &Path, name: &str, points: &[TradeoffPoint]) -> Result<(), CliError> {
    let mut text = String::from("# completion_time_rel total_shock_rel setting\n");
    for p in points {
        writeln!(text, "{} {} {}", p.completion_time, p.total_shock, p.setting).expect("write to string");
    }
    write(dir, name, &text)
}

pub fn speedsim(
    cfg: &PipelineConfig,
    model: Option<&ClassifierModel>,
    scorer_name: &str,
    log_dir: &Path,
    span: SpanArgs,
    out: &Path,
) -> Result<(), CliError> {
    cfg.validate()?;
    let hash = cfg.record(out)?;
    let (log, _) = load_log(log_dir, span)?;
    let labeled = labeled(cfg, &log)?;
    let scorer = pick_scorer(scorer_name, model);
    let report = compare_controllers(&log, &labeled.patches, scorer, &cfg.sweep, &cfg.labels).map_err(data)?;
    write_curve(out, REACTIVE_FILE, &report.reactive)?;
    write_curve(out, PROACTIVE_FILE, &report.proactive)?;

    let c = report.comparison;
    let mut summary = Table::new();
    summary.insert("config_hash".into(), Value::String(hash));
    summary.insert("scorer".into(), Value::String(scorer_name.into()));
    summary.insert("unmodified_time_s".into(), Value::Float(report.unmodified.completion_time));
    summary.insert("unmodified_shock_g".into(), Value::Float(report.unmodified.total_shock));
    summary.insert("unmodified_events".into(), int(report.unmodified.events.len()));
    summary.insert("reactive_settings".into(), int(report.reactive.len()));
    summary.insert("proactive_settings".into(), int(report.proactive.len()));
    summary.insert("best_reduction".into(), Value::Float(c.best_reduction));
    summary.insert("best_reduction_time".into(), Value::Float(c.best_reduction_time));
    summary.insert("matched_pairs".into(), int(c.matched_pairs));
    summary.insert("dominated_fraction".into(), Value::Float(c.dominated_fraction));
    write_summary(out, &summary)
}
