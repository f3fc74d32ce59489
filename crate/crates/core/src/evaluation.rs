//! ROC analysis of patch scores and closed-loop replay of reactive and
//! proactive speed controllers over a recorded course.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::labeling::{
    design_highpass, extract_events, filter_accel, CausalFir, ImuSample, PatchSample, ShockEvent, SpeedTrace,
    MPH_TO_MPS,
};
use crate::pipeline::{LabelConfig, LocatedPatch};
use crate::scoring::{score_patch, ClassifierModel};
use crate::simworld::{wheel_contacts, SensorLog, ShockSynth};

#[derive(Debug, Error, PartialEq)]
pub enum EvaluationError {
    #[error("ROC needs at least one positive and one negative example")]
    SingleClass,
    #[error("sweep is empty")]
    EmptySweep,
    #[error("invalid controller setting: {0}")]
    Setting(String),
    #[error("replay failed: {0}")]
    Replay(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// (fp_rate, tp_rate), from (0, 0) to (1, 1).
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

impl RocCurve {
    /// Best true-positive rate among operating points with fp_rate ≤ `fp`.
    pub fn tp_at_fp(&self, fp: f64) -> f64 {
        self.points.iter().filter(|p| p.0 <= fp).map(|p| p.1).fold(0.0, f64::max)
    }
}

/// Sweeps the threshold over every distinct score, highest first. Tied
/// scores move together, so each distinct value contributes one point.
pub fn roc_curve(scores: &[(f64, bool)]) -> Result<RocCurve, EvaluationError> {
    let positives = scores.iter().filter(|s| s.1).count();
    let negatives = scores.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(EvaluationError::SingleClass);
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let value = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == value {
            if sorted[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / negatives as f64, tp as f64 / positives as f64));
    }
    let auc = points.windows(2).map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) * 0.5).sum();
    Ok(RocCurve { points, auc })
}

/// How patches are ranked for ROC analysis and proactive control.
#[derive(Debug, Clone, Copy)]
pub enum PatchScorer<'a> {
    /// The learned classifier's combined roughness.
    Model(&'a ClassifierModel),
    /// The patch's own ruggedness label; a perfect ranking.
    Oracle,
    /// Largest height spread seen under either wheel, ignoring time and
    /// pose-rate terms.
    Baseline,
}

impl PatchScorer<'_> {
    /// Score of one patch; unscorable patches rank below everything.
    pub fn score(&self, patch: &PatchSample) -> f64 {
        match self {
            PatchScorer::Model(m) => score_patch(&patch.left_points, &patch.right_points, &m.params)
                .map(|s| s.r_combined)
                .unwrap_or(f64::NEG_INFINITY),
            PatchScorer::Oracle => patch.ruggedness_label,
            PatchScorer::Baseline => {
                if !patch.is_scorable() {
                    return f64::NEG_INFINITY;
                }
                let spread = |pts: &[crate::geometry::LaserPoint]| {
                    let (lo, hi) =
                        pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.z), hi.max(p.z)));
                    hi - lo
                };
                spread(&patch.left_points).max(spread(&patch.right_points))
            }
        }
    }

    /// The threshold a patch must exceed to be flagged rough.
    pub fn default_threshold(&self, ruggedness_threshold: f64) -> f64 {
        match self {
            PatchScorer::Model(m) => m.mu,
            // Labels at the threshold are positive, so flag anything not below it.
            PatchScorer::Oracle => ruggedness_threshold - f64::EPSILON,
            PatchScorer::Baseline => 0.05,
        }
    }
}

pub fn labeled_scores(patches: &[PatchSample], scorer: PatchScorer, ruggedness_threshold: f64) -> Vec<(f64, bool)> {
    patches.iter().map(|p| (scorer.score(p), p.is_positive(ruggedness_threshold))).collect()
}

/// Speed reaction shared by both controllers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpeedPolicy {
    /// Slowed speed as a fraction of the planned speed.
    pub slow_fraction: f64,
    /// Recovery toward the planned speed, mph/s.
    pub recovery_rate: f64,
}

impl Default for SpeedPolicy {
    fn default() -> Self {
        Self { slow_fraction: 0.6, recovery_rate: 2.0 }
    }
}

impl SpeedPolicy {
    pub fn validate(&self) -> Result<(), EvaluationError> {
        if !(self.slow_fraction > 0.0 && self.slow_fraction <= 1.0) {
            return Err(EvaluationError::Setting("slow_fraction must lie in (0, 1]".into()));
        }
        if !(self.recovery_rate > 0.0) {
            return Err(EvaluationError::Setting("recovery_rate must be positive".into()));
        }
        Ok(())
    }
}

/// Along-track stretches where the proactive controller must be slow.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ProactivePlan {
    /// (slow from, slow until, known from): the patch's extent widened by the
    /// lookahead, and the odometry position at which it was first fully seen.
    zones: Vec<(f64, f64, f64)>,
}

impl ProactivePlan {
    /// Flags every patch scoring strictly above `mu`.
    pub fn new(
        patches: &[LocatedPatch],
        scores: &[f64],
        mu: f64,
        lookahead: f64,
        speeds: &SpeedTrace,
    ) -> Result<Self, EvaluationError> {
        if !(lookahead > 0.0) {
            return Err(EvaluationError::Setting("lookahead must be positive".into()));
        }
        let mut zones: Vec<(f64, f64, f64)> = patches
            .iter()
            .zip(scores)
            .filter(|(_, s)| **s > mu)
            .filter_map(|(p, _)| p.observed_at.map(|t| (p.start - lookahead, p.end, speeds.position_at(t))))
            .collect();
        zones.sort_by(|a, b| a.0.total_cmp(&b.0));
        Ok(Self { zones })
    }

    pub fn len(&self) -> usize {
        self.zones.len()
    }

    pub fn is_empty(&self) -> bool {
        self.zones.is_empty()
    }

    fn demands_slow(&self, s: f64, cursor: &mut usize) -> bool {
        while *cursor < self.zones.len() && self.zones[*cursor].1 < s {
            *cursor += 1;
        }
        self.zones[*cursor..].iter().take_while(|z| z.0 <= s).any(|z| s <= z.1 && z.2 <= s)
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Controller<'a> {
    /// Drive the planned speed.
    Unmodified,
    /// Slow whenever the causally filtered |accel| exceeds the trigger (G).
    Reactive {
        trigger: f64,
    },
    Proactive {
        plan: &'a ProactivePlan,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    /// Seconds from the start of the log to its far end.
    pub completion_time: f64,
    /// Sum of extracted shock peaks, G.
    pub total_shock: f64,
    pub events: Vec<ShockEvent>,
}

/// Re-drives the course under `controller` and re-synthesizes the IMU with
/// the log's shock model and noise stream. Gravity is held at 1 G; its slow
/// variation sits entirely in the filter's stopband.
pub fn replay(
    log: &SensorLog,
    controller: Controller,
    policy: &SpeedPolicy,
    labels: &LabelConfig,
) -> Result<RunResult, EvaluationError> {
    policy.validate()?;
    if let Controller::Reactive { trigger } = controller {
        if !(trigger > 0.0) {
            return Err(EvaluationError::Setting("trigger must be positive".into()));
        }
    }
    let cfg = &log.config;
    let rate = cfg.imu_rate;
    let dt = 1.0 / rate;
    let spec = design_highpass(rate, labels.cutoff_hz, labels.filter_taps)
        .map_err(|e| EvaluationError::Replay(e.to_string()))?;
    let (s_start, s_end) = log.span();
    let t_start = log.speeds.span().0;
    let contacts: Vec<_> = wheel_contacts(&log.ground_truth_bumps, cfg.half_track)
        .into_iter()
        .filter(|c| c.position > s_start && c.position <= s_end)
        .collect();

    let mut synth = ShockSynth::new(cfg.shock, rate, cfg.imu_noise_rng());
    let mut causal = CausalFir::new(&spec);
    let mut cursor = 0;
    let mut next_contact = 0;
    let mut limit = f64::INFINITY;
    let mut s = s_start;
    let mut imu = Vec::new();
    let mut trace = Vec::new();
    let mut positions = Vec::new();
    let mut n = 0usize;
    let completion_time = loop {
        let t = t_start + n as f64 * dt;
        let planned = cfg.planned_speed(s);
        let speed = planned.min(limit);
        while next_contact < contacts.len() && contacts[next_contact].position <= s {
            synth.strike(cfg.shock.gain * speed * contacts[next_contact].height);
            next_contact += 1;
        }
        let accel = synth.next_sample(1.0);
        imu.push(ImuSample { timestamp: t, accel_z: accel });
        trace.push((t, speed));
        positions.push(s);

        let slow = policy.slow_fraction * planned;
        let filtered = causal.push(accel);
        let wants_slow = match controller {
            Controller::Unmodified => false,
            Controller::Reactive { trigger } => filtered.abs() > trigger,
            Controller::Proactive { plan } => plan.demands_slow(s, &mut cursor),
        };
        limit = if wants_slow {
            limit.min(slow)
        } else if limit < f64::INFINITY {
            let raised = limit + policy.recovery_rate * dt;
            if raised >= planned {
                f64::INFINITY
            } else {
                raised
            }
        } else {
            limit
        };

        let mps = speed * MPH_TO_MPS;
        if s + mps * dt >= s_end {
            break (t - t_start) + (s_end - s) / mps;
        }
        s += mps * dt;
        n += 1;
    };

    // Let queued ringing from late strikes play out past the finish line.
    let t_end = trace.last().map_or(t_start, |x| x.0);
    for k in 1..=spec.taps.len() {
        let t = t_end + k as f64 * dt;
        imu.push(ImuSample { timestamp: t, accel_z: synth.next_sample(1.0) });
        trace.push((t, trace.last().map_or(0.0, |x| x.1)));
        positions.push(s_end);
    }
    let speeds = SpeedTrace::with_positions(trace, positions).map_err(|e| EvaluationError::Replay(e.to_string()))?;
    let filtered = filter_accel(&imu, &spec).map_err(|e| EvaluationError::Replay(e.to_string()))?;
    let events = extract_events(&filtered, &speeds, labels.min_separation, labels.event_floor).events;
    let total_shock = events.iter().map(|e| e.peak_accel).sum();
    Ok(RunResult { completion_time, total_shock, events })
}

pub fn reactive_controller(
    log: &SensorLog,
    trigger: f64,
    policy: &SpeedPolicy,
    labels: &LabelConfig,
) -> Result<RunResult, EvaluationError> {
    replay(log, Controller::Reactive { trigger }, policy, labels)
}

/// Proactive replay flagging patches whose score under `scorer` exceeds `mu`.
#[allow(clippy::too_many_arguments)]
pub fn proactive_controller(
    log: &SensorLog,
    patches: &[LocatedPatch],
    scorer: PatchScorer,
    mu: f64,
    lookahead: f64,
    policy: &SpeedPolicy,
    labels: &LabelConfig,
) -> Result<RunResult, EvaluationError> {
    let scores: Vec<f64> = patches.iter().map(|p| scorer.score(&p.sample)).collect();
    let plan = ProactivePlan::new(patches, &scores, mu, lookahead, &log.speeds)?;
    replay(log, Controller::Proactive { plan: &plan }, policy, labels)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TradeoffPoint {
    /// Relative to the unmodified run.
    pub completion_time: f64,
    /// Relative to the unmodified run.
    pub total_shock: f64,
    pub setting: f64,
}

/// Runs `run` once per setting and normalizes by `baseline`.
pub fn tradeoff_curve(
    baseline: &RunResult,
    sweep: &[f64],
    mut run: impl FnMut(f64) -> Result<RunResult, EvaluationError>,
) -> Result<Vec<TradeoffPoint>, EvaluationError> {
    if sweep.is_empty() {
        return Err(EvaluationError::EmptySweep);
    }
    if !(baseline.total_shock > 0.0 && baseline.completion_time > 0.0) {
        return Err(EvaluationError::Replay("unmodified run felt no shock".into()));
    }
    sweep
        .iter()
        .map(|&setting| {
            let r = run(setting)?;
            Ok(TradeoffPoint {
                completion_time: r.completion_time / baseline.completion_time,
                total_shock: r.total_shock / baseline.total_shock,
                setting,
            })
        })
        .collect()
}

/// Proactive-versus-reactive summary at matched completion times.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveComparison {
    /// Largest `1 - proactive/reactive` shock over pairs whose completion
    /// times agree within the tolerance.
    pub best_reduction: f64,
    /// Reactive time of the pair achieving `best_reduction`.
    pub best_reduction_time: f64,
    pub matched_pairs: usize,
    /// Fraction of reactive settings at which the proactive curve,
    /// interpolated at the same completion time, has strictly lower shock.
    /// Settings outside the proactive curve's time range count as not
    /// dominated.
    pub dominated_fraction: f64,
}

pub fn compare_curves(
    reactive: &[TradeoffPoint],
    proactive: &[TradeoffPoint],
    time_tolerance: f64,
) -> Result<CurveComparison, EvaluationError> {
    if reactive.is_empty() || proactive.is_empty() {
        return Err(EvaluationError::EmptySweep);
    }
    let mut pro = proactive.to_vec();
    pro.sort_by(|a, b| a.completion_time.total_cmp(&b.completion_time).then(a.total_shock.total_cmp(&b.total_shock)));

    let mut best_reduction = f64::NEG_INFINITY;
    let mut best_reduction_time = f64::NAN;
    let mut matched_pairs = 0;
    let mut dominated = 0;
    for r in reactive {
        for p in &pro {
            if (p.completion_time - r.completion_time).abs() <= time_tolerance * r.completion_time {
                matched_pairs += 1;
                let reduction = 1.0 - p.total_shock / r.total_shock;
                if reduction > best_reduction {
                    best_reduction = reduction;
                    best_reduction_time = r.completion_time;
                }
            }
        }
        if let Some(shock) = interpolate_shock(&pro, r.completion_time) {
            if shock < r.total_shock {
                dominated += 1;
            }
        }
    }
    Ok(CurveComparison {
        best_reduction: if matched_pairs > 0 { best_reduction } else { 0.0 },
        best_reduction_time,
        matched_pairs,
        dominated_fraction: dominated as f64 / reactive.len() as f64,
    })
}

/// Shock on the piecewise-linear curve through `sorted` at `time`; at a
/// repeated time the lowest shock is used.
fn interpolate_shock(sorted: &[TradeoffPoint], time: f64) -> Option<f64> {
    let exact = sorted.iter().filter(|p| p.completion_time == time).map(|p| p.total_shock).reduce(f64::min);
    if exact.is_some() {
        return exact;
    }
    let idx = sorted.partition_point(|p| p.completion_time < time);
    if idx == 0 || idx == sorted.len() {
        return None;
    }
    let (a, b) = (sorted[idx - 1], sorted[idx]);
    let w = (time - a.completion_time) / (b.completion_time - a.completion_time);
    Some(a.total_shock + (b.total_shock - a.total_shock) * w)
}

/// Evenly spaced quantiles of `values`, deduplicated and ascending.
pub fn quantile_sweep(values: &[f64], count: usize) -> Vec<f64> {
    let mut sorted: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    sorted.sort_by(f64::total_cmp);
    if sorted.is_empty() || count == 0 {
        return Vec::new();
    }
    let mut out: Vec<f64> = (0..count)
        .map(|i| {
            let q = if count == 1 { 0.5 } else { i as f64 / (count - 1) as f64 };
            sorted[((sorted.len() - 1) as f64 * q).round() as usize]
        })
        .collect();
    out.dedup();
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub policy: SpeedPolicy,
    /// Distance ahead of a flagged patch at which the proactive controller slows.
    pub lookahead: f64,
    /// Reactive triggers are quantiles of the unmodified run's shock peaks.
    pub reactive_settings: usize,
    /// The proactive sweep flags the top-k patches for geometrically spaced
    /// k up to this bound.
    pub max_flagged: usize,
    /// Relative completion-time window for matched comparisons.
    pub time_tolerance: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            policy: SpeedPolicy::default(),
            lookahead: 5.0,
            reactive_settings: 12,
            max_flagged: 400,
            time_tolerance: 0.02,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerReport {
    pub unmodified: RunResult,
    pub reactive: Vec<TradeoffPoint>,
    pub proactive: Vec<TradeoffPoint>,
    pub comparison: CurveComparison,
}

/// Thresholds that flag the top 0, 1, 2, 4, ... scoring patches.
pub fn proactive_sweep(scores: &[f64], max_flagged: usize) -> Vec<f64> {
    let mut ranked: Vec<f64> = scores.iter().copied().filter(|s| s.is_finite()).collect();
    ranked.sort_by(|a, b| b.total_cmp(a));
    ranked.dedup();
    let mut out = Vec::new();
    let mut k = 0usize;
    while k < ranked.len() && k <= max_flagged {
        out.push(ranked[k]);
        k = (k as f64 * 1.3).ceil() as usize + 1;
    }
    out
}

/// Sweeps both controllers over one course and compares the curves.
pub fn compare_controllers(
    log: &SensorLog,
    patches: &[LocatedPatch],
    scorer: PatchScorer,
    sweep: &SweepConfig,
    labels: &LabelConfig,
) -> Result<ControllerReport, EvaluationError> {
    let policy = &sweep.policy;
    let unmodified = replay(log, Controller::Unmodified, policy, labels)?;
    let peaks: Vec<f64> = unmodified.events.iter().map(|e| e.peak_accel).collect();
    let triggers = quantile_sweep(&peaks, sweep.reactive_settings);
    let reactive = tradeoff_curve(&unmodified, &triggers, |t| reactive_controller(log, t, policy, labels))?;

    let scores: Vec<f64> = patches.iter().map(|p| scorer.score(&p.sample)).collect();
    let thresholds = proactive_sweep(&scores, sweep.max_flagged);
    let proactive = tradeoff_curve(&unmodified, &thresholds, |mu| {
        let plan = ProactivePlan::new(patches, &scores, mu, sweep.lookahead, &log.speeds)?;
        replay(log, Controller::Proactive { plan: &plan }, policy, labels)
    })?;
    let comparison = compare_curves(&reactive, &proactive, sweep.time_tolerance)?;
    Ok(ControllerReport { unmodified, reactive, proactive, comparison })
}
