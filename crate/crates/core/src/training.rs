//! Coordinate ascent on `tp_rate - λ·fp_rate` with an exhaustive threshold
//! scan for every candidate parameter vector.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::labeling::PatchSample;
use crate::scoring::{score_patch, ClassifierModel, ParameterVector, ScoringError, PARAMETER_COUNT};

pub const DEFAULT_LAMBDA: f64 = 5.0;
pub const DEFAULT_RUGGEDNESS_THRESHOLD: f64 = 0.02;
pub const DEFAULT_ITERATIONS: usize = 8;

#[derive(Debug, Error, PartialEq)]
pub enum TrainingError {
    #[error("training data has no patches")]
    Empty,
    #[error("training data has no positive patches (label >= {0})")]
    NoPositives(f64),
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Scoring(#[from] ScoringError),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ClassificationRates {
    pub tp_rate: f64,
    pub fp_rate: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl ClassificationRates {
    pub fn from_counts(tp: usize, fp: usize, tn: usize, fn_: usize) -> Self {
        let rate = |hit: usize, miss: usize| if hit + miss == 0 { 0.0 } else { hit as f64 / (hit + miss) as f64 };
        Self { tp_rate: rate(tp, fn_), fp_rate: rate(fp, tn), tp, fp, tn, fn_ }
    }
}

pub fn objective(rates: &ClassificationRates, lambda: f64) -> f64 {
    rates.tp_rate - lambda * rates.fp_rate
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub lambda: f64,
    pub ruggedness_threshold: f64,
    pub initial: ParameterVector,
    /// Starting step per coordinate, in the order α1..α10, v, ω, ζ.
    pub increments: [f64; PARAMETER_COUNT],
    /// Rounds; increments are halved after each.
    pub iterations: usize,
    /// Candidates with a larger ω are skipped.
    pub max_omega: u32,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        let initial = ParameterVector::default();
        Self {
            lambda: DEFAULT_LAMBDA,
            ruggedness_threshold: DEFAULT_RUGGEDNESS_THRESHOLD,
            increments: std::array::from_fn(|i| 0.5 * initial.get(i)),
            initial,
            iterations: DEFAULT_ITERATIONS,
            max_omega: 200,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<(), TrainingError> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(TrainingError::Config("lambda must be positive".into()));
        }
        if !(self.ruggedness_threshold > 0.0) {
            return Err(TrainingError::Config("ruggedness_threshold must be positive".into()));
        }
        if self.increments.iter().any(|i| !(*i >= 0.0 && i.is_finite())) {
            return Err(TrainingError::Config("increments must be finite and non-negative".into()));
        }
        if self.max_omega < 1 {
            return Err(TrainingError::Config("max_omega must be at least 1".into()));
        }
        self.initial.validate()?;
        Ok(())
    }
}

/// Best threshold for one parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdChoice {
    pub mu: f64,
    pub rates: ClassificationRates,
    pub objective: f64,
}

/// The threshold placed above every observed score.
pub fn above_max(max: f64) -> f64 {
    if max > 0.0 {
        2.0 * max
    } else if max < 0.0 {
        0.0
    } else {
        1.0
    }
}

/// Scans the candidate thresholds {each scored value, one above the
/// maximum} and keeps the best objective, preferring the larger μ on ties.
/// Entries with no score are always predicted smooth.
pub fn best_threshold(scores: &[(Option<f64>, bool)], lambda: f64) -> Result<ThresholdChoice, TrainingError> {
    if scores.is_empty() {
        return Err(TrainingError::Empty);
    }
    let positives = scores.iter().filter(|(_, y)| *y).count();
    let negatives = scores.len() - positives;

    let mut scored: Vec<(f64, bool)> = scores.iter().filter_map(|(r, y)| r.map(|r| (r, *y))).collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));

    let max = scored.first().map(|s| s.0).unwrap_or(0.0);
    let evaluate = |mu: f64, tp: usize, fp: usize| {
        let rates = ClassificationRates::from_counts(tp, fp, negatives - fp, positives - tp);
        ThresholdChoice { mu, rates, objective: objective(&rates, lambda) }
    };

    // Walking down from the top: with μ equal to a distinct value, exactly
    // the scores strictly above it are positive.
    let mut best = evaluate(above_max(max), 0, 0);
    let (mut tp, mut fp) = (0, 0);
    let mut i = 0;
    while i < scored.len() {
        let value = scored[i].0;
        let candidate = evaluate(value, tp, fp);
        if candidate.objective > best.objective {
            best = candidate;
        }
        while i < scored.len() && scored[i].0 == value {
            if scored[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
    }
    Ok(best)
}

/// R_combined for every patch; `None` for patches that cannot be scored.
pub fn score_dataset(params: &ParameterVector, dataset: &[PatchSample]) -> Vec<Option<f64>> {
    dataset.iter().map(|p| score_patch(&p.left_points, &p.right_points, params).ok().map(|s| s.r_combined)).collect()
}

pub fn evaluate_params(
    params: &ParameterVector,
    dataset: &[PatchSample],
    config: &TrainingConfig,
) -> Result<ThresholdChoice, TrainingError> {
    if dataset.is_empty() {
        return Err(TrainingError::Empty);
    }
    if !dataset.iter().any(|p| p.is_positive(config.ruggedness_threshold)) {
        return Err(TrainingError::NoPositives(config.ruggedness_threshold));
    }
    params.validate()?;
    let scores: Vec<(Option<f64>, bool)> = score_dataset(params, dataset)
        .into_iter()
        .zip(dataset)
        .map(|(r, p)| (r, p.is_positive(config.ruggedness_threshold)))
        .collect();
    best_threshold(&scores, config.lambda)
}

/// One accepted coordinate move.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProgressRecord {
    pub round: usize,
    pub coordinate: usize,
    pub sign: i8,
    pub objective: f64,
    pub mu: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingOutcome {
    pub model: ClassifierModel,
    pub objective: f64,
    pub rates: ClassificationRates,
    pub progress: Vec<ProgressRecord>,
    /// Threshold saved with the last accepted move (or the initial evaluation).
    pub saved_mu: f64,
    pub evaluations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AscentResult {
    pub params: ParameterVector,
    pub choice: ThresholdChoice,
    pub progress: Vec<ProgressRecord>,
    pub evaluations: usize,
}

/// Coordinate ascent over the 13 parameters with an arbitrary evaluator.
///
/// Each round visits the coordinates in order and tries `-increment` then
/// `+increment`; a move is kept only when it strictly improves the
/// objective, after which the round moves on to the next coordinate.
/// Candidates that break a parameter invariant, round ω back onto its
/// current value, or exceed `max_omega` are skipped. Increments are halved
/// after every round.
#[allow(clippy::needless_range_loop)]
pub fn ascend<E>(
    initial: ParameterVector,
    increments: [f64; PARAMETER_COUNT],
    iterations: usize,
    max_omega: u32,
    mut evaluate: E,
) -> Result<AscentResult, TrainingError>
where
    E: FnMut(&ParameterVector) -> Result<ThresholdChoice, TrainingError>,
{
    let mut params = initial;
    let mut choice = evaluate(&params)?;
    let mut evaluations = 1;
    let mut progress = Vec::new();
    let mut steps = increments;
    for round in 0..iterations {
        for coordinate in 0..PARAMETER_COUNT {
            if steps[coordinate] == 0.0 {
                continue;
            }
            for sign in [-1i8, 1] {
                let value = params.get(coordinate) + f64::from(sign) * steps[coordinate];
                let Some(candidate) = params.with_coordinate(coordinate, value) else {
                    continue;
                };
                if candidate == params || candidate.omega > max_omega {
                    continue;
                }
                let result = evaluate(&candidate)?;
                evaluations += 1;
                if result.objective > choice.objective {
                    params = candidate;
                    choice = result;
                    progress.push(ProgressRecord {
                        round,
                        coordinate,
                        sign,
                        objective: result.objective,
                        mu: result.mu,
                    });
                    break;
                }
            }
        }
        steps.iter_mut().for_each(|s| *s *= 0.5);
    }
    Ok(AscentResult { params, choice, progress, evaluations })
}

/// Learns the parameter vector and threshold from labeled patches.
pub fn coordinate_ascent(dataset: &[PatchSample], config: &TrainingConfig) -> Result<TrainingOutcome, TrainingError> {
    config.validate()?;
    if config.initial.omega > config.max_omega {
        return Err(TrainingError::Config("initial omega exceeds max_omega".into()));
    }
    let labels: Vec<bool> = dataset.iter().map(|p| p.is_positive(config.ruggedness_threshold)).collect();
    if dataset.is_empty() {
        return Err(TrainingError::Empty);
    }
    if !labels.iter().any(|y| *y) {
        return Err(TrainingError::NoPositives(config.ruggedness_threshold));
    }
    let result = ascend(config.initial, config.increments, config.iterations, config.max_omega, |params| {
        let scores: Vec<(Option<f64>, bool)> =
            score_dataset(params, dataset).into_iter().zip(labels.iter().copied()).collect();
        best_threshold(&scores, config.lambda)
    })?;
    // The threshold is re-derived for the final parameters.
    let final_choice = evaluate_params(&result.params, dataset, config)?;
    Ok(TrainingOutcome {
        model: ClassifierModel { params: result.params, mu: final_choice.mu },
        objective: final_choice.objective,
        rates: final_choice.rates,
        progress: result.progress,
        saved_mu: result.choice.mu,
        evaluations: result.evaluations + 1,
    })
}
