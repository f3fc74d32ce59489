//! Pairwise difference polynomial, top-ω reduction, weighted accumulation,
//! two-wheel combination and thresholding.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::LaserPoint;

/// Number of learned shape parameters (α1..α10, v, ω, ζ).
pub const PARAMETER_COUNT: usize = 13;

pub const PARAMETER_NAMES: [&str; PARAMETER_COUNT] = [
    "alpha1", "alpha2", "alpha3", "alpha4", "alpha5", "alpha6", "alpha7", "alpha8", "alpha9", "alpha10", "v", "omega",
    "zeta",
];

#[derive(Debug, Error, PartialEq)]
pub enum ScoringError {
    #[error("patch has {0} points; at least 2 are needed to score it")]
    Unscorable(usize),
    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: &'static str },
}

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("model document is not a flat key-value table: {0}")]
    Syntax(String),
    #[error("model field `{0}` is missing")]
    Missing(&'static str),
    #[error("model field `{0}` is not recognised")]
    Unknown(String),
    #[error("model field `{field}` is invalid: {reason}")]
    Invalid { field: String, reason: String },
}

/// The 13 learned shape parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParameterVector {
    /// α1..α10. Odd entries (α1, α3, ...) are coefficients, even entries exponents.
    pub alpha: [f64; 10],
    /// Weight growth between successive retained scores.
    pub v: f64,
    /// Number of top pairwise scores kept.
    pub omega: u32,
    /// Wheel-combination exponent.
    pub zeta: f64,
}

impl Default for ParameterVector {
    /// The documented starting point for coordinate ascent.
    fn default() -> Self {
        Self { alpha: [1.0, 1.0, 0.1, 1.0, 0.1, 1.0, 0.1, 1.0, 0.1, 1.0], v: 1.5, omega: 10, zeta: 1.0 }
    }
}

impl ParameterVector {
    pub fn validate(&self) -> Result<(), ScoringError> {
        for (i, a) in self.alpha.iter().enumerate() {
            if !a.is_finite() {
                return Err(ScoringError::InvalidParameter { name: PARAMETER_NAMES[i], reason: "must be finite" });
            }
            if i % 2 == 1 && *a < 0.0 {
                return Err(ScoringError::InvalidParameter {
                    name: PARAMETER_NAMES[i],
                    reason: "exponents must be non-negative",
                });
            }
        }
        if !(self.v >= 0.0 && self.v.is_finite()) {
            return Err(ScoringError::InvalidParameter { name: "v", reason: "must be >= 0" });
        }
        if self.omega < 1 {
            return Err(ScoringError::InvalidParameter { name: "omega", reason: "must be >= 1" });
        }
        if !(self.zeta > 0.0 && self.zeta.is_finite()) {
            return Err(ScoringError::InvalidParameter { name: "zeta", reason: "must be > 0" });
        }
        Ok(())
    }

    /// Coordinate `index` in the fixed order α1..α10, v, ω, ζ.
    pub fn get(&self, index: usize) -> f64 {
        match index {
            0..=9 => self.alpha[index],
            10 => self.v,
            11 => f64::from(self.omega),
            12 => self.zeta,
            _ => panic!("parameter index {index} out of range"),
        }
    }

    /// Copy with coordinate `index` set to `value`. ω is rounded to the
    /// nearest integer; the result is `None` when it violates an invariant.
    pub fn with_coordinate(&self, index: usize, value: f64) -> Option<Self> {
        let mut next = *self;
        match index {
            0..=9 => next.alpha[index] = value,
            10 => next.v = value,
            11 => {
                let rounded = value.round();
                if !(rounded >= 1.0 && rounded <= f64::from(u32::MAX)) {
                    return None;
                }
                next.omega = rounded as u32;
            }
            12 => next.zeta = value,
            _ => return None,
        }
        next.validate().ok().map(|_| next)
    }
}

/// Learned parameters plus the classification threshold μ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifierModel {
    pub params: ParameterVector,
    pub mu: f64,
}

impl ClassifierModel {
    /// Flat `key = value` document with the 14 named fields.
    pub fn to_document(&self) -> String {
        let mut out = String::new();
        for (i, name) in PARAMETER_NAMES.iter().enumerate() {
            match i {
                11 => writeln!(out, "{name} = {}", self.params.omega),
                _ => writeln!(out, "{name} = {:?}", self.params.get(i)),
            }
            .expect("writing to a String");
        }
        writeln!(out, "mu = {:?}", self.mu).expect("writing to a String");
        out
    }

    pub fn from_document(text: &str) -> Result<Self, ModelError> {
        let table: toml::Table =
            text.parse().map_err(|e: toml::de::Error| ModelError::Syntax(e.message().to_string()))?;
        let mut fields: BTreeMap<&str, f64> = BTreeMap::new();
        for (key, value) in &table {
            let name = PARAMETER_NAMES
                .iter()
                .chain(std::iter::once(&"mu"))
                .find(|n| **n == key.as_str())
                .ok_or_else(|| ModelError::Unknown(key.clone()))?;
            let number = match value {
                toml::Value::Float(f) => *f,
                toml::Value::Integer(i) => *i as f64,
                other => {
                    return Err(ModelError::Invalid {
                        field: key.clone(),
                        reason: format!("expected a number, found {}", other.type_str()),
                    })
                }
            };
            if !number.is_finite() {
                return Err(ModelError::Invalid { field: key.clone(), reason: "must be finite".into() });
            }
            fields.insert(name, number);
        }
        let take = |name: &'static str| fields.get(name).copied().ok_or(ModelError::Missing(name));
        let omega = take("omega")?;
        if omega.fract() != 0.0 || omega < 1.0 || omega > f64::from(u32::MAX) {
            return Err(ModelError::Invalid { field: "omega".into(), reason: "must be a positive integer".into() });
        }
        let mut alpha = [0.0; 10];
        for (i, a) in alpha.iter_mut().enumerate() {
            *a = take(PARAMETER_NAMES[i])?;
        }
        let params = ParameterVector { alpha, v: take("v")?, omega: omega as u32, zeta: take("zeta")? };
        params.validate().map_err(|e| match e {
            ScoringError::InvalidParameter { name, reason } => {
                ModelError::Invalid { field: name.into(), reason: reason.into() }
            }
            other => ModelError::Invalid { field: "params".into(), reason: other.to_string() },
        })?;
        Ok(Self { params, mu: take("mu")? })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoughnessScore {
    pub r_left: f64,
    pub r_right: f64,
    pub r_combined: f64,
}

#[inline]
fn pow_abs(x: f64, exponent: f64) -> f64 {
    // pow(x, 1) is exact, so the shortcut is bit-identical to powf.
    let x = x.abs();
    if exponent == 1.0 {
        x
    } else {
        x.powf(exponent)
    }
}

#[inline]
fn pair_terms(a: &LaserPoint, b: &LaserPoint, p: &ParameterVector) -> (f64, f64, f64) {
    let al = &p.alpha;
    let dist = (a.x - b.x).hypot(a.y - b.y);
    (al[0] * pow_abs(a.z - b.z, al[1]), al[2] * pow_abs(a.tau - b.tau, al[3]), al[4] * pow_abs(dist, al[5]))
}

#[inline]
fn roll_term(a: &LaserPoint, p: &ParameterVector) -> f64 {
    p.alpha[6] * pow_abs(a.roll_rate, p.alpha[7])
}

#[inline]
fn pitch_term(a: &LaserPoint, p: &ParameterVector) -> f64 {
    p.alpha[8] * pow_abs(a.pitch_rate, p.alpha[9])
}

/// The seven-term pairwise difference polynomial. The per-point terms are
/// summed before subtracting so the result is exactly symmetric in `r`, `c`.
pub fn delta(r: &LaserPoint, c: &LaserPoint, p: &ParameterVector) -> f64 {
    let (dz, dt, dxy) = pair_terms(r, c, p);
    dz - dt - dxy - (roll_term(r, p) + roll_term(c, p)) - (pitch_term(r, p) + pitch_term(c, p))
}

/// Evaluates `score(i, j)` once for every unordered pair `i < j` of `n`
/// points and returns the `omega` largest values in ascending order.
pub fn score_window_by(
    n: usize,
    omega: u32,
    mut score: impl FnMut(usize, usize) -> f64,
) -> Result<Vec<f64>, ScoringError> {
    if n < 2 {
        return Err(ScoringError::Unscorable(n));
    }
    let mut scores = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            scores.push(score(i, j));
        }
    }
    let keep = (omega as usize).min(scores.len());
    if keep < scores.len() {
        let split = scores.len() - keep;
        scores.select_nth_unstable_by(split, f64::total_cmp);
        scores.drain(..split);
    }
    scores.sort_unstable_by(f64::total_cmp);
    Ok(scores)
}

/// The ω largest pairwise scores of `points`, ascending.
pub fn score_window(points: &[LaserPoint], p: &ParameterVector) -> Result<Vec<f64>, ScoringError> {
    // Per-point roll/pitch terms are computed once; the subtraction order
    // matches `delta`, so results are bit-identical to calling it per pair.
    let roll: Vec<f64> = points.iter().map(|pt| roll_term(pt, p)).collect();
    let pitch: Vec<f64> = points.iter().map(|pt| pitch_term(pt, p)).collect();
    score_window_by(points.len(), p.omega, |i, j| {
        let (dz, dt, dxy) = pair_terms(&points[i], &points[j], p);
        dz - dt - dxy - (roll[i] + roll[j]) - (pitch[i] + pitch[j])
    })
}

/// Σ W_i · v^i over the retained scores.
pub fn accumulate(window: &[f64], v: f64) -> f64 {
    let mut weight = 1.0;
    let mut total = 0.0;
    for w in window {
        total += w * weight;
        weight *= v;
    }
    total
}

/// `r_left^ζ + r_right^ζ`; negative inputs count as zero.
pub fn combine(r_left: f64, r_right: f64, zeta: f64) -> f64 {
    r_left.max(0.0).powf(zeta) + r_right.max(0.0).powf(zeta)
}

pub fn classify(r_combined: f64, model: &ClassifierModel) -> bool {
    r_combined > model.mu
}

/// R for one wheel's point set.
pub fn wheel_score(points: &[LaserPoint], p: &ParameterVector) -> Result<f64, ScoringError> {
    score_window(points, p).map(|w| accumulate(&w, p.v))
}

/// Scores a two-wheel patch. Fails when either side has fewer than two points.
pub fn score_patch(
    left: &[LaserPoint],
    right: &[LaserPoint],
    p: &ParameterVector,
) -> Result<RoughnessScore, ScoringError> {
    let r_left = wheel_score(left, p)?;
    let r_right = wheel_score(right, p)?;
    Ok(RoughnessScore { r_left, r_right, r_combined: combine(r_left, r_right, p.zeta) })
}
