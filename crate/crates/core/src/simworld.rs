//! Synthetic course generator: heightfield terrain with sparse box-shaped
//! bumps, a laser ray-caster, a drifting pose estimate, and an IMU trace in
//! which each wheel strike produces a jolt proportional to speed and bump
//! height plus a low-frequency suspension ring.

use std::collections::VecDeque;
use std::f64::consts::TAU;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{beam_azimuth, MountGeometry, PoseSample, RawScan, BEAMS_PER_SCAN, NO_RETURN};
use crate::labeling::{ImuSample, SpeedTrace, MPH_TO_MPS};

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error("split boundary {boundary} is outside the log span ({start}, {end})")]
    Boundary { boundary: f64, start: f64, end: f64 },
}

/// One plane wave of the smooth base surface.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Wave {
    pub amplitude: f64,
    /// Wavenumbers along-track and lateral, rad/m.
    pub k_s: f64,
    pub k_y: f64,
    pub phase: f64,
}

/// A raised box on top of the base surface.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    /// Along-track center.
    pub s: f64,
    /// Lateral center.
    pub lateral: f64,
    pub height: f64,
    /// Along-track length.
    pub width: f64,
    /// Lateral half-extent.
    pub lateral_extent: f64,
}

impl Bump {
    pub fn leading_edge(&self) -> f64 {
        self.s - 0.5 * self.width
    }

    pub fn trailing_edge(&self) -> f64 {
        self.s + 0.5 * self.width
    }

    pub fn covers(&self, s: f64, y: f64) -> bool {
        (s - self.s).abs() <= 0.5 * self.width && (y - self.lateral).abs() <= self.lateral_extent
    }

    /// Whether a wheel running at lateral offset `y` strikes this bump.
    pub fn under_wheel(&self, y: f64) -> bool {
        (y - self.lateral).abs() <= self.lateral_extent
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerrainProfile {
    pub track_length: f64,
    pub waves: Vec<Wave>,
    /// Sorted by along-track center.
    pub bumps: Vec<Bump>,
}

impl TerrainProfile {
    pub fn flat(track_length: f64) -> Self {
        Self { track_length, waves: Vec::new(), bumps: Vec::new() }
    }

    pub fn with_bumps(mut self, mut bumps: Vec<Bump>) -> Self {
        bumps.sort_by(|a, b| a.s.total_cmp(&b.s));
        self.bumps = bumps;
        self
    }

    pub fn base_height(&self, s: f64, y: f64) -> f64 {
        self.waves.iter().map(|w| w.amplitude * (w.k_s * s + w.k_y * y + w.phase).sin()).sum()
    }

    /// (∂h/∂s, ∂h/∂y) of the base surface.
    pub fn base_gradient(&self, s: f64, y: f64) -> (f64, f64) {
        self.waves.iter().fold((0.0, 0.0), |(gs, gy), w| {
            let c = w.amplitude * (w.k_s * s + w.k_y * y + w.phase).cos();
            (gs + c * w.k_s, gy + c * w.k_y)
        })
    }

    /// (∂²h/∂s², ∂²h/∂s∂y) of the base surface.
    fn base_curvature(&self, s: f64, y: f64) -> (f64, f64) {
        self.waves.iter().fold((0.0, 0.0), |(ss, sy), w| {
            let sn = -w.amplitude * (w.k_s * s + w.k_y * y + w.phase).sin();
            (ss + sn * w.k_s * w.k_s, sy + sn * w.k_s * w.k_y)
        })
    }

    fn max_half_width(&self) -> f64 {
        self.bumps.iter().map(|b| 0.5 * b.width).fold(0.0, f64::max)
    }

    /// Bumps whose footprint may intersect the along-track interval.
    fn bumps_between(&self, lo: f64, hi: f64) -> impl Iterator<Item = &Bump> {
        let reach = self.max_half_width();
        let start = self.bumps.partition_point(|b| b.s < lo - reach);
        self.bumps[start..]
            .iter()
            .take_while(move |b| b.s - reach <= hi)
            .filter(move |b| b.trailing_edge() >= lo && b.leading_edge() <= hi)
    }

    pub fn height(&self, s: f64, y: f64) -> f64 {
        let bump = self.bumps_between(s, s).filter(|b| b.covers(s, y)).map(|b| b.height).fold(0.0, f64::max);
        self.base_height(s, y) + bump
    }

    /// Noise-free pose of the vehicle reference point (rear axle center)
    /// riding the base surface at along-track `s` with speed `mps`.
    pub fn vehicle_pose(&self, t: f64, s: f64, mps: f64) -> PoseSample {
        let (gs, gy) = self.base_gradient(s, 0.0);
        let (css, csy) = self.base_curvature(s, 0.0);
        PoseSample {
            timestamp: t,
            position: [s, 0.0, self.base_height(s, 0.0)],
            orientation: [gy.atan(), -gs.atan(), 0.0],
            roll_rate: csy * mps / (1.0 + gy * gy),
            pitch_rate: -css * mps / (1.0 + gs * gs),
        }
    }

    /// Distance along the ray `origin + t·dir` to the first surface hit, or
    /// `None` within [`NO_RETURN`].
    pub fn ray_cast(&self, origin: Vector3<f64>, dir: Vector3<f64>) -> Option<f64> {
        let t_base = self.ray_cast_base(origin, dir)?;
        let end = origin + dir * t_base;
        let (lo, hi) = if end.x >= origin.x { (origin.x, end.x) } else { (end.x, origin.x) };
        let mut best = t_base;
        for bump in self.bumps_between(lo, hi) {
            if let Some(t) = self.ray_cast_bump(origin, dir, bump, t_base) {
                best = best.min(t);
            }
        }
        Some(best)
    }

    fn ray_cast_base(&self, origin: Vector3<f64>, dir: Vector3<f64>) -> Option<f64> {
        let f = |t: f64| origin.z + t * dir.z - self.base_height(origin.x + t * dir.x, origin.y + t * dir.y);
        if dir.z < 0.0 {
            let mut t = (origin.z - self.base_height(origin.x, origin.y)) / -dir.z;
            for _ in 0..30 {
                let (gs, gy) = self.base_gradient(origin.x + t * dir.x, origin.y + t * dir.y);
                let slope = dir.z - gs * dir.x - gy * dir.y;
                if slope >= 0.0 {
                    break;
                }
                let step = f(t) / slope;
                t -= step;
                if step.abs() <= 1e-13 * (1.0 + t.abs()) {
                    return (t > 0.0 && t < NO_RETURN && f(t).abs() < 1e-9).then_some(t);
                }
            }
        }
        // Bracket and bisect when Newton does not settle.
        let mut lo = 0.0;
        let mut hi = 0.5;
        while f(hi) > 0.0 {
            lo = hi;
            hi += 0.5;
            if hi >= NO_RETURN {
                return None;
            }
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Some(0.5 * (lo + hi))
    }

    fn ray_cast_bump(&self, origin: Vector3<f64>, dir: Vector3<f64>, bump: &Bump, t_max: f64) -> Option<f64> {
        let mut t_in: f64 = 0.0;
        let mut t_out = t_max;
        for (o, d, lo, hi) in [
            (origin.x, dir.x, bump.leading_edge(), bump.trailing_edge()),
            (origin.y, dir.y, bump.lateral - bump.lateral_extent, bump.lateral + bump.lateral_extent),
        ] {
            if d == 0.0 {
                if o < lo || o > hi {
                    return None;
                }
            } else {
                let (a, b) = ((lo - o) / d, (hi - o) / d);
                t_in = t_in.max(a.min(b));
                t_out = t_out.min(a.max(b));
            }
        }
        if t_in > t_out {
            return None;
        }
        let g =
            |t: f64| origin.z + t * dir.z - self.base_height(origin.x + t * dir.x, origin.y + t * dir.y) - bump.height;
        if g(t_in) <= 0.0 {
            return Some(t_in);
        }
        if g(t_out) > 0.0 {
            return None;
        }
        let (mut lo, mut hi) = (t_in, t_out);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if g(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Some(0.5 * (lo + hi))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TerrainConfig {
    /// Expected bumps per kilometre.
    pub bump_density: f64,
    /// Bump height range in metres.
    pub height_range: [f64; 2],
    pub width_range: [f64; 2],
    pub lateral_range: [f64; 2],
    pub lateral_extent_range: [f64; 2],
    /// Mean number of bumps per rough stretch.
    pub mean_cluster_size: f64,
    /// Minimum along-track spacing between bump centers.
    pub min_spacing: f64,
    /// Mean extra gap beyond `min_spacing` inside a cluster.
    pub mean_cluster_gap: f64,
    /// Amplitude of the smooth base undulation.
    pub base_amplitude: f64,
    /// Bump-free run-up at the start of the course.
    pub clear_start: f64,
}

impl Default for TerrainConfig {
    fn default() -> Self {
        Self {
            bump_density: 12.0,
            height_range: [0.01, 0.15],
            width_range: [0.3, 0.9],
            lateral_range: [-1.2, 1.2],
            lateral_extent_range: [0.25, 1.0],
            mean_cluster_size: 1.5,
            min_spacing: 4.0,
            mean_cluster_gap: 6.0,
            base_amplitude: 0.15,
            clear_start: 30.0,
        }
    }
}

impl TerrainConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::Config(m.to_string()));
        if !(self.bump_density >= 0.0 && self.bump_density.is_finite()) {
            return bad("bump_density must be >= 0");
        }
        let [lo, hi] = self.height_range;
        if !(lo >= 0.005 && hi <= 0.5 && lo <= hi) {
            return bad("height_range must lie within [0.005, 0.5] m");
        }
        for (name, [a, b]) in [("width_range", self.width_range), ("lateral_extent_range", self.lateral_extent_range)] {
            if !(a > 0.0 && a <= b) {
                return Err(SimError::Config(format!("{name} must be positive and ordered")));
            }
        }
        if self.lateral_range[0] > self.lateral_range[1] {
            return bad("lateral_range must be ordered");
        }
        if !(self.mean_cluster_size >= 1.0) {
            return bad("mean_cluster_size must be >= 1");
        }
        if !(self.min_spacing >= self.width_range[1] && self.mean_cluster_gap >= 0.0) {
            return bad("min_spacing must be at least the largest bump width");
        }
        if !(self.base_amplitude >= 0.0) || !(self.clear_start >= 0.0) {
            return bad("base_amplitude and clear_start must be >= 0");
        }
        Ok(())
    }
}

fn uniform(rng: &mut ChaCha8Rng, [lo, hi]: [f64; 2]) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Seeded course: smooth undulation plus clustered bumps with a minimum
/// center spacing. Identical inputs give identical profiles.
pub fn generate_terrain(seed: u64, length: f64, config: &TerrainConfig) -> Result<TerrainProfile, SimError> {
    config.validate()?;
    if !(length > 0.0) {
        return Err(SimError::Config("track length must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7e77_a1e5_0000_0001);
    let a = config.base_amplitude;
    let mut phase = || rng.random_range(0.0..TAU);
    let waves = vec![
        Wave { amplitude: 0.6 * a, k_s: TAU / 80.0, k_y: 0.0, phase: phase() },
        Wave { amplitude: 0.3 * a, k_s: TAU / 31.0, k_y: 0.0, phase: phase() },
        Wave { amplitude: 0.25 * a, k_s: TAU / 150.0, k_y: TAU / 25.0, phase: phase() },
    ];

    let mut bumps: Vec<Bump> = Vec::new();
    if config.bump_density > 0.0 {
        let cluster_rate = config.bump_density / 1000.0 / config.mean_cluster_size;
        let to_next_cluster = Exp::new(cluster_rate).expect("positive rate");
        let extra = (config.mean_cluster_size - 1.0).max(0.0);
        let extra_count = (extra > 0.0).then(|| Poisson::new(extra).expect("positive mean"));
        let gap =
            (config.mean_cluster_gap > 0.0).then(|| Exp::new(1.0 / config.mean_cluster_gap).expect("positive rate"));
        let end = length - config.width_range[1];
        let mut center = config.clear_start;
        let mut last = f64::NEG_INFINITY;
        loop {
            center += to_next_cluster.sample(&mut rng);
            if center > end {
                break;
            }
            let count = 1 + extra_count.as_ref().map_or(0, |p| p.sample(&mut rng) as usize);
            let mut s = center;
            for i in 0..count {
                if i > 0 {
                    s += config.min_spacing + gap.as_ref().map_or(0.0, |g| g.sample(&mut rng));
                }
                s = s.max(last + config.min_spacing);
                let bump = Bump {
                    s,
                    lateral: uniform(&mut rng, config.lateral_range),
                    height: uniform(&mut rng, config.height_range),
                    width: uniform(&mut rng, config.width_range),
                    lateral_extent: uniform(&mut rng, config.lateral_extent_range),
                };
                if s <= end {
                    bumps.push(bump);
                    last = s;
                }
            }
        }
    }
    Ok(TerrainProfile { track_length: length, waves, bumps })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PoseErrorConfig {
    /// Growth of the projected z error with time between scans, m/s,
    /// measured at the center beam's ground intercept.
    pub z_error_rate: f64,
    /// Typical orientation error magnitude, degrees.
    pub orientation_sigma_deg: f64,
    /// Duration range of each constant-drift segment, seconds.
    pub segment_range: [f64; 2],
}

impl Default for PoseErrorConfig {
    fn default() -> Self {
        Self { z_error_rate: 0.3, orientation_sigma_deg: 0.5, segment_range: [0.3, 0.9] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShockConfig {
    /// Jolt amplitude per mph per metre of bump height, in G.
    pub gain: f64,
    pub resonance_hz: f64,
    pub damping_ratio: f64,
    /// Suspension ring amplitude relative to the jolt.
    pub resonance_gain: f64,
    /// White accelerometer noise, G standard deviation.
    pub imu_noise: f64,
}

impl Default for ShockConfig {
    fn default() -> Self {
        Self { gain: 0.4, resonance_hz: 4.5, damping_ratio: 0.15, resonance_gain: 1.0, imu_noise: 0.004 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub seed: u64,
    pub track_length: f64,
    pub terrain: TerrainConfig,
    /// Planned speed as (along-track m, mph) knots, linearly interpolated.
    pub speed_profile: Vec<[f64; 2]>,
    pub mount: MountGeometry,
    pub angular_resolution_deg: f64,
    pub scan_frequency: f64,
    pub pose_rate: f64,
    pub imu_rate: f64,
    /// Lateral offset of each rear wheel from the vehicle center line.
    pub half_track: f64,
    pub pose_error: PoseErrorConfig,
    pub shock: ShockConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            track_length: 10_000.0,
            terrain: TerrainConfig::default(),
            speed_profile: vec![
                [0.0, 25.0],
                [1500.0, 30.0],
                [3000.0, 20.0],
                [4500.0, 32.0],
                [6000.0, 24.0],
                [7500.0, 28.0],
                [9000.0, 18.0],
                [10500.0, 26.0],
            ],
            mount: MountGeometry::default(),
            angular_resolution_deg: 0.5,
            scan_frequency: 75.0,
            pose_rate: 100.0,
            imu_rate: 100.0,
            half_track: 0.8,
            pose_error: PoseErrorConfig::default(),
            shock: ShockConfig::default(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::Config(m.to_string()));
        self.terrain.validate()?;
        self.mount.validate().map_err(|e| SimError::Config(e.to_string()))?;
        if !(self.track_length > 0.0) {
            return bad("track_length must be positive");
        }
        if self.speed_profile.is_empty() {
            return bad("speed_profile needs at least one knot");
        }
        if self.speed_profile.iter().any(|[_, v]| !(*v > 0.0 && v.is_finite())) {
            return bad("speed must be positive everywhere along the profile");
        }
        if self.speed_profile.windows(2).any(|w| !(w[1][0] > w[0][0])) {
            return bad("speed_profile positions must increase");
        }
        for (name, rate) in [
            ("scan_frequency", self.scan_frequency),
            ("pose_rate", self.pose_rate),
            ("imu_rate", self.imu_rate),
            ("angular_resolution_deg", self.angular_resolution_deg),
        ] {
            if !(rate > 0.0 && rate.is_finite()) {
                return Err(SimError::Config(format!("{name} must be positive")));
            }
        }
        if !(self.half_track > 0.0) {
            return bad("half_track must be positive");
        }
        let pe = &self.pose_error;
        if !(pe.z_error_rate >= 0.0 && pe.orientation_sigma_deg >= 0.0) {
            return bad("pose error rates must be >= 0");
        }
        if !(pe.segment_range[0] > 0.0 && pe.segment_range[0] <= pe.segment_range[1]) {
            return bad("pose_error.segment_range must be positive and ordered");
        }
        let sh = &self.shock;
        if !(sh.resonance_hz > 0.0 && sh.resonance_hz < 10.0) {
            return bad("resonance must lie strictly below 10 Hz");
        }
        if !(sh.resonance_hz < self.imu_rate / 2.0) {
            return bad("resonance must lie below the IMU Nyquist frequency");
        }
        if !(sh.damping_ratio > 0.0 && sh.damping_ratio < 1.0) {
            return bad("damping_ratio must lie in (0, 1)");
        }
        if !(sh.gain >= 0.0 && sh.resonance_gain >= 0.0 && sh.imu_noise >= 0.0) {
            return bad("shock gains and noise must be >= 0");
        }
        Ok(())
    }

    pub fn planned_speed(&self, s: f64) -> f64 {
        let knots = &self.speed_profile;
        let idx = knots.partition_point(|k| k[0] < s);
        if idx == 0 {
            return knots[0][1];
        }
        if idx == knots.len() {
            return knots[knots.len() - 1][1];
        }
        let ([s0, v0], [s1, v1]) = (knots[idx - 1], knots[idx]);
        v0 + (v1 - v0) * (s - s0) / (s1 - s0)
    }

    fn stream_seed(&self, stream: u64) -> u64 {
        self.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(stream)
    }

    /// Noise stream shared by the traversal and every controller replay.
    pub fn imu_noise_rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.stream_seed(3))
    }
}

/// Piecewise-linear orientation error with constant-magnitude slope per
/// segment. The sign of each new segment leans back toward zero more
/// strongly the further the error has wandered.
#[derive(Debug, Clone)]
struct DriftProcess {
    rate: f64,
    sigma: f64,
    segment_range: [f64; 2],
    value: f64,
    slope: f64,
    time: f64,
    segment_end: f64,
}

impl DriftProcess {
    fn new(rate: f64, sigma: f64, segment_range: [f64; 2]) -> Self {
        Self { rate, sigma, segment_range, value: 0.0, slope: 0.0, time: 0.0, segment_end: 0.0 }
    }

    /// (error, d error / dt) at `t`; calls must be time-ordered.
    fn advance(&mut self, t: f64, rng: &mut ChaCha8Rng) -> (f64, f64) {
        while t > self.segment_end {
            let boundary = self.segment_end;
            self.value += self.slope * (boundary - self.time);
            self.time = boundary;
            let toward_zero = if self.sigma > 0.0 { 0.5 + 0.4 * (self.value.abs() / self.sigma).min(1.0) } else { 0.5 };
            let sign = if rng.random_bool(toward_zero) { -self.value.signum() } else { self.value.signum() };
            let sign = if sign == 0.0 {
                if rng.random_bool(0.5) {
                    1.0
                } else {
                    -1.0
                }
            } else {
                sign
            };
            self.slope = sign * self.rate;
            self.segment_end = boundary + uniform(rng, self.segment_range);
        }
        self.value += self.slope * (t - self.time);
        self.time = t;
        (self.value, self.slope)
    }
}

const RING_RISE_S: f64 = 0.08;

/// Jolts plus suspension ring, queued into future samples, with white noise.
#[derive(Debug, Clone)]
pub struct ShockSynth {
    config: ShockConfig,
    sample_rate: f64,
    pending: VecDeque<f64>,
    noise: Option<Normal<f64>>,
    rng: ChaCha8Rng,
}

impl ShockSynth {
    pub fn new(config: ShockConfig, sample_rate: f64, rng: ChaCha8Rng) -> Self {
        let noise = (config.imu_noise > 0.0).then(|| Normal::new(0.0, config.imu_noise).expect("finite std"));
        Self { config, sample_rate, pending: VecDeque::new(), noise, rng }
    }

    /// Queues a jolt of `amplitude` G: a `[-½, 1, -½]` pulse centered on the
    /// next sample, followed by a damped ring at the resonance frequency.
    /// The ring swells in over ~0.1 s so its onset stays below the
    /// labeling filter's stopband edge.
    pub fn strike(&mut self, amplitude: f64) {
        let omega = TAU * self.config.resonance_hz;
        let zeta = self.config.damping_ratio;
        let omega_d = omega * (1.0 - zeta * zeta).sqrt();
        let ring_len = ((1e4f64).ln() / (zeta * omega) * self.sample_rate).ceil() as usize;
        let needed = 3 + ring_len;
        if self.pending.len() < needed {
            self.pending.resize(needed, 0.0);
        }
        self.pending[0] -= 0.5 * amplitude;
        self.pending[1] += amplitude;
        self.pending[2] -= 0.5 * amplitude;
        let ring = amplitude * self.config.resonance_gain;
        for m in 0..ring_len {
            let tau = m as f64 / self.sample_rate;
            let swell = (1.0 - (-tau / RING_RISE_S).exp()).powi(2);
            self.pending[1 + m] += ring * swell * (-zeta * omega * tau).exp() * (omega_d * tau).sin();
        }
    }

    /// Emits the next raw sample on top of `gravity` (in G).
    pub fn next_sample(&mut self, gravity: f64) -> f64 {
        let queued = self.pending.pop_front().unwrap_or(0.0);
        let noise = self.noise.map_or(0.0, |n| n.sample(&mut self.rng));
        gravity + queued + noise
    }
}

/// A rear-wheel strike point: where the axle meets a bump's leading edge and
/// the summed height under both wheels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Contact {
    pub position: f64,
    pub height: f64,
}

pub fn wheel_contacts(bumps: &[Bump], half_track: f64) -> Vec<Contact> {
    let mut contacts: Vec<Contact> = bumps
        .iter()
        .filter_map(|b| {
            let wheels = [half_track, -half_track].iter().filter(|y| b.under_wheel(**y)).count();
            (wheels > 0).then(|| Contact { position: b.leading_edge(), height: b.height * wheels as f64 })
        })
        .collect();
    contacts.sort_by(|a, b| a.position.total_cmp(&b.position));
    contacts
}

/// Everything recorded on one traversal.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorLog {
    pub config: SimConfig,
    pub scans: Vec<RawScan>,
    /// Poses as the estimator reports them, orientation error included.
    pub poses: Vec<PoseSample>,
    /// Noise-free poses; oracle use only, not persisted.
    pub true_poses: Vec<PoseSample>,
    pub imu: Vec<ImuSample>,
    pub speeds: SpeedTrace,
    pub ground_truth_bumps: Vec<Bump>,
}

impl SensorLog {
    /// Along-track span covered by the recorded odometry.
    pub fn span(&self) -> (f64, f64) {
        let (t0, t1) = self.speeds.span();
        (self.speeds.position_at(t0), self.speeds.position_at(t1))
    }
}

/// Drives the course at the planned speed and records every sensor.
pub fn simulate_traversal(terrain: &TerrainProfile, config: &SimConfig) -> Result<SensorLog, SimError> {
    config.validate()?;
    let length = terrain.track_length.min(config.track_length);

    // Integrate along-track position on a clock that all sensor rates divide.
    let base_rate = lcm_rate(&[config.scan_frequency, config.pose_rate, config.imu_rate])?;
    let dt = 1.0 / base_rate;
    let speed = |s: f64| config.planned_speed(s) * MPH_TO_MPS;
    let mut track = vec![0.0];
    while *track.last().expect("non-empty") < length {
        let s = *track.last().expect("non-empty");
        let k1 = speed(s);
        let k2 = speed(s + 0.5 * dt * k1);
        let k3 = speed(s + 0.5 * dt * k2);
        let k4 = speed(s + dt * k3);
        track.push(s + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4));
    }
    let ticks = track.len();
    let every = |rate: f64| (base_rate / rate).round() as usize;
    let true_pose_at = |tick: usize| {
        let s = track[tick];
        terrain.vehicle_pose(tick as f64 * dt, s, speed(s))
    };

    let lever = config.mount.center_lever_arm();
    let angular_rate = config.pose_error.z_error_rate / lever;
    let sigma = config.pose_error.orientation_sigma_deg.to_radians();
    let mut drift_rng = ChaCha8Rng::seed_from_u64(config.stream_seed(1));
    let mut roll_drift = DriftProcess::new(angular_rate, sigma, config.pose_error.segment_range);
    let mut pitch_drift = DriftProcess::new(angular_rate, sigma, config.pose_error.segment_range);

    let mut poses = Vec::new();
    let mut true_poses = Vec::new();
    for tick in (0..ticks).step_by(every(config.pose_rate)) {
        let truth = true_pose_at(tick);
        let (roll_err, roll_slope) = roll_drift.advance(truth.timestamp, &mut drift_rng);
        let (pitch_err, pitch_slope) = pitch_drift.advance(truth.timestamp, &mut drift_rng);
        let mut reported = truth;
        reported.orientation[0] += roll_err;
        reported.orientation[1] += pitch_err;
        reported.roll_rate += roll_slope;
        reported.pitch_rate += pitch_slope;
        poses.push(reported);
        true_poses.push(truth);
    }

    let origin_local = config.mount.origin();
    let directions: Vec<Vector3<f64>> = (0..BEAMS_PER_SCAN)
        .map(|b| config.mount.beam_direction(beam_azimuth(b, config.angular_resolution_deg)))
        .collect();
    let mut scans = Vec::new();
    for tick in (0..ticks).step_by(every(config.scan_frequency)) {
        let pose = true_pose_at(tick);
        let rotation = pose.rotation();
        let origin = pose.transform(origin_local);
        let ranges = directions.iter().map(|d| terrain.ray_cast(origin, rotation * d).unwrap_or(NO_RETURN)).collect();
        let mut scan = RawScan::with_resolution(pose.timestamp, ranges, config.angular_resolution_deg)
            .map_err(|e| SimError::Config(e.to_string()))?;
        scan.scan_frequency = config.scan_frequency;
        scans.push(scan);
    }

    let contacts = wheel_contacts(&terrain.bumps, config.half_track);
    let mut next_contact = 0;
    let mut synth = ShockSynth::new(config.shock, config.imu_rate, config.imu_noise_rng());
    let mut imu = Vec::new();
    let mut speed_samples = Vec::new();
    let mut positions = Vec::new();
    for tick in (0..ticks).step_by(every(config.imu_rate)) {
        let s = track[tick];
        let mph = config.planned_speed(s);
        while next_contact < contacts.len() && contacts[next_contact].position <= s {
            synth.strike(config.shock.gain * mph * contacts[next_contact].height);
            next_contact += 1;
        }
        let pose = true_pose_at(tick);
        let gravity = pose.orientation[0].cos() * pose.orientation[1].cos();
        imu.push(ImuSample { timestamp: pose.timestamp, accel_z: synth.next_sample(gravity) });
        speed_samples.push((pose.timestamp, mph));
        positions.push(s);
    }
    let speeds = SpeedTrace::with_positions(speed_samples, positions).map_err(|e| SimError::Config(e.to_string()))?;

    Ok(SensorLog {
        config: config.clone(),
        scans,
        poses,
        true_poses,
        imu,
        speeds,
        ground_truth_bumps: terrain.bumps.clone(),
    })
}

/// Smallest rate that every sensor rate divides evenly.
fn lcm_rate(rates: &[f64]) -> Result<f64, SimError> {
    let as_int = |r: f64| {
        let n = r.round();
        if (r - n).abs() > 1e-9 || n < 1.0 {
            Err(SimError::Config(format!("sensor rate {r} Hz must be a whole number")))
        } else {
            Ok(n as u64)
        }
    };
    fn gcd(a: u64, b: u64) -> u64 {
        if b == 0 {
            a
        } else {
            gcd(b, a % b)
        }
    }
    let mut lcm = 1u64;
    for r in rates {
        let n = as_int(*r)?;
        lcm = lcm / gcd(lcm, n) * n;
    }
    Ok(lcm as f64)
}

/// Splits a log at along-track `boundary`; records at or before it go to
/// the first half, as do bumps centered exactly on it.
pub fn split_log(log: &SensorLog, boundary: f64) -> Result<(SensorLog, SensorLog), SimError> {
    let (start, end) = log.span();
    if !(boundary > start && boundary < end) {
        return Err(SimError::Boundary { boundary, start, end });
    }
    let at = |t: f64| log.speeds.position_at(t);
    let half = |lower: bool| {
        let keep = |s: f64| (s <= boundary) == lower;
        let speeds =
            log.speeds.retain(|_, s| keep(s)).ok_or_else(|| SimError::Config("split leaves an empty half".into()))?;
        Ok(SensorLog {
            config: log.config.clone(),
            scans: log.scans.iter().filter(|x| keep(at(x.timestamp))).cloned().collect(),
            poses: log.poses.iter().filter(|p| keep(at(p.timestamp))).copied().collect(),
            true_poses: log.true_poses.iter().filter(|p| keep(at(p.timestamp))).copied().collect(),
            imu: log.imu.iter().filter(|x| keep(at(x.timestamp))).copied().collect(),
            speeds,
            ground_truth_bumps: log.ground_truth_bumps.iter().filter(|b| keep(b.s)).copied().collect(),
        })
    };
    Ok((half(true)?, half(false)?))
}
