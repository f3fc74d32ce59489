//! Turns the vertical accelerometer stream into speed-normalised ruggedness
//! labels: high-pass filtering, shock-event extraction and patch association.

use std::collections::VecDeque;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::LaserPoint;

pub const DEFAULT_TAPS: usize = 40;
pub const DEFAULT_CUTOFF_HZ: f64 = 10.0;
pub const DEFAULT_MIN_SEPARATION_S: f64 = 0.25;
pub const DEFAULT_EVENT_FLOOR_G: f64 = 0.02;
pub const DEFAULT_ASSOCIATION_RADIUS_M: f64 = 0.5;

pub const MPH_TO_MPS: f64 = 0.44704;

#[derive(Debug, Error, PartialEq)]
pub enum LabelingError {
    #[error("filter design: {0}")]
    Design(String),
    #[error("stream of {len} samples is shorter than the {taps}-tap filter")]
    TooShort { len: usize, taps: usize },
    #[error("speed trace: {0}")]
    Speeds(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImuSample {
    pub timestamp: f64,
    /// Raw vertical acceleration in G, gravity included.
    pub accel_z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub taps: Vec<f64>,
    pub sample_rate: f64,
}

impl FilterSpec {
    pub fn new(taps: Vec<f64>, sample_rate: f64) -> Result<Self, LabelingError> {
        if taps.is_empty() {
            return Err(LabelingError::Design("no taps".into()));
        }
        if !(sample_rate > 0.0) {
            return Err(LabelingError::Design("sample rate must be positive".into()));
        }
        let dc: f64 = taps.iter().sum();
        if dc.abs() > 1e-6 {
            return Err(LabelingError::Design(format!("DC gain {dc} is not zero")));
        }
        Ok(Self { taps, sample_rate })
    }

    /// Samples between an input feature and its filtered response.
    pub fn group_delay(&self) -> usize {
        self.taps.len() / 2
    }

    /// |H(f)| evaluated directly from the taps.
    pub fn magnitude_at(&self, freq_hz: f64) -> f64 {
        let w = 2.0 * PI * freq_hz / self.sample_rate;
        let (re, im) = self.taps.iter().enumerate().fold((0.0, 0.0), |(re, im), (n, h)| {
            let (s, c) = (w * n as f64).sin_cos();
            (re + h * c, im - h * s)
        });
        re.hypot(im)
    }
}

fn hann(len: usize) -> Vec<f64> {
    if len == 1 {
        return vec![1.0];
    }
    (0..len).map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / (len - 1) as f64).cos()).collect()
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Windowed-sinc high-pass by spectral inversion of a Hann-windowed
/// low-pass. An even tap count gets an odd-length core with a leading zero
/// tap, which keeps the group delay at exactly `taps / 2` samples.
pub fn design_highpass(sample_rate: f64, cutoff: f64, taps: usize) -> Result<FilterSpec, LabelingError> {
    if !(cutoff > 0.0 && cutoff < sample_rate / 2.0) {
        return Err(LabelingError::Design(format!("cutoff {cutoff} Hz must lie in (0, {}) Hz", sample_rate / 2.0)));
    }
    if taps < 3 {
        return Err(LabelingError::Design(format!("{taps} taps is too few")));
    }
    let core_len = if taps.is_multiple_of(2) { taps - 1 } else { taps };
    let center = (core_len / 2) as f64;
    let fc = cutoff / sample_rate;
    let window = hann(core_len);
    let mut lowpass: Vec<f64> =
        (0..core_len).map(|n| 2.0 * fc * sinc(2.0 * fc * (n as f64 - center)) * window[n]).collect();
    let gain: f64 = lowpass.iter().sum();
    lowpass.iter_mut().for_each(|h| *h /= gain);

    let mut core: Vec<f64> = lowpass.iter().map(|h| -h).collect();
    core[core_len / 2] += 1.0;
    let mut out = Vec::with_capacity(taps);
    if taps != core_len {
        out.push(0.0);
    }
    out.extend(core);
    let mean = out.iter().sum::<f64>() / out.len() as f64;
    out.iter_mut().for_each(|h| *h -= mean);
    FilterSpec::new(out, sample_rate)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilteredSample {
    pub timestamp: f64,
    pub value: f64,
}

/// Zero-phase-aligned convolution: output `n` is registered with input `n`.
/// The ends are extended with the edge values, so a constant input maps to
/// zero everywhere.
pub fn filter_accel(samples: &[ImuSample], spec: &FilterSpec) -> Result<Vec<FilteredSample>, LabelingError> {
    let taps = spec.taps.len();
    if samples.len() < taps {
        return Err(LabelingError::TooShort { len: samples.len(), taps });
    }
    let delay = spec.group_delay() as isize;
    let last = samples.len() as isize - 1;
    let at = |i: isize| samples[i.clamp(0, last) as usize].accel_z;
    Ok(samples
        .iter()
        .enumerate()
        .map(|(n, s)| {
            let value = spec.taps.iter().enumerate().map(|(k, h)| h * at(n as isize + delay - k as isize)).sum();
            FilteredSample { timestamp: s.timestamp, value }
        })
        .collect())
}

/// Streaming form of the same filter for closed-loop replay. Each pushed
/// sample yields the output for the sample `group_delay()` steps earlier.
#[derive(Debug, Clone)]
pub struct CausalFir {
    taps: Vec<f64>,
    history: VecDeque<f64>,
}

impl CausalFir {
    pub fn new(spec: &FilterSpec) -> Self {
        Self { taps: spec.taps.clone(), history: VecDeque::with_capacity(spec.taps.len()) }
    }

    pub fn push(&mut self, x: f64) -> f64 {
        if self.history.is_empty() {
            // Start settled on the first value, matching edge extension.
            self.history.extend(std::iter::repeat_n(x, self.taps.len()));
        }
        self.history.pop_back();
        self.history.push_front(x);
        self.taps.iter().zip(&self.history).map(|(h, v)| h * v).sum()
    }
}

/// Time-indexed vehicle speed in mph with integrated odometry.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SpeedTrace {
    times: Vec<f64>,
    mph: Vec<f64>,
    positions: Vec<f64>,
}

impl SpeedTrace {
    /// Builds the trace and integrates position (trapezoid rule) from `origin`.
    pub fn new(samples: Vec<(f64, f64)>, origin: f64) -> Result<Self, LabelingError> {
        let mut positions = Vec::with_capacity(samples.len());
        let mut s = origin;
        for (i, (t, v)) in samples.iter().enumerate() {
            if i > 0 {
                let (t0, v0) = samples[i - 1];
                if !(*t > t0) {
                    return Err(LabelingError::Speeds("timestamps must increase"));
                }
                s += 0.5 * (v0 + v) * MPH_TO_MPS * (t - t0);
            }
            positions.push(s);
        }
        Self::with_positions(samples, positions)
    }

    /// Builds the trace from recorded positions.
    pub fn with_positions(samples: Vec<(f64, f64)>, positions: Vec<f64>) -> Result<Self, LabelingError> {
        if samples.is_empty() {
            return Err(LabelingError::Speeds("empty trace"));
        }
        if samples.len() != positions.len() {
            return Err(LabelingError::Speeds("position count mismatch"));
        }
        if samples.windows(2).any(|w| !(w[1].0 > w[0].0)) {
            return Err(LabelingError::Speeds("timestamps must increase"));
        }
        let (times, mph) = samples.into_iter().unzip();
        Ok(Self { times, mph, positions })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn samples(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.times.iter().zip(&self.mph).zip(&self.positions).map(|((t, v), s)| (*t, *v, *s))
    }

    pub fn span(&self) -> (f64, f64) {
        (self.times[0], self.times[self.times.len() - 1])
    }

    fn interp(&self, t: f64, values: &[f64]) -> f64 {
        let idx = self.times.partition_point(|x| *x < t);
        if idx == 0 {
            return values[0];
        }
        if idx >= self.times.len() {
            return values[values.len() - 1];
        }
        let (t0, t1) = (self.times[idx - 1], self.times[idx]);
        let w = (t - t0) / (t1 - t0);
        values[idx - 1] + (values[idx] - values[idx - 1]) * w
    }

    /// Speed in mph at `t`, held constant beyond the ends.
    pub fn speed_at(&self, t: f64) -> f64 {
        self.interp(t, &self.mph)
    }

    /// Along-track odometry position at `t`.
    pub fn position_at(&self, t: f64) -> f64 {
        self.interp(t, &self.positions)
    }

    /// Keeps the samples for which `keep(time, position)` holds.
    pub fn retain(&self, mut keep: impl FnMut(f64, f64) -> bool) -> Option<Self> {
        let (samples, positions): (Vec<_>, Vec<_>) =
            self.samples().filter(|(t, _, s)| keep(*t, *s)).map(|(t, v, s)| ((t, v), s)).unzip();
        Self::with_positions(samples, positions).ok()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShockEvent {
    pub t_peak: f64,
    /// Absolute filtered acceleration at the peak, in G.
    pub peak_accel: f64,
    /// Speed at the peak in mph.
    pub speed: f64,
    /// G per mph.
    pub ruggedness: f64,
    /// Along-track odometry position at the peak.
    pub position: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EventExtraction {
    pub events: Vec<ShockEvent>,
    /// Peaks dropped because the vehicle was not moving.
    pub discarded: usize,
}

/// Greedy peak picking: local maxima of |filtered| above `floor`, taken
/// largest first, each suppressing any other peak closer than
/// `min_separation` seconds. Events are returned in time order.
pub fn extract_events(
    filtered: &[FilteredSample],
    speeds: &SpeedTrace,
    min_separation: f64,
    floor: f64,
) -> EventExtraction {
    let mag = |i: usize| filtered[i].value.abs();
    let mut peaks: Vec<usize> = (0..filtered.len())
        .filter(|&i| {
            let m = mag(i);
            m > floor && (i == 0 || m >= mag(i - 1)) && (i + 1 == filtered.len() || m > mag(i + 1))
        })
        .collect();
    peaks.sort_by(|&a, &b| mag(b).total_cmp(&mag(a)).then(a.cmp(&b)));

    let mut accepted: Vec<usize> = Vec::new();
    for i in peaks {
        let t = filtered[i].timestamp;
        if accepted.iter().all(|&j| (filtered[j].timestamp - t).abs() >= min_separation) {
            accepted.push(i);
        }
    }
    accepted.sort_unstable();

    let mut out = EventExtraction::default();
    for i in accepted {
        let t_peak = filtered[i].timestamp;
        let speed = speeds.speed_at(t_peak);
        if !(speed > 0.0) {
            out.discarded += 1;
            continue;
        }
        let peak_accel = mag(i);
        out.events.push(ShockEvent {
            t_peak,
            peak_accel,
            speed,
            ruggedness: peak_accel / speed,
            position: speeds.position_at(t_peak),
        });
    }
    out
}

/// Paired left/right rear-wheel point sets for one stretch of track.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchSample {
    pub left_points: Vec<LaserPoint>,
    pub right_points: Vec<LaserPoint>,
    /// Ruggedness in G/mph; zero when no shock was felt.
    pub ruggedness_label: f64,
    /// Along-track center of the patch in metres.
    pub location: f64,
}

impl PatchSample {
    pub fn is_scorable(&self) -> bool {
        self.left_points.len() >= 2 && self.right_points.len() >= 2
    }

    pub fn is_positive(&self, ruggedness_threshold: f64) -> bool {
        self.ruggedness_label >= ruggedness_threshold
    }
}

/// Each patch takes the largest ruggedness among events within
/// `association_radius` of its location, or zero.
pub fn label_patches(
    events: &[ShockEvent],
    mut patches: Vec<PatchSample>,
    association_radius: f64,
) -> Vec<PatchSample> {
    let mut sorted: Vec<&ShockEvent> = events.iter().collect();
    sorted.sort_by(|a, b| a.position.total_cmp(&b.position));
    for patch in &mut patches {
        let lo = sorted.partition_point(|e| e.position < patch.location - association_radius);
        patch.ruggedness_label = sorted[lo..]
            .iter()
            .take_while(|e| e.position <= patch.location + association_radius)
            .map(|e| e.ruggedness)
            .fold(0.0, f64::max);
    }
    patches
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn spec() -> FilterSpec {
        design_highpass(100.0, DEFAULT_CUTOFF_HZ, DEFAULT_TAPS).unwrap()
    }

    fn db(x: f64) -> f64 {
        20.0 * x.log10()
    }

    fn series(values: &[f64]) -> Vec<ImuSample> {
        values.iter().enumerate().map(|(i, v)| ImuSample { timestamp: i as f64 * 0.01, accel_z: *v }).collect()
    }

    fn const_speed(mph: f64, seconds: f64) -> SpeedTrace {
        let n = (seconds * 100.0) as usize + 1;
        SpeedTrace::new((0..n).map(|i| (i as f64 * 0.01, mph)).collect(), 0.0).unwrap()
    }

    fn flat(values: Vec<f64>) -> Vec<FilteredSample> {
        values.into_iter().enumerate().map(|(i, value)| FilteredSample { timestamp: i as f64 * 0.01, value }).collect()
    }

    #[test]
    fn designed_filter_rejects_dc() {
        let s = spec();
        assert_eq!(s.taps.len(), 40);
        assert!(s.taps.iter().sum::<f64>().abs() < 1e-6);
        for (fc, n) in [(5.0, 31), (12.0, 40), (20.0, 64)] {
            let s = design_highpass(100.0, fc, n).unwrap();
            assert!(s.taps.iter().sum::<f64>().abs() < 1e-6);
        }
    }

    #[test]
    fn designed_filter_band_edges() {
        // Independent DFT of the taps.
        let s = spec();
        let response = |f: f64| {
            let w = 2.0 * PI * f / 100.0;
            let re: f64 = s.taps.iter().enumerate().map(|(n, h)| h * (w * n as f64).cos()).sum();
            let im: f64 = s.taps.iter().enumerate().map(|(n, h)| h * (w * n as f64).sin()).sum();
            re.hypot(im)
        };
        assert!(db(response(2.0)) <= -40.0);
        assert!(db(response(20.0)) >= -3.0);
        assert_abs_diff_eq!(response(20.0), s.magnitude_at(20.0), epsilon = 1e-12);
    }

    #[test]
    fn design_rejects_cutoff_at_nyquist() {
        assert!(design_highpass(100.0, 50.0, 40).is_err());
        assert!(design_highpass(100.0, 0.0, 40).is_err());
        assert!(design_highpass(100.0, 10.0, 2).is_err());
    }

    #[test]
    fn constant_input_filters_to_zero() {
        let out = filter_accel(&series(&[1.0; 300]), &spec()).unwrap();
        assert!(out.iter().all(|s| s.value.abs() < 1e-6));
    }

    #[test]
    fn impulse_reproduces_taps_at_group_delay() {
        let s = spec();
        let mut x = vec![0.0; 200];
        x[100] = 1.0;
        let out = filter_accel(&series(&x), &s).unwrap();
        let d = s.group_delay();
        for (k, h) in s.taps.iter().enumerate() {
            assert_abs_diff_eq!(out[100 - d + k].value, *h, epsilon = 1e-15);
        }
    }

    #[test]
    fn passband_sinusoid_keeps_amplitude() {
        let x: Vec<f64> = (0..1000).map(|n| (2.0 * PI * 25.0 * n as f64 / 100.0 + 0.3).sin()).collect();
        let out = filter_accel(&series(&x), &spec()).unwrap();
        let peak = out[100..900].iter().map(|s| s.value.abs()).fold(0.0, f64::max);
        assert!(db(peak).abs() <= 1.0, "peak {peak}");
    }

    #[test]
    fn short_stream_is_rejected() {
        assert_eq!(filter_accel(&series(&[0.0; 10]), &spec()), Err(LabelingError::TooShort { len: 10, taps: 40 }));
    }

    #[test]
    fn causal_filter_is_delayed_offline_filter() {
        let s = spec();
        let x: Vec<f64> = (0..400).map(|n| 1.0 + 0.3 * ((n * 37 % 11) as f64 - 5.0) / 5.0).collect();
        let offline = filter_accel(&series(&x), &s).unwrap();
        let mut fir = CausalFir::new(&s);
        let online: Vec<f64> = x.iter().map(|v| fir.push(*v)).collect();
        let d = s.group_delay();
        for n in 2 * s.taps.len()..x.len() {
            assert_abs_diff_eq!(online[n], offline[n - d].value, epsilon = 1e-12);
        }
    }

    #[test]
    fn no_events_below_floor() {
        let f = flat(vec![0.01; 100]);
        assert!(extract_events(&f, &const_speed(20.0, 1.0), 0.25, 0.02).events.is_empty());
    }

    #[test]
    fn single_impulse_event() {
        let mut v = vec![0.0; 200];
        v[80] = -0.5;
        let ex = extract_events(&flat(v), &const_speed(25.0, 2.0), 0.25, 0.02);
        assert_eq!(ex.events.len(), 1);
        let e = ex.events[0];
        assert_abs_diff_eq!(e.ruggedness, 0.02, epsilon = 1e-15);
        assert_abs_diff_eq!(e.t_peak, 0.8, epsilon = 1e-12);
        assert_abs_diff_eq!(e.position, 0.8 * 25.0 * MPH_TO_MPS, epsilon = 1e-9);
    }

    #[test]
    fn greedy_separation() {
        let mut far = vec![0.0; 300];
        far[50] = 0.3;
        far[100] = 0.5;
        assert_eq!(extract_events(&flat(far), &const_speed(20.0, 3.0), 0.25, 0.02).events.len(), 2);

        let mut near = vec![0.0; 300];
        near[50] = 0.3;
        near[62] = 0.5;
        let ex = extract_events(&flat(near), &const_speed(20.0, 3.0), 0.25, 0.02);
        assert_eq!(ex.events.len(), 1);
        assert_eq!(ex.events[0].peak_accel, 0.5);
    }

    #[test]
    fn stationary_peaks_are_discarded() {
        let mut v = vec![0.0; 100];
        v[40] = 0.4;
        let ex = extract_events(&flat(v), &const_speed(0.0, 1.0), 0.25, 0.02);
        assert!(ex.events.is_empty());
        assert_eq!(ex.discarded, 1);
    }

    #[test]
    fn speed_trace_odometry() {
        let tr = SpeedTrace::new(vec![(0.0, 10.0), (1.0, 20.0), (2.0, 20.0)], 100.0).unwrap();
        assert_abs_diff_eq!(tr.position_at(1.0), 100.0 + 15.0 * MPH_TO_MPS, epsilon = 1e-12);
        assert_abs_diff_eq!(tr.speed_at(0.5), 15.0, epsilon = 1e-12);
        assert_eq!(tr.speed_at(5.0), 20.0);
        assert!(SpeedTrace::new(vec![(0.0, 1.0), (0.0, 1.0)], 0.0).is_err());
    }

    fn patch(location: f64) -> PatchSample {
        PatchSample { left_points: vec![], right_points: vec![], ruggedness_label: 0.0, location }
    }

    fn event(position: f64, ruggedness: f64) -> ShockEvent {
        ShockEvent { t_peak: 0.0, peak_accel: ruggedness, speed: 1.0, ruggedness, position }
    }

    #[test]
    fn patch_labels_take_max_in_radius() {
        let events = [event(10.2, 0.01), event(9.9, 0.04), event(20.0, 0.03), event(30.0, 0.5)];
        let out = label_patches(&events, vec![patch(10.0), patch(20.0), patch(25.0)], 0.5);
        assert_eq!(out[0].ruggedness_label, 0.04);
        assert_eq!(out[1].ruggedness_label, 0.03);
        assert_eq!(out[2].ruggedness_label, 0.0);
    }

    proptest! {
        #[test]
        fn filter_is_linear(
            x in proptest::collection::vec(-2.0..2.0f64, 40..120),
            y_seed in 0u64..1000,
            a in -3.0..3.0f64,
            b in -3.0..3.0f64,
        ) {
            let y: Vec<f64> = x.iter().enumerate().map(|(i, _)| (((i as u64 * 31 + y_seed) % 97) as f64 / 48.5) - 1.0).collect();
            let s = spec();
            let fx = filter_accel(&series(&x), &s).unwrap();
            let fy = filter_accel(&series(&y), &s).unwrap();
            let mix: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
            let fm = filter_accel(&series(&mix), &s).unwrap();
            for i in 0..x.len() {
                prop_assert!((fm[i].value - (a * fx[i].value + b * fy[i].value)).abs() < 1e-9);
            }
        }

        #[test]
        fn gravity_offset_does_not_change_event_count(
            raw in proptest::collection::vec(-0.3..0.3f64, 200..300),
            g in -2.0..2.0f64,
        ) {
            let s = spec();
            let speeds = const_speed(20.0, 3.0);
            let base = filter_accel(&series(&raw), &s).unwrap();
            let shifted: Vec<f64> = raw.iter().map(|v| v + g).collect();
            let moved = filter_accel(&series(&shifted), &s).unwrap();
            let n0 = extract_events(&base, &speeds, 0.25, 0.02).events.len();
            let n1 = extract_events(&moved, &speeds, 0.25, 0.02).events.len();
            prop_assert_eq!(n0, n1);
        }

        #[test]
        fn ruggedness_times_speed_is_peak(
            raw in proptest::collection::vec(-0.5..0.5f64, 50..200),
            mph in 1.0..40.0f64,
        ) {
            let ex = extract_events(&flat(raw), &const_speed(mph, 2.0), 0.1, 0.02);
            for e in ex.events {
                prop_assert!((e.ruggedness * e.speed - e.peak_accel).abs() <= f64::EPSILON * e.peak_accel);
            }
        }
    }
}
