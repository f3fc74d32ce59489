//! Scan projection and per-wheel point selection.
//!
//! World frame: x forward along the initial heading, y to the left, z up.
//! Vehicle attitude is applied as `Rz(yaw) * Ry(pitch) * Rx(roll)`, so a
//! positive pitch lowers the nose and a positive roll lifts the left side.

use std::cmp::Ordering;

use nalgebra::{Rotation3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Beams per planar scan.
pub const BEAMS_PER_SCAN: usize = 181;
/// Range reported for beams without a return. Anything at or beyond it is dropped.
pub const NO_RETURN: f64 = 81.91;
pub const DEFAULT_ANGULAR_RESOLUTION_DEG: f64 = 0.5;
pub const DEFAULT_SCAN_FREQUENCY_HZ: f64 = 75.0;
pub const DEFAULT_CORRIDOR_RADIUS: f64 = 0.30;
pub const DEFAULT_POINTS_PER_PATCH: usize = 40;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("scan must carry exactly {BEAMS_PER_SCAN} ranges, got {0}")]
    BeamCount(usize),
    #[error("range {range} at beam {beam} is negative or not finite")]
    BadRange { beam: usize, range: f64 },
    #[error("no pose samples to interpolate")]
    EmptyPoses,
    #[error("time {t} is outside the pose span [{first}, {last}]")]
    Extrapolation { t: f64, first: f64, last: f64 },
    #[error("invalid mount geometry: {0}")]
    Mount(&'static str),
    #[error("invalid patch selection: {0}")]
    Selection(&'static str),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawScan {
    pub timestamp: f64,
    pub ranges: Vec<f64>,
    /// Degrees between adjacent beams.
    pub angular_resolution: f64,
    pub scan_frequency: f64,
}

impl RawScan {
    pub fn new(timestamp: f64, ranges: Vec<f64>) -> Result<Self, GeometryError> {
        Self::with_resolution(timestamp, ranges, DEFAULT_ANGULAR_RESOLUTION_DEG)
    }

    pub fn with_resolution(timestamp: f64, ranges: Vec<f64>, angular_resolution: f64) -> Result<Self, GeometryError> {
        if ranges.len() != BEAMS_PER_SCAN {
            return Err(GeometryError::BeamCount(ranges.len()));
        }
        if let Some((beam, &range)) = ranges.iter().enumerate().find(|(_, r)| !r.is_finite() || **r < 0.0) {
            return Err(GeometryError::BadRange { beam, range });
        }
        Ok(Self { timestamp, ranges, angular_resolution, scan_frequency: DEFAULT_SCAN_FREQUENCY_HZ })
    }

    /// Azimuth of `beam` in radians, zero straight ahead, positive to the left.
    pub fn beam_azimuth(&self, beam: usize) -> f64 {
        beam_azimuth(beam, self.angular_resolution)
    }
}

pub fn beam_azimuth(beam: usize, angular_resolution_deg: f64) -> f64 {
    let center = (BEAMS_PER_SCAN / 2) as f64;
    ((beam as f64 - center) * angular_resolution_deg).to_radians()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseSample {
    pub timestamp: f64,
    pub position: [f64; 3],
    /// (roll, pitch, yaw) in radians.
    pub orientation: [f64; 3],
    pub roll_rate: f64,
    pub pitch_rate: f64,
}

impl PoseSample {
    pub fn identity(timestamp: f64) -> Self {
        Self { timestamp, position: [0.0; 3], orientation: [0.0; 3], roll_rate: 0.0, pitch_rate: 0.0 }
    }

    pub fn rotation(&self) -> Rotation3<f64> {
        let [roll, pitch, yaw] = self.orientation;
        Rotation3::from_euler_angles(roll, pitch, yaw)
    }

    /// Maps a vehicle-frame vector into the world frame.
    pub fn transform(&self, local: Vector3<f64>) -> Vector3<f64> {
        Vector3::from(self.position) + self.rotation() * local
    }
}

/// A projected laser return with the six features the classifier consumes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaserPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    /// Observation time (timestamp of the source scan).
    pub tau: f64,
    pub roll_rate: f64,
    pub pitch_rate: f64,
    /// Source beam index; used only for deterministic tie-breaking.
    pub beam: u16,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MountGeometry {
    pub laser_height: f64,
    /// Downward tilt of the scan plane in radians.
    pub tilt: f64,
    pub lateral_offset: f64,
    pub forward_offset: f64,
}

impl Default for MountGeometry {
    fn default() -> Self {
        Self { laser_height: 2.0, tilt: 7.5_f64.to_radians(), lateral_offset: 0.0, forward_offset: 1.5 }
    }
}

impl MountGeometry {
    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.laser_height > 0.0 && self.laser_height.is_finite()) {
            return Err(GeometryError::Mount("laser_height must be positive"));
        }
        if !(self.tilt > 0.0 && self.tilt < std::f64::consts::FRAC_PI_2) {
            return Err(GeometryError::Mount("tilt must lie in (0, pi/2)"));
        }
        if !self.lateral_offset.is_finite() || !self.forward_offset.is_finite() {
            return Err(GeometryError::Mount("offsets must be finite"));
        }
        Ok(())
    }

    pub fn origin(&self) -> Vector3<f64> {
        Vector3::new(self.forward_offset, self.lateral_offset, self.laser_height)
    }

    /// Unit beam direction in the vehicle frame.
    pub fn beam_direction(&self, azimuth: f64) -> Vector3<f64> {
        let (sa, ca) = azimuth.sin_cos();
        let (st, ct) = self.tilt.sin_cos();
        Vector3::new(ca * ct, sa, -ca * st)
    }

    /// Horizontal distance from the vehicle origin to where the center beam
    /// meets flat ground.
    pub fn center_lever_arm(&self) -> f64 {
        self.forward_offset + self.laser_height / self.tilt.tan()
    }
}

/// Linear interpolation of position, angles and rates between the two
/// samples bracketing `t`.
pub fn interpolate_pose(poses: &[PoseSample], t: f64) -> Result<PoseSample, GeometryError> {
    let (first, last) = match (poses.first(), poses.last()) {
        (Some(f), Some(l)) => (f, l),
        _ => return Err(GeometryError::EmptyPoses),
    };
    if !(t >= first.timestamp && t <= last.timestamp) {
        return Err(GeometryError::Extrapolation { t, first: first.timestamp, last: last.timestamp });
    }
    let idx = poses.partition_point(|p| p.timestamp < t);
    let hi = &poses[idx];
    if hi.timestamp == t {
        return Ok(*hi);
    }
    let lo = &poses[idx - 1];
    let w = (t - lo.timestamp) / (hi.timestamp - lo.timestamp);
    let lerp = |a: f64, b: f64| a + (b - a) * w;
    Ok(PoseSample {
        timestamp: t,
        position: std::array::from_fn(|i| lerp(lo.position[i], hi.position[i])),
        orientation: std::array::from_fn(|i| lerp(lo.orientation[i], hi.orientation[i])),
        roll_rate: lerp(lo.roll_rate, hi.roll_rate),
        pitch_rate: lerp(lo.pitch_rate, hi.pitch_rate),
    })
}

/// Projects every valid beam of `scan` through `pose` into the world frame.
pub fn project_scan(scan: &RawScan, pose: &PoseSample, mount: &MountGeometry) -> Vec<LaserPoint> {
    let rotation = pose.rotation();
    let translation = Vector3::from(pose.position);
    let origin = mount.origin();
    scan.ranges
        .iter()
        .enumerate()
        .filter(|(_, &r)| r < NO_RETURN)
        .map(|(beam, &range)| {
            let local = origin + mount.beam_direction(scan.beam_azimuth(beam)) * range;
            let world = translation + rotation * local;
            LaserPoint {
                x: world.x,
                y: world.y,
                z: world.z,
                tau: scan.timestamp,
                roll_rate: pose.roll_rate,
                pitch_rate: pose.pitch_rate,
                beam: beam as u16,
            }
        })
        .collect()
}

/// Distance in the (x, y) plane from `p` to the polyline `path`.
pub fn distance_to_path(p: [f64; 2], path: &[[f64; 2]]) -> f64 {
    match path {
        [] => f64::INFINITY,
        [only] => (p[0] - only[0]).hypot(p[1] - only[1]),
        _ => path.windows(2).map(|seg| distance_to_segment(p, seg[0], seg[1])).fold(f64::INFINITY, f64::min),
    }
}

fn distance_to_segment(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 { (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0) } else { 0.0 };
    let (cx, cy) = (a[0] + t * dx, a[1] + t * dy);
    (p[0] - cx).hypot(p[1] - cy)
}

/// Total order used for patch selection: distance, then observation time,
/// then beam index, then coordinates.
fn selection_order(a: &(f64, LaserPoint), b: &(f64, LaserPoint)) -> Ordering {
    a.0.total_cmp(&b.0)
        .then(a.1.tau.total_cmp(&b.1.tau))
        .then(a.1.beam.cmp(&b.1.beam))
        .then(a.1.x.total_cmp(&b.1.x))
        .then(a.1.y.total_cmp(&b.1.y))
        .then(a.1.z.total_cmp(&b.1.z))
}

/// Returns up to `n` points of `cloud` within `corridor_radius` of
/// `wheel_path`, nearest first. Fewer than `n` qualifying points yields all
/// of them; an empty result is valid.
pub fn select_patch_points(
    cloud: &[LaserPoint],
    wheel_path: &[[f64; 2]],
    corridor_radius: f64,
    n: usize,
) -> Result<Vec<LaserPoint>, GeometryError> {
    if !(corridor_radius > 0.0) {
        return Err(GeometryError::Selection("corridor radius must be positive"));
    }
    if n < 2 {
        return Err(GeometryError::Selection("at least two points per patch"));
    }
    if wheel_path.is_empty() {
        return Err(GeometryError::Selection("wheel path is empty"));
    }
    let mut inside: Vec<(f64, LaserPoint)> = cloud
        .iter()
        .filter_map(|p| {
            let d = distance_to_path([p.x, p.y], wheel_path);
            (d <= corridor_radius).then_some((d, *p))
        })
        .collect();
    if inside.len() > n {
        inside.select_nth_unstable_by(n - 1, selection_order);
        inside.truncate(n);
    }
    inside.sort_unstable_by(selection_order);
    Ok(inside.into_iter().map(|(_, p)| p).collect())
}
