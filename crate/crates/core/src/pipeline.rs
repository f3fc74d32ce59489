//! Turns a recorded traversal into scored-patch training data: projects
//! every scan, cuts the rear-wheel corridors into a fixed along-track grid,
//! and attaches shock-derived labels.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    interpolate_pose, project_scan, select_patch_points, GeometryError, LaserPoint, MountGeometry, PoseSample, RawScan,
    DEFAULT_CORRIDOR_RADIUS, DEFAULT_POINTS_PER_PATCH,
};
use crate::labeling::{
    design_highpass, extract_events, filter_accel, label_patches, ImuSample, LabelingError, PatchSample, ShockEvent,
    SpeedTrace, DEFAULT_ASSOCIATION_RADIUS_M, DEFAULT_CUTOFF_HZ, DEFAULT_EVENT_FLOOR_G, DEFAULT_MIN_SEPARATION_S,
    DEFAULT_TAPS,
};
use crate::simworld::SensorLog;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Labeling(#[from] LabelingError),
    #[error("invalid patch grid: {0}")]
    Grid(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PatchGrid {
    /// Along-track extent of each patch.
    pub length: f64,
    /// Distance between consecutive patch starts.
    pub spacing: f64,
    /// Lateral offset of each rear wheel from the vehicle track.
    pub half_track: f64,
    pub corridor_radius: f64,
    pub points_per_patch: usize,
}

impl Default for PatchGrid {
    fn default() -> Self {
        Self {
            length: 1.0,
            spacing: 1.0,
            half_track: 0.8,
            corridor_radius: DEFAULT_CORRIDOR_RADIUS,
            points_per_patch: DEFAULT_POINTS_PER_PATCH,
        }
    }
}

impl PatchGrid {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if !(self.length > 0.0 && self.spacing > 0.0) {
            return Err(PipelineError::Grid("length and spacing must be positive"));
        }
        if !(self.half_track > 0.0 && self.corridor_radius > 0.0) {
            return Err(PipelineError::Grid("half_track and corridor_radius must be positive"));
        }
        if self.points_per_patch < 2 {
            return Err(PipelineError::Grid("points_per_patch must be at least 2"));
        }
        Ok(())
    }
}

/// A patch with its grid cell and the moment its last point was seen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocatedPatch {
    pub sample: PatchSample,
    pub start: f64,
    pub end: f64,
    /// Timestamp of the newest contributing scan; `None` for empty patches.
    pub observed_at: Option<f64>,
}

/// A wheel's path: pose positions shifted sideways, with x non-decreasing.
struct WheelPath {
    vertices: Vec<[f64; 2]>,
}

impl WheelPath {
    fn new(poses: &[PoseSample], offset: f64) -> Self {
        let vertices = poses
            .iter()
            .map(|p| {
                let yaw = p.orientation[2];
                [p.position[0] - offset * yaw.sin(), p.position[1] + offset * yaw.cos()]
            })
            .collect();
        Self { vertices }
    }

    fn lateral_at(&self, x: f64) -> f64 {
        let v = &self.vertices;
        let idx = v.partition_point(|p| p[0] < x);
        if idx == 0 {
            return v[0][1];
        }
        if idx == v.len() {
            return v[v.len() - 1][1];
        }
        let (a, b) = (v[idx - 1], v[idx]);
        if b[0] > a[0] {
            a[1] + (b[1] - a[1]) * (x - a[0]) / (b[0] - a[0])
        } else {
            b[1]
        }
    }

    /// Vertices spanning `[lo, hi]` plus one neighbour on each side.
    fn between(&self, lo: f64, hi: f64) -> &[[f64; 2]] {
        let v = &self.vertices;
        let a = v.partition_point(|p| p[0] < lo).saturating_sub(1);
        let b = (v.partition_point(|p| p[0] <= hi) + 1).min(v.len());
        &v[a..b.max(a + 1)]
    }
}

/// Projects scans through the reported poses and gathers each grid cell's
/// left and right corridor points. The grid is anchored at multiples of
/// `spacing`, so splitting a log does not shift cell boundaries. Poses must
/// advance monotonically in x.
pub fn build_patches(
    scans: &[RawScan],
    poses: &[PoseSample],
    mount: &MountGeometry,
    grid: &PatchGrid,
) -> Result<Vec<LocatedPatch>, PipelineError> {
    grid.validate()?;
    mount.validate()?;
    let (first, last) = match (poses.first(), poses.last()) {
        (Some(f), Some(l)) => (f, l),
        _ => return Err(GeometryError::EmptyPoses.into()),
    };
    let x_min = first.position[0];
    let x_max = last.position[0];
    let first_cell = (x_min / grid.spacing).ceil() as i64;
    let last_cell = ((x_max - grid.length) / grid.spacing).floor() as i64;
    if last_cell < first_cell {
        return Ok(Vec::new());
    }
    let cells = (last_cell - first_cell + 1) as usize;
    let cell_start = |i: usize| (first_cell + i as i64) as f64 * grid.spacing;

    let left = WheelPath::new(poses, grid.half_track);
    let right = WheelPath::new(poses, -grid.half_track);
    let mut buckets: Vec<[Vec<LaserPoint>; 2]> = vec![[Vec::new(), Vec::new()]; cells];
    // Cheap lateral prefilter; the exact corridor test happens per cell.
    let reach = grid.corridor_radius + 0.05;
    for scan in scans {
        if scan.timestamp < first.timestamp || scan.timestamp > last.timestamp {
            continue;
        }
        let pose = interpolate_pose(poses, scan.timestamp)?;
        for p in project_scan(scan, &pose, mount) {
            let side = if (p.y - left.lateral_at(p.x)).abs() <= reach {
                0
            } else if (p.y - right.lateral_at(p.x)).abs() <= reach {
                1
            } else {
                continue;
            };
            let hi = ((p.x / grid.spacing).floor() as i64).min(last_cell);
            let lo = (((p.x - grid.length) / grid.spacing).floor() as i64 + 1).max(first_cell);
            for cell in lo..=hi {
                let start = cell as f64 * grid.spacing;
                if p.x >= start && p.x < start + grid.length {
                    buckets[(cell - first_cell) as usize][side].push(p);
                }
            }
        }
    }

    buckets
        .into_iter()
        .enumerate()
        .map(|(i, [l, r])| {
            let start = cell_start(i);
            let end = start + grid.length;
            let pick = |pts: &[LaserPoint], path: &WheelPath| {
                select_patch_points(pts, path.between(start, end), grid.corridor_radius, grid.points_per_patch)
            };
            let left_points = pick(&l, &left)?;
            let right_points = pick(&r, &right)?;
            let observed_at = left_points.iter().chain(&right_points).map(|p| p.tau).reduce(f64::max);
            Ok(LocatedPatch {
                sample: PatchSample { left_points, right_points, ruggedness_label: 0.0, location: 0.5 * (start + end) },
                start,
                end,
                observed_at,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LabelConfig {
    pub filter_taps: usize,
    pub cutoff_hz: f64,
    pub min_separation: f64,
    pub event_floor: f64,
    pub association_radius: f64,
}

impl Default for LabelConfig {
    fn default() -> Self {
        Self {
            filter_taps: DEFAULT_TAPS,
            cutoff_hz: DEFAULT_CUTOFF_HZ,
            min_separation: DEFAULT_MIN_SEPARATION_S,
            event_floor: DEFAULT_EVENT_FLOOR_G,
            association_radius: DEFAULT_ASSOCIATION_RADIUS_M,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPatches {
    pub patches: Vec<LocatedPatch>,
    pub events: Vec<ShockEvent>,
    /// Shock peaks dropped because the vehicle was stationary.
    pub discarded: usize,
}

impl LabeledPatches {
    pub fn dataset(&self) -> Vec<PatchSample> {
        self.patches.iter().map(|p| p.sample.clone()).collect()
    }

    pub fn positive_rate(&self, threshold: f64) -> f64 {
        if self.patches.is_empty() {
            return 0.0;
        }
        let pos = self.patches.iter().filter(|p| p.sample.is_positive(threshold)).count();
        pos as f64 / self.patches.len() as f64
    }
}

pub fn detect_events(
    imu: &[ImuSample],
    speeds: &SpeedTrace,
    config: &LabelConfig,
) -> Result<(Vec<ShockEvent>, usize), PipelineError> {
    let rate = imu_rate(imu)?;
    let spec = design_highpass(rate, config.cutoff_hz, config.filter_taps)?;
    let filtered = filter_accel(imu, &spec)?;
    let ex = extract_events(&filtered, speeds, config.min_separation, config.event_floor);
    Ok((ex.events, ex.discarded))
}

/// Sample rate implied by the median IMU sample spacing.
pub fn imu_rate(imu: &[ImuSample]) -> Result<f64, PipelineError> {
    let mut gaps: Vec<f64> = imu.windows(2).map(|w| w[1].timestamp - w[0].timestamp).collect();
    if gaps.is_empty() {
        return Err(LabelingError::TooShort { len: imu.len(), taps: 2 }.into());
    }
    let mid = gaps.len() / 2;
    let (_, median, _) = gaps.select_nth_unstable_by(mid, f64::total_cmp);
    Ok((1.0 / *median * 1e6).round() / 1e6)
}

/// Patches and labels for a whole log.
pub fn label_log(log: &SensorLog, grid: &PatchGrid, config: &LabelConfig) -> Result<LabeledPatches, PipelineError> {
    let patches = build_patches(&log.scans, &log.poses, &log.config.mount, grid)?;
    let (events, discarded) = detect_events(&log.imu, &log.speeds, config)?;
    let samples = patches.iter().map(|p| p.sample.clone()).collect();
    let labeled = label_patches(&events, samples, config.association_radius);
    let patches = patches.into_iter().zip(labeled).map(|(p, sample)| LocatedPatch { sample, ..p }).collect();
    Ok(LabeledPatches { patches, events, discarded })
}
