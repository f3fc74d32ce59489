//! On-disk sensor logs: one whitespace-separated text file per stream, each
//! with a `#` header naming its columns, plus a TOML manifest carrying the
//! simulation config.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{PoseSample, RawScan, BEAMS_PER_SCAN};
use crate::labeling::{ImuSample, SpeedTrace};
use crate::simworld::{Bump, SensorLog, SimConfig};

pub const SCANS_FILE: &str = "scans.txt";
pub const POSES_FILE: &str = "poses.txt";
pub const IMU_FILE: &str = "imu.txt";
pub const SPEEDS_FILE: &str = "speeds.txt";
pub const TRUTH_FILE: &str = "truth.txt";
pub const MANIFEST_FILE: &str = "manifest.toml";

#[derive(Debug, Error)]
pub enum LogIoError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("{path}: {message}")]
    Manifest { path: PathBuf, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub seed: u64,
    /// Hash of the resolved configuration that produced the log.
    pub config_hash: String,
    pub bump_count: usize,
    pub patch_count: usize,
    /// Fraction of patches labeled rough by the shock pipeline.
    pub positive_label_rate: f64,
    pub sim: SimConfig,
}

fn write_file(dir: &Path, name: &str, text: &str) -> Result<(), LogIoError> {
    let path = dir.join(name);
    fs::write(&path, text).map_err(|source| LogIoError::Io { path, source })
}

fn read_file(dir: &Path, name: &str) -> Result<(PathBuf, String), LogIoError> {
    let path = dir.join(name);
    match fs::read_to_string(&path) {
        Ok(text) => Ok((path, text)),
        Err(source) => Err(LogIoError::Io { path, source }),
    }
}

/// Rows of numbers, skipping `#` comments and blank lines. Each row must
/// have exactly `width` columns.
fn parse_rows(path: &Path, text: &str, width: usize) -> Result<Vec<Vec<f64>>, LogIoError> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |message: String| LogIoError::Parse { path: path.to_path_buf(), line: i + 1, message };
        let row = line
            .split_whitespace()
            .map(|tok| tok.parse::<f64>().map_err(|_| err(format!("not a number: {tok:?}"))))
            .collect::<Result<Vec<_>, _>>()?;
        if row.len() != width {
            return Err(err(format!("expected {width} columns, found {}", row.len())));
        }
        rows.push(row);
    }
    Ok(rows)
}

fn join(values: impl IntoIterator<Item = f64>) -> String {
    let mut out = String::new();
    for (i, v) in values.into_iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        write!(out, "{v}").expect("write to string");
    }
    out
}

/// Writes every stream except the noise-free poses, which stay in memory.
pub fn write_log(dir: &Path, log: &SensorLog, manifest: &Manifest) -> Result<(), LogIoError> {
    fs::create_dir_all(dir).map_err(|source| LogIoError::Io { path: dir.to_path_buf(), source })?;

    let mut scans = String::from("# timestamp_s range_0..range_180_m (81.91 = no return)\n");
    for scan in &log.scans {
        write!(scans, "{}", scan.timestamp).expect("write to string");
        for r in &scan.ranges {
            write!(scans, " {r:.4}").expect("write to string");
        }
        scans.push('\n');
    }
    write_file(dir, SCANS_FILE, &scans)?;

    let mut poses =
        String::from("# timestamp_s x_m y_m z_m roll_rad pitch_rad yaw_rad roll_rate_rad_s pitch_rate_rad_s\n");
    for p in &log.poses {
        let [x, y, z] = p.position;
        let [r, pi, ya] = p.orientation;
        writeln!(poses, "{}", join([p.timestamp, x, y, z, r, pi, ya, p.roll_rate, p.pitch_rate]))
            .expect("write to string");
    }
    write_file(dir, POSES_FILE, &poses)?;

    let mut imu = String::from("# timestamp_s accel_z_g\n");
    for s in &log.imu {
        writeln!(imu, "{}", join([s.timestamp, s.accel_z])).expect("write to string");
    }
    write_file(dir, IMU_FILE, &imu)?;

    let mut speeds = String::from("# timestamp_s speed_mph position_m\n");
    for (t, v, s) in log.speeds.samples() {
        writeln!(speeds, "{}", join([t, v, s])).expect("write to string");
    }
    write_file(dir, SPEEDS_FILE, &speeds)?;

    let mut truth = String::from("# center_s_m lateral_m height_m width_m lateral_half_extent_m\n");
    for b in &log.ground_truth_bumps {
        writeln!(truth, "{}", join([b.s, b.lateral, b.height, b.width, b.lateral_extent])).expect("write to string");
    }
    write_file(dir, TRUTH_FILE, &truth)?;
    write_manifest(dir, manifest)
}

pub fn write_manifest(dir: &Path, manifest: &Manifest) -> Result<(), LogIoError> {
    let text = toml::to_string(manifest)
        .map_err(|e| LogIoError::Manifest { path: dir.join(MANIFEST_FILE), message: e.to_string() })?;
    write_file(dir, MANIFEST_FILE, &text)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest, LogIoError> {
    let (path, text) = read_file(dir, MANIFEST_FILE)?;
    let manifest: Manifest = toml::from_str(&text)
        .map_err(|e| LogIoError::Manifest { path: path.clone(), message: e.message().to_string() })?;
    manifest.sim.validate().map_err(|e| LogIoError::Manifest { path, message: e.to_string() })?;
    Ok(manifest)
}

/// Loads a log written by [`write_log`]; `true_poses` comes back empty.
pub fn read_log(dir: &Path) -> Result<(SensorLog, Manifest), LogIoError> {
    let manifest = read_manifest(dir)?;
    let config = manifest.sim.clone();

    let (path, text) = read_file(dir, SCANS_FILE)?;
    let scans = parse_rows(&path, &text, 1 + BEAMS_PER_SCAN)?
        .into_iter()
        .enumerate()
        .map(|(i, row)| {
            let mut scan = RawScan::with_resolution(row[0], row[1..].to_vec(), config.angular_resolution_deg)
                .map_err(|e| LogIoError::Parse { path: path.clone(), line: i + 2, message: e.to_string() })?;
            scan.scan_frequency = config.scan_frequency;
            Ok(scan)
        })
        .collect::<Result<Vec<_>, LogIoError>>()?;

    let (path, text) = read_file(dir, POSES_FILE)?;
    let poses = parse_rows(&path, &text, 9)?
        .into_iter()
        .map(|r| PoseSample {
            timestamp: r[0],
            position: [r[1], r[2], r[3]],
            orientation: [r[4], r[5], r[6]],
            roll_rate: r[7],
            pitch_rate: r[8],
        })
        .collect();

    let (path, text) = read_file(dir, IMU_FILE)?;
    let imu = parse_rows(&path, &text, 2)?.into_iter().map(|r| ImuSample { timestamp: r[0], accel_z: r[1] }).collect();

    let (path, text) = read_file(dir, SPEEDS_FILE)?;
    let rows = parse_rows(&path, &text, 3)?;
    let positions = rows.iter().map(|r| r[2]).collect();
    let samples = rows.iter().map(|r| (r[0], r[1])).collect();
    let speeds = SpeedTrace::with_positions(samples, positions).map_err(|e| LogIoError::Parse {
        path: path.clone(),
        line: 0,
        message: e.to_string(),
    })?;

    let (path, text) = read_file(dir, TRUTH_FILE)?;
    let ground_truth_bumps = parse_rows(&path, &text, 5)?
        .into_iter()
        .map(|r| Bump { s: r[0], lateral: r[1], height: r[2], width: r[3], lateral_extent: r[4] })
        .collect();

    let log = SensorLog { config, scans, poses, true_poses: Vec::new(), imu, speeds, ground_truth_bumps };
    Ok((log, manifest))
}
