//! Shared inputs for the benchmarks: one short simulated course, labeled.

use roughness::pipeline::{label_log, LabelConfig, LabeledPatches, PatchGrid};
use roughness::simworld::{generate_terrain, simulate_traversal};
use roughness::{SensorLog, SimConfig};

pub const COURSE_SEED: u64 = 11;

pub fn course(length: f64) -> (SensorLog, LabeledPatches) {
    let cfg = SimConfig { seed: COURSE_SEED, track_length: length, ..Default::default() };
    let terrain = generate_terrain(cfg.seed, length, &cfg.terrain).expect("default terrain config is valid");
    let log = simulate_traversal(&terrain, &cfg).expect("default sim config is valid");
    let labeled = label_log(&log, &PatchGrid::default(), &LabelConfig::default()).expect("course labels");
    (log, labeled)
}
