//! Terrain roughness prediction from a downward-tilted single-line laser:
//! project scans into world points, score rear-wheel patches, self-label
//! patches from the shocks the vehicle feels, and learn the scoring
//! parameters and threshold from those labels.

// Range checks are written `!(x > lo)` so that NaN fails them too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod evaluation;
pub mod geometry;
pub mod labeling;
pub mod logio;
pub mod pipeline;
pub mod scoring;
pub mod simworld;
pub mod training;

pub use geometry::{LaserPoint, MountGeometry, PoseSample, RawScan};
pub use labeling::{ImuSample, PatchSample, ShockEvent, SpeedTrace};
pub use scoring::{ClassifierModel, ParameterVector, RoughnessScore};
pub use simworld::{SensorLog, SimConfig, TerrainProfile};
pub use training::{TrainingConfig, TrainingOutcome};
