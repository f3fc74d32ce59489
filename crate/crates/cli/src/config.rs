use std::fmt;
use std::fs;
use std::path::Path;

use roughness::evaluation::SweepConfig;
use roughness::pipeline::{LabelConfig, PatchGrid};
use roughness::{SimConfig, TrainingConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const RESOLVED_CONFIG_FILE: &str = "config.resolved.toml";

/// Failure classes, each with its own exit status.
#[derive(Debug)]
pub enum CliError {
    /// Bad invocation: missing or malformed arguments.
    Usage(String),
    /// A config, model, or manifest document that does not match its schema.
    Schema(String),
    /// Input data that cannot be read or does not support the request.
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Schema(_) => 3,
            CliError::Data(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Schema(m) => write!(f, "schema error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
        }
    }
}

/// Every tunable of every stage, as one document.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub sim: SimConfig,
    pub grid: PatchGrid,
    pub labels: LabelConfig,
    pub training: TrainingConfig,
    pub sweep: SweepConfig,
}

impl PipelineConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Data(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Schema(format!("{}: {}", path.display(), e.message())))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let schema = |e: &dyn fmt::Display| CliError::Schema(e.to_string());
        self.sim.validate().map_err(|e| schema(&e))?;
        self.grid.validate().map_err(|e| schema(&e))?;
        self.training.validate().map_err(|e| schema(&e))?;
        self.sweep.policy.validate().map_err(|e| schema(&e))?;
        if !(self.sweep.lookahead > 0.0) {
            return Err(CliError::Schema("sweep.lookahead must be positive".into()));
        }
        if self.sweep.reactive_settings == 0 {
            return Err(CliError::Schema("sweep.reactive_settings must be at least 1".into()));
        }
        Ok(())
    }

    pub fn to_document(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the resolved document, hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_document().as_bytes()))
    }

    /// Writes the resolved document into `dir` and returns its hash.
    pub fn record(&self, dir: &Path) -> Result<String, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("cannot create {}: {e}", dir.display())))?;
        let path = dir.join(RESOLVED_CONFIG_FILE);
        fs::write(&path, self.to_document())
            .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))?;
        Ok(self.hash())
    }
}
