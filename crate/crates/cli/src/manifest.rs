//! Run manifests and the run-level checkpoint that wraps an ensemble snapshot.

use std::path::{Path, PathBuf};

use rwsgd::engine::{PluginPoint, DEFAULT_MAX_NORM};
use rwsgd::{Checkpoint, EngineConfig, EnsembleState, InferenceMethod, LearningRateSchedule, ModelKind, WeightDistribution};
use serde::{Deserialize, Serialize};

use crate::error::CliError;
use crate::ingest::{IngestStats, IngestionSpec};

pub const RUN_CHECKPOINT_FORMAT: &str = "rwsgd-run";
pub const RUN_CHECKPOINT_VERSION: u32 = 1;

/// Everything needed to reproduce a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub model: ModelKind,
    pub schedule: LearningRateSchedule,
    pub replicates: usize,
    pub burn_in: u64,
    pub weights: WeightDistribution,
    pub seed: u64,
    pub level: f64,
    pub method: InferenceMethod,
    pub plugin: Option<PluginPoint>,
    pub histogram_bins: Option<usize>,
    /// Input files consumed so far, in order.
    pub inputs: Vec<PathBuf>,
    pub out_dir: PathBuf,
    pub ingestion: IngestionSpec,
}

impl RunManifest {
    pub fn engine_config(&self) -> EngineConfig {
        EngineConfig {
            model: self.model,
            schedule: self.schedule,
            replicates: self.replicates,
            burn_in: self.burn_in,
            weights: self.weights,
            seed: self.seed,
            plugin: self.plugin,
            max_norm: DEFAULT_MAX_NORM,
            initial: None,
            parallel: true,
        }
    }

    /// Checks values and that every referenced input path exists.
    pub fn validate(&self) -> Result<(), CliError> {
        self.engine_config().validate()?;
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(CliError::Config(format!("level must be in (0, 1), got {}", self.level)));
        }
        if self.replicates < 2 {
            return Err(CliError::Config("at least 2 replicates are needed for a covariance".into()));
        }
        if self.histogram_bins == Some(0) {
            return Err(CliError::Config("histogram bins must be positive".into()));
        }
        for p in &self.inputs {
            check_file(p)?;
        }
        Ok(())
    }
}

pub fn check_file(path: &Path) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Config(format!("input file {} does not exist", path.display())))
    }
}

/// Ensemble checkpoint plus the manifest and ingestion bookkeeping needed to
/// resume from it or re-emit its reports.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunCheckpoint {
    pub format: String,
    pub version: u32,
    pub manifest: RunManifest,
    pub names: Vec<String>,
    pub stats: IngestStats,
    pub ensemble: Checkpoint,
}

impl RunCheckpoint {
    pub fn new(manifest: &RunManifest, names: &[String], stats: IngestStats, state: &EnsembleState) -> Self {
        RunCheckpoint {
            format: RUN_CHECKPOINT_FORMAT.to_string(),
            version: RUN_CHECKPOINT_VERSION,
            manifest: manifest.clone(),
            names: names.to_vec(),
            stats,
            ensemble: state.checkpoint(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read checkpoint {}: {e}", path.display())))?;
        let ck: RunCheckpoint = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("checkpoint {}: {e}", path.display())))?;
        if ck.format != RUN_CHECKPOINT_FORMAT {
            return Err(CliError::Config(format!("checkpoint format `{}` is not `{RUN_CHECKPOINT_FORMAT}`", ck.format)));
        }
        if ck.version != RUN_CHECKPOINT_VERSION {
            return Err(CliError::Config(format!(
                "checkpoint version {} is not supported (expected {RUN_CHECKPOINT_VERSION})",
                ck.version
            )));
        }
        if ck.names.len() != ck.ensemble.dim {
            return Err(CliError::Config("checkpoint covariate names do not match its dimension".into()));
        }
        Ok(ck)
    }
}
