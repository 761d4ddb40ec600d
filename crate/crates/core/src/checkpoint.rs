//! Versioned JSON snapshots of an [`EnsembleState`] for pausing and resuming
//! an online run. Floats are written in shortest round-trip form, so a
//! restored state continues bit-for-bit.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::engine::{EngineConfig, EnsembleState, PathState, ReplicateState};
use crate::error::{Error, Result};
use crate::inference::SandwichInputs;
use crate::rng::WeightStream;

pub const CHECKPOINT_FORMAT: &str = "rwsgd-ensemble";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateSnapshot {
    pub id: u64,
    pub path: PathState,
    /// Weight-stream position in 32-bit words.
    pub word_pos: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub dim: usize,
    pub n: u64,
    pub replicates: usize,
    pub config: EngineConfig,
    pub main: PathState,
    pub replicate_states: Vec<ReplicateSnapshot>,
    pub plugin: Option<SandwichInputs>,
}

impl Checkpoint {
    pub fn capture(state: &EnsembleState) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            dim: state.dim(),
            n: state.n(),
            replicates: state.replicates().len(),
            config: state.config().clone(),
            main: state.main().clone(),
            replicate_states: state
                .replicates()
                .iter()
                .map(|r| ReplicateSnapshot {
                    id: r.id,
                    path: r.path.clone(),
                    word_pos: r.stream.word_pos() as u64,
                })
                .collect(),
            plugin: state.plugin().cloned(),
        }
    }

    /// Rebuilds the ensemble after checking header, shape and stream positions.
    pub fn restore(self) -> Result<EnsembleState> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unknown format {:?}", self.format)));
        }
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {} (expected {CHECKPOINT_VERSION})",
                self.version
            )));
        }
        self.config.validate()?;
        if self.replicates != self.replicate_states.len() || self.replicates != self.config.replicates {
            return Err(Error::Checkpoint("replicate count does not match stored replicates".into()));
        }
        let shape_ok = |p: &PathState| {
            p.iterate.dim() == self.dim && p.average.dim() == self.dim && p.average.count_total() == self.n
        };
        if !shape_ok(&self.main) || !self.replicate_states.iter().all(|r| shape_ok(&r.path)) {
            return Err(Error::Checkpoint("path dimension or count inconsistent with header".into()));
        }
        if self.plugin.as_ref().map(|a| a.dim()) != self.config.plugin.map(|_| self.dim) {
            return Err(Error::Checkpoint("plug-in accumulators inconsistent with config".into()));
        }
        let replicates = self
            .replicate_states
            .into_iter()
            .map(|snap| {
                if snap.word_pos != 2 * self.n {
                    return Err(Error::Checkpoint(format!(
                        "replicate {} stream position {} does not match n={}",
                        snap.id, snap.word_pos, self.n
                    )));
                }
                let mut stream = WeightStream::new(self.config.seed, snap.id);
                stream.set_word_pos(u128::from(snap.word_pos));
                Ok(ReplicateState {
                    id: snap.id,
                    path: snap.path,
                    stream,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(EnsembleState::from_parts(
            self.config,
            self.dim,
            self.n,
            self.main,
            replicates,
            self.plugin,
        ))
    }

    /// Restores and checks the shape a caller expects to continue with.
    pub fn restore_expecting(self, dim: Option<usize>, replicates: Option<usize>) -> Result<EnsembleState> {
        if let Some(p) = dim.filter(|p| *p != self.dim) {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: p,
            });
        }
        if let Some(b) = replicates.filter(|b| *b != self.replicates) {
            return Err(Error::Checkpoint(format!(
                "checkpoint has B={} replicates, requested {b}; the ensemble shape cannot change",
                self.replicates
            )));
        }
        self.restore()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

impl EnsembleState {
    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::capture(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{ModelKind, Observation};

    fn state_after(n: usize) -> EnsembleState {
        let mut cfg = EngineConfig::new(ModelKind::Logistic, 3);
        cfg.seed = 5;
        cfg.burn_in = 2;
        let mut s = EnsembleState::new(cfg, 2).unwrap();
        for i in 0..n {
            let y = if i % 3 == 0 { -1.0 } else { 1.0 };
            s.process_observation(&Observation::new(y, vec![1.0, (i as f64).sin()])).unwrap();
        }
        s
    }

    #[test]
    fn json_round_trip_is_exact() {
        let s = state_after(17);
        let ck = s.checkpoint();
        let back = Checkpoint::from_json(&ck.to_json().unwrap()).unwrap();
        assert_eq!(ck, back);
        let restored = back.restore().unwrap();
        assert_eq!(restored.replicate_averages(), s.replicate_averages());
    }

    #[test]
    fn rejects_version_and_shape_changes() {
        let mut ck = state_after(4).checkpoint();
        ck.version = 99;
        assert!(matches!(ck.restore(), Err(Error::Checkpoint(_))));

        let ck = state_after(4).checkpoint();
        assert!(matches!(
            ck.clone().restore_expecting(Some(3), None),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(ck.clone().restore_expecting(None, Some(4)).is_err());
        assert!(ck.restore_expecting(Some(2), Some(3)).is_ok());

        let mut ck = state_after(4).checkpoint();
        ck.replicate_states[1].word_pos += 2;
        assert!(ck.restore().is_err());
    }
}
