//! Averaged stochastic gradient descent with online random-weighting
//! resampling.
//!
//! Each observation updates the plain SGD iterate and `B` perturbed copies
//! whose gradient steps are scaled by i.i.d. mean-one, variance-one weights.
//! The spread of the perturbed running averages estimates the sampling
//! distribution of the averaged SGD estimate, so standard errors and
//! confidence intervals come out of a single pass over the data.

pub mod base;
pub mod checkpoint;
pub mod engine;
pub mod error;
pub mod inference;
pub mod models;
pub mod rng;
pub mod simulate;

pub use base::{AveragedAccumulator, LearningRateSchedule, ParamVector, RunningCovariance};
pub use checkpoint::Checkpoint;
pub use engine::{EngineConfig, EnsembleState, PluginPoint};
pub use error::{Error, Result};
pub use inference::{InferenceMethod, InferenceReport, SandwichInputs};
pub use models::{ModelKind, Observation};
pub use rng::{WeightDistribution, WeightStream};
pub use simulate::{CoverageReport, ScenarioConfig};
