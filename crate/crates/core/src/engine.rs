//! One-pass ensemble of the plain SGD path and `B` randomly weighted replicate
//! paths. Every observation advances all paths once and is then dropped.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::base::{check_dim, AveragedAccumulator, LearningRateSchedule, ParamVector};
use crate::error::{Error, Result};
use crate::inference::SandwichInputs;
use crate::models::{ModelKind, Observation};
use crate::rng::{WeightDistribution, WeightStream};

/// Default iterate-norm limit before a run is declared divergent.
pub const DEFAULT_MAX_NORM: f64 = 1e8;

/// Which iterate the plug-in gradient and Hessian are evaluated at when
/// observation `i` arrives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PluginPoint {
    /// The iterate before observation `i` is applied.
    PreUpdate,
    /// The iterate after observation `i` is applied.
    PostUpdate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub model: ModelKind,
    pub schedule: LearningRateSchedule,
    /// Number of perturbed replicates `B`.
    pub replicates: usize,
    pub burn_in: u64,
    pub weights: WeightDistribution,
    pub seed: u64,
    /// `None` disables the plug-in accumulators.
    pub plugin: Option<PluginPoint>,
    pub max_norm: f64,
    /// Starting point shared by the main path and every replicate; zeros if unset.
    pub initial: Option<ParamVector>,
    /// Update replicates on the rayon pool. Results are identical either way,
    /// so this is an execution setting and is not checkpointed.
    #[serde(skip)]
    pub parallel: bool,
}

impl EngineConfig {
    pub fn new(model: ModelKind, replicates: usize) -> Self {
        EngineConfig {
            model,
            schedule: LearningRateSchedule::default(),
            replicates,
            burn_in: 0,
            weights: WeightDistribution::Exponential1,
            seed: 0,
            plugin: model.has_hessian().then_some(PluginPoint::PreUpdate),
            max_norm: DEFAULT_MAX_NORM,
            initial: None,
            parallel: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        LearningRateSchedule::new(self.schedule.gamma(), self.schedule.alpha())?;
        if self.replicates == 0 {
            return Err(Error::InvalidArgument("need at least one replicate".into()));
        }
        if self.plugin.is_some() && !self.model.has_hessian() {
            return Err(Error::PlugInUnavailable(self.model.name()));
        }
        if !(self.max_norm > 0.0) {
            return Err(Error::InvalidArgument(format!("max_norm must be positive, got {}", self.max_norm)));
        }
        if let Some(init) = &self.initial {
            if !init.is_finite() {
                return Err(Error::NonFinite { what: "initial point" });
            }
        }
        Ok(())
    }
}

/// One SGD path with its burn-in aware running average.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathState {
    pub iterate: ParamVector,
    pub average: AveragedAccumulator,
}

impl PathState {
    fn new(initial: ParamVector, burn_in: u64) -> Self {
        PathState {
            average: AveragedAccumulator::new(initial.clone(), burn_in),
            iterate: initial,
        }
    }

    fn advance(&mut self, z: &Observation, model: &ModelKind, rate: f64, weight: f64, max_norm: f64) -> Result<()> {
        step_in_place(&mut self.iterate, z, rate, weight, model)?;
        let norm = self.iterate.norm();
        if !(norm <= max_norm) {
            return Err(Error::Diverged {
                step: 0,
                replicate: None,
                norm,
                limit: max_norm,
            });
        }
        self.average.push(&self.iterate)
    }
}

#[derive(Debug, Clone)]
pub struct ReplicateState {
    /// 1-based replicate id; also selects the weight stream.
    pub id: u64,
    pub path: PathState,
    pub stream: WeightStream,
}

impl ReplicateState {
    fn advance(&mut self, z: &Observation, cfg: &EngineConfig, rate: f64, step: u64) -> Result<()> {
        let w = self.stream.draw(cfg.weights);
        self.path
            .advance(z, &cfg.model, rate, w, cfg.max_norm)
            .map_err(|e| at_step(e, step, Some(self.id as usize)))
    }
}

fn at_step(err: Error, step: u64, replicate: Option<usize>) -> Error {
    match err {
        Error::NonFiniteGradient { .. } => Error::NonFiniteGradient { step, replicate },
        Error::Diverged { norm, limit, .. } => Error::Diverged {
            step,
            replicate,
            norm,
            limit,
        },
        other => other,
    }
}

/// `iterate - rate * weight * g` where `g` is the model gradient at `iterate`.
pub fn sgd_step(
    iterate: &ParamVector,
    z: &Observation,
    rate: f64,
    weight: f64,
    kind: &ModelKind,
) -> Result<ParamVector> {
    let mut next = iterate.clone();
    step_in_place(&mut next, z, rate, weight, kind)?;
    Ok(next)
}

fn step_in_place(theta: &mut [f64], z: &Observation, rate: f64, weight: f64, kind: &ModelKind) -> Result<()> {
    if !(rate > 0.0) || !(weight >= 0.0) || !weight.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "need rate > 0 and finite weight >= 0, got rate={rate}, weight={weight}"
        )));
    }
    let m = kind.gradient_multiplier(theta, z)?;
    if !m.is_finite() {
        return Err(Error::NonFiniteGradient { step: 0, replicate: None });
    }
    let scale = rate * weight;
    for (t, x) in theta.iter_mut().zip(z.x.iter()) {
        let g = m * x;
        *t -= scale * g;
    }
    Ok(())
}

/// The full online state: main path, replicates, optional plug-in sums.
#[derive(Debug, Clone)]
pub struct EnsembleState {
    config: EngineConfig,
    dim: usize,
    n: u64,
    main: PathState,
    replicates: Vec<ReplicateState>,
    plugin: Option<SandwichInputs>,
}

impl EnsembleState {
    /// Fresh state with replicate ids `1..=B`.
    pub fn new(config: EngineConfig, dim: usize) -> Result<Self> {
        let ids = (1..=config.replicates as u64).collect();
        Self::with_replicate_ids(config, dim, ids)
    }

    /// Fresh state with an explicit replicate id list (its length overrides
    /// `config.replicates`).
    pub fn with_replicate_ids(mut config: EngineConfig, dim: usize, ids: Vec<u64>) -> Result<Self> {
        config.replicates = ids.len();
        config.validate()?;
        if dim == 0 {
            return Err(Error::InvalidArgument("dimension must be at least 1".into()));
        }
        let initial = match &config.initial {
            Some(init) => {
                check_dim(dim, init.dim())?;
                init.clone()
            }
            None => ParamVector::zeros(dim),
        };
        let replicates = ids
            .into_iter()
            .map(|id| ReplicateState {
                id,
                path: PathState::new(initial.clone(), config.burn_in),
                stream: WeightStream::new(config.seed, id),
            })
            .collect();
        let plugin = config.plugin.map(|_| SandwichInputs::new(dim));
        Ok(EnsembleState {
            main: PathState::new(initial, config.burn_in),
            dim,
            n: 0,
            replicates,
            plugin,
            config,
        })
    }

    pub(crate) fn from_parts(
        config: EngineConfig,
        dim: usize,
        n: u64,
        main: PathState,
        replicates: Vec<ReplicateState>,
        plugin: Option<SandwichInputs>,
    ) -> Self {
        EnsembleState {
            config,
            dim,
            n,
            main,
            replicates,
            plugin,
        }
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn model(&self) -> &ModelKind {
        &self.config.model
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Observations consumed so far.
    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn main(&self) -> &PathState {
        &self.main
    }

    pub fn main_iterate(&self) -> &ParamVector {
        &self.main.iterate
    }

    pub fn main_accumulator(&self) -> &AveragedAccumulator {
        &self.main.average
    }

    pub fn main_average(&self) -> &ParamVector {
        self.main.average.estimate()
    }

    pub fn replicates(&self) -> &[ReplicateState] {
        &self.replicates
    }

    /// `B` replicate averages, in replicate order.
    pub fn replicate_averages(&self) -> Vec<ParamVector> {
        self.replicates.iter().map(|r| r.path.average.estimate().clone()).collect()
    }

    pub fn plugin(&self) -> Option<&SandwichInputs> {
        self.plugin.as_ref()
    }

    pub fn set_parallel(&mut self, parallel: bool) {
        self.config.parallel = parallel;
    }

    /// Consumes one observation. On error the state is left partially
    /// updated and should be discarded.
    pub fn process_observation(&mut self, z: &Observation) -> Result<()> {
        check_dim(self.dim, z.dim())?;
        self.config.model.check_response(z.y)?;
        if !z.x.is_finite() {
            return Err(Error::NonFinite { what: "covariates" });
        }
        let step = self.n + 1;
        let rate = self.config.schedule.rate(step)?;
        let model = self.config.model;

        if self.config.plugin == Some(PluginPoint::PreUpdate) {
            self.update_plugin(z)?;
        }
        self.main
            .advance(z, &model, rate, 1.0, self.config.max_norm)
            .map_err(|e| at_step(e, step, None))?;

        let cfg = &self.config;
        if cfg.parallel {
            let failure = self
                .replicates
                .par_iter_mut()
                .filter_map(|r| r.advance(z, cfg, rate, step).err().map(|e| (r.id, e)))
                .min_by_key(|(id, _)| *id);
            if let Some((_, e)) = failure {
                return Err(e);
            }
        } else {
            for r in &mut self.replicates {
                r.advance(z, cfg, rate, step)?;
            }
        }

        if self.config.plugin == Some(PluginPoint::PostUpdate) {
            self.update_plugin(z)?;
        }
        self.n = step;
        Ok(())
    }

    fn update_plugin(&mut self, z: &Observation) -> Result<()> {
        let Some(acc) = self.plugin.as_mut() else {
            return Ok(());
        };
        let theta = &self.main.iterate;
        let g = self.config.model.gradient_multiplier(theta, z)?;
        let c = match self.config.model {
            ModelKind::LeastSquares => 2.0,
            ModelKind::Logistic => {
                let e = (-theta.dot(&z.x).abs()).exp();
                e / ((1.0 + e) * (1.0 + e))
            }
            ModelKind::Quantile { .. } => return Err(Error::PlugInUnavailable(self.config.model.name())),
        };
        acc.push_rank_one(&z.x, g, c);
        Ok(())
    }

    /// Folds a fallible observation source into the state; returns the number
    /// of observations consumed.
    pub fn process_stream<I, E>(&mut self, source: I) -> Result<u64>
    where
        I: IntoIterator<Item = std::result::Result<Observation, E>>,
        E: Into<Box<dyn std::error::Error + Send + Sync>>,
    {
        let mut consumed = 0;
        for item in source {
            let z = item.map_err(|e| Error::Source(e.into()))?;
            self.process_observation(&z)?;
            consumed += 1;
        }
        Ok(consumed)
    }
}

/// Value-style wrapper around [`EnsembleState::process_observation`].
pub fn process_observation(mut state: EnsembleState, z: &Observation) -> Result<EnsembleState> {
    state.process_observation(z)?;
    Ok(state)
}

/// Runs a full ensemble over `source` in one pass. The dimension is taken
/// from `config.initial` or, failing that, from the first observation.
pub fn run_stream<I, E>(source: I, config: EngineConfig) -> Result<EnsembleState>
where
    I: IntoIterator<Item = std::result::Result<Observation, E>>,
    E: Into<Box<dyn std::error::Error + Send + Sync>>,
{
    let mut iter = source.into_iter();
    let first = match iter.next() {
        None => return Err(Error::EmptyStream),
        Some(item) => item.map_err(|e| Error::Source(e.into()))?,
    };
    let dim = config.initial.as_ref().map_or(first.dim(), |i| i.dim());
    let mut state = EnsembleState::new(config, dim)?;
    state.process_observation(&first)?;
    state.process_stream(iter)?;
    Ok(state)
}

/// [`run_stream`] over an infallible source.
pub fn run_observations<I>(source: I, config: EngineConfig) -> Result<EnsembleState>
where
    I: IntoIterator<Item = Observation>,
{
    run_stream(source.into_iter().map(Ok::<_, std::convert::Infallible>), config)
}
