//! Monte-Carlo coverage studies: synthetic data for the least-squares,
//! logistic and quantile examples, a scenario runner over (N, p, q, mu), and
//! aggregation of coverage and standard errors across repetitions.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::base::{LearningRateSchedule, ParamVector};
use crate::engine::{EngineConfig, EnsembleState, PluginPoint, DEFAULT_MAX_NORM};
use crate::error::{Error, Result};
use crate::inference::{
    confidence_intervals, replicate_covariance, sandwich_covariance, standard_errors, DEFAULT_CONDITION_CAP,
};
use crate::models::{ModelKind, Observation};
use crate::rng::{derive_seed, WeightDistribution};

/// `(mu 1_{q/2}, -mu 1_{q/2}, 0_{p-q})`.
pub fn true_theta(p: usize, q: usize, mu: f64) -> Result<ParamVector> {
    if q % 2 != 0 {
        return Err(Error::InvalidArgument(format!("q must be even, got {q}")));
    }
    if q > p {
        return Err(Error::InvalidArgument(format!("q={q} exceeds p={p}")));
    }
    let half = q / 2;
    let theta: Vec<f64> = (0..p)
        .map(|j| {
            if j < half {
                mu
            } else if j < q {
                -mu
            } else {
                0.0
            }
        })
        .collect();
    Ok(theta.into())
}

/// Standard Laplace (double exponential) draw: density `exp(-|u|)/2`.
pub fn laplace<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let e: f64 = rng.sample(Exp1);
    if rng.random::<bool>() {
        e
    } else {
        -e
    }
}

/// Draws one observation with `x ~ N(0, I_p)`:
/// least squares `y = x'theta0 + N(0,1)`; logistic `P(y=+1) = sigmoid(x'theta0)`;
/// quantile `y = x'theta0 + Laplace(0,1)`.
pub fn generate_observation<R: Rng + ?Sized>(model: &ModelKind, theta0: &[f64], rng: &mut R) -> Observation {
    let x: Vec<f64> = (0..theta0.len()).map(|_| rng.sample(StandardNormal)).collect();
    let fit: f64 = x.iter().zip(theta0).map(|(a, b)| a * b).sum();
    let y = match model {
        ModelKind::LeastSquares => fit + rng.sample::<f64, _>(StandardNormal),
        ModelKind::Logistic => {
            let prob = 1.0 / (1.0 + (-fit).exp());
            if rng.random::<f64>() < prob {
                1.0
            } else {
                -1.0
            }
        }
        ModelKind::Quantile { .. } => fit + laplace(rng),
    };
    Observation::new(y, x)
}

/// One simulation cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: String,
    pub model: ModelKind,
    /// Stream length `N`.
    pub n: u64,
    pub p: usize,
    pub q: usize,
    pub mu: f64,
    /// Replicates `B`.
    pub replicates: usize,
    pub burn_in: u64,
    pub repetitions: u64,
    pub level: f64,
    pub schedule: LearningRateSchedule,
    pub weights: WeightDistribution,
    pub seed: u64,
    /// Also compute plug-in intervals where the model allows it.
    pub plugin: bool,
    /// 1-based coordinates to report; defaults to `1, q/2+1, q+1`.
    pub coordinates: Option<Vec<usize>>,
}

impl ScenarioConfig {
    /// Defaults: B=200, burn-in 2000, 200 repetitions, 95% level, Exp(1)
    /// weights, plug-in on when available, and [`default_schedule`].
    pub fn new(model: ModelKind, n: u64, p: usize, q: usize, mu: f64) -> Self {
        ScenarioConfig {
            name: format!("{}-{n}-{p}-{q}-{mu}", model.name()),
            model,
            n,
            p,
            q,
            mu,
            replicates: 200,
            burn_in: 2000,
            repetitions: 200,
            level: 0.95,
            schedule: default_schedule(&model),
            weights: WeightDistribution::Exponential1,
            seed: 20_190_101,
            plugin: model.has_hessian(),
            coordinates: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let bad = |msg: String| Err(Error::InvalidArgument(format!("scenario {:?}: {msg}", self.name)));
        if self.n == 0 || self.p == 0 || self.replicates == 0 || self.repetitions == 0 {
            return bad("n, p, replicates and repetitions must be positive".into());
        }
        if self.q == 0 || self.q % 2 != 0 || self.q > self.p {
            return bad(format!("q must be a positive even integer <= p (q={}, p={})", self.q, self.p));
        }
        if self.burn_in >= self.n {
            return bad(format!("burn_in {} must be below n {}", self.burn_in, self.n));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return bad(format!("level must lie in (0, 1), got {}", self.level));
        }
        if !self.mu.is_finite() {
            return bad("mu must be finite".into());
        }
        if self.plugin && !self.model.has_hessian() {
            return Err(Error::PlugInUnavailable(self.model.name()));
        }
        self.report_indices().map(|_| ())
    }

    /// Zero-based coordinates to report.
    pub fn report_indices(&self) -> Result<Vec<usize>> {
        match &self.coordinates {
            Some(c) => c
                .iter()
                .map(|&k| {
                    if k == 0 || k > self.p {
                        Err(Error::IndexOutOfBounds { index: k, dim: self.p })
                    } else {
                        Ok(k - 1)
                    }
                })
                .collect(),
            None => Ok(default_coordinates(self.p, self.q)),
        }
    }

    /// `(N,p,q,mu)` label used in table rows.
    pub fn cell_label(&self) -> String {
        format!("({},{},{},{})", self.n, self.p, self.q, self.mu)
    }

    pub fn engine_config(&self, repetition: u64) -> EngineConfig {
        EngineConfig {
            model: self.model,
            schedule: self.schedule,
            replicates: self.replicates,
            burn_in: self.burn_in,
            weights: self.weights,
            seed: derive_seed(self.seed, repetition, 1),
            plugin: self.plugin.then_some(PluginPoint::PreUpdate),
            max_norm: DEFAULT_MAX_NORM,
            initial: None,
            parallel: false,
        }
    }
}

/// Learning-rate constants used by the simulation studies.
///
/// Tuned on the N = 10000, p = 10 cells: gamma scales with the inverse
/// curvature of each loss, alpha trades bias of the early iterates against
/// how quickly the replicate spread settles.
pub fn default_schedule(model: &ModelKind) -> LearningRateSchedule {
    let (gamma, alpha) = match model {
        ModelKind::LeastSquares => (0.05, 0.75),
        ModelKind::Logistic => (0.4, 0.6),
        ModelKind::Quantile { .. } => (0.2, 0.6),
    };
    LearningRateSchedule::new(gamma, alpha).expect("constant schedule is valid")
}

/// Zero-based `{0, q/2, q}` restricted to `< p`.
pub fn default_coordinates(p: usize, q: usize) -> Vec<usize> {
    let set: BTreeSet<usize> = [0, q / 2, q].into_iter().filter(|&k| k < p).collect();
    set.into_iter().collect()
}

/// Endless stream of synthetic observations from `generate_observation`,
/// driven by a ChaCha8 generator seeded with `seed`.
pub fn synthetic_stream(model: ModelKind, theta0: ParamVector, seed: u64) -> impl Iterator<Item = Observation> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    std::iter::repeat_with(move || generate_observation(&model, &theta0, &mut rng))
}

/// Per-repetition result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepetitionOutcome {
    pub repetition: u64,
    pub estimate: Vec<f64>,
    pub rw_se: Vec<f64>,
    pub rw_hit: Vec<bool>,
    pub plugin_se: Option<Vec<f64>>,
    pub plugin_hit: Option<Vec<bool>>,
}

/// Runs one repetition: fresh data and weight streams keyed by `(seed, repetition)`.
pub fn run_repetition(config: &ScenarioConfig, repetition: u64) -> Result<RepetitionOutcome> {
    let annotate = |e: Error| Error::Repetition {
        repetition,
        source: Box::new(e),
    };
    let theta0 = true_theta(config.p, config.q, config.mu)?;
    let data = synthetic_stream(config.model, theta0.clone(), derive_seed(config.seed, repetition, 0));
    let mut state = EnsembleState::new(config.engine_config(repetition), config.p).map_err(annotate)?;
    for z in data.take(config.n as usize) {
        state.process_observation(&z).map_err(annotate)?;
    }

    let estimate = state.main_average().clone();
    let hits = |lo: &ParamVector, hi: &ParamVector| -> Vec<bool> {
        (0..config.p).map(|j| lo[j] <= theta0[j] && theta0[j] <= hi[j]).collect()
    };

    let rw_cov = replicate_covariance(&state.replicate_averages()).map_err(annotate)?;
    let rw_se = standard_errors(&rw_cov);
    let (lo, hi) = confidence_intervals(&estimate, &rw_se, config.level)?;
    let rw_hit = hits(&lo, &hi);

    let (plugin_se, plugin_hit) = match state.plugin() {
        Some(acc) => {
            let cov = sandwich_covariance(acc, DEFAULT_CONDITION_CAP).map_err(annotate)?;
            let se = standard_errors(&cov);
            let (lo, hi) = confidence_intervals(&estimate, &se, config.level)?;
            (Some(se), Some(hits(&lo, &hi)))
        }
        None => (None, None),
    };

    Ok(RepetitionOutcome {
        repetition,
        estimate: estimate.into_inner(),
        rw_se,
        rw_hit,
        plugin_se,
        plugin_hit,
    })
}

/// Aggregated coverage study for one cell. Vectors are full length `p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub scenario: ScenarioConfig,
    pub repetitions: u64,
    pub true_theta: Vec<f64>,
    pub rw_coverage: Vec<f64>,
    pub plugin_coverage: Option<Vec<f64>>,
    pub rw_se_mean: Vec<f64>,
    pub plugin_se_mean: Option<Vec<f64>>,
    pub empirical_se: Vec<f64>,
    pub estimate_mean: Vec<f64>,
}

/// Runs every repetition (in parallel) and aggregates.
pub fn run_scenario(config: &ScenarioConfig) -> Result<CoverageReport> {
    config.validate()?;
    let outcomes = (0..config.repetitions)
        .into_par_iter()
        .map(|r| run_repetition(config, r))
        .collect::<Result<Vec<_>>>()?;
    aggregate(config, outcomes)
}

/// Sequential variant of [`run_scenario`].
pub fn run_scenario_sequential(config: &ScenarioConfig) -> Result<CoverageReport> {
    config.validate()?;
    let outcomes = (0..config.repetitions)
        .map(|r| run_repetition(config, r))
        .collect::<Result<Vec<_>>>()?;
    aggregate(config, outcomes)
}

/// Combines repetition outcomes. Outcomes are put in repetition order first,
/// so the result does not depend on the order they were produced in.
pub fn aggregate(config: &ScenarioConfig, mut outcomes: Vec<RepetitionOutcome>) -> Result<CoverageReport> {
    if outcomes.len() < 2 {
        return Err(Error::InsufficientSamples {
            needed: 2,
            got: outcomes.len(),
        });
    }
    outcomes.sort_by_key(|o| o.repetition);
    let reps = outcomes.len() as f64;
    let p = config.p;

    let mean_of = |f: &dyn Fn(&RepetitionOutcome) -> f64| -> f64 { outcomes.iter().map(f).sum::<f64>() / reps };
    let rate = |hits: &dyn Fn(&RepetitionOutcome) -> bool| -> f64 {
        outcomes.iter().filter(|o| hits(o)).count() as f64 / reps
    };

    let estimate_mean: Vec<f64> = (0..p).map(|j| mean_of(&|o| o.estimate[j])).collect();
    let empirical_se: Vec<f64> = (0..p)
        .map(|j| {
            let ss: f64 = outcomes.iter().map(|o| (o.estimate[j] - estimate_mean[j]).powi(2)).sum();
            (ss / (reps - 1.0)).sqrt()
        })
        .collect();
    let rw_coverage = (0..p).map(|j| rate(&|o| o.rw_hit[j])).collect();
    let rw_se_mean = (0..p).map(|j| mean_of(&|o| o.rw_se[j])).collect();
    let has_plugin = outcomes.iter().all(|o| o.plugin_se.is_some());
    let plugin_coverage = has_plugin.then(|| {
        (0..p)
            .map(|j| rate(&|o| o.plugin_hit.as_ref().is_some_and(|h| h[j])))
            .collect()
    });
    let plugin_se_mean = has_plugin.then(|| {
        (0..p)
            .map(|j| mean_of(&|o| o.plugin_se.as_ref().map_or(0.0, |s| s[j])))
            .collect()
    });

    Ok(CoverageReport {
        scenario: config.clone(),
        repetitions: outcomes.len() as u64,
        true_theta: true_theta(config.p, config.q, config.mu)?.into_inner(),
        rw_coverage,
        plugin_coverage,
        rw_se_mean,
        plugin_se_mean,
        empirical_se,
        estimate_mean,
    })
}

/// Row of a rendered table: method label plus one value per selected coordinate
/// (`None` renders as "-").
#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub method: &'static str,
    pub values: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageTable {
    pub cell: String,
    /// Zero-based coordinates.
    pub coordinates: Vec<usize>,
    pub coverage: Vec<TableRow>,
    pub standard_errors: Vec<TableRow>,
}

/// Extracts the coverage and SE rows for the given zero-based coordinates.
pub fn report_columns(report: &CoverageReport, coordinates: &[usize]) -> Result<CoverageTable> {
    let p = report.scenario.p;
    if let Some(&bad) = coordinates.iter().find(|&&k| k >= p) {
        return Err(Error::IndexOutOfBounds { index: bad, dim: p });
    }
    let pick = |v: &[f64]| coordinates.iter().map(|&k| Some(v[k])).collect::<Vec<_>>();
    let pick_opt = |v: &Option<Vec<f64>>| match v {
        Some(v) => pick(v),
        None => vec![None; coordinates.len()],
    };
    Ok(CoverageTable {
        cell: report.scenario.cell_label(),
        coordinates: coordinates.to_vec(),
        coverage: vec![
            TableRow {
                method: "RW",
                values: pick(&report.rw_coverage),
            },
            TableRow {
                method: "Plug in",
                values: pick_opt(&report.plugin_coverage),
            },
        ],
        standard_errors: vec![
            TableRow {
                method: "RW",
                values: pick(&report.rw_se_mean),
            },
            TableRow {
                method: "Plug in",
                values: pick_opt(&report.plugin_se_mean),
            },
            TableRow {
                method: "Empirical",
                values: pick(&report.empirical_se),
            },
        ],
    })
}

impl CoverageReport {
    pub fn table(&self) -> Result<CoverageTable> {
        report_columns(self, &self.scenario.report_indices()?)
    }
}

fn render_rows(out: &mut String, cell: &str, rows: &[TableRow], decimals: usize) {
    for (i, row) in rows.iter().enumerate() {
        let label = if i == 0 { cell } else { "" };
        let _ = write!(out, "{label}\t{}", row.method);
        for v in &row.values {
            match v {
                Some(v) => {
                    let _ = write!(out, "\t{v:.decimals$}");
                }
                None => out.push_str("\t-"),
            }
        }
        out.push('\n');
    }
}

fn header(coordinates: &[usize]) -> String {
    let mut h = String::from("(N,p,q,mu)\tMethod");
    for k in coordinates {
        let _ = write!(h, "\tDim {}", k + 1);
    }
    h.push('\n');
    h
}

/// Tab-delimited coverage table (one block per cell).
pub fn render_coverage_table(tables: &[CoverageTable]) -> String {
    let mut out = String::new();
    if let Some(first) = tables.first() {
        out.push_str(&header(&first.coordinates));
    }
    for t in tables {
        render_rows(&mut out, &t.cell, &t.coverage, 3);
    }
    out
}

/// Tab-delimited averaged-SE / empirical-SE table.
pub fn render_se_table(tables: &[CoverageTable]) -> String {
    let mut out = String::new();
    if let Some(first) = tables.first() {
        out.push_str(&header(&first.coordinates));
    }
    for t in tables {
        render_rows(&mut out, &t.cell, &t.standard_errors, 4);
    }
    out
}

/// The full 6-cell x 3-model grid at 1000 repetitions (long-running).
pub fn reference_grid() -> Vec<ScenarioConfig> {
    let cells = [
        (10_000u64, 10usize, 0.1),
        (10_000, 10, 0.2),
        (10_000, 10, 0.3),
        (20_000, 20, 0.1),
        (20_000, 20, 0.2),
        (20_000, 20, 0.3),
    ];
    let models = [ModelKind::LeastSquares, ModelKind::Logistic, ModelKind::Quantile { tau: 0.5 }];
    models
        .iter()
        .flat_map(|m| {
            cells.iter().map(move |&(n, p, mu)| ScenarioConfig {
                repetitions: 1000,
                ..ScenarioConfig::new(*m, n, p, 6, mu)
            })
        })
        .collect()
}

const SCENARIO_KEYS: &[&str] = &[
    "name",
    "model",
    "tau",
    "n",
    "p",
    "q",
    "mu",
    "replicates",
    "burn_in",
    "repetitions",
    "level",
    "gamma",
    "alpha",
    "weights",
    "seed",
    "plugin",
    "coordinates",
];

/// Parses a scenario file: an optional `[defaults]` table and one or more
/// `[[scenario]]` tables using the keys in [`SCENARIO_KEYS`]. All problems
/// are reported together.
pub fn parse_scenarios(text: &str) -> Result<Vec<ScenarioConfig>> {
    let doc: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::InvalidArgument(format!("scenario file: {e}")))?;
    let mut problems = Vec::new();
    for key in doc.keys() {
        if key != "defaults" && key != "scenario" {
            problems.push(format!("unknown top-level key `{key}`"));
        }
    }
    let empty = toml::Table::new();
    let defaults = match doc.get("defaults") {
        None => &empty,
        Some(toml::Value::Table(t)) => t,
        Some(_) => {
            problems.push("`defaults` must be a table".into());
            &empty
        }
    };
    let scenarios = match doc.get("scenario") {
        Some(toml::Value::Array(a)) => a.clone(),
        Some(_) => {
            problems.push("`scenario` must be an array of tables ([[scenario]])".into());
            Vec::new()
        }
        None => {
            problems.push("no [[scenario]] entries".into());
            Vec::new()
        }
    };
    for key in defaults.keys() {
        if !SCENARIO_KEYS.contains(&key.as_str()) {
            problems.push(format!("unknown key `{key}` in [defaults]"));
        }
    }

    let mut out = Vec::new();
    for (i, entry) in scenarios.iter().enumerate() {
        let Some(table) = entry.as_table() else {
            problems.push(format!("scenario #{}: not a table", i + 1));
            continue;
        };
        let mut merged = defaults.clone();
        for (k, v) in table {
            merged.insert(k.clone(), v.clone());
        }
        let before = problems.len();
        for key in table.keys() {
            if !SCENARIO_KEYS.contains(&key.as_str()) {
                problems.push(format!("scenario #{}: unknown key `{key}`", i + 1));
            }
        }
        match scenario_from_table(&merged, i + 1, &mut problems) {
            Some(cfg) if problems.len() == before => {
                if let Err(e) = cfg.validate() {
                    problems.push(format!("scenario #{}: {e}", i + 1));
                } else {
                    out.push(cfg);
                }
            }
            _ => {}
        }
    }
    if problems.is_empty() {
        Ok(out)
    } else {
        Err(Error::InvalidArgument(problems.join("; ")))
    }
}

fn scenario_from_table(t: &toml::Table, idx: usize, problems: &mut Vec<String>) -> Option<ScenarioConfig> {
    let mut missing = |key: &str| problems.push(format!("scenario #{idx}: missing or invalid `{key}`"));
    let int = |key: &str| t.get(key).and_then(|v| v.as_integer()).filter(|v| *v >= 0);
    let float = |key: &str| {
        t.get(key)
            .and_then(|v| v.as_float().or_else(|| v.as_integer().map(|i| i as f64)))
    };

    let model_name = t.get("model").and_then(|v| v.as_str());
    let model = model_name.and_then(|m| ModelKind::from_name(m, float("tau")));
    let Some(model) = model else {
        missing("model");
        return None;
    };
    let (Some(n), Some(p), Some(q), Some(mu)) = (int("n"), int("p"), int("q"), float("mu")) else {
        for key in ["n", "p", "q"] {
            if int(key).is_none() {
                missing(key);
            }
        }
        if float("mu").is_none() {
            missing("mu");
        }
        return None;
    };
    let mut cfg = ScenarioConfig::new(model, n as u64, p as usize, q as usize, mu);
    if let Some(name) = t.get("name") {
        match name.as_str() {
            Some(s) => cfg.name = s.to_string(),
            None => missing("name"),
        }
    }
    macro_rules! set_int {
        ($key:literal, $field:expr, $ty:ty) => {
            if t.contains_key($key) {
                match int($key) {
                    Some(v) => $field = v as $ty,
                    None => missing($key),
                }
            }
        };
    }
    set_int!("replicates", cfg.replicates, usize);
    set_int!("burn_in", cfg.burn_in, u64);
    set_int!("repetitions", cfg.repetitions, u64);
    set_int!("seed", cfg.seed, u64);
    if t.contains_key("level") {
        match float("level") {
            Some(v) => cfg.level = v,
            None => missing("level"),
        }
    }
    if t.contains_key("gamma") || t.contains_key("alpha") {
        let gamma = float("gamma").unwrap_or(cfg.schedule.gamma());
        let alpha = float("alpha").unwrap_or(cfg.schedule.alpha());
        match LearningRateSchedule::new(gamma, alpha) {
            Ok(s) => cfg.schedule = s,
            Err(e) => problems.push(format!("scenario #{idx}: {e}")),
        }
    }
    if let Some(w) = t.get("weights") {
        match w.as_str().and_then(WeightDistribution::parse) {
            Some(d) => cfg.weights = d,
            None => problems.push(format!("scenario #{idx}: unknown weight distribution {w}")),
        }
    }
    if let Some(v) = t.get("plugin") {
        match v.as_bool() {
            Some(b) => cfg.plugin = b && model.has_hessian(),
            None => problems.push(format!("scenario #{idx}: `plugin` must be a boolean")),
        }
    }
    if let Some(v) = t.get("coordinates") {
        let coords: Option<Vec<usize>> = v.as_array().and_then(|a| {
            a.iter()
                .map(|x| x.as_integer().filter(|i| *i > 0).map(|i| i as usize))
                .collect()
        });
        match coords {
            Some(c) => cfg.coordinates = Some(c),
            None => problems.push(format!("scenario #{idx}: `coordinates` must be positive integers")),
        }
    }
    Some(cfg)
}
