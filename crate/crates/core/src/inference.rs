//! Statistical output built from an ensemble: replicate covariance, standard
//! errors, intervals, the plug-in sandwich estimate, closed-form asymptotic
//! covariances, and distribution diagnostics.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::base::{check_dim, ParamVector, RunningCovariance};
use crate::engine::EnsembleState;
use crate::error::{Error, Result};
use crate::models::ModelKind;

/// Default cap on the condition number of the averaged Hessian.
pub const DEFAULT_CONDITION_CAP: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InferenceMethod {
    /// Normal intervals from the random-weighting replicate covariance.
    ReplicateRw,
    /// Normal intervals from the plug-in sandwich covariance.
    PlugIn,
    /// Replicate percentile intervals. Not a normal-theory method; offered
    /// because the replicates approximate the whole sampling distribution.
    ReplicatePercentile,
}

impl InferenceMethod {
    pub fn label(&self) -> &'static str {
        match self {
            InferenceMethod::ReplicateRw => "RW",
            InferenceMethod::PlugIn => "Plug in",
            InferenceMethod::ReplicatePercentile => "RW percentile",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rw" | "replicate" | "replicate_rw" => Some(InferenceMethod::ReplicateRw),
            "plugin" | "plug-in" | "plug_in" => Some(InferenceMethod::PlugIn),
            "percentile" | "replicate_percentile" => Some(InferenceMethod::ReplicatePercentile),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceReport {
    pub point: ParamVector,
    pub se: Vec<f64>,
    pub ci_lower: ParamVector,
    pub ci_upper: ParamVector,
    pub level: f64,
    pub method: InferenceMethod,
    pub n_used: u64,
    pub n_total: u64,
    /// Row-major p x p covariance of the point estimate.
    pub covariance: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replicate_averages: Option<Vec<ParamVector>>,
}

impl InferenceReport {
    pub fn from_ensemble(state: &EnsembleState, level: f64, method: InferenceMethod) -> Result<Self> {
        let point = state.main_average().clone();
        let covariance = match method {
            InferenceMethod::ReplicateRw | InferenceMethod::ReplicatePercentile => {
                replicate_covariance(&state.replicate_averages())?
            }
            InferenceMethod::PlugIn => match state.plugin() {
                Some(acc) => sandwich_covariance(acc, DEFAULT_CONDITION_CAP)?,
                None if !state.model().has_hessian() => {
                    return Err(Error::PlugInUnavailable(state.model().name()))
                }
                None => return Err(Error::PlugInDisabled),
            },
        };
        let se = standard_errors(&covariance);
        let (ci_lower, ci_upper) = match method {
            InferenceMethod::ReplicatePercentile => {
                percentile_intervals(&state.replicate_averages(), level)?
            }
            _ => confidence_intervals(&point, &se, level)?,
        };
        Ok(InferenceReport {
            point,
            se,
            ci_lower,
            ci_upper,
            level,
            method,
            n_used: state.main_accumulator().count_used(),
            n_total: state.n(),
            covariance: matrix_rows(&covariance),
            replicate_averages: None,
        })
    }

    pub fn with_replicates(mut self, state: &EnsembleState) -> Self {
        self.replicate_averages = Some(state.replicate_averages());
        self
    }

    pub fn dim(&self) -> usize {
        self.point.dim()
    }

    /// Comma-delimited table: one row per coordinate, full-precision values.
    pub fn to_table(&self, names: Option<&[String]>) -> String {
        let mut out = String::from("coordinate,name,estimate,se,ci_lower,ci_upper,method\n");
        for j in 0..self.dim() {
            let name = names
                .and_then(|n| n.get(j).cloned())
                .unwrap_or_else(|| format!("x{}", j + 1));
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                j + 1,
                name,
                self.point[j],
                self.se[j],
                self.ci_lower[j],
                self.ci_upper[j],
                self.method.label()
            );
        }
        out
    }

    /// Human-readable "Variable / Point estimate / CI" table.
    pub fn to_summary(&self, names: Option<&[String]>, decimals: usize) -> String {
        let pct = self.level * 100.0;
        let mut out = format!("{:<16}{:>16}  {}% CI\n", "Variable", "Point estimate", trim_float(pct));
        for j in 0..self.dim() {
            let name = names
                .and_then(|n| n.get(j).cloned())
                .unwrap_or_else(|| format!("x{}", j + 1));
            let _ = writeln!(
                out,
                "{:<16}{:>16}  ({:.d$}, {:.d$})",
                name,
                format!("{:.d$}", self.point[j], d = decimals),
                self.ci_lower[j],
                self.ci_upper[j],
                d = decimals
            );
        }
        out
    }
}

fn trim_float(v: f64) -> String {
    let s = format!("{v:.4}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

pub(crate) fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

/// Square roots of the diagonal (negative round-off clamps to zero).
pub fn standard_errors(cov: &DMatrix<f64>) -> Vec<f64> {
    (0..cov.nrows()).map(|i| cov[(i, i)].max(0.0).sqrt()).collect()
}

/// Sample covariance of the B replicate averages.
pub fn replicate_covariance(replicate_averages: &[ParamVector]) -> Result<DMatrix<f64>> {
    if replicate_averages.len() < 2 {
        return Err(Error::InsufficientSamples {
            needed: 2,
            got: replicate_averages.len(),
        });
    }
    let mut rc = RunningCovariance::new(replicate_averages[0].dim());
    for avg in replicate_averages {
        rc.push(avg)?;
    }
    rc.covariance()
}

/// Standard normal quantile.
pub fn normal_quantile(prob: f64) -> f64 {
    Normal::standard().inverse_cdf(prob)
}

fn check_level(level: f64) -> Result<()> {
    if level > 0.0 && level < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidLevel(level))
    }
}

/// Symmetric normal intervals `point +/- z_{(1+level)/2} * se`.
pub fn confidence_intervals(point: &[f64], se: &[f64], level: f64) -> Result<(ParamVector, ParamVector)> {
    check_level(level)?;
    check_dim(point.len(), se.len())?;
    if let Some(bad) = se.iter().find(|s| !(**s >= 0.0)) {
        return Err(Error::InvalidArgument(format!("standard error must be >= 0, got {bad}")));
    }
    let z = normal_quantile(0.5 * (1.0 + level));
    let lower = point.iter().zip(se).map(|(p, s)| p - z * s).collect::<Vec<_>>();
    let upper = point.iter().zip(se).map(|(p, s)| p + z * s).collect::<Vec<_>>();
    Ok((lower.into(), upper.into()))
}

/// Per-coordinate `(1-level)/2` and `(1+level)/2` quantiles of the replicate
/// averages (linear interpolation between order statistics).
pub fn percentile_intervals(replicate_averages: &[ParamVector], level: f64) -> Result<(ParamVector, ParamVector)> {
    check_level(level)?;
    if replicate_averages.len() < 2 {
        return Err(Error::InsufficientSamples {
            needed: 2,
            got: replicate_averages.len(),
        });
    }
    let p = replicate_averages[0].dim();
    let lo_q = 0.5 * (1.0 - level);
    let hi_q = 0.5 * (1.0 + level);
    let mut lower = Vec::with_capacity(p);
    let mut upper = Vec::with_capacity(p);
    for j in 0..p {
        let mut col: Vec<f64> = replicate_averages.iter().map(|r| r[j]).collect();
        col.sort_by(f64::total_cmp);
        lower.push(sorted_quantile(&col, lo_q));
        upper.push(sorted_quantile(&col, hi_q));
    }
    Ok((lower.into(), upper.into()))
}

fn sorted_quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Running sums behind the plug-in estimates: averaged Hessian `S_hat` and
/// averaged gradient outer product `V_hat`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandwichInputs {
    hessian_sum: DMatrix<f64>,
    outer_sum: DMatrix<f64>,
    n: u64,
}

impl SandwichInputs {
    pub fn new(dim: usize) -> Self {
        SandwichInputs {
            hessian_sum: DMatrix::zeros(dim, dim),
            outer_sum: DMatrix::zeros(dim, dim),
            n: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.hessian_sum.nrows()
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn s_hat(&self) -> DMatrix<f64> {
        &self.hessian_sum / self.n.max(1) as f64
    }

    pub fn v_hat(&self) -> DMatrix<f64> {
        &self.outer_sum / self.n.max(1) as f64
    }

    pub fn push(&mut self, grad: &[f64], hess: &DMatrix<f64>) -> Result<()> {
        let p = self.dim();
        check_dim(p, grad.len())?;
        check_dim(p, hess.nrows())?;
        check_dim(p, hess.ncols())?;
        self.hessian_sum += hess;
        for i in 0..p {
            for j in i..p {
                let v = grad[i] * grad[j];
                self.outer_sum[(i, j)] += v;
                if i != j {
                    self.outer_sum[(j, i)] = self.outer_sum[(i, j)];
                }
            }
        }
        self.n += 1;
        Ok(())
    }

    /// Adds the contribution of a loss whose gradient is `g * x` and Hessian
    /// is `c * x x'`, without materialising either.
    pub(crate) fn push_rank_one(&mut self, x: &[f64], g: f64, c: f64) {
        let p = self.dim();
        for i in 0..p {
            let gi = g * x[i];
            let ci = c * x[i];
            for j in i..p {
                let ov = gi * (g * x[j]);
                let hv = ci * x[j];
                self.outer_sum[(i, j)] += ov;
                self.hessian_sum[(i, j)] += hv;
                if i != j {
                    self.outer_sum[(j, i)] = self.outer_sum[(i, j)];
                    self.hessian_sum[(j, i)] = self.hessian_sum[(i, j)];
                }
            }
        }
        self.n += 1;
    }
}

/// Adds one (gradient, Hessian) pair; `hess = None` means the model has no
/// Hessian and the plug-in route is unavailable.
pub fn update_plugin(
    mut acc: SandwichInputs,
    grad: &ParamVector,
    hess: Option<&DMatrix<f64>>,
    kind: &ModelKind,
) -> Result<SandwichInputs> {
    let hess = hess.ok_or(Error::PlugInUnavailable(kind.name()))?;
    acc.push(grad, hess)?;
    Ok(acc)
}

/// Inverse of a symmetric positive definite matrix, refusing matrices whose
/// condition number exceeds `cap`.
pub fn spd_inverse(m: &DMatrix<f64>, cap: f64) -> Result<DMatrix<f64>> {
    let eig = m.clone().symmetric_eigenvalues();
    let max = eig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.iter().copied().fold(f64::INFINITY, f64::min);
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    if !(condition <= cap) {
        return Err(Error::IllConditioned { condition, cap });
    }
    let chol = m
        .clone()
        .cholesky()
        .ok_or(Error::IllConditioned { condition, cap })?;
    Ok(symmetrize(chol.inverse()))
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    let t = m.transpose();
    (m + t) * 0.5
}

/// `S_hat^{-1} V_hat S_hat^{-1} / n`: plug-in covariance of the averaged estimate.
pub fn sandwich_covariance(acc: &SandwichInputs, condition_cap: f64) -> Result<DMatrix<f64>> {
    if acc.n == 0 {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    let s_inv = spd_inverse(&acc.s_hat(), condition_cap)?;
    let sandwich = &s_inv * acc.v_hat() * &s_inv;
    Ok(symmetrize(sandwich) / acc.n as f64)
}

/// Ingredients for a closed-form asymptotic covariance of `sqrt(n)(theta_bar - theta_0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TheorySpec {
    /// Design second moment `G = E[x x']`.
    pub gram: DMatrix<f64>,
    /// Error variance, least squares.
    pub sigma2: Option<f64>,
    /// Error density at zero, quantile regression.
    pub density_at_zero: Option<f64>,
}

/// Regression M-estimation covariance `G^{-1} varphi(0) / phi_dot(0)^2`, where
/// `phi(u) = E psi(u + eps)` and `varphi(u) = E psi(u + eps)^2`.
pub fn m_estimation_covariance(gram: &DMatrix<f64>, varphi_at_zero: f64, phi_slope_at_zero: f64) -> Result<DMatrix<f64>> {
    if !(phi_slope_at_zero > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "derivative of phi at zero must be positive, got {phi_slope_at_zero}"
        )));
    }
    if !(varphi_at_zero >= 0.0) {
        return Err(Error::InvalidArgument(format!("varphi(0) must be >= 0, got {varphi_at_zero}")));
    }
    let g_inv = spd_inverse(gram, DEFAULT_CONDITION_CAP)?;
    Ok(g_inv * (varphi_at_zero / (phi_slope_at_zero * phi_slope_at_zero)))
}

/// Closed-form asymptotic covariance for least squares (`sigma^2 G^{-1}`)
/// and quantile regression (`G^{-1} tau (1 - tau) / p_eps(0)^2`).
pub fn theoretical_covariance(kind: &ModelKind, spec: &TheorySpec) -> Result<DMatrix<f64>> {
    match *kind {
        ModelKind::LeastSquares => {
            let sigma2 = spec
                .sigma2
                .ok_or_else(|| Error::InvalidArgument("least squares needs sigma2".into()))?;
            // psi(u) = 2u: varphi(0) = 4 sigma^2, phi_dot(0) = 2
            m_estimation_covariance(&spec.gram, 4.0 * sigma2, 2.0)
        }
        ModelKind::Quantile { tau } => {
            let density = spec
                .density_at_zero
                .ok_or_else(|| Error::InvalidArgument("quantile model needs the error density at 0".into()))?;
            if !(density > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "error density at zero must be positive, got {density}"
                )));
            }
            m_estimation_covariance(&spec.gram, tau * (1.0 - tau), density)
        }
        ModelKind::Logistic => Err(Error::InvalidArgument(
            "no closed-form asymptotic covariance for the logistic model".into(),
        )),
    }
}

/// Two-sample Kolmogorov-Smirnov distance `sup |F_a - F_b|`.
pub fn ks_distance(sample_a: &[f64], sample_b: &[f64]) -> Result<f64> {
    if sample_a.is_empty() || sample_b.is_empty() {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    if sample_a.iter().chain(sample_b).any(|v| v.is_nan()) {
        return Err(Error::NonFinite { what: "KS sample" });
    }
    let mut a = sample_a.to_vec();
    let mut b = sample_b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut best = 0.0f64;
    while i < a.len() && j < b.len() {
        let t = a[i].min(b[j]);
        while i < a.len() && a[i] <= t {
            i += 1;
        }
        while j < b.len() && b[j] <= t {
            j += 1;
        }
        best = best.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `bins + 1` edges.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    /// Two-column `bin_left,count` text.
    pub fn to_table(&self) -> String {
        let mut out = String::from("bin_left,count\n");
        for (left, count) in self.edges.iter().zip(&self.counts) {
            let _ = writeln!(out, "{left},{count}");
        }
        out
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Equal-width histogram over `[min, max]`; a zero-width range is widened
/// slightly so every value lands in one bin.
pub fn histogram_export(values: &[f64], bins: usize) -> Result<Histogram> {
    if bins == 0 {
        return Err(Error::InvalidArgument("histogram needs at least one bin".into()));
    }
    if values.is_empty() {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { what: "histogram input" });
    }
    let mut lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let mut hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo {
        let eps = (lo.abs() * 1e-9).max(1e-9);
        lo -= eps;
        hi += eps;
    }
    let width = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins)
        .map(|k| if k == bins { hi } else { lo + k as f64 * width })
        .collect();
    let mut counts = vec![0u64; bins];
    for &v in values {
        let k = (((v - lo) / width).floor() as usize).min(bins - 1);
        counts[k] += 1;
    }
    Ok(Histogram { edges, counts })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rows(v: &[&[f64]]) -> Vec<ParamVector> {
        v.iter().map(|r| ParamVector::from(*r)).collect()
    }

    #[test]
    fn replicate_covariance_examples() {
        let cov = replicate_covariance(&rows(&[&[1.0, 0.0], &[-1.0, 0.0]])).unwrap();
        assert_eq!(cov, DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.0]));
        let cov = replicate_covariance(&rows(&[&[0.7, 1.0][..]; 4])).unwrap();
        assert_eq!(cov, DMatrix::zeros(2, 2));
        assert!(replicate_covariance(&rows(&[&[1.0]])).is_err());
    }

    #[test]
    fn normal_quantile_accuracy() {
        // reference values of the standard normal quantile
        assert!((normal_quantile(0.975) - 1.959_963_984_540_054).abs() < 1e-8);
        assert!((normal_quantile(0.95) - 1.644_853_626_951_472_2).abs() < 1e-8);
        assert!((normal_quantile(0.995) - 2.575_829_303_548_900_4).abs() < 1e-8);
        assert!(normal_quantile(0.5).abs() < 1e-12);
    }

    #[test]
    fn interval_examples() {
        let (lo, hi) = confidence_intervals(&[0.0], &[1.0], 0.95).unwrap();
        assert!((lo[0] + 1.959964).abs() < 1e-6);
        assert!((hi[0] - 1.959964).abs() < 1e-6);
        let (lo, hi) = confidence_intervals(&[3.0], &[0.0], 0.95).unwrap();
        assert_eq!((lo[0], hi[0]), (3.0, 3.0));
        assert!(matches!(confidence_intervals(&[0.0], &[1.0], 1.0), Err(Error::InvalidLevel(_))));
        assert!(confidence_intervals(&[0.0], &[1.0], 0.0).is_err());
        assert!(confidence_intervals(&[0.0], &[-1.0], 0.9).is_err());
    }

    #[test]
    fn summary_format_matches_three_decimals() {
        // chosen so the interval rounds to (2.254, 2.275) around 2.265
        let se = 0.0104 / normal_quantile(0.975);
        let (lo, hi) = confidence_intervals(&[2.2647], &[se], 0.95).unwrap();
        let report = InferenceReport {
            point: vec![2.2647].into(),
            se: vec![se],
            ci_lower: lo,
            ci_upper: hi,
            level: 0.95,
            method: InferenceMethod::ReplicateRw,
            n_used: 1,
            n_total: 1,
            covariance: vec![vec![se * se]],
            replicate_averages: None,
        };
        let text = report.to_summary(Some(&["Time 0-2".to_string()]), 3);
        assert!(text.contains("95% CI"), "{text}");
        assert!(text.contains("2.265  (2.254, 2.275)"), "{text}");
    }

    #[test]
    fn plugin_examples() {
        let kind = ModelKind::LeastSquares;
        let mut acc = SandwichInputs::new(2);
        let h = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.0]);
        for _ in 0..5 {
            acc = update_plugin(acc, &vec![0.0, 0.0].into(), Some(&h), &kind).unwrap();
        }
        assert_eq!(acc.s_hat(), h);

        let acc = update_plugin(SandwichInputs::new(2), &vec![-2.0, 0.0].into(), Some(&h), &kind).unwrap();
        assert_eq!(acc.v_hat(), DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 0.0]));

        let q = ModelKind::quantile(0.5).unwrap();
        assert!(matches!(
            update_plugin(SandwichInputs::new(1), &vec![1.0].into(), None, &q),
            Err(Error::PlugInUnavailable("quantile"))
        ));
    }

    #[test]
    fn rank_one_push_matches_dense_push() {
        let x = [0.3, -1.2, 2.0];
        let (g, c) = (-0.7, 1.9);
        let mut fast = SandwichInputs::new(3);
        fast.push_rank_one(&x, g, c);
        let mut dense = SandwichInputs::new(3);
        let grad: Vec<f64> = x.iter().map(|v| g * v).collect();
        dense.push(&grad, &crate::models::scaled_outer(&x, c)).unwrap();
        assert_eq!(fast, dense);
    }

    fn sandwich_from(s: DMatrix<f64>, v: DMatrix<f64>, n: u64) -> SandwichInputs {
        SandwichInputs {
            hessian_sum: s * n as f64,
            outer_sum: v * n as f64,
            n,
        }
    }

    #[test]
    fn sandwich_examples() {
        let acc = sandwich_from(DMatrix::identity(2, 2) * 2.0, DMatrix::identity(2, 2) * 4.0, 10_000);
        let cov = sandwich_covariance(&acc, DEFAULT_CONDITION_CAP).unwrap();
        let expected = DMatrix::<f64>::identity(2, 2) / 10_000.0;
        assert!((cov - expected).abs().max() < 1e-18);

        let acc = sandwich_from(DMatrix::identity(2, 2), DMatrix::identity(2, 2), 1);
        let cov = sandwich_covariance(&acc, DEFAULT_CONDITION_CAP).unwrap();
        assert!((cov - DMatrix::<f64>::identity(2, 2)).abs().max() < 1e-15);

        let singular = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let acc = sandwich_from(singular, DMatrix::identity(2, 2), 3);
        assert!(matches!(
            sandwich_covariance(&acc, DEFAULT_CONDITION_CAP),
            Err(Error::IllConditioned { .. })
        ));
        let acc = sandwich_from(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1e-14]), DMatrix::identity(2, 2), 3);
        assert!(sandwich_covariance(&acc, DEFAULT_CONDITION_CAP).is_err());
    }

    #[test]
    fn theoretical_covariance_examples() {
        let spec = TheorySpec {
            gram: DMatrix::identity(3, 3),
            sigma2: Some(1.0),
            density_at_zero: None,
        };
        let cov = theoretical_covariance(&ModelKind::LeastSquares, &spec).unwrap();
        assert_eq!(cov, DMatrix::identity(3, 3));

        let laplace = TheorySpec {
            gram: DMatrix::identity(2, 2),
            sigma2: None,
            density_at_zero: Some(0.5),
        };
        let cov = theoretical_covariance(&ModelKind::quantile(0.5).unwrap(), &laplace).unwrap();
        assert_eq!(cov, DMatrix::identity(2, 2));
        let cov = theoretical_covariance(&ModelKind::quantile(0.25).unwrap(), &laplace).unwrap();
        assert_eq!(cov, DMatrix::identity(2, 2) * 0.75);

        let bad = TheorySpec {
            density_at_zero: Some(0.0),
            ..laplace
        };
        assert!(theoretical_covariance(&ModelKind::quantile(0.5).unwrap(), &bad).is_err());
        assert!(theoretical_covariance(&ModelKind::Logistic, &spec).is_err());
    }

    fn brute_ks(a: &[f64], b: &[f64]) -> f64 {
        let ecdf = |s: &[f64], t: f64| s.iter().filter(|v| **v <= t).count() as f64 / s.len() as f64;
        a.iter()
            .chain(b)
            .map(|&t| (ecdf(a, t) - ecdf(b, t)).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn ks_examples() {
        let a = [0.3, 1.0, -2.0];
        assert_eq!(ks_distance(&a, &a).unwrap(), 0.0);
        assert_eq!(ks_distance(&[0.0], &[1.0]).unwrap(), 1.0);
        let grid: Vec<f64> = (1..=10).map(|k| k as f64 / 10.0).collect();
        let shifted: Vec<f64> = grid.iter().map(|v| v + 0.05).collect();
        let d = ks_distance(&grid, &shifted).unwrap();
        assert!((d - 0.1).abs() < 1e-12);
        assert!((d - brute_ks(&grid, &shifted)).abs() < 1e-12);
        assert!(ks_distance(&[], &[1.0]).is_err());
    }

    #[test]
    fn histogram_examples() {
        let h = histogram_export(&[0.0, 1.0], 2).unwrap();
        assert_eq!(h.counts, vec![1, 1]);
        assert_eq!(h.edges, vec![0.0, 0.5, 1.0]);
        let h = histogram_export(&[4.2; 7], 5).unwrap();
        assert_eq!(h.counts.iter().filter(|c| **c > 0).count(), 1);
        assert_eq!(h.total(), 7);
        assert!(histogram_export(&[], 3).is_err());
        assert!(histogram_export(&[1.0], 0).is_err());
        assert_eq!(h.to_table().lines().count(), 6);
    }

    proptest! {
        #[test]
        fn ks_matches_brute_force_and_is_symmetric(
            a in prop::collection::vec(-5i32..5, 1..30),
            b in prop::collection::vec(-5i32..5, 1..30),
        ) {
            // integer-valued draws exercise ties
            let a: Vec<f64> = a.into_iter().map(f64::from).collect();
            let b: Vec<f64> = b.into_iter().map(f64::from).collect();
            let d = ks_distance(&a, &b).unwrap();
            prop_assert!((d - brute_ks(&a, &b)).abs() < 1e-12);
            prop_assert_eq!(d, ks_distance(&b, &a).unwrap());
            let ta: Vec<f64> = a.iter().map(|v| v.exp() * 3.0 + 1.0).collect();
            let tb: Vec<f64> = b.iter().map(|v| v.exp() * 3.0 + 1.0).collect();
            prop_assert!((ks_distance(&ta, &tb).unwrap() - d).abs() < 1e-12);
        }

        #[test]
        fn histogram_conserves_counts(
            values in prop::collection::vec(-1e6f64..1e6, 1..200),
            bins in 1usize..40,
        ) {
            let h = histogram_export(&values, bins).unwrap();
            prop_assert_eq!(h.total(), values.len() as u64);
            prop_assert_eq!(h.counts.len(), bins);
            prop_assert_eq!(h.edges.len(), bins + 1);
        }

        #[test]
        fn replicate_covariance_matches_two_pass(
            data in prop::collection::vec(prop::collection::vec(-10f64..10.0, 3), 2..50),
        ) {
            let reps: Vec<ParamVector> = data.iter().map(|r| ParamVector::from(r.as_slice())).collect();
            let cov = replicate_covariance(&reps).unwrap();
            let n = data.len() as f64;
            let mean: Vec<f64> = (0..3).map(|j| data.iter().map(|r| r[j]).sum::<f64>() / n).collect();
            for i in 0..3 {
                for j in 0..3 {
                    let brute = data.iter().map(|r| (r[i] - mean[i]) * (r[j] - mean[j])).sum::<f64>() / (n - 1.0);
                    prop_assert!((cov[(i, j)] - brute).abs() <= 1e-10 * brute.abs().max(1.0));
                }
            }
        }

        #[test]
        fn sandwich_is_symmetric_psd(
            a in prop::collection::vec(-2f64..2.0, 9),
            b in prop::collection::vec(-2f64..2.0, 9),
            n in 1u64..10_000,
        ) {
            let a = DMatrix::from_row_slice(3, 3, &a);
            let b = DMatrix::from_row_slice(3, 3, &b);
            let s = &a * a.transpose() + DMatrix::identity(3, 3);
            let v = &b * b.transpose();
            let cov = sandwich_covariance(&sandwich_from(s, v, n), DEFAULT_CONDITION_CAP).unwrap();
            prop_assert_eq!(&cov, &cov.transpose());
            let tr = cov.trace();
            prop_assert!(cov.symmetric_eigenvalues().iter().all(|&e| e >= -1e-9 * tr.max(1e-300)));
        }

        #[test]
        fn interval_width_scales(se in 0.0f64..10.0, l1 in 0.05f64..0.9, dl in 0.01f64..0.09) {
            let (lo, hi) = confidence_intervals(&[1.0], &[se], l1).unwrap();
            let (lo2, hi2) = confidence_intervals(&[1.0], &[2.0 * se], l1).unwrap();
            let w = hi[0] - lo[0];
            prop_assert!(((hi2[0] - lo2[0]) - 2.0 * w).abs() <= 1e-12 * w.max(1.0));
            let (lo3, hi3) = confidence_intervals(&[1.0], &[se], l1 + dl).unwrap();
            prop_assert!(hi3[0] - lo3[0] >= w);
            prop_assert!(lo[0] <= 1.0 && 1.0 <= hi[0]);
        }
    }
}
