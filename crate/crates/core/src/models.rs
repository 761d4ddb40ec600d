//! Loss families. Every supported model has a stochastic gradient of the form
//! `m(theta; z) * x`, so the engine only needs the scalar multiplier.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::base::{check_dim, dot, ParamVector};
use crate::error::{Error, Result};

/// One (response, covariates) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub y: f64,
    pub x: ParamVector,
}

impl Observation {
    pub fn new(y: f64, x: impl Into<ParamVector>) -> Self {
        Observation { y, x: x.into() }
    }

    pub fn dim(&self) -> usize {
        self.x.dim()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelKind {
    /// Squared error `(y - x'theta)^2`.
    LeastSquares,
    /// `log(1 + exp(-y x'theta))` with labels in {-1, +1}.
    Logistic,
    /// Check loss `rho_tau(u) = u (tau - 1[u < 0])`, `u = y - x'theta`.
    Quantile { tau: f64 },
}

impl ModelKind {
    pub fn quantile(tau: f64) -> Result<Self> {
        let kind = ModelKind::Quantile { tau };
        kind.validate()?;
        Ok(kind)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            ModelKind::Quantile { tau } if !(tau > 0.0 && tau < 1.0) => Err(Error::InvalidTau(tau)),
            _ => Ok(()),
        }
    }

    /// Accepts `ls`/`least_squares`/`least-squares`/`linear`, `logistic`/`logit`,
    /// `lad` (median) and `quantile` (with `tau`, default 0.5).
    pub fn from_name(name: &str, tau: Option<f64>) -> Option<Self> {
        match name.to_ascii_lowercase().as_str() {
            "ls" | "least_squares" | "least-squares" | "linear" => Some(ModelKind::LeastSquares),
            "logistic" | "logit" => Some(ModelKind::Logistic),
            "lad" => Some(ModelKind::Quantile { tau: 0.5 }),
            "quantile" => Some(ModelKind::Quantile { tau: tau.unwrap_or(0.5) }),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::LeastSquares => "least-squares",
            ModelKind::Logistic => "logistic",
            ModelKind::Quantile { .. } => "quantile",
        }
    }

    pub fn has_hessian(&self) -> bool {
        !matches!(self, ModelKind::Quantile { .. })
    }

    /// Checks a response value against the model's label domain.
    pub fn check_response(&self, y: f64) -> Result<()> {
        match self {
            ModelKind::Logistic if y != 1.0 && y != -1.0 => Err(Error::InvalidLabel(y)),
            _ if !y.is_finite() => Err(Error::NonFinite { what: "response" }),
            _ => Ok(()),
        }
    }

    /// Scalar `m` such that the (sub)gradient of the loss is `m * x`.
    pub fn gradient_multiplier(&self, theta: &[f64], z: &Observation) -> Result<f64> {
        check_dim(theta.len(), z.dim())?;
        self.check_response(z.y)?;
        let fit = dot(&z.x, theta);
        Ok(match *self {
            ModelKind::LeastSquares => -2.0 * (z.y - fit),
            ModelKind::Logistic => -z.y * logistic_tail(z.y * fit),
            ModelKind::Quantile { tau } => {
                let below = if z.y - fit < 0.0 { 1.0 } else { 0.0 };
                -(tau - below)
            }
        })
    }
}

/// `1 / (1 + exp(t))` without overflow.
fn logistic_tail(t: f64) -> f64 {
    if t > 0.0 {
        let e = (-t).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + t.exp())
    }
}

/// `log(1 + exp(t))` without overflow.
fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

/// Gradient (or, for the quantile model, the subgradient) of the loss at `theta`.
pub fn gradient(kind: &ModelKind, theta: &ParamVector, z: &Observation) -> Result<ParamVector> {
    let m = kind.gradient_multiplier(theta, z)?;
    Ok(z.x.iter().map(|x| m * x).collect::<Vec<_>>().into())
}

/// Second derivative of the loss; `None` where the loss is not twice differentiable.
pub fn hessian(kind: &ModelKind, theta: &ParamVector, z: &Observation) -> Result<Option<DMatrix<f64>>> {
    check_dim(theta.dim(), z.dim())?;
    let curvature = match kind {
        ModelKind::LeastSquares => 2.0,
        ModelKind::Logistic => {
            // s(1 - s) for s = sigmoid(x'theta); label-free
            let e = (-dot(&z.x, theta).abs()).exp();
            e / ((1.0 + e) * (1.0 + e))
        }
        ModelKind::Quantile { .. } => return Ok(None),
    };
    Ok(Some(scaled_outer(&z.x, curvature)))
}

/// `c * x x'`, filled from the upper triangle so the result is exactly symmetric.
pub(crate) fn scaled_outer(x: &[f64], c: f64) -> DMatrix<f64> {
    let p = x.len();
    let mut out = DMatrix::zeros(p, p);
    for i in 0..p {
        let ci = c * x[i];
        for j in i..p {
            let v = ci * x[j];
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}

/// Loss value `l(theta; z)`.
pub fn check_loss_value(kind: &ModelKind, theta: &ParamVector, z: &Observation) -> Result<f64> {
    check_dim(theta.dim(), z.dim())?;
    kind.check_response(z.y)?;
    let fit = theta.dot(&z.x);
    Ok(match *kind {
        ModelKind::LeastSquares => (z.y - fit).powi(2),
        ModelKind::Logistic => softplus(-z.y * fit),
        ModelKind::Quantile { tau } => check_loss(tau, z.y - fit),
    })
}

/// `rho_tau(u) = u (tau - 1[u < 0])`.
pub fn check_loss(tau: f64, u: f64) -> f64 {
    let below = if u < 0.0 { 1.0 } else { 0.0 };
    u * (tau - below)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn pv(v: &[f64]) -> ParamVector {
        ParamVector::from(v)
    }

    #[test]
    fn gradient_examples() {
        let z = Observation::new(1.0, vec![1.0, 0.0]);
        let zero = pv(&[0.0, 0.0]);
        assert_eq!(gradient(&ModelKind::LeastSquares, &zero, &z).unwrap(), pv(&[-2.0, 0.0]));
        assert_eq!(gradient(&ModelKind::Logistic, &zero, &z).unwrap(), pv(&[-0.5, 0.0]));
        let q = ModelKind::quantile(0.5).unwrap();
        assert_eq!(gradient(&q, &zero, &z).unwrap(), pv(&[-0.5, 0.0]));
        let z_neg = Observation::new(-1.0, vec![1.0, 0.0]);
        assert_eq!(gradient(&q, &zero, &z_neg).unwrap(), pv(&[0.5, 0.0]));
    }

    #[test]
    fn zero_residual_uses_strict_indicator() {
        let q = ModelKind::quantile(0.3).unwrap();
        let z = Observation::new(0.0, vec![1.0]);
        assert_eq!(q.gradient_multiplier(&[0.0], &z).unwrap(), -0.3);
    }

    #[test]
    fn gradient_errors() {
        let z = Observation::new(0.5, vec![1.0]);
        assert!(matches!(
            gradient(&ModelKind::Logistic, &pv(&[0.0]), &z),
            Err(Error::InvalidLabel(_))
        ));
        let z = Observation::new(1.0, vec![1.0, 2.0]);
        assert!(matches!(
            gradient(&ModelKind::LeastSquares, &pv(&[0.0]), &z),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(ModelKind::quantile(0.0).is_err());
        assert!(ModelKind::quantile(1.0).is_err());
    }

    #[test]
    fn hessian_examples() {
        let z = Observation::new(1.0, vec![1.0, 0.0]);
        let theta = pv(&[3.0, -7.0]);
        let h = hessian(&ModelKind::LeastSquares, &theta, &z).unwrap().unwrap();
        assert_eq!(h, DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.0]));
        let h = hessian(&ModelKind::Logistic, &pv(&[0.0, 0.0]), &z).unwrap().unwrap();
        assert_eq!(h, DMatrix::from_row_slice(2, 2, &[0.25, 0.0, 0.0, 0.0]));
        let q = ModelKind::quantile(0.5).unwrap();
        assert!(hessian(&q, &theta, &z).unwrap().is_none());
    }

    #[test]
    fn loss_examples() {
        let z = Observation::new(2.0, vec![5.0, -1.0]);
        assert_eq!(check_loss_value(&ModelKind::LeastSquares, &pv(&[0.0, 0.0]), &z).unwrap(), 4.0);
        assert_eq!(check_loss(0.5, -2.0), 1.0);
        let q = ModelKind::quantile(0.5).unwrap();
        let z = Observation::new(-2.0, vec![1.0]);
        assert_eq!(check_loss_value(&q, &pv(&[0.0]), &z).unwrap(), 1.0);
        let z = Observation::new(1.0, vec![1.0]);
        let v = check_loss_value(&ModelKind::Logistic, &pv(&[0.0]), &z).unwrap();
        assert!((v - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn logistic_is_overflow_safe() {
        for &(y, t) in &[(1.0, 1000.0), (1.0, -1000.0), (-1.0, 1000.0), (-1.0, -1000.0)] {
            let z = Observation::new(y, vec![1.0]);
            let theta = [t];
            let m = ModelKind::Logistic.gradient_multiplier(&theta, &z).unwrap();
            assert!(m.is_finite());
            assert!((0.0..=1.0).contains(&m.abs()));
            let h = hessian(&ModelKind::Logistic, &pv(&theta), &z).unwrap().unwrap();
            assert!(h[(0, 0)].is_finite());
            let l = check_loss_value(&ModelKind::Logistic, &pv(&theta), &z).unwrap();
            assert!(l.is_finite());
        }
    }

    fn random_case(rng: &mut ChaCha8Rng, kind: &ModelKind, p: usize) -> (ParamVector, Observation) {
        let theta: Vec<f64> = (0..p).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let x: Vec<f64> = (0..p).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let y = match kind {
            ModelKind::Logistic => {
                if rng.random_bool(0.5) {
                    1.0
                } else {
                    -1.0
                }
            }
            _ => 2.0 * rng.sample::<f64, _>(StandardNormal),
        };
        (theta.into(), Observation::new(y, x))
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for kind in [ModelKind::LeastSquares, ModelKind::Logistic] {
            for _ in 0..100 {
                let (theta, z) = random_case(&mut rng, &kind, 4);
                let g = gradient(&kind, &theta, &z).unwrap();
                let h = 1e-5;
                let fd: Vec<f64> = (0..theta.dim())
                    .map(|j| {
                        let mut up = theta.clone();
                        let mut dn = theta.clone();
                        up[j] += h;
                        dn[j] -= h;
                        (check_loss_value(&kind, &up, &z).unwrap()
                            - check_loss_value(&kind, &dn, &z).unwrap())
                            / (2.0 * h)
                    })
                    .collect();
                let err = fd.iter().zip(g.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                let scale = g.iter().map(|v| v.abs()).fold(1e-3, f64::max);
                assert!(err / scale <= 1e-5, "{kind:?}: err {err} scale {scale}");
            }
        }
    }

    #[test]
    fn quantile_multiplier_takes_two_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let tau = 0.3;
        let kind = ModelKind::quantile(tau).unwrap();
        for _ in 0..500 {
            let (theta, z) = random_case(&mut rng, &kind, 3);
            let m = kind.gradient_multiplier(&theta, &z).unwrap();
            assert!(m == -tau || m == 1.0 - tau, "{m}");
        }
    }

    #[test]
    fn hessians_are_bitwise_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for kind in [ModelKind::LeastSquares, ModelKind::Logistic] {
            for _ in 0..50 {
                let (theta, z) = random_case(&mut rng, &kind, 5);
                let h = hessian(&kind, &theta, &z).unwrap().unwrap();
                assert_eq!(h, h.transpose());
            }
        }
    }

    #[test]
    fn losses_are_convex_on_random_segments() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let kinds = [
            ModelKind::LeastSquares,
            ModelKind::Logistic,
            ModelKind::quantile(0.5).unwrap(),
            ModelKind::quantile(0.9).unwrap(),
        ];
        for kind in kinds {
            for _ in 0..200 {
                let (a, z) = random_case(&mut rng, &kind, 3);
                let (b, _) = random_case(&mut rng, &kind, 3);
                let mid: ParamVector = a.iter().zip(b.iter()).map(|(u, v)| 0.5 * (u + v)).collect::<Vec<_>>().into();
                let lm = check_loss_value(&kind, &mid, &z).unwrap();
                let la = check_loss_value(&kind, &a, &z).unwrap();
                let lb = check_loss_value(&kind, &b, &z).unwrap();
                assert!(lm <= 0.5 * (la + lb) + 1e-10, "{kind:?}");
            }
        }
    }
}
