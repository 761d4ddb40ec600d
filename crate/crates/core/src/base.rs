//! Numeric building blocks shared by the engine and the inference layer:
//! parameter vectors, the polynomially decaying learning rate, the burn-in
//! aware running average of iterates and a single-pass covariance.

use std::ops::{Deref, DerefMut};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense real vector holding model coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Self {
        ParamVector(values)
    }

    pub fn zeros(dim: usize) -> Self {
        ParamVector(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn dot(&self, other: &[f64]) -> f64 {
        dot(&self.0, other)
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl Deref for ParamVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for ParamVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(values: Vec<f64>) -> Self {
        ParamVector(values)
    }
}

impl From<&[f64]> for ParamVector {
    fn from(values: &[f64]) -> Self {
        ParamVector(values.to_vec())
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn check_dim(expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, actual })
    }
}

/// Learning rate `gamma * n^(-alpha)` with `gamma > 0` and `alpha` in (0.5, 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearningRateSchedule {
    gamma: f64,
    alpha: f64,
}

impl LearningRateSchedule {
    pub fn new(gamma: f64, alpha: f64) -> Result<Self> {
        let valid = gamma.is_finite() && gamma > 0.0 && alpha > 0.5 && alpha < 1.0;
        if !valid {
            return Err(Error::InvalidSchedule { gamma, alpha });
        }
        Ok(LearningRateSchedule { gamma, alpha })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Rate for the 1-based step `n`.
    pub fn rate(&self, n: u64) -> Result<f64> {
        if n == 0 {
            return Err(Error::ZeroStepIndex);
        }
        Ok(self.gamma * (n as f64).powf(-self.alpha))
    }
}

impl Default for LearningRateSchedule {
    fn default() -> Self {
        LearningRateSchedule {
            gamma: 1.0,
            alpha: 2.0 / 3.0,
        }
    }
}

/// Free-function form of [`LearningRateSchedule::rate`].
pub fn learning_rate(schedule: &LearningRateSchedule, n: u64) -> Result<f64> {
    schedule.rate(n)
}

/// Running average of iterates with the first `burn_in` iterates discarded.
///
/// While no iterate has been averaged yet, [`estimate`](Self::estimate)
/// returns the most recent raw iterate (or the starting point before any
/// update), so early queries still return a usable value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AveragedAccumulator {
    count_total: u64,
    burn_in: u64,
    mean: ParamVector,
}

impl AveragedAccumulator {
    /// `initial` is what the estimate reports before any iterate is seen.
    pub fn new(initial: ParamVector, burn_in: u64) -> Self {
        AveragedAccumulator {
            count_total: 0,
            burn_in,
            mean: initial,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.dim()
    }

    pub fn count_total(&self) -> u64 {
        self.count_total
    }

    pub fn burn_in(&self) -> u64 {
        self.burn_in
    }

    pub fn count_used(&self) -> u64 {
        self.count_total.saturating_sub(self.burn_in)
    }

    pub fn estimate(&self) -> &ParamVector {
        &self.mean
    }

    pub fn push(&mut self, iterate: &[f64]) -> Result<()> {
        check_dim(self.mean.dim(), iterate.len())?;
        self.count_total += 1;
        let used = self.count_used();
        if used <= 1 {
            // burn-in (raw iterate reported) or first averaged value
            self.mean.copy_from_slice(iterate);
        } else {
            let inv = 1.0 / used as f64;
            for (m, x) in self.mean.iter_mut().zip(iterate) {
                *m += (x - *m) * inv;
            }
        }
        Ok(())
    }
}

/// Value-style wrapper around [`AveragedAccumulator::push`].
pub fn accumulate_average(
    mut acc: AveragedAccumulator,
    iterate: &ParamVector,
) -> Result<AveragedAccumulator> {
    acc.push(iterate)?;
    Ok(acc)
}

/// Single-pass (Welford) mean and centered scatter of vector samples.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningCovariance {
    count: u64,
    mean: Vec<f64>,
    scatter: DMatrix<f64>,
}

impl RunningCovariance {
    pub fn new(dim: usize) -> Self {
        RunningCovariance {
            count: 0,
            mean: vec![0.0; dim],
            scatter: DMatrix::zeros(dim, dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn push(&mut self, v: &[f64]) -> Result<()> {
        let p = self.dim();
        check_dim(p, v.len())?;
        self.count += 1;
        let n = self.count as f64;
        let delta: Vec<f64> = v.iter().zip(&self.mean).map(|(x, m)| x - m).collect();
        for (m, d) in self.mean.iter_mut().zip(&delta) {
            *m += d / n;
        }
        // delta_i * (v_j - mean_j') == delta_i * delta_j * (n-1)/n; evaluated once per
        // pair so the scatter stays exactly symmetric.
        let shrink = (n - 1.0) / n;
        for i in 0..p {
            let di = delta[i] * shrink;
            for j in i..p {
                let inc = di * delta[j];
                self.scatter[(i, j)] += inc;
                if i != j {
                    self.scatter[(j, i)] = self.scatter[(i, j)];
                }
            }
        }
        Ok(())
    }

    /// Unbiased sample covariance, `scatter / (count - 1)`.
    pub fn covariance(&self) -> Result<DMatrix<f64>> {
        if self.count < 2 {
            return Err(Error::InsufficientSamples {
                needed: 2,
                got: self.count as usize,
            });
        }
        Ok(&self.scatter / (self.count - 1) as f64)
    }

    /// Per-coordinate sample standard deviation.
    pub fn std_dev(&self) -> Result<Vec<f64>> {
        let cov = self.covariance()?;
        Ok((0..self.dim()).map(|i| cov[(i, i)].max(0.0).sqrt()).collect())
    }
}

pub fn accumulate_covariance(mut rc: RunningCovariance, v: &ParamVector) -> Result<RunningCovariance> {
    rc.push(v)?;
    Ok(rc)
}
