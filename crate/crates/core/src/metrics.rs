//! Forecast error metrics over `[B × T × C]` arrays.

use serde::{Deserialize, Serialize};

use crate::diffcore::Array;
use crate::error::{Error, Result};

fn check(y_hat: &Array, y: &Array) -> Result<(usize, usize, usize)> {
    if y_hat.shape() != y.shape() || y.ndim() != 3 || y.is_empty() {
        return Err(Error::dim("metric", y_hat.shape(), y.shape()));
    }
    let s = y.shape();
    Ok((s[0], s[1], s[2]))
}

fn per_step(y_hat: &Array, y: &Array, f: impl Fn(f64) -> f64) -> Result<Vec<f64>> {
    let (b, t, c) = check(y_hat, y)?;
    let mut acc = vec![0.0; t];
    for (i, (p, v)) in y_hat.data().iter().zip(y.data()).enumerate() {
        acc[(i / c) % t] += f(p - v);
    }
    let n = (b * c) as f64;
    Ok(acc.into_iter().map(|s| s / n).collect())
}

/// Mean squared error at each horizon step, averaged over batch and channels.
pub fn per_step_mse(y_hat: &Array, y: &Array) -> Result<Vec<f64>> {
    per_step(y_hat, y, |r| r * r)
}

/// Mean absolute error at each horizon step, averaged over batch and channels.
pub fn per_step_mae(y_hat: &Array, y: &Array) -> Result<Vec<f64>> {
    per_step(y_hat, y, f64::abs)
}

pub fn mse(y_hat: &Array, y: &Array) -> Result<f64> {
    check(y_hat, y)?;
    Ok(y_hat.data().iter().zip(y.data()).map(|(p, v)| (p - v) * (p - v)).sum::<f64>() / y.len() as f64)
}

pub fn mae(y_hat: &Array, y: &Array) -> Result<f64> {
    check(y_hat, y)?;
    Ok(y_hat.data().iter().zip(y.data()).map(|(p, v)| (p - v).abs()).sum::<f64>() / y.len() as f64)
}

/// Overall and per-step MSE/MAE of one forecast set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mse: f64,
    pub mae: f64,
    pub per_step_mse: Vec<f64>,
    pub per_step_mae: Vec<f64>,
    pub windows: usize,
    /// Whether the values are in the series' original units.
    pub denormalized: bool,
}

impl MetricReport {
    pub fn compute(y_hat: &Array, y: &Array, denormalized: bool) -> Result<Self> {
        Ok(Self {
            mse: mse(y_hat, y)?,
            mae: mae(y_hat, y)?,
            per_step_mse: per_step_mse(y_hat, y)?,
            per_step_mae: per_step_mae(y_hat, y)?,
            windows: y.shape()[0],
            denormalized,
        })
    }

    /// Mean MSE over the last quarter of horizon steps (at least one step).
    pub fn tail_mse(&self) -> f64 {
        let t = self.per_step_mse.len();
        let k = (t / 4).max(1);
        self.per_step_mse[t - k..].iter().sum::<f64>() / k as f64
    }
}
