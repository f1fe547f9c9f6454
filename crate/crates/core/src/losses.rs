//! Training objectives: horizon weights, supervised and horizon-weighted
//! distillation losses, the trend-projection and frequency/difference
//! comparison variants, and their composition.
//!
//! Forecast tensors are laid out `[batch, horizon, channel]` throughout.

use serde::{Deserialize, Serialize};

use crate::diffcore::{Array, Graph, Var};
use crate::error::{Error, Result};

/// Per-step weights that increase exponentially along the horizon and
/// average to one.
///
/// `w_t = exp(τ·t/(T-1)) / mean_j exp(τ·j/(T-1))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HorizonWeights {
    tau: f64,
    weights: Vec<f64>,
}

impl HorizonWeights {
    pub fn new(tau: f64, horizon: usize) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::contract("horizon weights need horizon >= 1"));
        }
        if !tau.is_finite() || tau < 0.0 {
            return Err(Error::contract(format!("temperature must be finite and >= 0, got {tau}")));
        }
        if horizon == 1 {
            return Ok(Self {
                tau,
                weights: vec![1.0],
            });
        }
        let denom = (horizon - 1) as f64;
        // Shifted by the largest exponent; the shift cancels in the ratio.
        let raw: Vec<f64> = (0..horizon)
            .map(|t| (tau * (t as f64 / denom - 1.0)).exp())
            .collect();
        Self::from_raw(tau, raw)
    }

    /// Normalizes arbitrary positive weights to mean one.
    pub fn from_raw(tau: f64, raw: Vec<f64>) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::contract("horizon weights need horizon >= 1"));
        }
        if raw.iter().any(|&w| !w.is_finite() || w <= 0.0) {
            return Err(Error::contract("horizon weights must be finite and positive"));
        }
        let mean = raw.iter().sum::<f64>() / raw.len() as f64;
        Ok(Self {
            tau,
            weights: raw.into_iter().map(|w| w / mean).collect(),
        })
    }

    pub fn uniform(horizon: usize) -> Result<Self> {
        Self::new(0.0, horizon)
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn horizon(&self) -> usize {
        self.weights.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.weights
    }

    /// Weights broadcast to a `[batch, horizon, channel]` array.
    fn broadcast(&self, shape: &[usize]) -> Array {
        let (t_len, c_len) = (shape[1], shape[2]);
        Array::from_fn(shape.to_vec(), |i| self.weights[(i / c_len) % t_len])
    }
}

/// Shorthand for [`HorizonWeights::new`].
pub fn horizon_weights(tau: f64, horizon: usize) -> Result<HorizonWeights> {
    HorizonWeights::new(tau, horizon)
}

/// Coefficients of the composed objective.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_kd: f64,
    pub lambda_fta: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    /// Apply the horizon weights to the supervised term as well.
    pub weight_supervised: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_kd: 1.0,
            lambda_fta: 0.1,
            alpha: 0.5,
            beta: 1.0,
            gamma: 1.0,
            weight_supervised: false,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let coeffs = [
            ("lambda_kd", self.lambda_kd),
            ("lambda_fta", self.lambda_fta),
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
        ];
        for (name, v) in coeffs {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Centered moving average along the horizon with edge replication.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrendProjector {
    kernel: usize,
}

impl Default for TrendProjector {
    fn default() -> Self {
        Self { kernel: 5 }
    }
}

impl TrendProjector {
    pub fn new(kernel: usize) -> Result<Self> {
        if kernel == 0 || kernel % 2 == 0 {
            return Err(Error::config(format!("trend kernel must be odd and >= 1, got {kernel}")));
        }
        Ok(Self { kernel })
    }

    pub fn kernel(&self) -> usize {
        self.kernel
    }

    /// `[len × len]` matrix `M` with `(x·M)_t` the moving average at `t`.
    pub fn matrix(&self, len: usize) -> Result<Array> {
        if self.kernel > len {
            return Err(Error::contract(format!(
                "trend kernel {} exceeds sequence length {len}",
                self.kernel
            )));
        }
        Ok(moving_average_matrix(len, self.kernel))
    }
}

/// Right-multiplication matrix of a centered, edge-replicated moving average
/// with odd window `kernel`.
pub(crate) fn moving_average_matrix(len: usize, kernel: usize) -> Array {
    let half = (kernel / 2) as isize;
    let w = 1.0 / kernel as f64;
    let mut m = Array::zeros(vec![len, len]);
    for t in 0..len as isize {
        for off in -half..=half {
            let src = (t + off).clamp(0, len as isize - 1) as usize;
            let cur = m.get(&[src, t as usize]);
            m.set(&[src, t as usize], cur + w);
        }
    }
    m
}

/// Real-input DFT bases `(cos, -sin)`, each `[len × (len/2 + 1)]`.
pub(crate) fn dft_matrices(len: usize) -> (Array, Array) {
    let bins = len / 2 + 1;
    let mut re = Array::zeros(vec![len, bins]);
    let mut im = Array::zeros(vec![len, bins]);
    for t in 0..len {
        for k in 0..bins {
            // reduce (k·t) mod len first to keep the angle small
            let phase = 2.0 * std::f64::consts::PI * ((k * t) % len) as f64 / len as f64;
            re.set(&[t, k], phase.cos());
            im.set(&[t, k], -phase.sin());
        }
    }
    (re, im)
}

/// `[len × (len-1)]` forward-difference matrix: `(x·D)_k = x_{k+1} - x_k`.
pub(crate) fn difference_matrix(len: usize) -> Array {
    let mut d = Array::zeros(vec![len, len.saturating_sub(1)]);
    for k in 0..len.saturating_sub(1) {
        d.set(&[k, k], -1.0);
        d.set(&[k + 1, k], 1.0);
    }
    d
}

fn check_forecast_pair(g: &Graph, op: &'static str, a: Var, b: Var) -> Result<()> {
    let (sa, sb) = (g.shape(a), g.shape(b));
    if sa != sb {
        return Err(Error::dim(op, sa, sb));
    }
    if sa.len() != 3 {
        return Err(Error::Dimension {
            op,
            lhs: sa.to_vec(),
            rhs: vec![0, 0, 0],
        });
    }
    Ok(())
}

/// Applies `x[b, :, c] · M` for every `(b, c)`; `M` is `[T × K]`, the result
/// `[B × K × C]`.
pub(crate) fn along_horizon(g: &mut Graph, x: Var, m: Array) -> Result<Var> {
    let s = g.shape(x).to_vec();
    let (b, t, c) = (s[0], s[1], s[2]);
    if m.shape()[0] != t {
        return Err(Error::dim("along_horizon", &s, m.shape()));
    }
    let k = m.shape()[1];
    let xt = g.permute(x, &[0, 2, 1])?;
    let flat = g.reshape(xt, &[b * c, t])?;
    let mv = g.constant(m);
    let y = g.matmul(flat, mv)?;
    let y = g.reshape(y, &[b, c, k])?;
    g.permute(y, &[0, 2, 1])
}

fn weighted_mse(g: &mut Graph, a: Var, b: Var, weights: Option<&HorizonWeights>) -> Result<Var> {
    let diff = g.sub(a, b)?;
    let sq = g.square(diff)?;
    let sq = match weights {
        Some(w) => {
            let horizon = g.shape(a)[1];
            if w.horizon() != horizon {
                return Err(Error::dim("horizon weights", &[w.horizon()], &[horizon]));
            }
            let wv = g.constant(w.broadcast(g.shape(a)));
            g.mul(sq, wv)?
        }
        None => sq,
    };
    g.mean_all(sq)
}

/// `1/(BCT) Σ (y - ŷ)²`, optionally scaling step `t` by `w_t`.
pub fn supervised_loss(g: &mut Graph, y_hat: Var, y: Var, weights: Option<&HorizonWeights>) -> Result<Var> {
    check_forecast_pair(g, "supervised_loss", y_hat, y)?;
    weighted_mse(g, y, y_hat, weights)
}

/// `1/(BCT) Σ w_t (ŷᵀ - ŷ)²`.
pub fn kd_loss(g: &mut Graph, y_hat: Var, y_teacher: Var, weights: &HorizonWeights) -> Result<Var> {
    check_forecast_pair(g, "kd_loss", y_hat, y_teacher)?;
    weighted_mse(g, y_teacher, y_hat, Some(weights))
}

/// `MSE(P(ŷ_s), P(ŷ_t))` with `P` the trend projector along the horizon.
pub fn trend_term(g: &mut Graph, y_hat: Var, y_teacher: Var, projector: &TrendProjector) -> Result<Var> {
    check_forecast_pair(g, "trend_term", y_hat, y_teacher)?;
    let m = projector.matrix(g.shape(y_hat)[1])?;
    let ps = along_horizon(g, y_hat, m.clone())?;
    let pt = along_horizon(g, y_teacher, m)?;
    g.mse(ps, pt)
}

/// Amplitude spectra `|DFT(x)| / sqrt(T)` along the horizon,
/// `[B × (T/2+1) × C]`. The orthonormal scaling keeps the spectral term on
/// the same scale as a time-domain MSE.
pub fn amplitude_spectrum(g: &mut Graph, x: Var) -> Result<Var> {
    let t = g.shape(x)[1];
    let (cos, sin) = dft_matrices(t);
    let scale = 1.0 / (t as f64).sqrt();
    let (cos, sin) = (cos.map(|v| v * scale), sin.map(|v| v * scale));
    let re = along_horizon(g, x, cos)?;
    let im = along_horizon(g, x, sin)?;
    g.magnitude(re, im)
}

/// MSE between amplitude spectra of student and teacher forecasts.
pub fn freq_term(g: &mut Graph, y_hat: Var, y_teacher: Var) -> Result<Var> {
    check_forecast_pair(g, "freq_term", y_hat, y_teacher)?;
    let a = amplitude_spectrum(g, y_hat)?;
    let b = amplitude_spectrum(g, y_teacher)?;
    g.mse(a, b)
}

/// MSE between first differences along the horizon.
pub fn diff_term(g: &mut Graph, y_hat: Var, y_teacher: Var) -> Result<Var> {
    check_forecast_pair(g, "diff_term", y_hat, y_teacher)?;
    let t = g.shape(y_hat)[1];
    if t < 2 {
        return Err(Error::contract("difference features need horizon >= 2"));
    }
    let d = difference_matrix(t);
    let a = along_horizon(g, y_hat, d.clone())?;
    let b = along_horizon(g, y_teacher, d)?;
    g.mse(a, b)
}

/// `ℓ(ŷ_s, y) + α·ℓ(P(ŷ_s), P(ŷ_t))` with `ℓ` the MSE.
pub fn tkd_loss(
    g: &mut Graph,
    y_hat: Var,
    y: Var,
    y_teacher: Var,
    projector: &TrendProjector,
    alpha: f64,
) -> Result<Var> {
    check_forecast_pair(g, "tkd_loss", y_hat, y)?;
    let weights = LossWeights {
        alpha,
        ..LossWeights::default()
    };
    let parts = LossComponents {
        supervised: supervised_loss(g, y_hat, y, None)?,
        trend: Some(trend_term(g, y_hat, y_teacher, projector)?),
        ..LossComponents::default_for(y_hat)
    };
    Ok(total_loss(g, &parts, &weights, Composition::TrendKd)?.0)
}

/// `ℓ(ŷ_s, y) + α·(β·L_freq + γ·L_diff)`.
pub fn fdkd_loss(
    g: &mut Graph,
    y_hat: Var,
    y: Var,
    y_teacher: Var,
    alpha: f64,
    beta: f64,
    gamma: f64,
) -> Result<Var> {
    check_forecast_pair(g, "fdkd_loss", y_hat, y)?;
    if gamma > 0.0 && g.shape(y_hat)[1] < 2 {
        return Err(Error::contract("FD-KD difference term needs horizon >= 2"));
    }
    let weights = LossWeights {
        alpha,
        beta,
        gamma,
        ..LossWeights::default()
    };
    let parts = LossComponents {
        supervised: supervised_loss(g, y_hat, y, None)?,
        freq: if beta > 0.0 { Some(freq_term(g, y_hat, y_teacher)?) } else { None },
        diff: if gamma > 0.0 { Some(diff_term(g, y_hat, y_teacher)?) } else { None },
        ..LossComponents::default_for(y_hat)
    };
    Ok(total_loss(g, &parts, &weights, Composition::FreqDiffKd)?.0)
}

/// How the components are combined.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Composition {
    /// `L_sup + λ_KD·L_KD + λ_FTA·L_FTA`
    Standard,
    /// `L_sup + α·L_trend`
    TrendKd,
    /// `L_sup + α·(β·L_freq + γ·L_diff)`
    FreqDiffKd,
}

/// Scalar loss nodes feeding [`total_loss`]. `None` means not computed.
#[derive(Clone, Debug)]
pub struct LossComponents {
    pub supervised: Var,
    pub kd: Option<Var>,
    pub fta: Option<Var>,
    pub trend: Option<Var>,
    pub freq: Option<Var>,
    pub diff: Option<Var>,
}

impl LossComponents {
    pub fn default_for(supervised: Var) -> Self {
        Self {
            supervised,
            kd: None,
            fta: None,
            trend: None,
            freq: None,
            diff: None,
        }
    }
}

/// Values of each computed term, unweighted, for logging.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub supervised: f64,
    pub kd: Option<f64>,
    pub fta: Option<f64>,
    pub trend: Option<f64>,
    pub freq: Option<f64>,
    pub diff: Option<f64>,
}

impl LossBreakdown {
    /// Running sum of breakdowns, for epoch averages.
    pub fn accumulate(&mut self, other: &LossBreakdown, weight: f64) {
        fn acc(dst: &mut Option<f64>, src: Option<f64>, w: f64) {
            if let Some(v) = src {
                *dst = Some(dst.unwrap_or(0.0) + w * v);
            }
        }
        self.total += weight * other.total;
        self.supervised += weight * other.supervised;
        acc(&mut self.kd, other.kd, weight);
        acc(&mut self.fta, other.fta, weight);
        acc(&mut self.trend, other.trend, weight);
        acc(&mut self.freq, other.freq, weight);
        acc(&mut self.diff, other.diff, weight);
    }
}

fn require(term: Option<Var>, name: &str, coeff: f64, coeff_name: &str) -> Result<Option<Var>> {
    match term {
        None if coeff > 0.0 => Err(Error::config(format!(
            "{coeff_name} = {coeff} but the {name} component was not provided"
        ))),
        other => Ok(other),
    }
}

/// Combines the scalar components into one objective and reports each
/// term's value.
pub fn total_loss(
    g: &mut Graph,
    parts: &LossComponents,
    weights: &LossWeights,
    composition: Composition,
) -> Result<(Var, LossBreakdown)> {
    weights.validate()?;
    let value = |g: &Graph, v: Option<Var>| v.map(|v| g.value(v).item());

    let mut total = parts.supervised;
    let mut add = |g: &mut Graph, term: Option<Var>, coeff: f64| -> Result<()> {
        if let Some(t) = term {
            if coeff > 0.0 {
                let scaled = g.scale(t, coeff)?;
                total = g.add(total, scaled)?;
            }
        }
        Ok(())
    };

    match composition {
        Composition::Standard => {
            let kd = require(parts.kd, "kd", weights.lambda_kd, "lambda_kd")?;
            let fta = require(parts.fta, "fta", weights.lambda_fta, "lambda_fta")?;
            add(g, kd, weights.lambda_kd)?;
            add(g, fta, weights.lambda_fta)?;
        }
        Composition::TrendKd => {
            let trend = require(parts.trend, "trend", weights.alpha, "alpha")?;
            add(g, trend, weights.alpha)?;
        }
        Composition::FreqDiffKd => {
            let freq = require(parts.freq, "freq", weights.alpha * weights.beta, "alpha*beta")?;
            let diff = require(parts.diff, "diff", weights.alpha * weights.gamma, "alpha*gamma")?;
            add(g, freq, weights.alpha * weights.beta)?;
            add(g, diff, weights.alpha * weights.gamma)?;
        }
    }

    let breakdown = LossBreakdown {
        total: g.value(total).item(),
        supervised: g.value(parts.supervised).item(),
        kd: value(g, parts.kd),
        fta: value(g, parts.fta),
        trend: value(g, parts.trend),
        freq: value(g, parts.freq),
        diff: value(g, parts.diff),
    };
    Ok((total, breakdown))
}
