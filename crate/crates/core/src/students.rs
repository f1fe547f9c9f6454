//! Lightweight student forecasters.
//!
//! Both students map a lookback `[B × L × C]` to a forecast `[B × T × C]` and
//! expose one embedding per variate, `[B × C × d_S]`, for alignment.
//!
//! * [`LinearStudent`]: trend/seasonal decomposition followed by two linear
//!   maps shared across channels. Its variate embedding is the (already
//!   z-scored) lookback itself, so `d_S = L`.
//! * [`VariateStudent`]: one token per variate, a single pre-norm
//!   attention block over the tokens, and a linear head.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{Activation, Array, Graph, Var};
use crate::error::{Error, Result};
use crate::fta::glorot;
use crate::losses::moving_average_matrix;

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudentKind {
    Linear,
    Variate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudentConfig {
    pub kind: StudentKind,
    /// Moving-average window of the linear student's decomposition.
    pub trend_kernel: usize,
    /// Token width `d_S` of the variate student.
    pub d_model: usize,
    pub d_ff: usize,
}

impl Default for StudentConfig {
    fn default() -> Self {
        Self {
            kind: StudentKind::Linear,
            trend_kernel: 25,
            d_model: 64,
            d_ff: 128,
        }
    }
}

impl StudentConfig {
    /// Variate student at the widths used for full-size benchmark runs.
    pub fn paper_scale_variate() -> Self {
        Self {
            kind: StudentKind::Variate,
            d_model: 512,
            d_ff: 2048,
            ..Self::default()
        }
    }
}

/// Forecast and variate embedding of a student, as plain arrays.
#[derive(Clone, Debug, PartialEq)]
pub struct StudentOutput {
    pub forecast: Array,
    pub hidden: Array,
}

/// Forecast and variate embedding nodes inside a graph.
#[derive(Clone, Copy, Debug)]
pub struct StudentNodes {
    pub forecast: Var,
    pub hidden: Var,
}

fn check_input(g: &Graph, x: Var, lookback: usize) -> Result<(usize, usize)> {
    let s = g.shape(x);
    if s.len() != 3 || s[1] != lookback {
        return Err(Error::dim("student input", s, &[0, lookback, 0]));
    }
    Ok((s[0], s[2]))
}

/// `x · W + b` on a 2-D input; `b` is broadcast over rows.
fn affine(g: &mut Graph, x: Var, w: Var, b: Var) -> Result<Var> {
    let rows = g.shape(x)[0];
    let y = g.matmul(x, w)?;
    let bb = g.expand_axis(b, 0, rows)?;
    g.add(y, bb)
}

/// Layer normalization over the last axis of a 3-D tensor.
fn layer_norm(g: &mut Graph, x: Var, gamma: Var, beta: Var) -> Result<Var> {
    let s = g.shape(x).to_vec();
    let (b, c, d) = (s[0], s[1], s[2]);
    let mu = g.mean(x, &[2])?;
    let mu = g.expand_axis(mu, 2, d)?;
    let xc = g.sub(x, mu)?;
    let sq = g.square(xc)?;
    let var = g.mean(sq, &[2])?;
    let var = g.add_scalar(var, LAYER_NORM_EPS)?;
    let std = g.sqrt(var)?;
    let inv = g.recip(std)?;
    let inv = g.expand_axis(inv, 2, d)?;
    let xn = g.mul(xc, inv)?;
    let gm = g.expand_axis(gamma, 0, c)?;
    let gm = g.expand_axis(gm, 0, b)?;
    let bt = g.expand_axis(beta, 0, c)?;
    let bt = g.expand_axis(bt, 0, b)?;
    let y = g.mul(xn, gm)?;
    g.add(y, bt)
}

/// Decomposition-linear student.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearStudent {
    trend_kernel: usize,
    pub w_trend: Array,
    pub w_seasonal: Array,
    pub bias: Array,
}

impl LinearStudent {
    /// Weights start at `1/L` (a running mean), bias at zero.
    pub fn new(lookback: usize, horizon: usize, trend_kernel: usize) -> Result<Self> {
        if lookback == 0 || horizon == 0 {
            return Err(Error::config("linear student needs lookback and horizon >= 1"));
        }
        if trend_kernel == 0 || trend_kernel % 2 == 0 || trend_kernel > lookback {
            return Err(Error::config(format!(
                "trend kernel must be odd and within 1..={lookback}, got {trend_kernel}"
            )));
        }
        let w = 1.0 / lookback as f64;
        Ok(Self {
            trend_kernel,
            w_trend: Array::full(vec![lookback, horizon], w),
            w_seasonal: Array::full(vec![lookback, horizon], w),
            bias: Array::zeros(vec![horizon]),
        })
    }

    pub fn trend_kernel(&self) -> usize {
        self.trend_kernel
    }

    pub fn lookback(&self) -> usize {
        self.w_trend.shape()[0]
    }

    pub fn horizon(&self) -> usize {
        self.w_trend.shape()[1]
    }

    /// Splits `[B × L × C]` into trend (moving average along `L`) and the
    /// seasonal residual.
    pub fn decompose(&self, x: &Array) -> Result<(Array, Array)> {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let (trend, seasonal) = self.decompose_graph(&mut g, xv)?;
        Ok((g.value(trend).clone(), g.value(seasonal).clone()))
    }

    fn decompose_graph(&self, g: &mut Graph, x: Var) -> Result<(Var, Var)> {
        let (b, c) = check_input(g, x, self.lookback())?;
        let l = self.lookback();
        let xt = g.permute(x, &[0, 2, 1])?;
        let flat = g.reshape(xt, &[b * c, l])?;
        let avg = g.constant(moving_average_matrix(l, self.trend_kernel));
        let trend = g.matmul(flat, avg)?;
        let seasonal = g.sub(flat, trend)?;
        let back = |g: &mut Graph, v: Var| -> Result<Var> {
            let v = g.reshape(v, &[b, c, l])?;
            g.permute(v, &[0, 2, 1])
        };
        Ok((back(g, trend)?, back(g, seasonal)?))
    }

    pub fn parameters(&self) -> Vec<&Array> {
        vec![&self.w_trend, &self.w_seasonal, &self.bias]
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Array> {
        vec![&mut self.w_trend, &mut self.w_seasonal, &mut self.bias]
    }

    pub fn forward(&self, g: &mut Graph, p: &[Var], x: Var) -> Result<StudentNodes> {
        let (b, c) = check_input(g, x, self.lookback())?;
        let (l, t) = (self.lookback(), self.horizon());
        let xt = g.permute(x, &[0, 2, 1])?;
        let flat = g.reshape(xt, &[b * c, l])?;
        let avg = g.constant(moving_average_matrix(l, self.trend_kernel));
        let trend = g.matmul(flat, avg)?;
        let seasonal = g.sub(flat, trend)?;
        let yt = g.matmul(trend, p[0])?;
        let ys = affine(g, seasonal, p[1], p[2])?;
        let y = g.add(yt, ys)?;
        let y = g.reshape(y, &[b, c, t])?;
        let forecast = g.permute(y, &[0, 2, 1])?;
        Ok(StudentNodes { forecast, hidden: xt })
    }
}

/// Variate-token attention student.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariateStudent {
    pub embed_w: Array,
    pub embed_b: Array,
    pub w_q: Array,
    pub w_k: Array,
    pub w_v: Array,
    pub w_o: Array,
    pub norm1_gamma: Array,
    pub norm1_beta: Array,
    pub ffn_w1: Array,
    pub ffn_b1: Array,
    pub ffn_w2: Array,
    pub ffn_b2: Array,
    pub norm2_gamma: Array,
    pub norm2_beta: Array,
    pub head_w: Array,
    pub head_b: Array,
}

impl VariateStudent {
    pub fn new(lookback: usize, horizon: usize, d_model: usize, d_ff: usize, rng: &mut impl Rng) -> Result<Self> {
        if d_model == 0 || d_ff == 0 || lookback == 0 || horizon == 0 {
            return Err(Error::config(format!(
                "variate student dimensions must be positive (L={lookback}, T={horizon}, d_S={d_model}, d_ff={d_ff})"
            )));
        }
        let d = d_model;
        Ok(Self {
            embed_w: glorot(lookback, d, rng),
            embed_b: Array::zeros(vec![d]),
            w_q: glorot(d, d, rng),
            w_k: glorot(d, d, rng),
            w_v: glorot(d, d, rng),
            w_o: glorot(d, d, rng),
            norm1_gamma: Array::ones(vec![d]),
            norm1_beta: Array::zeros(vec![d]),
            ffn_w1: glorot(d, d_ff, rng),
            ffn_b1: Array::zeros(vec![d_ff]),
            ffn_w2: glorot(d_ff, d, rng),
            ffn_b2: Array::zeros(vec![d]),
            norm2_gamma: Array::ones(vec![d]),
            norm2_beta: Array::zeros(vec![d]),
            head_w: glorot(d, horizon, rng),
            head_b: Array::zeros(vec![horizon]),
        })
    }

    pub fn lookback(&self) -> usize {
        self.embed_w.shape()[0]
    }

    pub fn horizon(&self) -> usize {
        self.head_w.shape()[1]
    }

    pub fn d_model(&self) -> usize {
        self.embed_w.shape()[1]
    }

    pub fn parameters(&self) -> Vec<&Array> {
        vec![
            &self.embed_w,
            &self.embed_b,
            &self.w_q,
            &self.w_k,
            &self.w_v,
            &self.w_o,
            &self.norm1_gamma,
            &self.norm1_beta,
            &self.ffn_w1,
            &self.ffn_b1,
            &self.ffn_w2,
            &self.ffn_b2,
            &self.norm2_gamma,
            &self.norm2_beta,
            &self.head_w,
            &self.head_b,
        ]
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Array> {
        vec![
            &mut self.embed_w,
            &mut self.embed_b,
            &mut self.w_q,
            &mut self.w_k,
            &mut self.w_v,
            &mut self.w_o,
            &mut self.norm1_gamma,
            &mut self.norm1_beta,
            &mut self.ffn_w1,
            &mut self.ffn_b1,
            &mut self.ffn_w2,
            &mut self.ffn_b2,
            &mut self.norm2_gamma,
            &mut self.norm2_beta,
            &mut self.head_w,
            &mut self.head_b,
        ]
    }

    pub fn forward(&self, g: &mut Graph, p: &[Var], x: Var) -> Result<StudentNodes> {
        let (b, c) = check_input(g, x, self.lookback())?;
        let (l, d, t) = (self.lookback(), self.d_model(), self.horizon());
        let [embed_w, embed_b, w_q, w_k, w_v, w_o, n1g, n1b, w1, b1, w2, b2, n2g, n2b, head_w, head_b] = p else {
            return Err(Error::contract("variate student expects 16 parameter tensors"));
        };
        let rows = b * c;
        let proj = |g: &mut Graph, v: Var, w: Var| -> Result<Var> {
            let flat = g.reshape(v, &[rows, d])?;
            let y = g.matmul(flat, w)?;
            g.reshape(y, &[b, c, d])
        };

        let xt = g.permute(x, &[0, 2, 1])?;
        let flat = g.reshape(xt, &[rows, l])?;
        let tokens = affine(g, flat, *embed_w, *embed_b)?;
        let tokens = g.reshape(tokens, &[b, c, d])?;

        let h = layer_norm(g, tokens, *n1g, *n1b)?;
        let q = proj(g, h, *w_q)?;
        let k = proj(g, h, *w_k)?;
        let v = proj(g, h, *w_v)?;
        let kt = g.permute(k, &[0, 2, 1])?;
        let scores = g.batch_matmul(q, kt)?;
        let scores = g.scale(scores, 1.0 / (d as f64).sqrt())?;
        let attn = g.softmax_last(scores)?;
        let ctx = g.batch_matmul(attn, v)?;
        let attn_out = proj(g, ctx, *w_o)?;
        let tokens = g.add(tokens, attn_out)?;

        let h = layer_norm(g, tokens, *n2g, *n2b)?;
        let hf = g.reshape(h, &[rows, d])?;
        let f = affine(g, hf, *w1, *b1)?;
        let f = g.activation(f, Activation::Gelu)?;
        let f = affine(g, f, *w2, *b2)?;
        let f = g.reshape(f, &[b, c, d])?;
        let hidden = g.add(tokens, f)?;

        let hflat = g.reshape(hidden, &[rows, d])?;
        let y = affine(g, hflat, *head_w, *head_b)?;
        let y = g.reshape(y, &[b, c, t])?;
        let forecast = g.permute(y, &[0, 2, 1])?;
        Ok(StudentNodes { forecast, hidden })
    }
}

/// Either student, behind one interface.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Student {
    Linear(LinearStudent),
    Variate(VariateStudent),
}

impl Student {
    pub fn init(config: &StudentConfig, lookback: usize, horizon: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(match config.kind {
            StudentKind::Linear => Student::Linear(LinearStudent::new(lookback, horizon, config.trend_kernel)?),
            StudentKind::Variate => {
                Student::Variate(VariateStudent::new(lookback, horizon, config.d_model, config.d_ff, rng)?)
            }
        })
    }

    pub fn kind(&self) -> StudentKind {
        match self {
            Student::Linear(_) => StudentKind::Linear,
            Student::Variate(_) => StudentKind::Variate,
        }
    }

    pub fn lookback(&self) -> usize {
        match self {
            Student::Linear(m) => m.lookback(),
            Student::Variate(m) => m.lookback(),
        }
    }

    pub fn horizon(&self) -> usize {
        match self {
            Student::Linear(m) => m.horizon(),
            Student::Variate(m) => m.horizon(),
        }
    }

    /// Width `d_S` of the variate embedding.
    pub fn hidden_dim(&self) -> usize {
        match self {
            Student::Linear(m) => m.lookback(),
            Student::Variate(m) => m.d_model(),
        }
    }

    pub fn parameters(&self) -> Vec<&Array> {
        match self {
            Student::Linear(m) => m.parameters(),
            Student::Variate(m) => m.parameters(),
        }
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Array> {
        match self {
            Student::Linear(m) => m.parameters_mut(),
            Student::Variate(m) => m.parameters_mut(),
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|p| p.len()).sum()
    }

    /// Registers parameters as differentiable leaves.
    pub fn bind(&self, g: &mut Graph) -> Vec<Var> {
        self.parameters().into_iter().map(|p| g.param(p.clone())).collect()
    }

    pub fn bind_frozen(&self, g: &mut Graph) -> Vec<Var> {
        self.parameters().into_iter().map(|p| g.constant(p.clone())).collect()
    }

    pub fn forward(&self, g: &mut Graph, params: &[Var], x: Var) -> Result<StudentNodes> {
        match self {
            Student::Linear(m) => m.forward(g, params, x),
            Student::Variate(m) => m.forward(g, params, x),
        }
    }

    /// Inference on plain arrays.
    pub fn predict(&self, x: &Array) -> Result<StudentOutput> {
        let mut g = Graph::new();
        let params = self.bind_frozen(&mut g);
        let xv = g.constant(x.clone());
        let out = self.forward(&mut g, &params, xv)?;
        Ok(StudentOutput {
            forecast: g.value(out.forecast).clone(),
            hidden: g.value(out.hidden).clone(),
        })
    }
}

pub fn linear_forward(model: &LinearStudent, x: &Array) -> Result<StudentOutput> {
    Student::Linear(model.clone()).predict(x)
}

pub fn variate_forward(model: &VariateStudent, x: &Array) -> Result<StudentOutput> {
    Student::Variate(model.clone()).predict(x)
}

pub fn parameter_count(model: &Student) -> usize {
    model.parameter_count()
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::diffcore::grad_check;

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Array {
        Array::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
    }

    fn randomize(student: &mut Student, rng: &mut ChaCha8Rng) {
        for p in student.parameters_mut() {
            for v in p.data_mut() {
                *v = rng.random_range(-0.5..0.5);
            }
        }
    }

    #[test]
    fn zero_weights_give_zero_forecast() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut m = LinearStudent::new(8, 4, 3).unwrap();
        m.w_trend = Array::zeros(vec![8, 4]);
        m.w_seasonal = Array::zeros(vec![8, 4]);
        let out = linear_forward(&m, &random(&[2, 8, 3], &mut rng)).unwrap();
        assert_eq!(out.forecast.shape(), &[2, 4, 3]);
        assert!(out.forecast.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn kernel_one_degenerates_to_trend_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut m = LinearStudent::new(6, 3, 1).unwrap();
        m.w_trend = random(&[6, 3], &mut rng);
        m.w_seasonal = random(&[6, 3], &mut rng);
        m.bias = random(&[3], &mut rng);
        let x = random(&[2, 6, 2], &mut rng);
        let (trend, seasonal) = m.decompose(&x).unwrap();
        assert_eq!(trend, x);
        assert!(seasonal.data().iter().all(|&v| v == 0.0));

        let out = linear_forward(&m, &x).unwrap();
        for b in 0..2 {
            for c in 0..2 {
                for t in 0..3 {
                    let expect: f64 = (0..6).map(|l| x.get(&[b, l, c]) * m.w_trend.get(&[l, t])).sum::<f64>() + m.bias.get(&[t]);
                    assert!((out.forecast.get(&[b, t, c]) - expect).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn linear_hidden_is_lookback_per_variate() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = LinearStudent::new(5, 3, 3).unwrap();
        let x = random(&[2, 5, 4], &mut rng);
        let out = linear_forward(&m, &x).unwrap();
        assert_eq!(out.hidden.shape(), &[2, 4, 5]);
        assert_eq!(out.hidden, x.permute(&[0, 2, 1]).unwrap());
    }

    #[test]
    fn lookback_mismatch_is_dimension_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let lin = LinearStudent::new(8, 4, 3).unwrap();
        assert!(matches!(linear_forward(&lin, &Array::zeros(vec![1, 7, 2])), Err(Error::Dimension { .. })));
        let var = VariateStudent::new(8, 4, 6, 10, &mut rng).unwrap();
        assert!(matches!(variate_forward(&var, &Array::zeros(vec![1, 9, 2])), Err(Error::Dimension { .. })));
    }

    #[test]
    fn parameter_counts() {
        let lin = Student::Linear(LinearStudent::new(96, 96, 25).unwrap());
        assert_eq!(parameter_count(&lin), 18528);

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (l, t, d, f) = (12, 6, 8, 16);
        let var = Student::Variate(VariateStudent::new(l, t, d, f, &mut rng).unwrap());
        let expect = l * d + d + 4 * d * d + 4 * d + d * f + f + f * d + d + d * t + t;
        assert_eq!(parameter_count(&var), expect);

        let before = parameter_count(&var);
        var.predict(&random(&[2, l, 3], &mut rng)).unwrap();
        assert_eq!(parameter_count(&var), before);

        assert!(matches!(VariateStudent::new(12, 6, 0, 16, &mut rng), Err(Error::Config(_))));
        assert!(LinearStudent::new(8, 4, 4).is_err());
        assert!(LinearStudent::new(8, 4, 9).is_err());
    }

    #[test]
    fn zero_weights_forecast_is_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut var = VariateStudent::new(10, 4, 6, 8, &mut rng).unwrap();
        var.head_w = Array::zeros(vec![6, 4]);
        var.head_b = random(&[4], &mut rng);
        let mut lin = LinearStudent::new(10, 4, 3).unwrap();
        lin.w_trend = Array::zeros(vec![10, 4]);
        lin.w_seasonal = Array::zeros(vec![10, 4]);
        lin.bias = var.head_b.clone();
        for x in [random(&[2, 10, 3], &mut rng), random(&[2, 10, 3], &mut rng)] {
            for out in [variate_forward(&var, &x).unwrap(), linear_forward(&lin, &x).unwrap()] {
                for b in 0..2 {
                    for t in 0..4 {
                        for c in 0..3 {
                            assert!((out.forecast.get(&[b, t, c]) - var.head_b.get(&[t])).abs() < 1e-15);
                        }
                    }
                }
            }
        }
    }

    /// Hand-rolled single-token block: with one key the attention weight is
    /// exactly one, so the block reduces to value/output then FFN.
    #[test]
    fn single_variate_attention_is_value_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (l, t, d, f) = (7, 3, 4, 5);
        let mut s = Student::Variate(VariateStudent::new(l, t, d, f, &mut rng).unwrap());
        randomize(&mut s, &mut rng);
        let Student::Variate(m) = &s else { unreachable!() };
        let x = random(&[1, l, 1], &mut rng);

        let vecmat = |v: &[f64], w: &Array| -> Vec<f64> {
            let (r, c) = (w.shape()[0], w.shape()[1]);
            (0..c).map(|j| (0..r).map(|i| v[i] * w.get(&[i, j])).sum()).collect()
        };
        let add = |a: &[f64], b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| x + y).collect() };
        let ln = |v: &[f64], gm: &Array, bt: &Array| -> Vec<f64> {
            let n = v.len() as f64;
            let mu = v.iter().sum::<f64>() / n;
            let var = v.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / n;
            v.iter().enumerate().map(|(i, x)| (x - mu) / (var + LAYER_NORM_EPS).sqrt() * gm.data()[i] + bt.data()[i]).collect()
        };

        let tok = add(&vecmat(x.data(), &m.embed_w), m.embed_b.data());
        let h = ln(&tok, &m.norm1_gamma, &m.norm1_beta);
        let attn = vecmat(&vecmat(&h, &m.w_v), &m.w_o);
        let tok = add(&tok, &attn);
        let h = ln(&tok, &m.norm2_gamma, &m.norm2_beta);
        let hidden = add(&vecmat(&h, &m.ffn_w1), m.ffn_b1.data());
        let hidden: Vec<f64> = hidden.iter().map(|&v| Activation::Gelu.apply(v)).collect();
        let ffn = add(&vecmat(&hidden, &m.ffn_w2), m.ffn_b2.data());
        let tok = add(&tok, &ffn);
        let y = add(&vecmat(&tok, &m.head_w), m.head_b.data());

        let out = s.predict(&x).unwrap();
        for (a, b) in out.hidden.data().iter().zip(&tok) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in out.forecast.data().iter().zip(&y) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn students_pass_grad_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for cfg in [
            StudentConfig { kind: StudentKind::Linear, trend_kernel: 3, ..StudentConfig::default() },
            StudentConfig { kind: StudentKind::Variate, d_model: 4, d_ff: 6, ..StudentConfig::default() },
        ] {
            for _ in 0..5 {
                let mut s = Student::init(&cfg, 6, 3, &mut rng).unwrap();
                randomize(&mut s, &mut rng);
                let x = random(&[2, 6, 3], &mut rng);
                let target = random(&[2, 3, 3], &mut rng);
                let params: Vec<Array> = s.parameters().into_iter().cloned().collect();
                let r = grad_check(
                    |g, p| {
                        let xv = g.constant(x.clone());
                        let out = s.forward(g, p, xv)?;
                        let t = g.constant(target.clone());
                        let a = g.mse(out.forecast, t)?;
                        let hs = g.square(out.hidden)?;
                        let b = g.mean_all(hs)?;
                        g.add(a, b)
                    },
                    &params,
                    1e-5,
                    1e-4,
                )
                .unwrap();
                assert!(r.passed, "{:?}: {r:?}", cfg.kind);
            }
        }
    }

    proptest! {
        #[test]
        fn decomposition_partitions_input(seed in any::<u64>(), k in 0usize..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let kernel = 2 * k + 1;
            let m = LinearStudent::new(9, 2, kernel).unwrap();
            let x = Array::from_fn(vec![3, 9, 2], |_| rng.random_range(-10.0..10.0));
            let (trend, seasonal) = m.decompose(&x).unwrap();
            let sum = trend.zip_map(&seasonal, |a, b| a + b).unwrap();
            prop_assert!(sum.max_abs_diff(&x).unwrap() <= 1e-12);
        }

        #[test]
        fn variate_tokens_are_permutation_equivariant(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut s = Student::Variate(VariateStudent::new(6, 4, 5, 7, &mut rng).unwrap());
            randomize(&mut s, &mut rng);
            let x = random(&[2, 6, 4], &mut rng);
            let perm = [2usize, 0, 3, 1];
            let xp = Array::from_fn(vec![2, 6, 4], |i| {
                let (b, l, c) = (i / 24, (i / 4) % 6, i % 4);
                x.get(&[b, l, perm[c]])
            });
            let (o, op) = (s.predict(&x).unwrap(), s.predict(&xp).unwrap());
            for b in 0..2 {
                for c in 0..4 {
                    for t in 0..4 {
                        prop_assert!((op.forecast.get(&[b, t, c]) - o.forecast.get(&[b, t, perm[c]])).abs() < 1e-12);
                    }
                    for k in 0..5 {
                        prop_assert!((op.hidden.get(&[b, c, k]) - o.hidden.get(&[b, perm[c], k])).abs() < 1e-12);
                    }
                }
            }
        }
    }
}
