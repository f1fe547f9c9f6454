//! Factorized temporal alignment.
//!
//! Expands a variate-wise student embedding `h ∈ R^{d_S}` into one vector per
//! forecast step in the teacher's hidden space:
//!
//! ```text
//! Ĥ[b, d, t] = W_out · φ((W_s · h[b, d]) ⊙ E[t])
//! ```
//!
//! Shapes follow the row-vector convention: `W_s` is `[d_S × u]`, `E` is
//! `[T × u]` and `W_out` is `[u × d_T]`.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::diffcore::{Activation, Array, Graph, Var};
use crate::error::{Error, Result};

/// Glorot-uniform initialization in `±sqrt(6 / (fan_in + fan_out))`.
pub(crate) fn glorot(rows: usize, cols: usize, rng: &mut impl Rng) -> Array {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Array::from_fn(vec![rows, cols], |_| rng.random_range(-bound..=bound))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FtaConfig {
    /// Latent width `u`; defaults to the student's embedding width.
    pub latent_dim: Option<usize>,
    pub phi: Activation,
    /// Standard deviation of the noise added to the all-ones time embedding.
    pub time_embedding_noise: f64,
}

impl Default for FtaConfig {
    fn default() -> Self {
        Self {
            latent_dim: None,
            phi: Activation::Gelu,
            time_embedding_noise: 0.02,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FtaModule {
    pub w_s: Array,
    pub e: Array,
    pub w_out: Array,
    pub phi: Activation,
}

/// Graph handles for the three learnable tensors of an [`FtaModule`].
#[derive(Clone, Copy, Debug)]
pub struct FtaVars {
    pub w_s: Var,
    pub e: Var,
    pub w_out: Var,
}

impl FtaModule {
    pub fn new(w_s: Array, e: Array, w_out: Array, phi: Activation) -> Result<Self> {
        let m = Self { w_s, e, w_out, phi };
        m.validate()?;
        Ok(m)
    }

    /// Randomly initialized module for student width `d_s` and teacher width
    /// `d_t` over `horizon` steps.
    pub fn init(d_s: usize, horizon: usize, d_t: usize, config: &FtaConfig, rng: &mut impl Rng) -> Result<Self> {
        let u = config.latent_dim.unwrap_or(d_s);
        if d_s == 0 || u == 0 || d_t == 0 || horizon == 0 {
            return Err(Error::config(format!(
                "alignment dimensions must be positive (d_S={d_s}, u={u}, d_T={d_t}, T={horizon})"
            )));
        }
        let w_s = glorot(d_s, u, rng);
        let noise = Normal::new(0.0, config.time_embedding_noise.max(0.0))
            .map_err(|e| Error::config(e.to_string()))?;
        let e = Array::from_fn(vec![horizon, u], |_| 1.0 + noise.sample(rng));
        let w_out = glorot(u, d_t, rng);
        Self::new(w_s, e, w_out, config.phi)
    }

    fn validate(&self) -> Result<()> {
        let (ws, e, wo) = (self.w_s.shape(), self.e.shape(), self.w_out.shape());
        if ws.len() != 2 || e.len() != 2 || wo.len() != 2 {
            return Err(Error::dim("fta parameters", ws, wo));
        }
        if ws[1] != e[1] || e[1] != wo[0] {
            return Err(Error::dim("fta latent width", ws, e));
        }
        if !(self.w_s.is_finite() && self.e.is_finite() && self.w_out.is_finite()) {
            return Err(Error::NonFinite("fta parameters"));
        }
        Ok(())
    }

    pub fn student_dim(&self) -> usize {
        self.w_s.shape()[0]
    }

    pub fn latent_dim(&self) -> usize {
        self.w_s.shape()[1]
    }

    pub fn horizon(&self) -> usize {
        self.e.shape()[0]
    }

    pub fn teacher_dim(&self) -> usize {
        self.w_out.shape()[1]
    }

    pub fn parameters(&self) -> Vec<&Array> {
        vec![&self.w_s, &self.e, &self.w_out]
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Array> {
        vec![&mut self.w_s, &mut self.e, &mut self.w_out]
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|p| p.len()).sum()
    }

    /// Registers the parameters in `g` as differentiable leaves.
    pub fn bind(&self, g: &mut Graph) -> FtaVars {
        FtaVars {
            w_s: g.param(self.w_s.clone()),
            e: g.param(self.e.clone()),
            w_out: g.param(self.w_out.clone()),
        }
    }

    /// Registers the parameters in `g` as constants.
    pub fn bind_frozen(&self, g: &mut Graph) -> FtaVars {
        FtaVars {
            w_s: g.constant(self.w_s.clone()),
            e: g.constant(self.e.clone()),
            w_out: g.constant(self.w_out.clone()),
        }
    }

    /// Graph form of the projection: `[B × D × d_S] → [B × D × T × d_T]`.
    pub fn forward(&self, g: &mut Graph, vars: FtaVars, h_student: Var) -> Result<Var> {
        let hs = g.shape(h_student).to_vec();
        if hs.len() != 3 || hs[2] != self.student_dim() {
            return Err(Error::dim("fta_forward", &hs, self.w_s.shape()));
        }
        let (b, d, t, u, dt) = (hs[0], hs[1], self.horizon(), self.latent_dim(), self.teacher_dim());

        let flat = g.reshape(h_student, &[b * d, hs[2]])?;
        let latent = g.matmul(flat, vars.w_s)?; // [BD × u]
        let latent = g.expand_axis(latent, 1, t)?; // [BD × T × u]
        let gate = g.expand_axis(vars.e, 0, b * d)?;
        let z = g.mul(latent, gate)?;
        let z = g.activation(z, self.phi)?;
        let z = g.reshape(z, &[b * d * t, u])?;
        let out = g.matmul(z, vars.w_out)?;
        g.reshape(out, &[b, d, t, dt])
    }
}

/// Evaluates the projection on plain arrays.
pub fn fta_forward(module: &FtaModule, h_student: &Array) -> Result<Array> {
    let mut g = Graph::new();
    let vars = module.bind_frozen(&mut g);
    let h = g.constant(h_student.clone());
    let out = module.forward(&mut g, vars, h)?;
    Ok(g.value(out).clone())
}

/// `1/(BDT) Σ_{b,d,t} ‖Ĥ[b,d,t] - H[b,d,t]‖²` with the norm over the last
/// (teacher hidden) axis.
pub fn fta_loss(g: &mut Graph, predicted: Var, teacher_hidden: Var) -> Result<Var> {
    let (sp, st) = (g.shape(predicted).to_vec(), g.shape(teacher_hidden).to_vec());
    if sp != st || sp.len() != 4 {
        return Err(Error::dim("fta_loss", &sp, &st));
    }
    let bdt = (sp[0] * sp[1] * sp[2]) as f64;
    let diff = g.sub(predicted, teacher_hidden)?;
    let sq = g.square(diff)?;
    let total = g.sum_all(sq)?;
    g.scale(total, 1.0 / bdt)
}

/// Student and teacher hidden states for one batch.
#[derive(Clone, Debug)]
pub struct AlignmentPair {
    student_hidden: Array,
    teacher_hidden: Array,
}

impl AlignmentPair {
    /// `student_hidden` is `[B × D × d_S]`, `teacher_hidden` `[B × D × T × d_T]`.
    pub fn new(student_hidden: Array, teacher_hidden: Array) -> Result<Self> {
        let (s, t) = (student_hidden.shape(), teacher_hidden.shape());
        if s.len() != 3 || t.len() != 4 || s[0] != t[0] || s[1] != t[1] {
            return Err(Error::dim("alignment pair", s, t));
        }
        Ok(Self {
            student_hidden,
            teacher_hidden,
        })
    }

    pub fn student_hidden(&self) -> &Array {
        &self.student_hidden
    }

    pub fn teacher_hidden(&self) -> &Array {
        &self.teacher_hidden
    }

    /// Alignment loss of `module` on this pair.
    pub fn loss(&self, module: &FtaModule) -> Result<f64> {
        let mut g = Graph::new();
        let vars = module.bind_frozen(&mut g);
        let h = g.constant(self.student_hidden.clone());
        let target = g.constant(self.teacher_hidden.clone());
        let pred = module.forward(&mut g, vars, h)?;
        let l = fta_loss(&mut g, pred, target)?;
        Ok(g.value(l).item())
    }
}

/// The degenerate instance in which alignment is exact.
///
/// The student embedding of each variate is its raw sequence (a
/// time-separable embedding with identity point map), `W_s` is the
/// identity, `E[t]` is the one-hot vector `e_t`, `φ` is the identity and
/// `W_out` is a `[T × 1]` column of ones. Then `Ĥ[b, d, t] = x[b, d, t]`.
pub fn boundary_construction(lookback: &Array) -> Result<(FtaModule, Array)> {
    let s = lookback.shape();
    if s.len() != 3 {
        return Err(Error::dim("boundary_construction", s, &[0, 0, 0]));
    }
    let t = s[2];
    let module = FtaModule::new(
        Array::identity(t),
        Array::identity(t),
        Array::ones(vec![t, 1]),
        Activation::Identity,
    )?;
    Ok((module, lookback.clone()))
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

    fn random_module(d_s: usize, u: usize, t: usize, d_t: usize, phi: Activation, rng: &mut ChaCha8Rng) -> FtaModule {
        FtaModule::new(random(&[d_s, u], rng), random(&[t, u], rng), random(&[u, d_t], rng), phi).unwrap()
    }

    #[test]
    fn scalar_expansion() {
        let m = FtaModule::new(
            Array::identity(1),
            Array::new(vec![3, 1], vec![1.0, 2.0, 3.0]).unwrap(),
            Array::identity(1),
            Activation::Identity,
        )
        .unwrap();
        let out = fta_forward(&m, &Array::new(vec![1, 1, 1], vec![5.0]).unwrap()).unwrap();
        assert_eq!(out.shape(), &[1, 1, 3, 1]);
        assert_eq!(out.data(), &[5.0, 10.0, 15.0]);
    }

    #[test]
    fn zero_time_embedding_gives_zero_vector() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for phi in [Activation::Identity, Activation::Relu] {
            let mut m = random_module(3, 4, 5, 2, phi, &mut rng);
            for u in 0..4 {
                m.e.set(&[2, u], 0.0);
            }
            let out = fta_forward(&m, &random(&[2, 3, 3], &mut rng)).unwrap();
            for b in 0..2 {
                for d in 0..3 {
                    for k in 0..2 {
                        assert_eq!(out.get(&[b, d, 2, k]), 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn dimension_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = random_module(3, 4, 5, 2, Activation::Gelu, &mut rng);
        assert!(matches!(fta_forward(&m, &Array::zeros(vec![2, 3, 4])), Err(Error::Dimension { .. })));
        assert!(FtaModule::new(Array::zeros(vec![3, 4]), Array::zeros(vec![5, 3]), Array::zeros(vec![4, 2]), Activation::Gelu).is_err());

        let mut g = Graph::new();
        let a = g.constant(Array::zeros(vec![1, 1, 2, 3]));
        let b = g.constant(Array::zeros(vec![1, 1, 3, 3]));
        assert!(matches!(fta_loss(&mut g, a, b), Err(Error::Dimension { .. })));
        assert!(AlignmentPair::new(Array::zeros(vec![2, 3, 4]), Array::zeros(vec![2, 2, 5, 1])).is_err());
    }

    #[test]
    fn loss_examples() {
        let mut g = Graph::new();
        let p = g.constant(Array::new(vec![1, 1, 1, 2], vec![1.0, 2.0]).unwrap());
        let z = g.constant(Array::zeros(vec![1, 1, 1, 2]));
        let l = fta_loss(&mut g, p, z).unwrap();
        assert_eq!(g.value(l).item(), 5.0);
        let same = fta_loss(&mut g, p, p).unwrap();
        assert_eq!(g.value(same).item(), 0.0);

        let p2 = g.scale(p, 2.0).unwrap();
        let l2 = fta_loss(&mut g, p2, z).unwrap();
        assert_eq!(g.value(l2).item(), 4.0 * 5.0);
    }

    #[test]
    fn loss_normalizes_by_bdt_not_hidden_width() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = random(&[2, 3, 4, 5], &mut rng);
        let b = random(&[2, 3, 4, 5], &mut rng);
        let expect: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / 24.0;
        let mut g = Graph::new();
        let (va, vb) = (g.constant(a), g.constant(b));
        let l = fta_loss(&mut g, va, vb).unwrap();
        assert!((g.value(l).item() - expect).abs() < 1e-13);
    }

    #[test]
    fn boundary_sequence_example() {
        let x = Array::new(vec![1, 1, 3], vec![3.0, 1.0, 4.0]).unwrap();
        let (m, h) = boundary_construction(&x).unwrap();
        let out = fta_forward(&m, &h).unwrap();
        assert_eq!(out.shape(), &[1, 1, 3, 1]);
        assert_eq!(out.data(), &[3.0, 1.0, 4.0]);
        let teacher = x.clone().reshape(vec![1, 1, 3, 1]).unwrap();
        let pair = AlignmentPair::new(h, teacher).unwrap();
        assert!(pair.loss(&m).unwrap() < 1e-10);

        let zeros = Array::zeros(vec![2, 2, 4]);
        let (m, h) = boundary_construction(&zeros).unwrap();
        let out = fta_forward(&m, &h).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn boundary_perturbation_moves_one_entry() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x = random(&[2, 3, 6], &mut rng);
        let (m, h) = boundary_construction(&x).unwrap();
        let base = fta_forward(&m, &h).unwrap();
        let mut bumped = h.clone();
        let delta = 0.37;
        bumped.set(&[1, 2, 4], h.get(&[1, 2, 4]) + delta);
        let moved = fta_forward(&m, &bumped).unwrap();
        let changed: Vec<usize> = (0..base.len()).filter(|&i| base.data()[i] != moved.data()[i]).collect();
        assert_eq!(changed.len(), 1);
        assert!((moved.get(&[1, 2, 4, 0]) - base.get(&[1, 2, 4, 0]) - delta).abs() < 1e-12);
    }

    #[test]
    fn forward_and_loss_pass_grad_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        for phi in [Activation::Gelu, Activation::Identity] {
            for _ in 0..5 {
                let m = random_module(3, 4, 5, 2, phi, &mut rng);
                let h = random(&[2, 3, 3], &mut rng);
                let target = random(&[2, 3, 5, 2], &mut rng);
                let params = vec![m.w_s.clone(), m.e.clone(), m.w_out.clone(), h];
                let r = grad_check(
                    |g, p| {
                        let vars = FtaVars { w_s: p[0], e: p[1], w_out: p[2] };
                        let pred = m.forward(g, vars, p[3])?;
                        let t = g.constant(target.clone());
                        fta_loss(g, pred, t)
                    },
                    &params,
                    1e-5,
                    1e-4,
                )
                .unwrap();
                assert!(r.passed, "{phi:?}: {r:?}");
            }
        }
    }

    #[test]
    fn every_parameter_receives_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let m = FtaModule::init(4, 6, 3, &FtaConfig::default(), &mut rng).unwrap();
        let mut g = Graph::new();
        let vars = m.bind(&mut g);
        let h = g.constant(random(&[2, 3, 4], &mut rng));
        let t = g.constant(random(&[2, 3, 6, 3], &mut rng));
        let pred = m.forward(&mut g, vars, h).unwrap();
        let l = fta_loss(&mut g, pred, t).unwrap();
        g.backward(l).unwrap();
        for v in [vars.w_s, vars.e, vars.w_out] {
            assert!(g.grad(v).unwrap().data().iter().all(|&x| x != 0.0));
        }
    }

    #[test]
    fn init_follows_configuration() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = FtaModule::init(8, 12, 5, &FtaConfig::default(), &mut rng).unwrap();
        assert_eq!((m.student_dim(), m.latent_dim(), m.horizon(), m.teacher_dim()), (8, 8, 12, 5));
        let bound = (6.0f64 / 13.0).sqrt();
        assert!(m.w_out.data().iter().all(|v| v.abs() <= bound));
        let mean_e = m.e.mean();
        assert!((mean_e - 1.0).abs() < 0.02);
        assert_eq!(m.parameter_count(), 8 * 8 + 12 * 8 + 8 * 5);

        let cfg = FtaConfig { latent_dim: Some(3), ..FtaConfig::default() };
        assert_eq!(FtaModule::init(8, 12, 5, &cfg, &mut rng).unwrap().latent_dim(), 3);
        assert!(FtaModule::init(0, 12, 5, &FtaConfig::default(), &mut rng).is_err());
    }

    proptest! {
        #[test]
        fn exact_recovery(seed in any::<u64>(), b in 1usize..4, d in 1usize..4, t in 1usize..12) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = Array::from_fn(vec![b, d, t], |_| rng.random_range(-100.0..100.0));
            let (m, h) = boundary_construction(&x).unwrap();
            let teacher = x.clone().reshape(vec![b, d, t, 1]).unwrap();
            prop_assert!(AlignmentPair::new(h, teacher).unwrap().loss(&m).unwrap() < 1e-10);
        }

        #[test]
        fn linear_in_student_when_phi_identity(seed in any::<u64>(), a in -3.0f64..3.0, c in -3.0f64..3.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = random_module(3, 4, 5, 2, Activation::Identity, &mut rng);
            let h1 = random(&[2, 2, 3], &mut rng);
            let h2 = random(&[2, 2, 3], &mut rng);
            let mix = h1.zip_map(&h2, |x, y| a * x + c * y).unwrap();
            let lhs = fta_forward(&m, &mix).unwrap();
            let (f1, f2) = (fta_forward(&m, &h1).unwrap(), fta_forward(&m, &h2).unwrap());
            let rhs = f1.zip_map(&f2, |x, y| a * x + c * y).unwrap();
            prop_assert!(lhs.max_abs_diff(&rhs).unwrap() < 1e-10);
        }

        #[test]
        fn output_shape_independent_of_phi(b in 1usize..3, d in 1usize..4, t in 1usize..6, dt in 1usize..4, which in 0usize..3) {
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let phi = [Activation::Gelu, Activation::Relu, Activation::Identity][which];
            let m = random_module(2, 3, t, dt, phi, &mut rng);
            let out = fta_forward(&m, &random(&[b, d, 2], &mut rng)).unwrap();
            prop_assert_eq!(out.shape(), &[b, d, t, dt]);
        }
    }
}
