//! Finite-difference checks of every objective and student forward pass,
//! on random instances.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::diffcore::{grad_check, Activation, Array, Graph, Var};
use crate::error::Result;
use crate::fta::{fta_loss, FtaConfig, FtaModule};
use crate::losses::{fdkd_loss, kd_loss, supervised_loss, tkd_loss, HorizonWeights, TrendProjector};
use crate::students::{Student, StudentConfig, StudentKind};

pub const SUITE_STEP: f64 = 1e-5;
pub const SUITE_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SuiteResult {
    pub name: &'static str,
    pub instances: usize,
    pub coordinates: usize,
    pub max_rel_err: f64,
    pub passed: bool,
}

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Array {
    Array::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
}

struct Tally {
    name: &'static str,
    instances: usize,
    coordinates: usize,
    max_rel_err: f64,
}

impl Tally {
    fn new(name: &'static str) -> Self {
        Self {
            name,
            instances: 0,
            coordinates: 0,
            max_rel_err: 0.0,
        }
    }

    fn check<F>(&mut self, f: F, params: &[Array]) -> Result<()>
    where
        F: Fn(&mut Graph, &[Var]) -> Result<Var>,
    {
        let r = grad_check(f, params, SUITE_STEP, SUITE_TOLERANCE)?;
        self.instances += 1;
        self.coordinates += r.coordinates;
        self.max_rel_err = self.max_rel_err.max(r.max_rel_err);
        Ok(())
    }

    fn finish(self) -> SuiteResult {
        SuiteResult {
            name: self.name,
            instances: self.instances,
            coordinates: self.coordinates,
            max_rel_err: self.max_rel_err,
            passed: self.max_rel_err < SUITE_TOLERANCE,
        }
    }
}

/// Runs `instances` random checks of each objective, of both students and
/// of the graph primitives they are built from.
pub fn run_gradient_suite(instances: usize, seed: u64) -> Result<Vec<SuiteResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (b, t, c) = (2, 6, 3);
    let shape = [b, t, c];
    let mut out = Vec::new();

    let mut ops = Tally::new("graph primitives");
    for _ in 0..instances {
        let a = random(&[3, 4], &mut rng);
        let w = random(&[4, 2], &mut rng);
        let bm = random(&[2, 3, 2], &mut rng);
        ops.check(
            |g, p| {
                let y = g.matmul(p[0], p[1])?;
                let y = g.activation(y, Activation::Gelu)?;
                let s = g.softmax_last(p[0])?;
                let s = g.reshape(s, &[2, 2, 3])?;
                let z = g.batch_matmul(s, p[2])?;
                let m = g.magnitude(p[0], p[0])?;
                let y = g.square(y)?;
                let (y, z, m) = (g.mean_all(y)?, g.sum_all(z)?, g.mean_all(m)?);
                let yz = g.add(y, z)?;
                g.add(yz, m)
            },
            &[a, w, bm],
        )?;
    }
    out.push(ops.finish());

    let mut sup = Tally::new("supervised (weighted)");
    let mut kd = Tally::new("horizon-weighted kd");
    let mut tkd = Tally::new("t-kd");
    let mut fdkd = Tally::new("fd-kd");
    let proj = TrendProjector::new(3)?;
    for i in 0..instances {
        let tau = [0.0, 0.5, 2.0, 5.0][i % 4];
        let w = HorizonWeights::new(tau, t)?;
        let (y, yt) = (random(&shape, &mut rng), random(&shape, &mut rng));
        let y_hat = random(&shape, &mut rng);
        sup.check(
            |g, p| {
                let yv = g.constant(y.clone());
                supervised_loss(g, p[0], yv, Some(&w))
            },
            std::slice::from_ref(&y_hat),
        )?;
        kd.check(
            |g, p| {
                let tv = g.constant(yt.clone());
                kd_loss(g, p[0], tv, &w)
            },
            std::slice::from_ref(&y_hat),
        )?;
        tkd.check(
            |g, p| {
                let (yv, tv) = (g.constant(y.clone()), g.constant(yt.clone()));
                tkd_loss(g, p[0], yv, tv, &proj, 0.7)
            },
            std::slice::from_ref(&y_hat),
        )?;
        fdkd.check(
            |g, p| {
                let (yv, tv) = (g.constant(y.clone()), g.constant(yt.clone()));
                fdkd_loss(g, p[0], yv, tv, 0.5, 1.0, 1.0)
            },
            std::slice::from_ref(&y_hat),
        )?;
    }
    out.extend([sup.finish(), kd.finish(), tkd.finish(), fdkd.finish()]);

    let mut fta = Tally::new("fta alignment");
    let (d_s, d_t) = (4, 3);
    for _ in 0..instances {
        let cfg = FtaConfig {
            latent_dim: Some(3),
            ..FtaConfig::default()
        };
        let m = FtaModule::init(d_s, t, d_t, &cfg, &mut rng)?;
        let hs = random(&[b, c, d_s], &mut rng);
        let ht = random(&[b, c, t, d_t], &mut rng);
        let mut params = vec![hs];
        params.extend(m.parameters().into_iter().cloned());
        fta.check(
            |g, p| {
                let vars = crate::fta::FtaVars {
                    w_s: p[1],
                    e: p[2],
                    w_out: p[3],
                };
                let pred = m.forward(g, vars, p[0])?;
                let tv = g.constant(ht.clone());
                fta_loss(g, pred, tv)
            },
            &params,
        )?;
    }
    out.push(fta.finish());

    for (name, cfg) in [
        (
            "linear student",
            StudentConfig {
                kind: StudentKind::Linear,
                trend_kernel: 3,
                ..StudentConfig::default()
            },
        ),
        (
            "variate student",
            StudentConfig {
                kind: StudentKind::Variate,
                d_model: 4,
                d_ff: 6,
                ..StudentConfig::default()
            },
        ),
    ] {
        let mut tally = Tally::new(name);
        for _ in 0..instances {
            let mut s = Student::init(&cfg, 8, 4, &mut rng)?;
            for p in s.parameters_mut() {
                p.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-0.5..0.5));
            }
            let x = random(&[2, 8, c], &mut rng);
            let target = random(&[2, 4, c], &mut rng);
            let params: Vec<Array> = s.parameters().into_iter().cloned().collect();
            tally.check(
                |g, p| {
                    let xv = g.constant(x.clone());
                    let o = s.forward(g, p, xv)?;
                    let tv = g.constant(target.clone());
                    let a = g.mse(o.forecast, tv)?;
                    let h = g.square(o.hidden)?;
                    let h = g.mean_all(h)?;
                    g.add(a, h)
                },
                &params,
            )?;
        }
        out.push(tally.finish());
    }
    Ok(out)
}
