//! Central finite-difference oracle for the backward pass.

use super::{Array, Graph, Var};
use crate::error::Result;

/// Denominator floor so that near-zero gradients are compared absolutely.
pub const REL_ERR_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// `(parameter index, flat coordinate)` of the worst disagreement.
    pub worst: Option<(usize, usize)>,
    pub coordinates: usize,
    pub tolerance: f64,
    pub passed: bool,
}

/// `|a - n| / max(|a|, |n|, REL_ERR_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// Compares backward gradients of a scalar function against central
/// differences `(f(θ+h) - f(θ-h)) / 2h`, one coordinate at a time.
///
/// `f` receives a fresh graph and one variable per entry of `params`.
pub fn grad_check<F>(f: F, params: &[Array], step: f64, tolerance: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    assert!(step > 0.0, "finite-difference step must be positive");

    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.param(p.clone())).collect();
    let loss = f(&mut g, &vars)?;
    g.backward(loss)?;
    let analytic: Vec<Array> = vars.iter().map(|&v| g.grad_or_zeros(v)).collect();

    let eval = |ps: &[Array]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = ps.iter().map(|p| g.constant(p.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).item())
    };

    let mut worst = None;
    let mut max_rel_err = 0.0f64;
    let mut coordinates = 0;
    let mut shifted = params.to_vec();
    for (pi, grad) in analytic.iter().enumerate() {
        for ci in 0..params[pi].len() {
            let orig = params[pi].data()[ci];
            shifted[pi].data_mut()[ci] = orig + step;
            let plus = eval(&shifted)?;
            shifted[pi].data_mut()[ci] = orig - step;
            let minus = eval(&shifted)?;
            shifted[pi].data_mut()[ci] = orig;

            let numeric = (plus - minus) / (2.0 * step);
            let err = relative_error(grad.data()[ci], numeric);
            coordinates += 1;
            if err > max_rel_err || worst.is_none() {
                max_rel_err = max_rel_err.max(err);
                worst = Some((pi, ci));
            }
        }
    }

    Ok(GradCheckReport {
        max_rel_err,
        worst,
        coordinates,
        tolerance,
        passed: max_rel_err < tolerance,
    })
}
