//! Central finite-difference verification of analytic gradients.

use crate::error::{Error, Result};
use crate::numcore::graph::{Graph, Var};
use crate::numcore::tensor::Tensor;

/// Below this magnitude the comparison falls back to absolute error.
pub const ABS_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub index: usize,
    pub max_rel_error: f64,
    /// Flat offset of the worst entry.
    pub worst_entry: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub tol: f64,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn max_error(&self) -> f64 {
        self.params
            .iter()
            .map(|p| p.max_rel_error)
            .fold(0.0, f64::max)
    }
}

/// Error measure used by [`grad_check`]: relative error, falling back to
/// absolute error when both sides are tiny.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(ABS_FLOOR);
    (analytic - numeric).abs() / scale
}

/// Compares backward-pass gradients of `f` against central differences.
///
/// `f` receives a fresh graph and one trainable leaf per entry of `params`
/// and must return a scalar node.
pub fn grad_check<F>(f: F, params: &[Tensor], step: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    if !(step > 0.0 && step <= 1e-3) {
        return Err(Error::Config(format!("finite-difference step {step} outside (0, 1e-3]")));
    }
    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.param(t.clone())).collect();
        let loss = f(&mut g, &vars)?;
        let v = g.scalar(loss);
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("loss evaluated to {v}")));
        }
        Ok(v)
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|t| g.param(t.clone())).collect();
    let loss = f(&mut g, &vars)?;
    if !g.scalar(loss).is_finite() {
        return Err(Error::NonFinite(format!("loss evaluated to {}", g.scalar(loss))));
    }
    g.backward(loss)?;

    let mut work: Vec<Tensor> = params.to_vec();
    let mut checks = Vec::with_capacity(params.len());
    for (pi, var) in vars.iter().enumerate() {
        let zeros = Tensor::zeros(params[pi].rows(), params[pi].cols());
        let analytic = g.grad(*var).unwrap_or(&zeros).clone();
        let mut check = ParamCheck {
            index: pi,
            max_rel_error: 0.0,
            worst_entry: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for e in 0..params[pi].len() {
            let orig = work[pi].data()[e];
            work[pi].data_mut()[e] = orig + step;
            let up = eval(&work)?;
            work[pi].data_mut()[e] = orig - step;
            let down = eval(&work)?;
            work[pi].data_mut()[e] = orig;
            let numeric = (up - down) / (2.0 * step);
            let a = analytic.data()[e];
            let err = relative_error(a, numeric);
            if e == 0 || err > check.max_rel_error {
                check.max_rel_error = err;
                check.worst_entry = e;
                check.analytic = a;
                check.numeric = numeric;
            }
        }
        checks.push(check);
    }
    let passed = checks.iter().all(|c| c.max_rel_error <= tol);
    Ok(GradCheckReport {
        params: checks,
        tol,
        passed,
    })
}
