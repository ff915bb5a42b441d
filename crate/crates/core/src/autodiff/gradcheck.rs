//! Central finite-difference check of tape gradients.

use std::fmt;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor2;

/// Denominator floor in the relative error, so coordinates whose true
/// gradient is ~0 are judged on an absolute scale.
pub const REL_ERROR_FLOOR: f64 = 1e-3;

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub tol: f64,
    /// Base step; the actual step is `step * max(1, |θ|)`.
    pub step: f64,
    /// Check at most this many coordinates per parameter (evenly strided).
    pub max_coords_per_param: Option<usize>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            tol: 1e-4,
            step: 1e-5,
            max_coords_per_param: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CoordError {
    pub param: usize,
    pub coord: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub name: String,
    pub tol: f64,
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst: Option<CoordError>,
    pub failures: Vec<CoordError>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty() && self.max_rel_error.is_finite()
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<40} coords={:<6} max_rel={:.3e} tol={:.0e}",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.checked,
            self.max_rel_error,
            self.tol
        )
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Builds `f` on a fresh tape, differentiates it, and compares every (or a
/// strided subset of) parameter coordinate against central differences.
pub fn grad_check<F>(
    name: &str,
    params: &[Tensor2],
    f: F,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;
    let analytic: Vec<Tensor2> = vars
        .iter()
        .zip(params)
        .map(|(&v, p)| grads.get_or_zeros(v, p))
        .collect();
    let eval = |ps: &[Tensor2]| -> Result<f64> {
        let mut t = Tape::new();
        let vs: Vec<Var> = ps.iter().map(|p| t.leaf(p.clone())).collect();
        let l = f(&mut t, &vs)?;
        Ok(t.value(l).get(0, 0))
    };
    compare_gradients(name, params, &analytic, eval, opts)
}

/// Compares a supplied gradient with central differences of `eval`.
pub fn compare_gradients<E>(
    name: &str,
    params: &[Tensor2],
    analytic: &[Tensor2],
    eval: E,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    E: Fn(&[Tensor2]) -> Result<f64>,
{
    if analytic.len() != params.len() {
        return Err(Error::shape("one analytic gradient per parameter required"));
    }
    let mut work: Vec<Tensor2> = params.to_vec();
    let mut report = GradCheckReport {
        name: name.to_string(),
        tol: opts.tol,
        checked: 0,
        max_rel_error: 0.0,
        worst: None,
        failures: Vec::new(),
    };
    for (pi, p) in params.iter().enumerate() {
        if analytic[pi].shape() != p.shape() {
            return Err(Error::shape(format!(
                "gradient {pi} shaped {:?}, parameter {:?}",
                analytic[pi].shape(),
                p.shape()
            )));
        }
        let len = p.data().len();
        let stride = match opts.max_coords_per_param {
            Some(m) if m > 0 && len > m => len.div_ceil(m),
            _ => 1,
        };
        for coord in (0..len).step_by(stride) {
            let theta = p.data()[coord];
            let h = opts.step * theta.abs().max(1.0);
            work[pi].data_mut()[coord] = theta + h;
            let up = eval(&work)?;
            work[pi].data_mut()[coord] = theta - h;
            let down = eval(&work)?;
            work[pi].data_mut()[coord] = theta;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic[pi].data()[coord];
            let rel = relative_error(a, numeric);
            report.checked += 1;
            let entry = CoordError {
                param: pi,
                coord,
                analytic: a,
                numeric,
                rel_error: rel,
            };
            if !(rel <= report.max_rel_error) {
                report.max_rel_error = rel;
                report.worst = Some(entry.clone());
            }
            if !(rel <= opts.tol) {
                report.failures.push(entry);
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrong_gradient_fails() {
        let p = vec![Tensor2::from_fn(2, 2, |i, j| 0.3 + i as f64 - j as f64)];
        let eval = |ps: &[Tensor2]| Ok(ps[0].data().iter().map(|v| v * v).sum::<f64>());
        let right = vec![p[0].scale(2.0)];
        let wrong = vec![p[0].scale(2.5)];
        let opts = GradCheckOptions::default();
        assert!(compare_gradients("sq", &p, &right, eval, &opts).unwrap().passed());
        assert!(!compare_gradients("sq", &p, &wrong, eval, &opts).unwrap().passed());
    }

    #[test]
    fn strided_subset() {
        let p = vec![Tensor2::zeros(10, 10)];
        let opts = GradCheckOptions {
            max_coords_per_param: Some(7),
            ..Default::default()
        };
        let r = grad_check("sum", &p, |t, v| t.sum(v[0]), &opts).unwrap();
        assert!(r.passed());
        assert!(r.checked <= 7);
    }
}
