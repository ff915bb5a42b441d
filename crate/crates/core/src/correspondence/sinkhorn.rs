//! Entropic optimal transport with uniform marginals, in log space.

use rayon::prelude::*;

use super::cost::CostMatrix;
use crate::autodiff::CustomOp;
use crate::error::{Error, Result};
use crate::tensor::{logsumexp, Tensor2};

#[derive(Clone, Debug, PartialEq)]
pub struct TransportPlan {
    pub values: Tensor2,
    pub epsilon: f64,
    pub iterations: usize,
    /// False when `max_iters` ran out before both marginals met `tol_marg`.
    pub converged: bool,
    /// Log-domain column potential; `values_ij ∝ exp(−c_ij/ε + v_j)` per row.
    pub log_v: Vec<f64>,
}

impl TransportPlan {
    pub fn row_sums(&self) -> Vec<f64> {
        self.values.row_sums()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        self.values.column_sums()
    }

    /// Largest deviation of any row or column sum from its target mass.
    pub fn marginal_error(&self) -> f64 {
        let a = 1.0 / self.values.rows() as f64;
        let b = 1.0 / self.values.cols() as f64;
        let r = self.row_sums().iter().map(|s| (s - a).abs()).fold(0.0, f64::max);
        let c = self.col_sums().iter().map(|s| (s - b).abs()).fold(0.0, f64::max);
        r.max(c)
    }
}

/// `out_i = log_mass − LSE_j(m_ij + pot_j)` for every row of `m`.
fn row_update(m: &Tensor2, pot: &[f64], log_mass: f64) -> Vec<f64> {
    (0..m.rows())
        .into_par_iter()
        .map_init(
            || vec![0.0; pot.len()],
            |buf, i| {
                for (b, (x, p)) in buf.iter_mut().zip(m.row(i).iter().zip(pot)) {
                    *b = x + p;
                }
                log_mass - logsumexp(buf)
            },
        )
        .collect()
}

fn plan_from(log_k: &Tensor2, u: &[f64], v: &[f64]) -> Tensor2 {
    let mut p = Tensor2::zeros(log_k.rows(), log_k.cols());
    let cols = log_k.cols();
    p.data_mut()
        .par_chunks_mut(cols.max(1))
        .enumerate()
        .for_each(|(i, row)| {
            for (j, out) in row.iter_mut().enumerate() {
                *out = (u[i] + log_k.get(i, j) + v[j]).exp();
            }
        });
    p
}

fn check_args(rows: usize, cols: usize, epsilon: f64) -> Result<()> {
    if rows == 0 || cols == 0 {
        return Err(Error::shape("sinkhorn on an empty cost matrix"));
    }
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::Config(format!("epsilon must be positive, got {epsilon}")));
    }
    Ok(())
}

/// Alternating row/column scaling of `exp(−cost/ε)` towards uniform
/// marginals. Stops once both marginals are within `tol_marg` or after
/// `max_iters` sweeps; a plan is returned either way.
pub fn sinkhorn(cost: &CostMatrix, epsilon: f64, max_iters: usize, tol_marg: f64) -> Result<TransportPlan> {
    let (n, m) = (cost.rows(), cost.cols());
    check_args(n, m, epsilon)?;
    let log_k = cost.values.scale(-1.0 / epsilon);
    let log_kt = log_k.transpose();
    let (log_a, log_b) = (-(n as f64).ln(), -(m as f64).ln());
    let (a, b) = (1.0 / n as f64, 1.0 / m as f64);
    let mut u = vec![0.0; n];
    let mut v = vec![0.0; m];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iters {
        u = row_update(&log_k, &v, log_a);
        v = row_update(&log_kt, &u, log_b);
        iterations += 1;
        // columns are exact after the v update; rows carry the residual
        let row_err = (0..n)
            .into_par_iter()
            .map(|i| {
                let s: f64 = (0..m).map(|j| (u[i] + log_k.get(i, j) + v[j]).exp()).sum();
                (s - a).abs()
            })
            .reduce(|| 0.0, f64::max);
        if row_err <= tol_marg {
            let col_err = (0..m)
                .map(|j| {
                    let s: f64 = (0..n).map(|i| (u[i] + log_k.get(i, j) + v[j]).exp()).sum();
                    (s - b).abs()
                })
                .fold(0.0, f64::max);
            if col_err <= tol_marg {
                converged = true;
                break;
            }
        }
    }
    let values = plan_from(&log_k, &u, &v);
    Ok(TransportPlan {
        values,
        epsilon,
        iterations,
        converged,
        log_v: v,
    })
}

/// Runs exactly `iters` sweeps from zero potentials and keeps every
/// intermediate potential for the reverse pass.
pub(crate) struct UnrolledSinkhorn {
    us: Vec<Vec<f64>>,
    vs: Vec<Vec<f64>>,
}

impl UnrolledSinkhorn {
    /// Forward pass on `log_k = −cost/ε`. Returns the op and the final column
    /// potential as a 1×M row.
    pub(crate) fn run(log_k: &Tensor2, iters: usize) -> Result<(Self, Tensor2)> {
        let (n, m) = log_k.shape();
        check_args(n, m, 1.0)?;
        if iters == 0 {
            return Err(Error::Config("sinkhorn_iters must be at least 1".into()));
        }
        let log_kt = log_k.transpose();
        let (log_a, log_b) = (-(n as f64).ln(), -(m as f64).ln());
        let mut us = Vec::with_capacity(iters);
        let mut vs = Vec::with_capacity(iters + 1);
        vs.push(vec![0.0; m]);
        for _ in 0..iters {
            let u = row_update(log_k, vs.last().expect("seeded"), log_a);
            let v = row_update(&log_kt, &u, log_b);
            us.push(u);
            vs.push(v);
        }
        let out = Tensor2::new(1, m, vs.last().expect("seeded").clone())?;
        Ok((Self { us, vs }, out))
    }
}

impl CustomOp for UnrolledSinkhorn {
    fn name(&self) -> &'static str {
        "unrolled_sinkhorn"
    }

    fn backward(&self, inputs: &[&Tensor2], _output: &Tensor2, grad: &Tensor2) -> Vec<Tensor2> {
        let log_k = inputs[0];
        let (n, m) = log_k.shape();
        let (log_a, log_b) = (-(n as f64).ln(), -(m as f64).ln());
        let mut g_l = Tensor2::zeros(n, m);
        let mut g_v = grad.data().to_vec();
        let mut g_u = vec![0.0; n];
        let mut next_v = vec![0.0; m];
        for t in (0..self.us.len()).rev() {
            let u = &self.us[t];
            let v = &self.vs[t + 1];
            let v_prev = &self.vs[t];
            next_v.iter_mut().for_each(|x| *x = 0.0);
            for i in 0..n {
                let lk = log_k.row(i);
                let row = g_l.row_mut(i);
                // v_j = log b − LSE_i(L_ij + u_i); the column softmax weight
                // is exp(L_ij + u_i + v_j − log b)
                let mut acc = 0.0;
                for j in 0..m {
                    let c = (lk[j] + u[i] + v[j] - log_b).exp() * g_v[j];
                    row[j] -= c;
                    acc += c;
                }
                g_u[i] = -acc;
                // u_i = log a − LSE_j(L_ij + v'_j); the row softmax weight is
                // exp(L_ij + v'_j + u_i − log a)
                for j in 0..m {
                    let c = (lk[j] + v_prev[j] + u[i] - log_a).exp() * g_u[i];
                    row[j] -= c;
                    next_v[j] -= c;
                }
            }
            std::mem::swap(&mut g_v, &mut next_v);
        }
        vec![g_l]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_entry_plan_is_one() {
        let c = CostMatrix::new(Tensor2::from_rows(&[[0.7]]).unwrap()).unwrap();
        let p = sinkhorn(&c, 0.03, 30, 1e-9).unwrap();
        assert!((p.values.get(0, 0) - 1.0).abs() < 1e-15);
        assert!(p.converged);
    }

    #[test]
    fn zero_cost_is_uniform() {
        let c = CostMatrix::new(Tensor2::zeros(2, 2)).unwrap();
        let p = sinkhorn(&c, 0.1, 30, 1e-12).unwrap();
        for v in p.values.data() {
            assert!((v - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn marginals_and_homogeneity() {
        let c = Tensor2::from_fn(6, 6, |i, j| (((i * 31 + j * 17) % 11) as f64) / 11.0);
        let p = sinkhorn(&CostMatrix::new(c.clone()).unwrap(), 0.2, 500, 1e-10).unwrap();
        assert!(p.converged);
        assert!(p.marginal_error() <= 1e-10);
        let q = sinkhorn(&CostMatrix::new(c.scale(3.0)).unwrap(), 0.6, 500, 1e-10).unwrap();
        assert!(p.values.max_abs_diff(&q.values) < 1e-9);
    }

    #[test]
    fn unrolled_matches_plain_potentials() {
        let c = Tensor2::from_fn(4, 4, |i, j| ((i + 2 * j) % 3) as f64 * 0.3);
        let plain = sinkhorn(&CostMatrix::new(c.clone()).unwrap(), 0.5, 7, 0.0).unwrap();
        let (_, v) = UnrolledSinkhorn::run(&c.scale(-2.0), 7).unwrap();
        assert_eq!(v.data(), plain.log_v.as_slice());
    }
}
