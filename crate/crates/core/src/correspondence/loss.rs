//! Self-supervised objective with Sinkhorn unrolled on the tape.

use std::sync::Arc;

use super::cost::matching_cost_tape;
use super::sinkhorn::UnrolledSinkhorn;
use crate::autodiff::{SparseRows, Tape, Var};
use crate::error::{Error, Result};
use crate::geometry::{knn, NeighborGraph, PointCloud};
use crate::io::Config;
use crate::tensor::Tensor2;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossHyper {
    pub epsilon: f64,
    pub sinkhorn_iters: usize,
    pub lambda_c: f64,
    pub k_smooth: usize,
}

impl LossHyper {
    pub fn from_config(c: &Config) -> Self {
        Self {
            epsilon: c.epsilon,
            sinkhorn_iters: c.sinkhorn_iters,
            lambda_c: c.lambda_c,
            k_smooth: c.k_smooth,
        }
    }
}

/// Weight-independent data for the loss of one (source, target) pair.
#[derive(Clone, Debug)]
pub struct LossContext {
    pub source: Tensor2,
    pub target: Tensor2,
    /// (N·k)×N map producing `x_k − x_i` for every source KNN edge.
    pub edge_diff: Arc<SparseRows>,
}

impl LossContext {
    pub fn new(source: &PointCloud, target: &PointCloud, k_smooth: usize) -> Result<Self> {
        if source.len() != target.len() {
            return Err(Error::UnequalSizes {
                source_len: source.len(),
                target_len: target.len(),
            });
        }
        let k = k_smooth.min(source.len().saturating_sub(1));
        let graph = if k == 0 {
            NeighborGraph::empty(source.len())
        } else {
            knn(source, k)?
        };
        Ok(Self {
            source: source.positions_tensor(),
            target: target.positions_tensor(),
            edge_diff: Arc::new(edge_difference_map(&graph)),
        })
    }

    pub fn len(&self) -> usize {
        self.source.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.source.rows() == 0
    }
}

pub fn edge_difference_map(graph: &NeighborGraph) -> SparseRows {
    let mut rows = Vec::with_capacity(graph.len() * graph.k());
    for i in 0..graph.len() {
        for &k in graph.neighbors(i) {
            rows.push(vec![(k, 1.0), (i, -1.0)]);
        }
    }
    SparseRows::new(graph.len(), rows)
}

/// Soft correspondences `q̂` (N×3) from embeddings, through the unrolled
/// solver.
pub fn soft_correspondence_tape(
    tape: &mut Tape,
    f_s: Var,
    f_t: Var,
    target: Var,
    epsilon: f64,
    iters: usize,
) -> Result<Var> {
    if !(epsilon > 0.0) {
        return Err(Error::Config("epsilon must be positive".into()));
    }
    let cost = matching_cost_tape(tape, f_s, f_t)?;
    let log_k = tape.scale(cost, -1.0 / epsilon)?;
    let (op, v) = UnrolledSinkhorn::run(tape.value(log_k), iters)?;
    let v = tape.custom(&[log_k], v, Box::new(op))?;
    let z = tape.add_row_broadcast(log_k, v)?;
    let w = tape.softmax_rows(z)?;
    tape.matmul(w, target)
}

/// `L = (1/N) Σ_i min_j ‖q̂_i − q_j‖² + λ_c (1/N) Σ_i Σ_{k∈KNN(i)} ‖(q̂_i − p_i) − (q̂_k − p_k)‖²`
pub fn self_supervised_loss_tape(
    tape: &mut Tape,
    ctx: &LossContext,
    f_s: Var,
    f_t: Var,
    hyper: &LossHyper,
) -> Result<Var> {
    let (ns, nt) = (tape.shape(f_s).0, tape.shape(f_t).0);
    if ns != ctx.len() || nt != ctx.len() {
        return Err(Error::shape(format!(
            "loss: {ns}/{nt} embedding rows for {} points",
            ctx.len()
        )));
    }
    let n = ctx.len() as f64;
    let q = tape.leaf(ctx.target.clone());
    let p = tape.leaf(ctx.source.clone());
    let q_hat = soft_correspondence_tape(tape, f_s, f_t, q, hyper.epsilon, hyper.sinkhorn_iters)?;
    let d = tape.pairwise_sq_dist(q_hat, q)?;
    let m = tape.row_min(d)?;
    let s = tape.sum(m)?;
    let data = tape.scale(s, 1.0 / n)?;
    if hyper.lambda_c == 0.0 || ctx.edge_diff.out_rows == 0 {
        return Ok(data);
    }
    let flow = tape.sub(q_hat, p)?;
    let diff = tape.sparse(flow, ctx.edge_diff.clone())?;
    let sq = tape.mul(diff, diff)?;
    let s = tape.sum(sq)?;
    let smooth = tape.scale(s, hyper.lambda_c / n)?;
    tape.add(data, smooth)
}

#[derive(Clone, Debug)]
pub struct LossValue {
    pub value: f64,
    pub grad_source: Tensor2,
    pub grad_target: Tensor2,
}

/// Loss value and its gradients with respect to both embeddings.
pub fn self_supervised_loss(
    source: &PointCloud,
    target: &PointCloud,
    f_s: &Tensor2,
    f_t: &Tensor2,
    hyper: &LossHyper,
) -> Result<LossValue> {
    let ctx = LossContext::new(source, target, hyper.k_smooth)?;
    let mut tape = Tape::new();
    let (a, b) = (tape.leaf(f_s.clone()), tape.leaf(f_t.clone()));
    let l = self_supervised_loss_tape(&mut tape, &ctx, a, b, hyper)?;
    let g = tape.backward(l)?;
    Ok(LossValue {
        value: tape.value(l).get(0, 0),
        grad_source: g.get_or_zeros(a, f_s),
        grad_target: g.get_or_zeros(b, f_t),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check, GradCheckOptions};

    fn cloud(n: usize) -> PointCloud {
        PointCloud::new(
            (0..n)
                .map(|i| {
                    let t = i as f64;
                    [(t * 0.9).sin(), (t * 0.4).cos(), (t * 1.7).sin() * 0.3]
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn identity_matching_gives_zero_loss() {
        let s = cloud(6);
        let f = Tensor2::identity(6);
        let h = LossHyper {
            epsilon: 0.01,
            sinkhorn_iters: 10,
            lambda_c: 1.0,
            k_smooth: 3,
        };
        let l = self_supervised_loss(&s, &s, &f, &f, &h).unwrap();
        assert!(l.value.abs() < 1e-30, "{}", l.value);
    }

    #[test]
    fn unequal_sizes_rejected() {
        let h = LossHyper {
            epsilon: 0.1,
            sinkhorn_iters: 3,
            lambda_c: 1.0,
            k_smooth: 2,
        };
        let r = self_supervised_loss(&cloud(5), &cloud(6), &Tensor2::zeros(5, 2), &Tensor2::zeros(6, 2), &h);
        assert!(matches!(r, Err(Error::UnequalSizes { .. })));
    }

    #[test]
    fn gradient_through_unrolled_solver() {
        let s = cloud(8);
        let t = s.translated([0.05, -0.02, 0.01]);
        let h = LossHyper {
            epsilon: 0.3,
            sinkhorn_iters: 5,
            lambda_c: 0.5,
            k_smooth: 3,
        };
        let ctx = LossContext::new(&s, &t, h.k_smooth).unwrap();
        let fs = Tensor2::from_fn(8, 4, |i, j| ((i * 3 + j * 7) % 5) as f64 * 0.3 - 0.5);
        let ft = Tensor2::from_fn(8, 4, |i, j| ((i * 5 + j * 2) % 7) as f64 * 0.2 - 0.6);
        let report = grad_check(
            "loss",
            &[fs, ft],
            |tape, v| self_supervised_loss_tape(tape, &ctx, v[0], v[1], &h),
            &GradCheckOptions {
                tol: 1e-3,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(report.passed(), "{report}");
    }
}
