//! Point branch: SetConv layers at full resolution.
//!
//! Each layer gathers the `k` nearest neighbours of every point, encodes
//! `[p_k − p_i ⊕ f_k]` with a shared MLP and max-pools over the neighbours.

use std::sync::Arc;

use crate::autodiff::{SparseRows, Tape, Var};
use crate::error::{Error, Result};
use crate::geometry::{knn, sub, NeighborGraph, PointCloud};
use crate::nn::{mlp_forward_tape, Mlp, MlpParams};
use crate::tensor::Tensor2;

pub const DEFAULT_SETCONV_K: usize = 16;

/// Neighbourhood data shared by all SetConv layers of one cloud.
#[derive(Clone, Debug)]
pub struct PointContext {
    pub graph: NeighborGraph,
    /// (N·k)×3 relative offsets, point-major.
    pub offsets: Tensor2,
    /// (N·k)×N row gather of neighbour features.
    pub gather: Arc<SparseRows>,
}

impl PointContext {
    pub fn new(cloud: &PointCloud, k: usize) -> Result<Self> {
        let graph = knn(cloud, k)?;
        Ok(Self::from_graph(cloud, graph))
    }

    pub fn from_graph(cloud: &PointCloud, graph: NeighborGraph) -> Self {
        let k = graph.k();
        let n = cloud.len();
        let mut offsets = Tensor2::zeros(n * k, 3);
        for i in 0..n {
            let pi = cloud.point(i);
            for (kk, &j) in graph.neighbors(i).iter().enumerate() {
                offsets
                    .row_mut(i * k + kk)
                    .copy_from_slice(&sub(cloud.point(j), pi));
            }
        }
        let gather = Arc::new(SparseRows::gather(n, graph.flat()));
        Self {
            graph,
            offsets,
            gather,
        }
    }

    pub fn k(&self) -> usize {
        self.graph.k()
    }
}

/// Builds the (N·k)×(3 + C) MLP input rows.
pub fn set_conv_input(ctx: &PointContext, features: &Tensor2) -> Result<Tensor2> {
    let gathered = ctx.gather.apply(features)?;
    Tensor2::concat_cols(&[&ctx.offsets, &gathered])
}

pub fn set_conv_tape(tape: &mut Tape, ctx: &PointContext, features: Var, mlp: &Mlp<Var>) -> Result<Var> {
    let offsets = tape.leaf(ctx.offsets.clone());
    let gathered = tape.sparse(features, ctx.gather.clone())?;
    let rows = tape.concat_cols(&[offsets, gathered])?;
    let h = mlp_forward_tape(tape, rows, mlp)?;
    tape.group_max(h, ctx.k())
}

/// One SetConv layer; output keeps all N points.
pub fn set_conv(
    cloud: &PointCloud,
    features: &Tensor2,
    params: &MlpParams,
    graph: &NeighborGraph,
) -> Result<Tensor2> {
    if features.rows() != cloud.len() {
        return Err(Error::shape(format!(
            "set_conv: {} feature rows for {} points",
            features.rows(),
            cloud.len()
        )));
    }
    if params.in_features() != 3 + features.cols() {
        return Err(Error::shape(format!(
            "set_conv MLP takes {} inputs, offsets + features give {}",
            params.in_features(),
            3 + features.cols()
        )));
    }
    let ctx = PointContext::from_graph(cloud, graph.clone());
    let mut tape = Tape::new();
    let x = tape.leaf(features.clone());
    let bound = params.map(&mut |t| tape.leaf(t.clone()));
    let y = set_conv_tape(&mut tape, &ctx, x, &bound)?;
    Ok(tape.value(y).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Linear;

    #[test]
    fn duplicated_self_gives_zero_offsets() {
        let c = PointCloud::new(vec![[1.0, 2.0, 3.0], [1.0, 2.0, 3.0], [5.0, 5.0, 5.0], [5.0, 5.0, 5.0]])
            .unwrap();
        let ctx = PointContext::new(&c, 1).unwrap();
        let rows = set_conv_input(&ctx, &Tensor2::from_fn(4, 2, |i, j| (i + j) as f64)).unwrap();
        for r in rows.iter_rows() {
            assert_eq!(&r[..3], &[0.0, 0.0, 0.0]);
        }
    }

    #[test]
    fn feature_selector_reduces_to_neighbourhood_max() {
        let c = PointCloud::new((0..6).map(|i| [i as f64, (i % 2) as f64, 0.0]).collect()).unwrap();
        let f = Tensor2::from_fn(6, 2, |i, j| ((i * 5 + j * 3) % 7) as f64);
        // weight picks the feature block and ignores offsets
        let w = Tensor2::from_fn(2, 5, |i, j| if j == i + 3 { 1.0 } else { 0.0 });
        let mlp = MlpParams::new(vec![Linear { weight: w, bias: None }], 0.1, false).unwrap();
        let g = knn(&c, 2).unwrap();
        let y = set_conv(&c, &f, &mlp, &g).unwrap();
        for i in 0..6 {
            for ch in 0..2 {
                let m = g
                    .neighbors(i)
                    .iter()
                    .map(|&j| f.get(j, ch))
                    .fold(f64::NEG_INFINITY, f64::max);
                assert_eq!(y.get(i, ch), m);
            }
        }
    }

    #[test]
    fn width_mismatch_rejected() {
        let c = PointCloud::new((0..4).map(|i| [i as f64, 0.0, 0.0]).collect()).unwrap();
        let mlp = MlpParams::new(
            vec![Linear {
                weight: Tensor2::zeros(2, 4),
                bias: None,
            }],
            0.1,
            false,
        )
        .unwrap();
        let g = knn(&c, 1).unwrap();
        assert!(set_conv(&c, &Tensor2::zeros(4, 2), &mlp, &g).is_err());
    }
}
