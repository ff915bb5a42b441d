use std::sync::Arc;

use super::attention::{attention_pass_tape, AttentionParams};
use super::devoxelize::devoxelize_map;
use super::grid::VoxelLayout;
use super::normalize::{normalize_cloud, NormalizedCloud};
use super::window::{window_partition, window_positions, Window};
use crate::autodiff::{SparseRows, Tape, Var};
use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::tensor::Tensor2;

/// Everything about a cloud's voxelization that does not depend on features.
/// Built once per cloud and reused by every fusion layer.
#[derive(Clone, Debug)]
pub struct VoxelContext {
    pub normalized: NormalizedCloud,
    pub layout: VoxelLayout,
    pub window: usize,
    pub pool: Arc<SparseRows>,
    pub unpool: Arc<SparseRows>,
    pub windows: Arc<Vec<Window>>,
    pub shifted_windows: Arc<Vec<Window>>,
    pub positions: Tensor2,
    pub shifted_positions: Tensor2,
}

impl VoxelContext {
    pub fn new(cloud: &PointCloud, resolution: usize, window: usize) -> Result<Self> {
        Self::from_normalized(normalize_cloud(cloud), resolution, window)
    }

    pub fn from_normalized(nc: NormalizedCloud, resolution: usize, window: usize) -> Result<Self> {
        let layout = VoxelLayout::build(&nc, resolution)?;
        let windows = window_partition(&layout, window, false)?;
        let shifted = window_partition(&layout, window, true)?;
        let positions = window_positions(&layout, &windows, window, false);
        let shifted_positions = window_positions(&layout, &shifted, window, true);
        let pool = Arc::new(layout.mean_map());
        let unpool = Arc::new(devoxelize_map(&layout, &nc)?);
        Ok(Self {
            normalized: nc,
            layout,
            window,
            pool,
            unpool,
            windows: Arc::new(windows),
            shifted_windows: Arc::new(shifted),
            positions,
            shifted_positions,
        })
    }
}

/// voxelize → unshifted attention → shifted attention → devoxelize.
pub fn voxel_stage_tape(
    tape: &mut Tape,
    ctx: &VoxelContext,
    features: Var,
    attn: &AttentionParams<Var>,
) -> Result<Var> {
    let (rows, _) = tape.shape(features);
    if rows != ctx.normalized.len() {
        return Err(Error::shape(format!(
            "voxel stage: {rows} feature rows for {} points",
            ctx.normalized.len()
        )));
    }
    let pooled = tape.sparse(features, ctx.pool.clone())?;
    let pos = tape.leaf(ctx.positions.clone());
    let a = attention_pass_tape(tape, pooled, pos, ctx.windows.clone(), attn)?;
    let spos = tape.leaf(ctx.shifted_positions.clone());
    let b = attention_pass_tape(tape, a, spos, ctx.shifted_windows.clone(), attn)?;
    tape.sparse(b, ctx.unpool.clone())
}

pub fn voxel_stage(
    ctx: &VoxelContext,
    features: &Tensor2,
    attn: &AttentionParams<Tensor2>,
) -> Result<Tensor2> {
    attn.validate()?;
    let mut tape = Tape::new();
    let x = tape.leaf(features.clone());
    let bound = attn.map(&mut |t| tape.leaf(t.clone()));
    let y = voxel_stage_tape(&mut tape, ctx, x, &bound)?;
    Ok(tape.value(y).clone())
}
