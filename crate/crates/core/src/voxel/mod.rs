//! Voxel branch: unit-cube normalization, sparse hashed voxelization,
//! windowed attention with a shifted second pass, and trilinear
//! devoxelization.

mod attention;
mod devoxelize;
mod grid;
mod normalize;
mod stage;
mod window;

pub use attention::{
    attention_pass, attention_pass_tape, sparse_grid_attention, window_attention_tape,
    AttentionParams,
};
pub use devoxelize::{devoxelize, devoxelize_map, trilinear_weights};
pub use grid::{
    voxel_key, voxelize, SparseVoxelGrid, VoxelHashTable, VoxelKey, VoxelLayout, AXIS_BITS,
    MAX_RESOLUTION,
};
pub use normalize::{normalize_cloud, NormalizedCloud};
pub use stage::{voxel_stage, voxel_stage_tape, VoxelContext};
pub use window::{shift_offset, window_partition, window_positions, Window};
