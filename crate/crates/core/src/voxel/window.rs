use std::collections::BTreeMap;

use super::grid::VoxelLayout;
use crate::error::{Error, Result};
use crate::tensor::Tensor2;

/// Occupied voxels sharing one attention window.
#[derive(Clone, Debug, PartialEq)]
pub struct Window {
    pub id: [i64; 3],
    /// Voxel slots in ascending key order.
    pub voxels: Vec<usize>,
}

/// Translation applied before bucketing in the shifted pass.
pub fn shift_offset(window: usize, shifted: bool) -> i64 {
    if shifted {
        (window / 2) as i64
    } else {
        0
    }
}

/// Splits occupied voxels into cubic windows of `window` cells per axis.
///
/// The shifted pass translates keys by `⌊W/2⌋` before bucketing, so boundary
/// windows can be partial; there is no cyclic wrap.
pub fn window_partition(layout: &VoxelLayout, window: usize, shifted: bool) -> Result<Vec<Window>> {
    if window == 0 || window > layout.resolution {
        return Err(Error::Config(format!(
            "window size {window} outside 1..={}",
            layout.resolution
        )));
    }
    let s = shift_offset(window, shifted);
    let w = window as i64;
    let mut buckets: BTreeMap<[i64; 3], Vec<usize>> = BTreeMap::new();
    for (slot, key) in layout.keys.iter().enumerate() {
        let id = key.0.map(|c| (c as i64 + s).div_euclid(w));
        buckets.entry(id).or_default().push(slot);
    }
    Ok(buckets
        .into_iter()
        .map(|(id, voxels)| Window { id, voxels })
        .collect())
}

/// M×3 positional input: each voxel key relative to its window centre,
/// divided by the window size.
pub fn window_positions(layout: &VoxelLayout, windows: &[Window], window: usize, shifted: bool) -> Tensor2 {
    let s = shift_offset(window, shifted) as f64;
    let w = window as f64;
    let half = (w - 1.0) / 2.0;
    let mut pos = Tensor2::zeros(layout.len(), 3);
    for win in windows {
        for &slot in &win.voxels {
            let key = layout.keys[slot].0;
            for a in 0..3 {
                let origin = win.id[a] as f64 * w - s;
                pos.set(slot, a, (key[a] as f64 - origin - half) / w);
            }
        }
    }
    pos
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::voxel::NormalizedCloud;

    fn layout_for(keys: &[[u32; 3]], r: usize) -> VoxelLayout {
        let coords = keys
            .iter()
            .map(|k| k.map(|c| (c as f64 + 0.5) / r as f64))
            .collect();
        let nc = NormalizedCloud {
            coords,
            scale: 1.0,
            centroid: [0.0; 3],
        };
        VoxelLayout::build(&nc, r).unwrap()
    }

    fn same_window(ws: &[Window], a: usize, b: usize) -> bool {
        ws.iter().any(|w| w.voxels.contains(&a) && w.voxels.contains(&b))
    }

    #[test]
    fn unshifted_examples() {
        let l = layout_for(&[[0, 0, 0], [1, 1, 1], [2, 0, 0]], 4);
        let ws = window_partition(&l, 2, false).unwrap();
        assert!(same_window(&ws, 0, 1));
        assert!(!same_window(&ws, 0, 2));
        let all = window_partition(&l, 4, false).unwrap();
        assert_eq!(all.len(), 1);
        assert_eq!(all[0].voxels, vec![0, 1, 2]);
    }

    #[test]
    fn shifted_example() {
        let l = layout_for(&[[1, 1, 1], [2, 2, 2], [0, 0, 0]], 4);
        // slots are key-sorted: [0,0,0]=0, [1,1,1]=1, [2,2,2]=2
        let ws = window_partition(&l, 2, true).unwrap();
        assert!(same_window(&ws, 1, 2));
        assert!(!same_window(&ws, 0, 1));
    }

    #[test]
    fn rejects_oversized_window() {
        let l = layout_for(&[[0, 0, 0]], 4);
        assert!(window_partition(&l, 5, false).is_err());
        assert!(window_partition(&l, 0, false).is_err());
    }

    #[test]
    fn positions_are_centred() {
        let l = layout_for(&[[0, 0, 0], [1, 1, 1]], 4);
        let ws = window_partition(&l, 2, false).unwrap();
        let p = window_positions(&l, &ws, 2, false);
        assert_eq!(p.row(0), &[-0.25, -0.25, -0.25]);
        assert_eq!(p.row(1), &[0.25, 0.25, 0.25]);
    }
}
