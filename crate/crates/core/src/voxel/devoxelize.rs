//! Trilinear projection of voxel features back onto points.

use super::grid::{SparseVoxelGrid, VoxelKey, VoxelLayout};
use super::normalize::NormalizedCloud;
use crate::autodiff::SparseRows;
use crate::error::{Error, Result};
use crate::tensor::Tensor2;

/// Interpolation weights of one point over the 8 surrounding voxel centres.
/// Corners outside the grid or unoccupied are dropped and the rest
/// renormalized; if nothing remains the point takes its own voxel.
pub fn trilinear_weights(layout: &VoxelLayout, coord: [f64; 3], own_slot: usize) -> Vec<(usize, f64)> {
    let r = layout.resolution as f64;
    let mut base = [0i64; 3];
    let mut frac = [0.0; 3];
    for a in 0..3 {
        let s = coord[a] * r - 0.5;
        let f = s.floor();
        base[a] = f as i64;
        frac[a] = s - f;
    }
    let mut out: Vec<(usize, f64)> = Vec::with_capacity(8);
    let mut total = 0.0;
    for corner in 0..8 {
        let mut key = [0u32; 3];
        let mut w = 1.0;
        let mut inside = true;
        for a in 0..3 {
            let up = (corner >> a) & 1 == 1;
            let idx = base[a] + up as i64;
            if idx < 0 || idx >= layout.resolution as i64 {
                inside = false;
                break;
            }
            key[a] = idx as u32;
            w *= if up { frac[a] } else { 1.0 - frac[a] };
        }
        if !inside || w <= 0.0 {
            continue;
        }
        if let Some(slot) = layout.slot(VoxelKey(key)) {
            out.push((slot, w));
            total += w;
        }
    }
    if total <= 0.0 {
        return vec![(own_slot, 1.0)];
    }
    for e in &mut out {
        e.1 /= total;
    }
    out
}

/// N×M interpolation map for every point of `nc`.
pub fn devoxelize_map(layout: &VoxelLayout, nc: &NormalizedCloud) -> Result<SparseRows> {
    if layout.point_voxel.len() != nc.len() {
        return Err(Error::shape("devoxelize: layout was built for a different cloud"));
    }
    let rows = nc
        .coords
        .iter()
        .zip(&layout.point_voxel)
        .map(|(&c, &own)| trilinear_weights(layout, c, own))
        .collect();
    Ok(SparseRows::new(layout.len(), rows))
}

pub fn devoxelize(grid: &SparseVoxelGrid, nc: &NormalizedCloud) -> Result<Tensor2> {
    devoxelize_map(&grid.layout, nc)?.apply(&grid.features)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::voxel::voxelize;

    fn nc(coords: Vec<[f64; 3]>) -> NormalizedCloud {
        NormalizedCloud {
            coords,
            scale: 1.0,
            centroid: [0.0; 3],
        }
    }

    #[test]
    fn point_at_isolated_centre_takes_its_voxel() {
        let c = nc(vec![[0.625, 0.625, 0.625]]);
        let f = Tensor2::from_rows(&[[4.0, -1.0]]).unwrap();
        let g = voxelize(&c, &f, 4).unwrap();
        let y = devoxelize(&g, &c).unwrap();
        assert_eq!(y.row(0), &[4.0, -1.0]);
    }

    #[test]
    fn midway_between_two_centres_blends_evenly() {
        // voxel (1,1,1) centre x=0.375, voxel (2,1,1) centre x=0.625
        let c = nc(vec![[0.5, 0.375, 0.375], [0.375, 0.375, 0.375]]);
        let f = Tensor2::from_rows(&[[2.0], [6.0]]).unwrap();
        let g = voxelize(&c, &f, 4).unwrap();
        let map = devoxelize_map(&g.layout, &c).unwrap();
        assert_eq!(map.rows[0].len(), 2);
        for &(_, w) in &map.rows[0] {
            assert!((w - 0.5).abs() < 1e-15);
        }
        let y = devoxelize(&g, &c).unwrap();
        assert!((y.get(0, 0) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn boundary_point_keeps_positive_weight() {
        let c = nc(vec![[1.0, 1.0, 1.0], [0.0, 0.0, 0.0]]);
        let g = voxelize(&c, &Tensor2::from_rows(&[[1.0], [2.0]]).unwrap(), 4).unwrap();
        let map = devoxelize_map(&g.layout, &c).unwrap();
        for row in &map.rows {
            let s: f64 = row.iter().map(|e| e.1).sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }
}
