//! Umbrella surface features.
//!
//! Each point's K neighbours are ordered counterclockwise in the xy-plane,
//! joined to the centre by direction vectors, and consecutive directions are
//! crossed (cyclically) to get K normals. Every normal is paired with the
//! polar coordinates of its direction vector, and the resulting K×6 rows go
//! through a shared MLP followed by a max over the K rows.

use std::f64::consts::PI;

use rayon::prelude::*;

use super::cloud::{cross, norm_sq, sub, Point3, PointCloud};
use super::knn::{knn, NeighborGraph};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{mlp_forward, Mlp, MlpParams};
use crate::tensor::Tensor2;

/// Squared-norm threshold below which a cross product counts as degenerate.
pub const DEGENERATE_EPS: f64 = 1e-12;

/// Per-pair input width: unit normal (3) ⊕ neighbour polar coordinates (3).
pub const PAIR_WIDTH: usize = 6;

pub const DEFAULT_UMBRELLA_K: usize = 9;

/// `(r, θ, φ)` with `θ ∈ [−π/2, π/2]` and `φ ∈ (−π, π]`.
pub fn cartesian_to_polar(p: Point3) -> Point3 {
    let [x, y, z] = p;
    let r = (x * x + y * y + z * z).sqrt();
    let rho = (x * x + y * y).sqrt();
    let theta = if r == 0.0 { 0.0 } else { z.atan2(rho) };
    let phi = if x == 0.0 && y == 0.0 {
        0.0
    } else {
        wrap_azimuth(y.atan2(x))
    };
    [r, theta, phi]
}

pub fn polar_to_cartesian([r, theta, phi]: Point3) -> Point3 {
    [
        r * theta.cos() * phi.cos(),
        r * theta.cos() * phi.sin(),
        r * theta.sin(),
    ]
}

/// atan2 yields −π for a signed-zero y; fold it onto π.
fn wrap_azimuth(a: f64) -> f64 {
    if a <= -PI {
        a + 2.0 * PI
    } else {
        a
    }
}

fn azimuth(center: Point3, p: Point3) -> f64 {
    let dx = p[0] - center[0];
    let dy = p[1] - center[1];
    if dx == 0.0 && dy == 0.0 {
        0.0
    } else {
        wrap_azimuth(dy.atan2(dx))
    }
}

/// Counterclockwise order of `neighbors` around `center` in the xy-plane.
///
/// Sorted by azimuth, then by xy radial distance, then by input position.
pub fn azimuthal_order(center: Point3, neighbors: &[Point3]) -> Vec<usize> {
    let keys: Vec<(f64, f64)> = neighbors
        .iter()
        .map(|&p| {
            let dx = p[0] - center[0];
            let dy = p[1] - center[1];
            (azimuth(center, p), dx * dx + dy * dy)
        })
        .collect();
    let mut order: Vec<usize> = (0..neighbors.len()).collect();
    order.sort_by(|&a, &b| {
        keys[a]
            .0
            .total_cmp(&keys[b].0)
            .then(keys[a].1.total_cmp(&keys[b].1))
            .then(a.cmp(&b))
    });
    order
}

/// `d_k = p_k − p`
pub fn direction_vectors(center: Point3, ordered_neighbors: &[Point3]) -> Vec<Point3> {
    ordered_neighbors.iter().map(|&q| sub(q, center)).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct UmbrellaNormals {
    /// `normalize(d_k × d_{k+1})` with cyclic wrap; zero when degenerate.
    pub normals: Vec<Point3>,
    /// Mean of the unit normals, renormalized; zero if it vanishes.
    pub averaged: Point3,
    /// Every pair was degenerate.
    pub degenerate: bool,
}

pub fn umbrella_normals(directions: &[Point3]) -> Result<UmbrellaNormals> {
    let k = directions.len();
    if k < 2 {
        return Err(Error::shape(format!("an umbrella needs ≥ 2 directions, got {k}")));
    }
    let mut normals = Vec::with_capacity(k);
    let mut sum = [0.0; 3];
    let mut any = false;
    for i in 0..k {
        let v = cross(directions[i], directions[(i + 1) % k]);
        let n2 = norm_sq(v);
        let unit = if n2 > DEGENERATE_EPS {
            any = true;
            let n = n2.sqrt();
            [v[0] / n, v[1] / n, v[2] / n]
        } else {
            [0.0; 3]
        };
        for a in 0..3 {
            sum[a] += unit[a];
        }
        normals.push(unit);
    }
    let mean = sum.map(|v| v / k as f64);
    let m2 = norm_sq(mean);
    let averaged = if m2 > DEGENERATE_EPS {
        let m = m2.sqrt();
        mean.map(|v| v / m)
    } else {
        [0.0; 3]
    };
    Ok(UmbrellaNormals {
        normals,
        averaged,
        degenerate: !any,
    })
}

/// Geometric half of the feature extractor, before any learned weights.
#[derive(Clone, Debug)]
pub struct UmbrellaFeatures {
    pub k: usize,
    /// N×3 averaged unit normals (zero for degenerate umbrellas).
    pub normals: Tensor2,
    /// N×3 polar coordinates of each point relative to the cloud centroid.
    pub polar: Tensor2,
    /// (N·K)×6 per-pair rows `[unit normal ⊕ polar(d_k)]`, point-major.
    pub raw: Tensor2,
    pub degenerate: Vec<bool>,
}

pub fn umbrella_features(cloud: &PointCloud, k: usize) -> Result<UmbrellaFeatures> {
    let graph = knn(cloud, k)?;
    umbrella_features_with_graph(cloud, &graph)
}

pub fn umbrella_features_with_graph(
    cloud: &PointCloud,
    graph: &NeighborGraph,
) -> Result<UmbrellaFeatures> {
    let n = cloud.len();
    let k = graph.k();
    let pts = cloud.positions();
    let per_point: Vec<Result<(UmbrellaNormals, Vec<Point3>)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let nb: Vec<Point3> = graph.neighbors(i).iter().map(|&j| pts[j]).collect();
            let order = azimuthal_order(pts[i], &nb);
            let ordered: Vec<Point3> = order.iter().map(|&o| nb[o]).collect();
            let dirs = direction_vectors(pts[i], &ordered);
            let un = umbrella_normals(&dirs)?;
            Ok((un, dirs))
        })
        .collect();

    let centroid = cloud.centroid();
    let mut normals = Tensor2::zeros(n, 3);
    let mut polar = Tensor2::zeros(n, 3);
    let mut raw = Tensor2::zeros(n * k, PAIR_WIDTH);
    let mut degenerate = Vec::with_capacity(n);
    for (i, item) in per_point.into_iter().enumerate() {
        let (un, dirs) = item?;
        normals.row_mut(i).copy_from_slice(&un.averaged);
        polar
            .row_mut(i)
            .copy_from_slice(&cartesian_to_polar(sub(pts[i], centroid)));
        for (kk, (v, d)) in un.normals.iter().zip(&dirs).enumerate() {
            let row = raw.row_mut(i * k + kk);
            row[..3].copy_from_slice(v);
            row[3..].copy_from_slice(&cartesian_to_polar(*d));
        }
        degenerate.push(un.degenerate);
    }
    Ok(UmbrellaFeatures {
        k,
        normals,
        polar,
        raw,
        degenerate,
    })
}

/// N×D_s learned surface embedding.
#[derive(Clone, Debug, PartialEq)]
pub struct SurfaceFeatures(pub Tensor2);

impl SurfaceFeatures {
    pub fn as_tensor(&self) -> &Tensor2 {
        &self.0
    }
}

fn check_input_width(width: usize) -> Result<()> {
    if width != PAIR_WIDTH {
        return Err(Error::shape(format!(
            "surface MLP must take {PAIR_WIDTH} inputs, has {width}"
        )));
    }
    Ok(())
}

pub fn usfe(cloud: &PointCloud, k: usize, weights: &MlpParams) -> Result<SurfaceFeatures> {
    check_input_width(weights.in_features())?;
    let umb = umbrella_features(cloud, k)?;
    usfe_from_umbrella(&umb, weights)
}

pub fn usfe_from_umbrella(umb: &UmbrellaFeatures, weights: &MlpParams) -> Result<SurfaceFeatures> {
    check_input_width(weights.in_features())?;
    let h = mlp_forward(&umb.raw, weights)?;
    let (pooled, _) = crate::autodiff::group_max_forward(&h, umb.k)?;
    Ok(SurfaceFeatures(pooled))
}

/// Tape-recorded surface embedding, N×D_s.
pub fn usfe_tape(tape: &mut Tape, umb: &UmbrellaFeatures, weights: &Mlp<Var>) -> Result<Var> {
    let x = tape.leaf(umb.raw.clone());
    let h = crate::nn::mlp_forward_tape(tape, x, weights)?;
    tape.group_max(h, umb.k)
}
