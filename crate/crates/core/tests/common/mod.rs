//! Independent reference implementations used by the integration tests.
//!
//! Everything here is written from the defining formulas with plain loops
//! and shares no code paths with the library beyond its data types.

#![allow(dead_code)]

use std::collections::HashMap;

use pvflow::geometry::Point3;
use pvflow::voxel::AttentionParams;
use pvflow::{FlowField, FlowStage, PointCloud, Tensor2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `n` points uniform in the unit cube.
pub fn random_cloud(seed: u64, n: usize) -> PointCloud {
    let mut r = rng(seed);
    PointCloud::new((0..n).map(|_| [r.gen(), r.gen(), r.gen()]).collect()).unwrap()
}

pub fn random_tensor(r: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Tensor2 {
    Tensor2::from_fn(rows, cols, |_, _| r.gen_range(-scale..scale))
}

pub fn flow(v: Vec<Point3>) -> FlowField {
    FlowField::new(v, FlowStage::Refined)
}

// ---------------------------------------------------------------- KNN

/// Sorts every other point by (distance, index) and keeps the first `k`.
pub fn brute_knn(points: &[Point3], k: usize) -> Vec<Vec<usize>> {
    (0..points.len())
        .map(|i| {
            let mut d: Vec<(f64, usize)> = (0..points.len())
                .filter(|&j| j != i)
                .map(|j| {
                    let s: f64 = (0..3).map(|a| (points[i][a] - points[j][a]).powi(2)).sum();
                    (s, j)
                })
                .collect();
            d.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            d.into_iter().take(k).map(|(_, j)| j).collect()
        })
        .collect()
}

// ---------------------------------------------------------------- voxels

/// Integer cell of a unit-cube coordinate at resolution `r`.
pub fn cell(u: Point3, r: usize) -> [i64; 3] {
    u.map(|c| ((c * r as f64).floor() as i64).clamp(0, r as i64 - 1))
}

/// Occupied cells in ascending (x, y, z) order and each point's cell index.
pub fn occupied_cells(coords: &[Point3], r: usize) -> (Vec<[i64; 3]>, Vec<usize>) {
    let mut cells: Vec<[i64; 3]> = coords.iter().map(|&u| cell(u, r)).collect();
    cells.sort();
    cells.dedup();
    let index: HashMap<[i64; 3], usize> = cells.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let own = coords.iter().map(|&u| index[&cell(u, r)]).collect();
    (cells, own)
}

/// Per-cell mean of point features.
pub fn mean_pool(own: &[usize], m: usize, features: &Tensor2) -> Tensor2 {
    let d = features.cols();
    let mut sum = vec![vec![0.0; d]; m];
    let mut count = vec![0usize; m];
    for (i, &c) in own.iter().enumerate() {
        count[c] += 1;
        for j in 0..d {
            sum[c][j] += features.get(i, j);
        }
    }
    Tensor2::from_fn(m, d, |c, j| sum[c][j] / count[c] as f64)
}

/// Trilinear interpolation of cell features at every point, using tent
/// weights `Π_a max(0, 1 − |u_a·r − ½ − c_a|)` over all occupied cells,
/// renormalized; a point with no weight takes its own cell.
pub fn trilinear_direct(
    coords: &[Point3],
    r: usize,
    cells: &[[i64; 3]],
    own: &[usize],
    features: &Tensor2,
) -> Tensor2 {
    let d = features.cols();
    let mut out = Tensor2::zeros(coords.len(), d);
    for (i, u) in coords.iter().enumerate() {
        let g = u.map(|c| c * r as f64 - 0.5);
        let mut acc = vec![0.0; d];
        let mut total = 0.0;
        for (s, c) in cells.iter().enumerate() {
            let w: f64 = (0..3).map(|a| (1.0 - (g[a] - c[a] as f64).abs()).max(0.0)).product();
            if w > 0.0 {
                total += w;
                for j in 0..d {
                    acc[j] += w * features.get(s, j);
                }
            }
        }
        for j in 0..d {
            let v = if total > 0.0 {
                acc[j] / total
            } else {
                features.get(own[i], j)
            };
            out.set(i, j, v);
        }
    }
    out
}

/// Window id of every cell: `⌊(c + shift) / W⌋` per axis.
pub fn window_ids(cells: &[[i64; 3]], w: usize, shifted: bool) -> Vec<[i64; 3]> {
    let s = if shifted { (w / 2) as i64 } else { 0 };
    cells.iter().map(|c| c.map(|x| (x + s).div_euclid(w as i64))).collect()
}

/// Cell position relative to its window centre, in window units.
pub fn window_pos(cells: &[[i64; 3]], w: usize, shifted: bool) -> Tensor2 {
    let s = if shifted { (w / 2) as f64 } else { 0.0 };
    let wf = w as f64;
    let ids = window_ids(cells, w, shifted);
    Tensor2::from_fn(cells.len(), 3, |i, a| {
        let origin = ids[i][a] as f64 * wf - s;
        (cells[i][a] as f64 - origin - (wf - 1.0) / 2.0) / wf
    })
}

fn times_t(x: &Tensor2, w: &Tensor2) -> Vec<Vec<f64>> {
    (0..x.rows())
        .map(|i| {
            (0..w.rows())
                .map(|o| (0..x.cols()).map(|c| x.get(i, c) * w.get(o, c)).sum())
                .collect()
        })
        .collect()
}

/// Full M×M attention with every cross-window score masked to −∞, followed
/// by the output projection and the residual.
pub fn dense_masked_attention(
    x: &Tensor2,
    pos: &Tensor2,
    window: &[[i64; 3]],
    p: &AttentionParams<Tensor2>,
) -> Tensor2 {
    let (m, d) = x.shape();
    let dh = d / p.heads;
    let pe = times_t(pos, &p.pos);
    let mut q = times_t(x, &p.wq);
    let mut k = times_t(x, &p.wk);
    let v = times_t(x, &p.wv);
    for i in 0..m {
        for c in 0..d {
            q[i][c] += pe[i][c];
            k[i][c] += pe[i][c];
        }
    }
    let mut att = vec![vec![0.0; d]; m];
    for h in 0..p.heads {
        let cols = h * dh..(h + 1) * dh;
        for i in 0..m {
            let scores: Vec<f64> = (0..m)
                .map(|j| {
                    if window[i] != window[j] {
                        f64::NEG_INFINITY
                    } else {
                        cols.clone().map(|c| q[i][c] * k[j][c]).sum::<f64>() / (dh as f64).sqrt()
                    }
                })
                .collect();
            let top = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = scores.iter().map(|s| (s - top).exp()).collect();
            let z: f64 = e.iter().sum();
            for c in cols.clone() {
                att[i][c] = (0..m).map(|j| e[j] / z * v[j][c]).sum();
            }
        }
    }
    Tensor2::from_fn(m, d, |i, o| x.get(i, o) + (0..d).map(|c| att[i][c] * p.wo.get(o, c)).sum::<f64>())
}

// ---------------------------------------------------------------- Sinkhorn

/// Double-double number `hi + lo`.
#[derive(Clone, Copy, Debug)]
pub struct Dd {
    pub hi: f64,
    pub lo: f64,
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn quick_two_sum(a: f64, b: f64) -> Dd {
    let s = a + b;
    Dd { hi: s, lo: b - (s - a) }
}

impl Dd {
    pub const ZERO: Dd = Dd { hi: 0.0, lo: 0.0 };

    pub fn from(x: f64) -> Dd {
        Dd { hi: x, lo: 0.0 }
    }

    pub fn add(self, o: Dd) -> Dd {
        let (s, e) = two_sum(self.hi, o.hi);
        quick_two_sum(s, e + self.lo + o.lo)
    }

    pub fn sub(self, o: Dd) -> Dd {
        self.add(Dd { hi: -o.hi, lo: -o.lo })
    }

    pub fn mul(self, o: Dd) -> Dd {
        let p = self.hi * o.hi;
        let e = self.hi.mul_add(o.hi, -p);
        quick_two_sum(p, e + self.hi * o.lo + self.lo * o.hi)
    }

    pub fn div(self, o: Dd) -> Dd {
        let q1 = self.hi / o.hi;
        let r = self.sub(o.mul(Dd::from(q1)));
        let q2 = r.hi / o.hi;
        let r = r.sub(o.mul(Dd::from(q2)));
        let q3 = r.hi / o.hi;
        quick_two_sum(q1, q2).add(Dd::from(q3))
    }

    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }
}

/// Kernel-domain Sinkhorn in double-double arithmetic with uniform
/// marginals: `u = a / (K v)`, then `v = b / (Kᵀ u)`, `iters` times from
/// `v = 1`. Returns the plan `u_i K_ij v_j`.
pub fn sinkhorn_dd(cost: &Tensor2, epsilon: f64, iters: usize) -> Vec<Vec<f64>> {
    let (n, m) = cost.shape();
    let k: Vec<Vec<Dd>> = (0..n)
        .map(|i| (0..m).map(|j| Dd::from((-cost.get(i, j) / epsilon).exp())).collect())
        .collect();
    let a = Dd::from(1.0).div(Dd::from(n as f64));
    let b = Dd::from(1.0).div(Dd::from(m as f64));
    let mut u = vec![Dd::from(1.0); n];
    let mut v = vec![Dd::from(1.0); m];
    for _ in 0..iters {
        for i in 0..n {
            let s = (0..m).fold(Dd::ZERO, |acc, j| acc.add(k[i][j].mul(v[j])));
            u[i] = a.div(s);
        }
        for j in 0..m {
            let s = (0..n).fold(Dd::ZERO, |acc, i| acc.add(k[i][j].mul(u[i])));
            v[j] = b.div(s);
        }
    }
    (0..n)
        .map(|i| (0..m).map(|j| u[i].mul(k[i][j]).mul(v[j]).to_f64()).collect())
        .collect()
}

pub fn max_abs_diff(a: &Tensor2, b: &[Vec<f64>]) -> f64 {
    let mut worst = 0.0f64;
    for (i, row) in b.iter().enumerate() {
        for (j, &x) in row.iter().enumerate() {
            worst = worst.max((a.get(i, j) - x).abs());
        }
    }
    worst
}

// ---------------------------------------------------------------- metrics

pub fn point_error(p: Point3, g: Point3) -> (f64, f64) {
    let e = ((p[0] - g[0]).powi(2) + (p[1] - g[1]).powi(2) + (p[2] - g[2]).powi(2)).sqrt();
    let mag = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt();
    (e, e / mag.max(1e-12))
}

pub fn epe_direct(pred: &[Point3], gt: &[Point3]) -> f64 {
    pred.iter().zip(gt).map(|(&p, &g)| point_error(p, g).0).sum::<f64>() / pred.len() as f64
}

/// Percentage of points satisfying `pred(error, relative_error)`.
pub fn count_pct(pred: &[Point3], gt: &[Point3], test: impl Fn(f64, f64) -> bool) -> f64 {
    let hits = pred
        .iter()
        .zip(gt)
        .filter(|(&p, &g)| {
            let (e, r) = point_error(p, g);
            test(e, r)
        })
        .count();
    100.0 * hits as f64 / pred.len() as f64
}

pub fn as_direct(pred: &[Point3], gt: &[Point3]) -> f64 {
    count_pct(pred, gt, |e, r| e < 0.05 || r < 0.05)
}

pub fn ar_direct(pred: &[Point3], gt: &[Point3]) -> f64 {
    count_pct(pred, gt, |e, r| e < 0.1 || r < 0.1)
}

pub fn out_direct(pred: &[Point3], gt: &[Point3]) -> f64 {
    count_pct(pred, gt, |e, r| e > 0.3 || r > 0.1)
}
