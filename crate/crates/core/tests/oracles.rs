mod common;

use std::sync::Arc;

use common::*;
use pvflow::autodiff::Tape;
use pvflow::correspondence::{sinkhorn, CostMatrix};
use pvflow::geometry::{azimuthal_order, knn, Point3};
use pvflow::metrics;
use pvflow::voxel::{
    attention_pass, devoxelize, normalize_cloud, voxel_stage, voxelize, window_partition,
    AttentionParams, VoxelContext,
};
use pvflow::{PointCloud, Tensor2};
use rand::Rng;

fn attention_params(r: &mut rand_chacha::ChaCha8Rng, d: usize, heads: usize) -> AttentionParams<Tensor2> {
    AttentionParams {
        wq: random_tensor(r, d, d, 0.7),
        wk: random_tensor(r, d, d, 0.7),
        wv: random_tensor(r, d, d, 0.7),
        wo: random_tensor(r, d, d, 0.7),
        pos: random_tensor(r, d, 3, 0.7),
        heads,
    }
}

#[test]
fn knn_64_points_k8_matches_brute_force() {
    let c = random_cloud(64, 64);
    let g = knn(&c, 8).unwrap();
    let expect = brute_knn(c.positions(), 8);
    for i in 0..64 {
        assert_eq!(g.neighbors(i), expect[i].as_slice());
    }
}

#[test]
fn knn_matches_brute_force_for_every_k() {
    for n in [2usize, 5, 31, 100] {
        let c = random_cloud(7 * n as u64, n);
        for k in [1, n / 2, n - 1] {
            let k = k.max(1);
            let g = knn(&c, k).unwrap();
            let expect = brute_knn(c.positions(), k);
            for i in 0..n {
                assert_eq!(g.neighbors(i), expect[i].as_slice(), "n={n} k={k} i={i}");
            }
        }
    }
}

#[test]
fn knn_ties_on_a_lattice_match_brute_force() {
    let c = PointCloud::new((0..60).map(|i| [(i % 5) as f64, ((i / 5) % 4) as f64, (i / 20) as f64]).collect())
        .unwrap();
    let g = knn(&c, 10).unwrap();
    let expect = brute_knn(c.positions(), 10);
    for i in 0..60 {
        assert_eq!(g.neighbors(i), expect[i].as_slice());
    }
}

#[test]
fn azimuthal_order_matches_atan2_sort() {
    let mut r = rng(11);
    let center = [0.3, -0.2, 0.1];
    let nb: Vec<Point3> = (0..16).map(|_| [r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)]).collect();
    let mut expect: Vec<usize> = (0..16).collect();
    let az = |p: Point3| (p[1] - center[1]).atan2(p[0] - center[0]);
    expect.sort_by(|&a, &b| az(nb[a]).partial_cmp(&az(nb[b])).unwrap());
    assert_eq!(azimuthal_order(center, &nb), expect);
}

#[test]
fn normalization_matches_formula() {
    let c = random_cloud(3, 50).translated([5.0, -2.0, 1.0]);
    let nc = normalize_cloud(&c);
    let mu: Point3 = (0..3)
        .map(|a| c.positions().iter().map(|p| p[a]).sum::<f64>() / 50.0)
        .collect::<Vec<_>>()
        .try_into()
        .unwrap();
    let scale = c
        .positions()
        .iter()
        .map(|p| ((p[0] - mu[0]).powi(2) + (p[1] - mu[1]).powi(2) + (p[2] - mu[2]).powi(2)).sqrt())
        .fold(0.0, f64::max);
    for (p, u) in c.positions().iter().zip(&nc.coords) {
        for a in 0..3 {
            assert!((u[a] - ((p[a] - mu[a]) / scale + 1.0) / 2.0).abs() < 1e-12);
        }
    }
}

#[test]
fn voxel_means_and_counts_match_brute_force() {
    let c = random_cloud(12, 400);
    let nc = normalize_cloud(&c);
    let f = random_tensor(&mut rng(13), 400, 3, 1.0);
    for res in [1, 3, 8, 16] {
        let grid = voxelize(&nc, &f, res).unwrap();
        let (cells, own) = occupied_cells(&nc.coords, res);
        assert_eq!(grid.len(), cells.len());
        assert!(grid.features.max_abs_diff(&mean_pool(&own, cells.len(), &f)) <= 1e-12);
        let counted: usize = (0..grid.len()).map(|s| grid.layout.count(s)).sum();
        assert_eq!(counted, 400);
    }
}

#[test]
fn windows_partition_the_occupied_voxels() {
    let c = random_cloud(14, 500);
    let ctx = VoxelContext::new(&c, 8, 4).unwrap();
    for shifted in [false, true] {
        let windows = window_partition(&ctx.layout, 4, shifted).unwrap();
        let mut seen = vec![0; ctx.layout.len()];
        for w in &windows {
            for &s in &w.voxels {
                seen[s] += 1;
            }
        }
        assert!(seen.iter().all(|&n| n == 1));
    }
}

#[test]
fn window_attention_matches_dense_masked_attention() {
    let mut r = rng(15);
    for (res, w, heads, d) in [(4, 2, 1, 4), (8, 4, 2, 8), (8, 3, 4, 8)] {
        let c = random_cloud(16 + res as u64, 250);
        let ctx = VoxelContext::new(&c, res, w).unwrap();
        let (cells, _) = occupied_cells(&ctx.normalized.coords, res);
        let x = random_tensor(&mut r, cells.len(), d, 1.0);
        let p = attention_params(&mut r, d, heads);
        let y = attention_pass(&x, &ctx.positions, &ctx.windows, &p).unwrap();
        let dense = dense_masked_attention(&x, &window_pos(&cells, w, false), &window_ids(&cells, w, false), &p);
        assert!(y.max_abs_diff(&dense) <= 1e-10);
        let y = attention_pass(&x, &ctx.shifted_positions, &ctx.shifted_windows, &p).unwrap();
        let dense = dense_masked_attention(&x, &window_pos(&cells, w, true), &window_ids(&cells, w, true), &p);
        assert!(y.max_abs_diff(&dense) <= 1e-10);
    }
}

#[test]
fn voxel_stage_matches_dense_composition() {
    let mut r = rng(17);
    let (res, w, d) = (8, 4, 4);
    let c = random_cloud(18, 300);
    let ctx = VoxelContext::new(&c, res, w).unwrap();
    let f = random_tensor(&mut r, 300, d, 1.0);
    let p = attention_params(&mut r, d, 2);
    let y = voxel_stage(&ctx, &f, &p).unwrap();

    let coords = &ctx.normalized.coords;
    let (cells, own) = occupied_cells(coords, res);
    let pooled = mean_pool(&own, cells.len(), &f);
    let a = dense_masked_attention(&pooled, &window_pos(&cells, w, false), &window_ids(&cells, w, false), &p);
    let b = dense_masked_attention(&a, &window_pos(&cells, w, true), &window_ids(&cells, w, true), &p);
    let expect = trilinear_direct(coords, res, &cells, &own, &b);
    assert!(y.max_abs_diff(&expect) <= 1e-9);
}

#[test]
fn sparse_and_dense_attention_agree_on_a_full_grid() {
    // every cell occupied: masks are the only thing that differs
    let pts: Vec<Point3> = (0..64)
        .map(|i| [(i % 4) as f64 + 0.5, ((i / 4) % 4) as f64 + 0.5, (i / 16) as f64 + 0.5])
        .collect();
    let c = PointCloud::new(pts).unwrap();
    let ctx = VoxelContext::new(&c, 4, 2).unwrap();
    let mut r = rng(19);
    let (cells, _) = occupied_cells(&ctx.normalized.coords, 4);
    let x = random_tensor(&mut r, cells.len(), 4, 1.0);
    let p = attention_params(&mut r, 4, 2);
    let y = attention_pass(&x, &ctx.positions, &ctx.windows, &p).unwrap();
    let dense = dense_masked_attention(&x, &window_pos(&cells, 2, false), &window_ids(&cells, 2, false), &p);
    assert!(y.max_abs_diff(&dense) <= 1e-10);
}

#[test]
fn devoxelization_matches_tent_formula() {
    let mut r = rng(20);
    for res in [1, 2, 5, 16] {
        let c = random_cloud(21 + res as u64, 150);
        let nc = normalize_cloud(&c);
        let f = random_tensor(&mut r, 150, 4, 1.0);
        let grid = voxelize(&nc, &f, res).unwrap();
        let (cells, own) = occupied_cells(&nc.coords, res);
        let y = devoxelize(&grid, &nc).unwrap();
        assert!(y.max_abs_diff(&trilinear_direct(&nc.coords, res, &cells, &own, &grid.features)) <= 1e-9);
    }
}

#[test]
fn sinkhorn_matches_double_double_reference() {
    let mut r = rng(22);
    for (n, m) in [(3, 3), (5, 9), (32, 32)] {
        let cost = Tensor2::from_fn(n, m, |_, _| r.gen_range(0.0..2.0));
        let cm = CostMatrix::new(cost.clone()).unwrap();
        for iters in [1, 10, 200] {
            let plan = sinkhorn(&cm, 0.1, iters, 1e-300).unwrap();
            assert_eq!(plan.iterations, iters);
            assert!(max_abs_diff(&plan.values, &sinkhorn_dd(&cost, 0.1, iters)) <= 1e-6);
        }
    }
}

#[test]
fn sinkhorn_converged_marginals() {
    let mut r = rng(23);
    let cost = Tensor2::from_fn(20, 20, |_, _| r.gen_range(0.0..2.0));
    let plan = sinkhorn(&CostMatrix::new(cost).unwrap(), 0.03, 10_000, 1e-9).unwrap();
    assert!(plan.converged);
    assert!(plan.marginal_error() <= 1e-6);
}

#[test]
fn sinkhorn_is_homogeneous() {
    let mut r = rng(24);
    let cost = Tensor2::from_fn(12, 12, |_, _| r.gen_range(0.0..2.0));
    let a = sinkhorn(&CostMatrix::new(cost.clone()).unwrap(), 0.2, 300, 1e-300).unwrap();
    let b = sinkhorn(&CostMatrix::new(cost.scale(3.5)).unwrap(), 0.7, 300, 1e-300).unwrap();
    assert!(a.values.max_abs_diff(&b.values) <= 1e-9);
}

#[test]
fn tape_softmax_and_sparse_stay_normalized() {
    let mut r = rng(25);
    let mut tape = Tape::new();
    let x = tape.leaf(random_tensor(&mut r, 20, 9, 1e6));
    let s = tape.softmax_rows(x).unwrap();
    for v in tape.value(s).row_sums() {
        assert!((v - 1.0).abs() <= 1e-12);
    }
    assert!(tape.value(s).is_finite());
    let ctx = VoxelContext::new(&random_cloud(26, 80), 4, 2).unwrap();
    let f = tape.leaf(Tensor2::filled(80, 2, 1.0));
    let pooled = tape.sparse(f, ctx.pool.clone()).unwrap();
    let back = tape.sparse(pooled, Arc::clone(&ctx.unpool)).unwrap();
    // constants survive pooling and interpolation
    assert!(tape.value(back).data().iter().all(|&v| (v - 1.0).abs() < 1e-12));
}

#[test]
fn metrics_match_direct_formulas() {
    let mut r = rng(27);
    let gt: Vec<Point3> = (0..100).map(|_| [r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)]).collect();
    let pred: Vec<Point3> = gt
        .iter()
        .map(|g| {
            let s = r.gen_range(0.0..0.5);
            [g[0] + r.gen_range(-s..s), g[1] + r.gen_range(-s..s), g[2]]
        })
        .collect();
    let (p, g) = (flow(pred.clone()), flow(gt.clone()));
    assert!((metrics::epe(&p, &g).unwrap() - epe_direct(&pred, &gt)).abs() <= 1e-12);
    assert_eq!(metrics::accuracy_strict(&p, &g).unwrap(), as_direct(&pred, &gt));
    assert_eq!(metrics::accuracy_relaxed(&p, &g).unwrap(), ar_direct(&pred, &gt));
    assert_eq!(metrics::outliers(&p, &g).unwrap(), out_direct(&pred, &gt));
}

#[test]
fn metric_hand_cases() {
    let unit = vec![[1.0, 0.0, 0.0]; 10];
    let half: Vec<Point3> = (0..10).map(|i| if i % 2 == 0 { [1.2, 0.0, 0.0] } else { [1.0, 0.0, 0.0] }).collect();
    assert_eq!(metrics::accuracy_strict(&flow(half.clone()), &flow(unit.clone())).unwrap(), 50.0);
    let big = vec![[0.0, 30.0, 0.0]; 4];
    let near: Vec<Point3> = big.iter().map(|g| [0.04, g[1], 0.0]).collect();
    assert_eq!(metrics::accuracy_strict(&flow(near), &flow(big)).unwrap(), 100.0);
    let far: Vec<Point3> = unit.iter().map(|g| [g[0] + 1.0, 0.0, 0.0]).collect();
    assert_eq!(metrics::outliers(&flow(far), &flow(unit.clone())).unwrap(), 100.0);
    assert!(metrics::epe(&flow(unit.clone()), &flow(vec![[1.0, 0.0, 0.0]; 9])).is_err());
}
