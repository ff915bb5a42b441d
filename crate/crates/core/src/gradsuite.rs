//! Finite-difference checks of every differentiable operation and of the
//! full embed → cost → Sinkhorn → loss chain.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{grad_check, GradCheckOptions, GradCheckReport, SparseRows, Tape, Var};
use crate::correspondence::{self_supervised_loss_tape, LossContext, LossHyper};
use crate::error::Result;
use crate::fusion::{embed_tape, CloudContext};
use crate::geometry::{knn, umbrella_features, usfe_tape, PointCloud};
use crate::io::Config;
use crate::nn::{Linear, Mlp};
use crate::params::{init_weights, PipelineParams};
use crate::point::{set_conv_tape, PointContext};
use crate::tensor::Tensor2;
use crate::voxel::{voxel_stage_tape, window_attention_tape, AttentionParams, VoxelContext};

/// Tolerance for single operations and the encoder.
pub const OP_TOL: f64 = 1e-4;
/// Tolerance for chains through the unrolled transport solver.
pub const SOLVER_TOL: f64 = 1e-3;

fn rand_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Tensor2 {
    Tensor2::from_fn(rows, cols, |_, _| rng.gen_range(-scale..scale))
}

/// Reduces a matrix to a scalar with fixed random weights, so every output
/// entry contributes a distinct gradient.
fn project(tape: &mut Tape, y: Var, seed: u64) -> Result<Var> {
    let (r, c) = tape.shape(y);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let w = tape.leaf(rand_tensor(&mut rng, r, c, 1.0));
    let m = tape.mul(y, w)?;
    tape.sum(m)
}

fn random_cloud(rng: &mut ChaCha8Rng, n: usize) -> PointCloud {
    PointCloud::new((0..n).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect())
        .expect("finite random cloud")
}

/// Small configuration used by the encoder and chain checks (N ≤ 32, D ≤ 16).
pub fn suite_config() -> Config {
    let mut c = Config::default();
    c.k_usfe = 4;
    c.k_sc = 4;
    c.k_smooth = 3;
    c.r = 4;
    c.w = 2;
    c.h = 2;
    c.width1 = 8;
    c.width2 = 8;
    c.d = 8;
    c.d_s = 4;
    c.epsilon = 0.1;
    c.sinkhorn_iters = 10;
    c
}

fn rebuild<T: Copy>(template: &PipelineParams<Tensor2>, flat: &[T]) -> PipelineParams<T> {
    let mut it = flat.iter();
    template.map(&mut |_| *it.next().expect("one var per tensor"))
}

type Case = (&'static str, f64, Box<dyn Fn() -> Result<GradCheckReport> + Send + Sync>);

fn op_case<F>(name: &'static str, params: Vec<Tensor2>, f: F) -> Case
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var> + Send + Sync + 'static,
{
    (
        name,
        OP_TOL,
        Box::new(move || {
            grad_check(
                name,
                &params,
                |t, v| {
                    let y = f(t, v)?;
                    project(t, y, name.len() as u64)
                },
                &GradCheckOptions::default(),
            )
        }),
    )
}

fn cases() -> Vec<Case> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut r = |rows, cols| rand_tensor(&mut rng, rows, cols, 1.0);
    let a = r(4, 3);
    let b = r(4, 3);
    let m = r(3, 5);
    let row = r(1, 3);
    let col = r(4, 1);
    let wide = r(5, 6);
    let sparse = Arc::new(SparseRows::new(
        4,
        vec![vec![(0, 0.5), (2, -1.5)], vec![], vec![(3, 2.0)], vec![(1, 1.0), (1, 0.25)], vec![(0, 1.0)]],
    ));
    let attn_q = r(6, 4);
    let attn_k = r(6, 4);
    let attn_v = r(6, 4);
    let mut out: Vec<Case> = vec![
        op_case("add", vec![a.clone(), b.clone()], |t, v| t.add(v[0], v[1])),
        op_case("sub", vec![a.clone(), b.clone()], |t, v| t.sub(v[0], v[1])),
        op_case("mul", vec![a.clone(), b.clone()], |t, v| t.mul(v[0], v[1])),
        op_case("scale", vec![a.clone()], |t, v| t.scale(v[0], -1.7)),
        op_case("offset", vec![a.clone()], |t, v| t.offset(v[0], 0.3)),
        op_case("matmul", vec![a.clone(), m.clone()], |t, v| t.matmul(v[0], v[1])),
        op_case("matmul_t", vec![a.clone(), b.clone()], |t, v| t.matmul_t(v[0], v[1])),
        op_case("add_row_broadcast", vec![a.clone(), row], |t, v| t.add_row_broadcast(v[0], v[1])),
        op_case("add_col_broadcast", vec![a.clone(), col], |t, v| t.add_col_broadcast(v[0], v[1])),
        op_case("linear", vec![a.clone(), r(5, 3), r(1, 5)], |t, v| {
            t.linear(v[0], v[1], Some(v[2]))
        }),
        op_case("leaky_relu", vec![wide.clone()], |t, v| t.leaky_relu(v[0], 0.1)),
        op_case("instance_norm", vec![wide.clone()], |t, v| t.instance_norm(v[0])),
        op_case("softmax_rows", vec![wide.clone()], |t, v| t.softmax_rows(v[0])),
        op_case("logsumexp_rows", vec![wide.clone()], |t, v| t.logsumexp_rows(v[0])),
        op_case("exp", vec![a.clone()], |t, v| t.exp(v[0])),
        op_case("sparse", vec![a.clone()], move |t, v| t.sparse(v[0], sparse.clone())),
        op_case("group_max", vec![wide.clone()], |t, v| t.group_max(v[0], 5)),
        op_case("row_min", vec![wide.clone()], |t, v| t.row_min(v[0])),
        op_case("concat_cols", vec![a.clone(), b.clone()], |t, v| t.concat_cols(&[v[0], v[1]])),
        op_case("slice_cols", vec![wide.clone()], |t, v| t.slice_cols(v[0], 2, 3)),
        op_case("normalize_rows", vec![a.clone()], |t, v| t.normalize_rows(v[0])),
        op_case("pairwise_sq_dist", vec![a.clone(), r(5, 3)], |t, v| t.pairwise_sq_dist(v[0], v[1])),
    ];

    let windows = Arc::new(vec![
        crate::voxel::Window {
            id: [0; 3],
            voxels: vec![0, 2, 3, 5],
        },
        crate::voxel::Window {
            id: [1, 0, 0],
            voxels: vec![1, 4],
        },
    ]);
    out.push(op_case(
        "window_attention",
        vec![attn_q, attn_k, attn_v],
        move |t, v| window_attention_tape(t, v[0], v[1], v[2], windows.clone(), 2),
    ));

    // geometric layers on a small random cloud
    let mut crng = ChaCha8Rng::seed_from_u64(11);
    let cloud = random_cloud(&mut crng, 16);
    let cfg = suite_config();

    let umb = umbrella_features(&cloud, cfg.k_usfe).expect("umbrella");
    let usfe_params = vec![r(cfg.d_s, 6), r(1, cfg.d_s), r(cfg.d_s, cfg.d_s), r(1, cfg.d_s)];
    let slope = cfg.slope;
    out.push(op_case("usfe_mlp", usfe_params, move |t, v| {
        let mlp = Mlp {
            layers: vec![
                Linear { weight: v[0], bias: Some(v[1]) },
                Linear { weight: v[2], bias: Some(v[3]) },
            ],
            slope,
            norm: vec![true, true],
        };
        usfe_tape(t, &umb, &mlp)
    }));

    let pctx = PointContext::from_graph(&cloud, knn(&cloud, cfg.k_sc).expect("knn"));
    out.push(op_case(
        "set_conv",
        vec![r(16, 3), r(6, 6), r(1, 6), r(6, 6), r(1, 6)],
        move |t, v| {
            let mlp = Mlp {
                layers: vec![
                    Linear { weight: v[1], bias: Some(v[2]) },
                    Linear { weight: v[3], bias: Some(v[4]) },
                ],
                slope,
                norm: vec![true, true],
            };
            set_conv_tape(t, &pctx, v[0], &mlp)
        },
    ));

    let vctx = VoxelContext::new(&cloud, cfg.r, cfg.w).expect("voxel context");
    out.push(op_case(
        "voxel_stage",
        vec![r(16, 4), r(4, 4), r(4, 4), r(4, 4), r(4, 4), r(4, 3)],
        move |t, v| {
            let p = AttentionParams {
                wq: v[1],
                wk: v[2],
                wv: v[3],
                wo: v[4],
                pos: v[5],
                heads: 2,
            };
            voxel_stage_tape(t, &vctx, v[0], &p)
        },
    ));

    let ctx = CloudContext::new(&cloud, &cfg).expect("cloud context");
    let weights = init_weights(&cfg, 3);
    out.push((
        "embed",
        OP_TOL,
        Box::new(move || {
            grad_check(
                "embed",
                &weights.tensors(),
                |t, v| {
                    let p = rebuild(&weights, v);
                    let y = embed_tape(t, &ctx, &p)?;
                    project(t, y, 5)
                },
                &GradCheckOptions {
                    max_coords_per_param: Some(12),
                    ..Default::default()
                },
            )
        }),
    ));

    let target = cloud.translated([0.05, -0.03, 0.02]);
    let sctx = CloudContext::new(&cloud, &cfg).expect("cloud context");
    let tctx = CloudContext::new(&target, &cfg).expect("cloud context");
    let lctx = LossContext::new(&cloud, &target, cfg.k_smooth).expect("loss context");
    let hyper = LossHyper::from_config(&cfg);
    let fs = r(16, cfg.d);
    let ft = r(16, cfg.d);
    {
        let lctx = lctx.clone();
        out.push((
            "sinkhorn_loss",
            SOLVER_TOL,
            Box::new(move || {
                grad_check(
                    "sinkhorn_loss",
                    &[fs.clone(), ft.clone()],
                    |t, v| self_supervised_loss_tape(t, &lctx, v[0], v[1], &hyper),
                    &GradCheckOptions {
                        tol: SOLVER_TOL,
                        ..Default::default()
                    },
                )
            }),
        ));
    }
    let weights = init_weights(&cfg, 4);
    out.push((
        "embed_cost_sinkhorn_loss",
        SOLVER_TOL,
        Box::new(move || {
            grad_check(
                "embed_cost_sinkhorn_loss",
                &weights.tensors(),
                |t, v| {
                    let p = rebuild(&weights, v);
                    let a = embed_tape(t, &sctx, &p)?;
                    let b = embed_tape(t, &tctx, &p)?;
                    self_supervised_loss_tape(t, &lctx, a, b, &hyper)
                },
                &GradCheckOptions {
                    tol: SOLVER_TOL,
                    max_coords_per_param: Some(12),
                    ..Default::default()
                },
            )
        }),
    ));
    out
}

pub fn case_names() -> Vec<&'static str> {
    cases().into_iter().map(|c| c.0).collect()
}

/// Runs every check in parallel and returns the reports in a fixed order.
pub fn run_suite() -> Result<Vec<GradCheckReport>> {
    use rayon::prelude::*;
    cases().into_par_iter().map(|(_, _, f)| f()).collect()
}
