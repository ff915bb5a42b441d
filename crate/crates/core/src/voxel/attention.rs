//! Multi-head self-attention restricted to the occupied voxels of each window.

use std::sync::Arc;

use rayon::prelude::*;

use super::window::Window;
use crate::autodiff::{CustomOp, Tape, Var};
use crate::error::{Error, Result};
use crate::nn::softmax_rows;
use crate::tensor::Tensor2;

/// Projections for one attention layer. All square matrices are D×D; `pos`
/// maps the 3-wide window-relative key position to D and is added to both
/// queries and keys.
#[derive(Clone, Debug)]
pub struct AttentionParams<T> {
    pub wq: T,
    pub wk: T,
    pub wv: T,
    pub wo: T,
    pub pos: T,
    pub heads: usize,
}

impl<T> AttentionParams<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> AttentionParams<U> {
        AttentionParams {
            wq: f(&self.wq),
            wk: f(&self.wk),
            wv: f(&self.wv),
            wo: f(&self.wo),
            pos: f(&self.pos),
            heads: self.heads,
        }
    }

    pub fn visit(&self, prefix: &str, f: &mut impl FnMut(String, &T)) {
        f(format!("{prefix}.wq"), &self.wq);
        f(format!("{prefix}.wk"), &self.wk);
        f(format!("{prefix}.wv"), &self.wv);
        f(format!("{prefix}.wo"), &self.wo);
        f(format!("{prefix}.pos"), &self.pos);
    }
}

impl AttentionParams<Tensor2> {
    pub fn width(&self) -> usize {
        self.wq.rows()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.width();
        for (name, m) in [("wq", &self.wq), ("wk", &self.wk), ("wv", &self.wv), ("wo", &self.wo)] {
            if m.shape() != (d, d) {
                return Err(Error::shape(format!("{name} is {:?}, expected {d}×{d}", m.shape())));
            }
        }
        if self.pos.shape() != (d, 3) {
            return Err(Error::shape(format!("pos is {:?}, expected {d}×3", self.pos.shape())));
        }
        if self.heads == 0 || d % self.heads != 0 {
            return Err(Error::Config(format!("width {d} not divisible by {} heads", self.heads)));
        }
        Ok(())
    }
}

type HeadProbs = Vec<Tensor2>;

fn window_rows(x: &Tensor2, voxels: &[usize], start: usize, width: usize) -> Tensor2 {
    Tensor2::from_fn(voxels.len(), width, |i, j| x.get(voxels[i], start + j))
}

/// Per-window, per-head `softmax(Q Kᵀ / √d_h) V`.
fn attend_windows(
    q: &Tensor2,
    k: &Tensor2,
    v: &Tensor2,
    windows: &[Window],
    heads: usize,
) -> Result<(Tensor2, Vec<HeadProbs>)> {
    let (m, d) = q.shape();
    if k.shape() != (m, d) || v.shape() != (m, d) {
        return Err(Error::shape("attention: q, k, v shapes differ"));
    }
    if heads == 0 || d % heads != 0 {
        return Err(Error::Config(format!("width {d} not divisible by {heads} heads")));
    }
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let per_window: Vec<(Vec<Tensor2>, HeadProbs)> = windows
        .par_iter()
        .map(|w| {
            let mut outs = Vec::with_capacity(heads);
            let mut probs = Vec::with_capacity(heads);
            for h in 0..heads {
                let qw = window_rows(q, &w.voxels, h * dh, dh);
                let kw = window_rows(k, &w.voxels, h * dh, dh);
                let vw = window_rows(v, &w.voxels, h * dh, dh);
                let s = qw.matmul_t(&kw).expect("same width").scale(scale);
                let p = softmax_rows(&s);
                outs.push(p.matmul(&vw).expect("square"));
                probs.push(p);
            }
            (outs, probs)
        })
        .collect();
    let mut out = Tensor2::zeros(m, d);
    let mut all_probs = Vec::with_capacity(windows.len());
    for (w, (outs, probs)) in windows.iter().zip(per_window) {
        for (h, o) in outs.iter().enumerate() {
            for (i, &slot) in w.voxels.iter().enumerate() {
                out.row_mut(slot)[h * dh..(h + 1) * dh].copy_from_slice(o.row(i));
            }
        }
        all_probs.push(probs);
    }
    Ok((out, all_probs))
}

struct WindowAttentionOp {
    windows: Arc<Vec<Window>>,
    heads: usize,
    probs: Vec<HeadProbs>,
}

impl CustomOp for WindowAttentionOp {
    fn name(&self) -> &'static str {
        "window_attention"
    }

    fn backward(&self, inputs: &[&Tensor2], _output: &Tensor2, grad: &Tensor2) -> Vec<Tensor2> {
        let (q, k, v) = (inputs[0], inputs[1], inputs[2]);
        let (m, d) = q.shape();
        let dh = d / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        type Grads = Vec<(Tensor2, Tensor2, Tensor2)>;
        let per_window: Vec<Grads> = self
            .windows
            .par_iter()
            .zip(self.probs.par_iter())
            .map(|(w, probs)| {
                (0..self.heads)
                    .map(|h| {
                        let qw = window_rows(q, &w.voxels, h * dh, dh);
                        let kw = window_rows(k, &w.voxels, h * dh, dh);
                        let vw = window_rows(v, &w.voxels, h * dh, dh);
                        let go = window_rows(grad, &w.voxels, h * dh, dh);
                        let p = &probs[h];
                        let dv = p.t_matmul(&go).expect("shapes");
                        let dp = go.matmul_t(&vw).expect("shapes");
                        let mut ds = Tensor2::zeros(p.rows(), p.cols());
                        for i in 0..p.rows() {
                            let rowdot: f64 =
                                p.row(i).iter().zip(dp.row(i)).map(|(a, b)| a * b).sum();
                            for j in 0..p.cols() {
                                ds.set(i, j, p.get(i, j) * (dp.get(i, j) - rowdot) * scale);
                            }
                        }
                        let dq = ds.matmul(&kw).expect("shapes");
                        let dk = ds.t_matmul(&qw).expect("shapes");
                        (dq, dk, dv)
                    })
                    .collect()
            })
            .collect();
        let mut dq = Tensor2::zeros(m, d);
        let mut dk = Tensor2::zeros(m, d);
        let mut dv = Tensor2::zeros(m, d);
        for (w, heads) in self.windows.iter().zip(per_window) {
            for (h, (gq, gk, gv)) in heads.iter().enumerate() {
                for (i, &slot) in w.voxels.iter().enumerate() {
                    dq.row_mut(slot)[h * dh..(h + 1) * dh].copy_from_slice(gq.row(i));
                    dk.row_mut(slot)[h * dh..(h + 1) * dh].copy_from_slice(gk.row(i));
                    dv.row_mut(slot)[h * dh..(h + 1) * dh].copy_from_slice(gv.row(i));
                }
            }
        }
        vec![dq, dk, dv]
    }
}

/// Records windowed attention of precomputed `q`, `k`, `v` (all M×D).
pub fn window_attention_tape(
    tape: &mut Tape,
    q: Var,
    k: Var,
    v: Var,
    windows: Arc<Vec<Window>>,
    heads: usize,
) -> Result<Var> {
    let (out, probs) = attend_windows(tape.value(q), tape.value(k), tape.value(v), &windows, heads)?;
    tape.custom(
        &[q, k, v],
        out,
        Box::new(WindowAttentionOp {
            windows,
            heads,
            probs,
        }),
    )
}

/// One attention pass over every window: `x + attn(x) W_oᵀ`.
pub fn attention_pass_tape(
    tape: &mut Tape,
    x: Var,
    pos: Var,
    windows: Arc<Vec<Window>>,
    p: &AttentionParams<Var>,
) -> Result<Var> {
    let pe = tape.matmul_t(pos, p.pos)?;
    let q0 = tape.matmul_t(x, p.wq)?;
    let q = tape.add(q0, pe)?;
    let k0 = tape.matmul_t(x, p.wk)?;
    let k = tape.add(k0, pe)?;
    let v = tape.matmul_t(x, p.wv)?;
    let a = window_attention_tape(tape, q, k, v, windows, p.heads)?;
    let o = tape.matmul_t(a, p.wo)?;
    tape.add(x, o)
}

/// Plain attention pass over all windows of a voxel feature matrix.
pub fn attention_pass(
    features: &Tensor2,
    pos: &Tensor2,
    windows: &[Window],
    p: &AttentionParams<Tensor2>,
) -> Result<Tensor2> {
    p.validate()?;
    let mut tape = Tape::new();
    let x = tape.leaf(features.clone());
    let pv = tape.leaf(pos.clone());
    let bound = p.map(&mut |t| tape.leaf(t.clone()));
    let y = attention_pass_tape(&mut tape, x, pv, Arc::new(windows.to_vec()), &bound)?;
    Ok(tape.value(y).clone())
}

/// Attention within a single window of `m` voxels (features m×D, positions m×3).
pub fn sparse_grid_attention(
    features: &Tensor2,
    pos: &Tensor2,
    p: &AttentionParams<Tensor2>,
) -> Result<Tensor2> {
    if features.rows() == 0 {
        return Err(Error::shape("attention window is empty"));
    }
    let w = Window {
        id: [0; 3],
        voxels: (0..features.rows()).collect(),
    };
    attention_pass(features, pos, &[w], p)
}
