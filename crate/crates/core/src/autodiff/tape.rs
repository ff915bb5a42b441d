//! Matrix-granular reverse-mode tape.
//!
//! Every op pushes a node holding its forward value and whatever it needs for
//! the adjoint. [`Tape::backward`] walks the nodes in reverse and returns the
//! gradient of a 1×1 loss with respect to every leaf.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::{logsumexp, Tensor2};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a node on a specific tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

impl Var {
    pub fn index(&self) -> usize {
        self.index
    }
}

/// Row-sparse linear map `y = S x`, used for gathers, scatter-means and
/// interpolation weights.
#[derive(Clone, Debug, Default)]
pub struct SparseRows {
    pub out_rows: usize,
    pub in_rows: usize,
    pub rows: Vec<Vec<(usize, f64)>>,
}

impl SparseRows {
    pub fn new(in_rows: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        Self {
            out_rows: rows.len(),
            in_rows,
            rows,
        }
    }

    /// Pure row selection.
    pub fn gather(in_rows: usize, idx: &[usize]) -> Self {
        Self::new(in_rows, idx.iter().map(|&i| vec![(i, 1.0)]).collect())
    }

    pub fn apply(&self, x: &Tensor2) -> Result<Tensor2> {
        if x.rows() != self.in_rows {
            return Err(Error::shape(format!(
                "sparse rows: map expects {} input rows, got {}",
                self.in_rows,
                x.rows()
            )));
        }
        let c = x.cols();
        let mut out = Tensor2::zeros(self.out_rows, c);
        for (i, row) in self.rows.iter().enumerate() {
            let o = out.row_mut(i);
            for &(j, w) in row {
                for (a, b) in o.iter_mut().zip(x.row(j)) {
                    *a += w * b;
                }
            }
        }
        Ok(out)
    }

    pub fn apply_transpose(&self, y: &Tensor2) -> Tensor2 {
        let c = y.cols();
        let mut out = Tensor2::zeros(self.in_rows, c);
        for (i, row) in self.rows.iter().enumerate() {
            let g = y.row(i);
            for &(j, w) in row {
                for (a, b) in out.row_mut(j).iter_mut().zip(g) {
                    *a += w * b;
                }
            }
        }
        out
    }
}

/// An op whose adjoint is supplied by the caller's module.
pub trait CustomOp: Send + Sync {
    fn name(&self) -> &'static str;

    /// Returns one gradient per input, in input order.
    fn backward(&self, inputs: &[&Tensor2], output: &Tensor2, grad: &Tensor2) -> Vec<Tensor2>;
}

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    AddRowBroadcast(Var, Var),
    AddColBroadcast(Var, Var),
    LeakyRelu(Var, f64),
    InstanceNorm { x: Var, inv_std: Vec<f64> },
    SoftmaxRows(Var),
    LogSumExpRows(Var),
    Exp(Var),
    SumAll(Var),
    Sparse { x: Var, map: Arc<SparseRows> },
    GroupMax { x: Var, argmax: Vec<usize> },
    RowMin { x: Var, argmin: Vec<usize> },
    ConcatCols(Vec<Var>),
    SliceCols { x: Var, start: usize },
    NormalizeRows { x: Var, norms: Vec<f64> },
    PairwiseSqDist(Var, Var),
    Custom { inputs: Vec<Var>, op: Box<dyn CustomOp> },
}

struct Node {
    value: Tensor2,
    op: Op,
}

/// Instance-norm variance floor.
pub const INSTANCE_NORM_EPS: f64 = 1e-5;

pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Leaf gradients produced by [`Tape::backward`].
pub struct Gradients {
    tape: u64,
    grads: Vec<Option<Tensor2>>,
}

impl Gradients {
    /// Gradient of the loss with respect to a leaf. Leaves the loss does not
    /// depend on get `None`.
    pub fn get(&self, v: Var) -> Option<&Tensor2> {
        if v.tape != self.tape {
            return None;
        }
        self.grads.get(v.index).and_then(|g| g.as_ref())
    }

    /// Like [`get`](Self::get) but returns zeros shaped like `like` for leaves
    /// the loss does not reach.
    pub fn get_or_zeros(&self, v: Var, like: &Tensor2) -> Tensor2 {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor2::zeros(like.rows(), like.cols()))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn check(&self, v: Var) -> Result<()> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(Error::UnrecordedNode(v.index));
        }
        Ok(())
    }

    fn push(&mut self, value: Tensor2, op: Op) -> Var {
        let index = self.nodes.len();
        self.nodes.push(Node { value, op });
        Var {
            tape: self.id,
            index,
        }
    }

    /// Registers a parameter or constant input.
    pub fn leaf(&mut self, value: Tensor2) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor2 {
        assert_eq!(v.tape, self.id, "variable from another tape");
        &self.nodes[v.index].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).shape()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let y = self.value(a).add(self.value(b))?;
        Ok(self.push(y, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let y = self.value(a).sub(self.value(b))?;
        Ok(self.push(y, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let y = self.value(a).mul(self.value(b))?;
        Ok(self.push(y, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        self.check(a)?;
        let y = self.value(a).scale(s);
        Ok(self.push(y, Op::Scale(a, s)))
    }

    /// `a + c` for a constant scalar `c`.
    pub fn offset(&mut self, a: Var, c: f64) -> Result<Var> {
        self.check(a)?;
        let y = self.value(a).map(|v| v + c);
        Ok(self.push(y, Op::Offset(a)))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let y = self.value(a).matmul(self.value(b))?;
        Ok(self.push(y, Op::MatMul(a, b)))
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let y = self.value(a).matmul_t(self.value(b))?;
        Ok(self.push(y, Op::MatMulT(a, b)))
    }

    /// Adds the 1×C row `b` to every row of `x`.
    pub fn add_row_broadcast(&mut self, x: Var, b: Var) -> Result<Var> {
        self.check(x)?;
        self.check(b)?;
        let bv = self.value(b);
        if bv.rows() != 1 {
            return Err(Error::shape("row broadcast operand must be 1×C"));
        }
        let y = self.value(x).add_row_vector(bv.row(0))?;
        Ok(self.push(y, Op::AddRowBroadcast(x, b)))
    }

    /// Adds the N×1 column `b` to every column of `x`.
    pub fn add_col_broadcast(&mut self, x: Var, b: Var) -> Result<Var> {
        self.check(x)?;
        self.check(b)?;
        let bv = self.value(b);
        if bv.cols() != 1 {
            return Err(Error::shape("column broadcast operand must be N×1"));
        }
        let y = self.value(x).add_col_vector(bv.data())?;
        Ok(self.push(y, Op::AddColBroadcast(x, b)))
    }

    /// `x Wᵀ + b` with `W` out×in and `b` 1×out.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = self.matmul_t(x, w)?;
        match b {
            Some(b) => self.add_row_broadcast(y, b),
            None => Ok(y),
        }
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        self.check(x)?;
        let y = self.value(x).map(|v| leaky(v, slope));
        Ok(self.push(y, Op::LeakyRelu(x, slope)))
    }

    pub fn instance_norm(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let (y, inv_std) = instance_norm_forward(self.value(x));
        Ok(self.push(y, Op::InstanceNorm { x, inv_std }))
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let y = softmax_rows_forward(self.value(x));
        Ok(self.push(y, Op::SoftmaxRows(x)))
    }

    /// N×M → N×1 of `log Σ_j exp(x_ij)`.
    pub fn logsumexp_rows(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let xv = self.value(x);
        let data: Vec<f64> = xv.iter_rows().map(logsumexp).collect();
        let y = Tensor2::new(xv.rows(), 1, data)?;
        Ok(self.push(y, Op::LogSumExpRows(x)))
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let y = self.value(x).map(f64::exp);
        Ok(self.push(y, Op::Exp(x)))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let y = Tensor2::scalar(self.value(x).sum());
        Ok(self.push(y, Op::SumAll(x)))
    }

    pub fn sparse(&mut self, x: Var, map: Arc<SparseRows>) -> Result<Var> {
        self.check(x)?;
        let y = map.apply(self.value(x))?;
        Ok(self.push(y, Op::Sparse { x, map }))
    }

    /// Max over consecutive groups of `group` rows; ties go to the earliest row.
    pub fn group_max(&mut self, x: Var, group: usize) -> Result<Var> {
        self.check(x)?;
        let (y, argmax) = group_max_forward(self.value(x), group)?;
        Ok(self.push(y, Op::GroupMax { x, argmax }))
    }

    /// N×M → N×1 row minimum; ties go to the lowest column.
    pub fn row_min(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let xv = self.value(x);
        let mut argmin = Vec::with_capacity(xv.rows());
        let mut data = Vec::with_capacity(xv.rows());
        for r in xv.iter_rows() {
            if r.is_empty() {
                return Err(Error::shape("row_min of a zero-width matrix"));
            }
            let mut best = 0;
            for (j, &v) in r.iter().enumerate() {
                if v < r[best] {
                    best = j;
                }
            }
            argmin.push(best);
            data.push(r[best]);
        }
        let y = Tensor2::new(xv.rows(), 1, data)?;
        Ok(self.push(y, Op::RowMin { x, argmin }))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        for &p in parts {
            self.check(p)?;
        }
        let vals: Vec<&Tensor2> = parts.iter().map(|&p| self.value(p)).collect();
        let y = Tensor2::concat_cols(&vals)?;
        Ok(self.push(y, Op::ConcatCols(parts.to_vec())))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, width: usize) -> Result<Var> {
        self.check(x)?;
        let y = self.value(x).slice_cols(start, width)?;
        Ok(self.push(y, Op::SliceCols { x, start }))
    }

    /// Scales each row to unit L2 norm; all-zero rows stay zero.
    pub fn normalize_rows(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let xv = self.value(x);
        let mut y = xv.clone();
        let mut norms = Vec::with_capacity(xv.rows());
        for i in 0..xv.rows() {
            let n = xv.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            norms.push(n);
            let r = y.row_mut(i);
            if n > 0.0 {
                r.iter_mut().for_each(|v| *v /= n);
            } else {
                r.iter_mut().for_each(|v| *v = 0.0);
            }
        }
        Ok(self.push(y, Op::NormalizeRows { x, norms }))
    }

    /// `D_ij = ‖a_i − b_j‖²`
    pub fn pairwise_sq_dist(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let (av, bv) = (self.value(a), self.value(b));
        if av.cols() != bv.cols() {
            return Err(Error::shape("pairwise distance: widths differ"));
        }
        let y = Tensor2::from_fn(av.rows(), bv.rows(), |i, j| {
            av.row(i)
                .iter()
                .zip(bv.row(j))
                .map(|(x, y)| (x - y) * (x - y))
                .sum()
        });
        Ok(self.push(y, Op::PairwiseSqDist(a, b)))
    }

    /// Records a node whose forward value was computed by the caller.
    pub fn custom(
        &mut self,
        inputs: &[Var],
        value: Tensor2,
        op: Box<dyn CustomOp>,
    ) -> Result<Var> {
        for &v in inputs {
            self.check(v)?;
        }
        Ok(self.push(
            value,
            Op::Custom {
                inputs: inputs.to_vec(),
                op,
            },
        ))
    }

    /// Reverse sweep from a 1×1 `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        self.check(loss)?;
        if self.value(loss).shape() != (1, 1) {
            return Err(Error::shape(format!(
                "backward needs a 1×1 loss, got {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor2>> = vec![None; self.nodes.len()];
        grads[loss.index] = Some(Tensor2::scalar(1.0));

        for idx in (0..=loss.index).rev() {
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads)?;
        }
        Ok(Gradients {
            tape: self.id,
            grads,
        })
    }

    fn propagate(&self, node: &Node, g: &Tensor2, grads: &mut [Option<Tensor2>]) -> Result<()> {
        let val = |v: Var| &self.nodes[v.index].value;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone())?;
                accumulate(grads, *b, g.clone())?;
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, g.clone())?;
                accumulate(grads, *b, g.scale(-1.0))?;
            }
            Op::Mul(a, b) => {
                accumulate(grads, *a, g.mul(val(*b))?)?;
                accumulate(grads, *b, g.mul(val(*a))?)?;
            }
            Op::Scale(a, s) => accumulate(grads, *a, g.scale(*s))?,
            Op::Offset(a) => accumulate(grads, *a, g.clone())?,
            Op::MatMul(a, b) => {
                // y = a b
                accumulate(grads, *a, g.matmul_t(val(*b))?)?;
                accumulate(grads, *b, val(*a).t_matmul(g)?)?;
            }
            Op::MatMulT(a, b) => {
                // y = a bᵀ
                accumulate(grads, *a, g.matmul(val(*b))?)?;
                accumulate(grads, *b, g.t_matmul(val(*a))?)?;
            }
            Op::AddRowBroadcast(x, b) => {
                accumulate(grads, *x, g.clone())?;
                let s = g.column_sums();
                accumulate(grads, *b, Tensor2::new(1, s.len(), s)?)?;
            }
            Op::AddColBroadcast(x, b) => {
                accumulate(grads, *x, g.clone())?;
                let s = g.row_sums();
                accumulate(grads, *b, Tensor2::new(s.len(), 1, s)?)?;
            }
            Op::LeakyRelu(x, slope) => {
                let dx = g.zip_with(val(*x), |gv, xv| if xv >= 0.0 { gv } else { gv * slope })?;
                accumulate(grads, *x, dx)?;
            }
            Op::InstanceNorm { x, inv_std } => {
                accumulate(grads, *x, instance_norm_backward(&node.value, inv_std, g))?;
            }
            Op::SoftmaxRows(x) => {
                accumulate(grads, *x, softmax_rows_backward(&node.value, g))?;
            }
            Op::LogSumExpRows(x) => {
                let xv = val(*x);
                let mut dx = Tensor2::zeros(xv.rows(), xv.cols());
                for i in 0..xv.rows() {
                    let lse = node.value.get(i, 0);
                    let gi = g.get(i, 0);
                    for (d, &v) in dx.row_mut(i).iter_mut().zip(xv.row(i)) {
                        *d = gi * (v - lse).exp();
                    }
                }
                accumulate(grads, *x, dx)?;
            }
            Op::Exp(x) => accumulate(grads, *x, g.mul(&node.value)?)?,
            Op::SumAll(x) => {
                let (r, c) = val(*x).shape();
                accumulate(grads, *x, Tensor2::filled(r, c, g.get(0, 0)))?;
            }
            Op::Sparse { x, map } => accumulate(grads, *x, map.apply_transpose(g))?,
            Op::GroupMax { x, argmax } => {
                let (r, c) = val(*x).shape();
                let mut dx = Tensor2::zeros(r, c);
                for i in 0..g.rows() {
                    for ch in 0..c {
                        let src = argmax[i * c + ch];
                        let cur = dx.get(src, ch);
                        dx.set(src, ch, cur + g.get(i, ch));
                    }
                }
                accumulate(grads, *x, dx)?;
            }
            Op::RowMin { x, argmin } => {
                let (r, c) = val(*x).shape();
                let mut dx = Tensor2::zeros(r, c);
                for (i, &j) in argmin.iter().enumerate() {
                    dx.set(i, j, g.get(i, 0));
                }
                accumulate(grads, *x, dx)?;
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for &p in parts {
                    let w = val(p).cols();
                    accumulate(grads, p, g.slice_cols(start, w)?)?;
                    start += w;
                }
            }
            Op::SliceCols { x, start } => {
                let (r, c) = val(*x).shape();
                let mut dx = Tensor2::zeros(r, c);
                let w = g.cols();
                for i in 0..r {
                    dx.row_mut(i)[*start..*start + w].copy_from_slice(g.row(i));
                }
                accumulate(grads, *x, dx)?;
            }
            Op::NormalizeRows { x, norms } => {
                let y = &node.value;
                let mut dx = Tensor2::zeros(y.rows(), y.cols());
                for i in 0..y.rows() {
                    if norms[i] == 0.0 {
                        continue;
                    }
                    let yr = y.row(i);
                    let gr = g.row(i);
                    let proj: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for ((d, &yv), &gv) in dx.row_mut(i).iter_mut().zip(yr).zip(gr) {
                        *d = (gv - yv * proj) / norms[i];
                    }
                }
                accumulate(grads, *x, dx)?;
            }
            Op::PairwiseSqDist(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let rs = g.row_sums();
                let cs = g.column_sums();
                // dA = 2 (diag(rowsum) A − G B), dB = 2 (diag(colsum) B − Gᵀ A)
                let gb = g.matmul(bv)?;
                let gta = g.t_matmul(av)?;
                let da = Tensor2::from_fn(av.rows(), av.cols(), |i, k| {
                    2.0 * (rs[i] * av.get(i, k) - gb.get(i, k))
                });
                let db = Tensor2::from_fn(bv.rows(), bv.cols(), |j, k| {
                    2.0 * (cs[j] * bv.get(j, k) - gta.get(j, k))
                });
                accumulate(grads, *a, da)?;
                accumulate(grads, *b, db)?;
            }
            Op::Custom { inputs, op } => {
                let ins: Vec<&Tensor2> = inputs.iter().map(|&v| val(v)).collect();
                let outs = op.backward(&ins, &node.value, g);
                if outs.len() != inputs.len() {
                    return Err(Error::shape(format!(
                        "custom op {} returned {} gradients for {} inputs",
                        op.name(),
                        outs.len(),
                        inputs.len()
                    )));
                }
                for (&v, d) in inputs.iter().zip(outs) {
                    accumulate(grads, v, d)?;
                }
            }
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Tensor2>], v: Var, d: Tensor2) -> Result<()> {
    match &mut grads[v.index] {
        Some(existing) => existing.add_assign(&d),
        slot @ None => {
            *slot = Some(d);
            Ok(())
        }
    }
}

#[inline]
pub(crate) fn leaky(v: f64, slope: f64) -> f64 {
    if v >= 0.0 {
        v
    } else {
        slope * v
    }
}

/// Per-column standardisation over the row axis. Returns `(y, 1/σ)`.
pub(crate) fn instance_norm_forward(x: &Tensor2) -> (Tensor2, Vec<f64>) {
    let (n, c) = x.shape();
    let mut y = Tensor2::zeros(n, c);
    let mut inv_std = vec![0.0; c];
    if n == 0 {
        return (y, inv_std);
    }
    let nf = n as f64;
    for ch in 0..c {
        let mean = (0..n).map(|i| x.get(i, ch)).sum::<f64>() / nf;
        let var = (0..n).map(|i| (x.get(i, ch) - mean).powi(2)).sum::<f64>() / nf;
        let s = 1.0 / (var + INSTANCE_NORM_EPS).sqrt();
        inv_std[ch] = s;
        for i in 0..n {
            y.set(i, ch, (x.get(i, ch) - mean) * s);
        }
    }
    (y, inv_std)
}

fn instance_norm_backward(y: &Tensor2, inv_std: &[f64], g: &Tensor2) -> Tensor2 {
    let (n, c) = y.shape();
    let nf = n as f64;
    let mut dx = Tensor2::zeros(n, c);
    for ch in 0..c {
        let sum_g: f64 = (0..n).map(|i| g.get(i, ch)).sum();
        let sum_gy: f64 = (0..n).map(|i| g.get(i, ch) * y.get(i, ch)).sum();
        for i in 0..n {
            let v = inv_std[ch] / nf * (nf * g.get(i, ch) - sum_g - y.get(i, ch) * sum_gy);
            dx.set(i, ch, v);
        }
    }
    dx
}

pub(crate) fn softmax_rows_forward(x: &Tensor2) -> Tensor2 {
    let mut y = x.clone();
    for i in 0..y.rows() {
        let r = y.row_mut(i);
        let m = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in r.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        for v in r.iter_mut() {
            *v /= s;
        }
    }
    y
}

pub(crate) fn softmax_rows_backward(y: &Tensor2, g: &Tensor2) -> Tensor2 {
    let mut dx = Tensor2::zeros(y.rows(), y.cols());
    for i in 0..y.rows() {
        let yr = y.row(i);
        let gr = g.row(i);
        let dotp: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
        for ((d, &yv), &gv) in dx.row_mut(i).iter_mut().zip(yr).zip(gr) {
            *d = yv * (gv - dotp);
        }
    }
    dx
}

pub(crate) fn group_max_forward(x: &Tensor2, group: usize) -> Result<(Tensor2, Vec<usize>)> {
    let (n, c) = x.shape();
    if group == 0 || n % group != 0 {
        return Err(Error::shape(format!(
            "group_max: {n} rows do not split into groups of {group}"
        )));
    }
    let groups = n / group;
    let mut y = Tensor2::zeros(groups, c);
    let mut argmax = vec![0; groups * c];
    for gi in 0..groups {
        let base = gi * group;
        for ch in 0..c {
            let mut best = base;
            for r in base + 1..base + group {
                if x.get(r, ch) > x.get(best, ch) {
                    best = r;
                }
            }
            argmax[gi * c + ch] = best;
            y.set(gi, ch, x.get(best, ch));
        }
    }
    Ok((y, argmax))
}
