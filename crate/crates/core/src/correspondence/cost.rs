use rayon::prelude::*;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{dot, Tensor2};

/// N×M cosine matching cost between source and target feature rows.
#[derive(Clone, Debug, PartialEq)]
pub struct CostMatrix {
    pub values: Tensor2,
}

impl CostMatrix {
    pub fn new(values: Tensor2) -> Result<Self> {
        values.ensure_finite("cost matrix")?;
        if values.data().iter().any(|&v| v < 0.0) {
            return Err(Error::shape("cost matrix has negative entries"));
        }
        Ok(Self { values })
    }

    pub fn rows(&self) -> usize {
        self.values.rows()
    }

    pub fn cols(&self) -> usize {
        self.values.cols()
    }
}

fn row_norms(x: &Tensor2) -> Vec<f64> {
    x.iter_rows().map(|r| dot(r, r).sqrt()).collect()
}

/// `c(i,j) = 1 − ⟨f_i, g_j⟩ / (‖f_i‖‖g_j‖)`; a zero-norm row costs 1 against
/// everything. Values are clamped to `[0, 2]` to absorb rounding.
pub fn matching_cost(source: &Tensor2, target: &Tensor2) -> Result<CostMatrix> {
    if source.cols() != target.cols() {
        return Err(Error::shape(format!(
            "matching cost: source width {} vs target width {}",
            source.cols(),
            target.cols()
        )));
    }
    let ns = row_norms(source);
    let nt = row_norms(target);
    let m = target.rows();
    let mut values = Tensor2::zeros(source.rows(), m);
    values
        .data_mut()
        .par_chunks_mut(m.max(1))
        .enumerate()
        .for_each(|(i, row)| {
            let f = source.row(i);
            for (j, out) in row.iter_mut().enumerate() {
                let denom = ns[i] * nt[j];
                *out = if denom > 0.0 {
                    (1.0 - dot(f, target.row(j)) / denom).clamp(0.0, 2.0)
                } else {
                    1.0
                };
            }
        });
    CostMatrix::new(values)
}

/// Tape version of [`matching_cost`] (without the clamp, which would only
/// zero gradients at rounding-level boundaries).
pub fn matching_cost_tape(tape: &mut Tape, source: Var, target: Var) -> Result<Var> {
    let a = tape.normalize_rows(source)?;
    let b = tape.normalize_rows(target)?;
    let sim = tape.matmul_t(a, b)?;
    let neg = tape.scale(sim, -1.0)?;
    tape.offset(neg, 1.0)
}
