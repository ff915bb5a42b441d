//! Reverse-mode differentiation over [`Tensor2`](crate::tensor::Tensor2)
//! values and a finite-difference checker for it.

mod gradcheck;
mod tape;

pub use gradcheck::{
    compare_gradients, grad_check, relative_error, CoordError, GradCheckOptions, GradCheckReport,
    REL_ERROR_FLOOR,
};
pub use tape::{CustomOp, Gradients, SparseRows, Tape, Var, INSTANCE_NORM_EPS};

pub(crate) use tape::{group_max_forward, instance_norm_forward, leaky, softmax_rows_forward};
