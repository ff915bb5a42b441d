//! Dense layers and the stacked MLP shared by every learned block.
//!
//! Parameter containers are generic over their leaf type: `T = Tensor2` for
//! stored weights and `T = Var` once bound to a [`Tape`].

use crate::autodiff::{instance_norm_forward, leaky, softmax_rows_forward, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor2;

pub const DEFAULT_SLOPE: f64 = 0.1;

#[derive(Clone, Debug)]
pub struct Linear<T> {
    /// out × in
    pub weight: T,
    /// 1 × out
    pub bias: Option<T>,
}

impl<T> Linear<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> Linear<U> {
        Linear {
            weight: f(&self.weight),
            bias: self.bias.as_ref().map(f),
        }
    }

    pub fn visit(&self, prefix: &str, f: &mut impl FnMut(String, &T)) {
        f(format!("{prefix}.weight"), &self.weight);
        if let Some(b) = &self.bias {
            f(format!("{prefix}.bias"), b);
        }
    }
}

impl Linear<Tensor2> {
    pub fn in_features(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_features(&self) -> usize {
        self.weight.rows()
    }
}

/// Stacked MLP: `linear → instance_norm? → leaky_relu` for every hidden layer,
/// plain linear for the last one.
#[derive(Clone, Debug)]
pub struct Mlp<T> {
    pub layers: Vec<Linear<T>>,
    pub slope: f64,
    /// Instance-norm toggle per layer; ignored for the last layer.
    pub norm: Vec<bool>,
}

pub type MlpParams = Mlp<Tensor2>;

impl<T> Mlp<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> Mlp<U> {
        Mlp {
            layers: self.layers.iter().map(|l| l.map(f)).collect(),
            slope: self.slope,
            norm: self.norm.clone(),
        }
    }

    pub fn visit(&self, prefix: &str, f: &mut impl FnMut(String, &T)) {
        for (i, l) in self.layers.iter().enumerate() {
            l.visit(&format!("{prefix}.mlp{i}"), f);
        }
    }

    fn uses_norm(&self, layer: usize) -> bool {
        self.norm.get(layer).copied().unwrap_or(false)
    }
}

impl MlpParams {
    pub fn new(layers: Vec<Linear<Tensor2>>, slope: f64, norm: bool) -> Result<Self> {
        if !(slope > 0.0 && slope < 1.0) {
            return Err(Error::Config(format!("leaky slope {slope} outside (0,1)")));
        }
        for w in layers.windows(2) {
            if w[0].out_features() != w[1].in_features() {
                return Err(Error::shape(format!(
                    "MLP widths do not chain: {} -> {}",
                    w[0].out_features(),
                    w[1].in_features()
                )));
            }
        }
        let n = layers.len();
        Ok(Self {
            layers,
            slope,
            norm: vec![norm; n],
        })
    }

    pub fn in_features(&self) -> usize {
        self.layers.first().map(|l| l.in_features()).unwrap_or(0)
    }

    pub fn out_features(&self) -> usize {
        self.layers.last().map(|l| l.out_features()).unwrap_or(0)
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, t| n += t.data().len());
        n
    }
}

/// `y = x Wᵀ + b`
pub fn linear(x: &Tensor2, w: &Tensor2, b: Option<&Tensor2>) -> Result<Tensor2> {
    let y = x.matmul_t(w)?;
    match b {
        Some(b) => {
            if b.rows() != 1 {
                return Err(Error::shape("bias must be 1×out"));
            }
            y.add_row_vector(b.row(0))
        }
        None => Ok(y),
    }
}

/// Per-channel standardisation over rows, no affine.
pub fn instance_norm(x: &Tensor2) -> Tensor2 {
    instance_norm_forward(x).0
}

pub fn leaky_relu(x: &Tensor2, slope: f64) -> Tensor2 {
    x.map(|v| leaky(v, slope))
}

pub fn softmax_rows(x: &Tensor2) -> Tensor2 {
    softmax_rows_forward(x)
}

pub fn mlp_forward(x: &Tensor2, p: &MlpParams) -> Result<Tensor2> {
    let last = p.layers.len().saturating_sub(1);
    let mut h = x.clone();
    for (i, l) in p.layers.iter().enumerate() {
        h = linear(&h, &l.weight, l.bias.as_ref())?;
        if i < last {
            if p.uses_norm(i) {
                h = instance_norm(&h);
            }
            h = leaky_relu(&h, p.slope);
        }
    }
    Ok(h)
}

/// Tape-recorded [`mlp_forward`].
pub fn mlp_forward_tape(tape: &mut Tape, x: Var, p: &Mlp<Var>) -> Result<Var> {
    let last = p.layers.len().saturating_sub(1);
    let mut h = x;
    for (i, l) in p.layers.iter().enumerate() {
        h = tape.linear(h, l.weight, l.bias)?;
        if i < last {
            if p.uses_norm(i) {
                h = tape.instance_norm(h)?;
            }
            h = tape.leaky_relu(h, p.slope)?;
        }
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lin(w: Tensor2, b: Option<Tensor2>) -> Linear<Tensor2> {
        Linear { weight: w, bias: b }
    }

    #[test]
    fn identity_and_zero_layers() {
        let x = Tensor2::from_fn(4, 3, |i, j| i as f64 * 0.7 - j as f64);
        assert_eq!(linear(&x, &Tensor2::identity(3), None).unwrap(), x);
        let b = Tensor2::from_rows(&[[1.0, -2.0]]).unwrap();
        let y = linear(&x, &Tensor2::zeros(2, 3), Some(&b)).unwrap();
        for r in y.iter_rows() {
            assert_eq!(r, &[1.0, -2.0]);
        }
    }

    #[test]
    fn instance_norm_constant_channel_is_zero() {
        let x = Tensor2::filled(5, 2, 3.25);
        assert!(instance_norm(&x).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn instance_norm_two_point_channel() {
        let x = Tensor2::from_rows(&[[-1.0], [1.0]]).unwrap();
        let y = instance_norm(&x);
        let expect = 1.0 / (1.0f64 + INSTANCE_NORM_EPS_T).sqrt();
        assert!((y.get(0, 0) + expect).abs() < 1e-15);
        assert!((y.get(1, 0) - expect).abs() < 1e-15);
    }
    const INSTANCE_NORM_EPS_T: f64 = crate::autodiff::INSTANCE_NORM_EPS;

    #[test]
    fn leaky_values() {
        let x = Tensor2::from_rows(&[[2.0, -2.0, 0.0]]).unwrap();
        assert_eq!(leaky_relu(&x, 0.1).row(0), &[2.0, -0.2, 0.0]);
    }

    #[test]
    fn softmax_symmetric_and_stable() {
        let x = Tensor2::from_rows(&[[0.0, 0.0], [1000.0, 0.0]]).unwrap();
        let y = softmax_rows(&x);
        assert_eq!(y.row(0), &[0.5, 0.5]);
        assert!((y.get(1, 0) - 1.0).abs() <= 1e-12 && y.get(1, 1) <= 1e-12);
        assert!(y.is_finite());
    }

    #[test]
    fn mlp_identity_and_zero() {
        let x = Tensor2::from_fn(8, 4, |i, j| (i as f64).sin() + j as f64);
        let one = MlpParams::new(vec![lin(Tensor2::identity(4), None)], 0.1, true).unwrap();
        assert_eq!(mlp_forward(&x, &one).unwrap(), x);
        let zero = MlpParams::new(
            vec![
                lin(Tensor2::zeros(5, 4), Some(Tensor2::zeros(1, 5))),
                lin(Tensor2::zeros(3, 5), Some(Tensor2::zeros(1, 3))),
            ],
            0.1,
            true,
        )
        .unwrap();
        assert!(mlp_forward(&x, &zero).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mlp_rejects_broken_chain_and_slope() {
        let a = lin(Tensor2::zeros(5, 4), None);
        let b = lin(Tensor2::zeros(3, 6), None);
        assert!(MlpParams::new(vec![a.clone(), b], 0.1, false).is_err());
        assert!(MlpParams::new(vec![a], 1.5, false).is_err());
    }

    #[test]
    fn tape_and_plain_forward_agree_bitwise() {
        let x = Tensor2::from_fn(6, 3, |i, j| ((i * 3 + j) as f64 * 0.37).cos());
        let p = MlpParams::new(
            vec![
                lin(
                    Tensor2::from_fn(4, 3, |i, j| 0.1 * (i as f64) - 0.2 * j as f64),
                    Some(Tensor2::from_fn(1, 4, |_, j| j as f64 * 0.01)),
                ),
                lin(Tensor2::from_fn(2, 4, |i, j| (i + j) as f64 * 0.3 - 0.5), None),
            ],
            0.1,
            true,
        )
        .unwrap();
        let plain = mlp_forward(&x, &p).unwrap();
        let mut t = Tape::new();
        let xv = t.leaf(x.clone());
        let pv = p.map(&mut |w| t.leaf(w.clone()));
        let y = mlp_forward_tape(&mut t, xv, &pv).unwrap();
        assert_eq!(t.value(y), &plain);
    }
}
