//! The full set of learned weights, their names, shapes and initialization.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::geometry::PAIR_WIDTH;
use crate::io::Config;
use crate::nn::{Linear, Mlp};
use crate::tensor::Tensor2;
use crate::voxel::AttentionParams;

pub const FUSION_LAYERS: usize = 3;

/// Weights of the whole encoder, shared between source and target clouds.
#[derive(Clone, Debug)]
pub struct PipelineParams<T> {
    pub usfe: Mlp<T>,
    pub point: Vec<Mlp<T>>,
    /// Projects the previous fused features to the layer width before
    /// voxelization.
    pub voxel_in: Vec<Linear<T>>,
    pub voxel: Vec<AttentionParams<T>>,
    pub proj: Linear<T>,
}

pub type Weights = PipelineParams<Tensor2>;

impl<T> PipelineParams<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> PipelineParams<U> {
        PipelineParams {
            usfe: self.usfe.map(f),
            point: self.point.iter().map(|m| m.map(f)).collect(),
            voxel_in: self.voxel_in.iter().map(|l| l.map(f)).collect(),
            voxel: self.voxel.iter().map(|a| a.map(f)).collect(),
            proj: self.proj.map(f),
        }
    }

    /// Visits every tensor with its file name, in file order.
    pub fn visit(&self, f: &mut impl FnMut(String, &T)) {
        self.usfe.visit("usfe", f);
        for (l, m) in self.point.iter().enumerate() {
            m.visit(&format!("point.layer{}", l + 1), f);
        }
        // same order as `map`, so flat tensor lists line up with both
        for (l, lin) in self.voxel_in.iter().enumerate() {
            lin.visit(&format!("voxel.layer{}.in", l + 1), f);
        }
        for (l, a) in self.voxel.iter().enumerate() {
            a.visit(&format!("voxel.layer{}", l + 1), f);
        }
        self.proj.visit("fuse.proj", f);
    }

    pub fn names(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.visit(&mut |n, _| out.push(n));
        out
    }
}

/// Shape of every tensor for a configuration, as zero tensors.
pub fn shape_template(config: &Config) -> Weights {
    let lin = |out: usize, inp: usize| Linear {
        weight: Tensor2::zeros(out, inp),
        bias: Some(Tensor2::zeros(1, out)),
    };
    let mlp = |widths: &[usize]| Mlp {
        layers: widths.windows(2).map(|w| lin(w[1], w[0])).collect(),
        slope: config.slope,
        norm: vec![true; widths.len() - 1],
    };
    let widths = config.layer_widths();
    let mut inputs = [0; FUSION_LAYERS];
    inputs[0] = 3 + config.d_s;
    inputs[1] = widths[0];
    inputs[2] = widths[1];
    Weights {
        usfe: mlp(&[PAIR_WIDTH, config.d_s, config.d_s]),
        point: (0..FUSION_LAYERS)
            .map(|l| mlp(&[3 + inputs[l], widths[l], widths[l]]))
            .collect(),
        voxel_in: (0..FUSION_LAYERS).map(|l| lin(widths[l], inputs[l])).collect(),
        voxel: (0..FUSION_LAYERS)
            .map(|l| {
                let d = widths[l];
                AttentionParams {
                    wq: Tensor2::zeros(d, d),
                    wk: Tensor2::zeros(d, d),
                    wv: Tensor2::zeros(d, d),
                    wo: Tensor2::zeros(d, d),
                    pos: Tensor2::zeros(d, 3),
                    heads: config.h,
                }
            })
            .collect(),
        proj: lin(config.d, widths.iter().sum()),
    }
}

/// Every entry drawn from `U(−√(1/fan_in), √(1/fan_in))`, where `fan_in` is
/// the input width of the layer the tensor belongs to.
pub fn init_weights(config: &Config, seed: u64) -> Weights {
    let template = shape_template(config);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fan_in_of: HashMap<String, usize> = HashMap::new();
    template.visit(&mut |name, t| {
        fan_in_of.insert(name, t.cols());
    });
    // biases share the fan-in of their weight
    let mut out = template.clone();
    let mut names = template.names().into_iter();
    out = out.map(&mut |t: &Tensor2| {
        let name = names.next().expect("same traversal order");
        let fan_in = if let Some(stem) = name.strip_suffix(".bias") {
            fan_in_of[&format!("{stem}.weight")]
        } else {
            t.cols()
        };
        let bound = (1.0 / fan_in.max(1) as f64).sqrt();
        Tensor2::from_fn(t.rows(), t.cols(), |_, _| rng.gen_range(-bound..=bound))
    });
    out
}

/// All-zero weights with the configured shapes.
pub fn zero_weights(config: &Config) -> Weights {
    shape_template(config)
}

impl Weights {
    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, t| n += t.data().len());
        n
    }

    pub fn named_tensors(&self) -> Vec<(String, Tensor2)> {
        let mut out = Vec::new();
        self.visit(&mut |n, t| out.push((n, t.clone())));
        out
    }

    pub fn tensors(&self) -> Vec<Tensor2> {
        let mut out = Vec::new();
        self.visit(&mut |_, t| out.push(t.clone()));
        out
    }

    /// Rebuilds weights from a flat list in [`visit`](PipelineParams::visit) order.
    pub fn with_tensors(&self, tensors: &[Tensor2]) -> Result<Self> {
        let mut it = tensors.iter();
        let mut bad = None;
        let out = self.map(&mut |t: &Tensor2| match it.next() {
            Some(n) if n.shape() == t.shape() => n.clone(),
            other => {
                bad.get_or_insert_with(|| format!("expected {:?}, got {:?}", t.shape(), other.map(|o| o.shape())));
                t.clone()
            }
        });
        if let Some(msg) = bad {
            return Err(Error::Weights(msg));
        }
        if it.next().is_some() {
            return Err(Error::Weights("too many tensors".into()));
        }
        Ok(out)
    }

    /// Fills the configured shapes from named tensors, checking every name
    /// and dimension.
    pub fn from_named(config: &Config, named: Vec<(String, Tensor2)>) -> Result<Self> {
        let template = shape_template(config);
        let mut by_name: HashMap<String, Tensor2> = named.into_iter().collect();
        let mut problem: Option<String> = None;
        let mut names = template.names().into_iter();
        let out = template.map(&mut |t: &Tensor2| {
            let name = names.next().expect("same traversal order");
            match by_name.remove(&name) {
                Some(v) if v.shape() == t.shape() => v,
                Some(v) => {
                    problem.get_or_insert_with(|| {
                        format!("{name} is {:?}, config expects {:?}", v.shape(), t.shape())
                    });
                    t.clone()
                }
                None => {
                    problem.get_or_insert_with(|| format!("missing tensor {name}"));
                    t.clone()
                }
            }
        });
        if let Some(p) = problem {
            return Err(Error::Weights(p));
        }
        if let Some(extra) = by_name.keys().next() {
            return Err(Error::Weights(format!("unexpected tensor {extra}")));
        }
        Ok(out)
    }

    pub fn bind(&self, tape: &mut Tape) -> PipelineParams<Var> {
        self.map(&mut |t| tape.leaf(t.clone()))
    }
}
