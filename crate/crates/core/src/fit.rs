//! Desk-scale self-supervised fitting with Adam.

use rayon::prelude::*;

use crate::autodiff::Tape;
use crate::correspondence::{check_equal_sizes, self_supervised_loss_tape, LossContext, LossHyper};
use crate::error::{Error, Result};
use crate::fusion::{embed_tape, CloudContext};
use crate::geometry::PointCloud;
use crate::io::Config;
use crate::params::Weights;
use crate::tensor::Tensor2;

/// Largest cloud `fit` accepts.
pub const MAX_FIT_POINTS: usize = 1024;

#[derive(Clone, Debug)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Tensor2>,
    v: Vec<Tensor2>,
}

impl Adam {
    pub fn new(learning_rate: f64, like: &[Tensor2]) -> Self {
        let zeros = || like.iter().map(|t| Tensor2::zeros(t.rows(), t.cols())).collect();
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn step(&mut self, params: &mut [Tensor2], grads: &[Tensor2]) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for (((pi, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                *pi -= self.learning_rate * (*mi / c1) / ((*vi / c2).sqrt() + self.eps);
            }
        }
    }
}

/// Precomputed structure for one training pair.
#[derive(Clone, Debug)]
pub struct FitPair {
    pub source: CloudContext,
    pub target: CloudContext,
    pub loss: LossContext,
}

impl FitPair {
    pub fn new(source: &PointCloud, target: &PointCloud, config: &Config) -> Result<Self> {
        check_equal_sizes(source, target)?;
        if source.len() > MAX_FIT_POINTS {
            return Err(Error::Config(format!(
                "fit is limited to {MAX_FIT_POINTS} points per cloud, got {}",
                source.len()
            )));
        }
        Ok(Self {
            source: CloudContext::new(source, config)?,
            target: CloudContext::new(target, config)?,
            loss: LossContext::new(source, target, config.k_smooth)?,
        })
    }
}

/// Loss of one pair and its gradient for every weight tensor, in
/// [`Weights::tensors`] order.
pub fn pair_loss_and_grad(pair: &FitPair, weights: &Weights, hyper: &LossHyper) -> Result<(f64, Vec<Tensor2>)> {
    let mut tape = Tape::new();
    let p = weights.bind(&mut tape);
    let fs = embed_tape(&mut tape, &pair.source, &p)?;
    let ft = embed_tape(&mut tape, &pair.target, &p)?;
    let l = self_supervised_loss_tape(&mut tape, &pair.loss, fs, ft, hyper)?;
    let value = tape.value(l).get(0, 0);
    let g = tape.backward(l)?;
    let mut grads = Vec::new();
    let mut vars = Vec::new();
    p.visit(&mut |_, &v| vars.push(v));
    for (v, t) in vars.into_iter().zip(weights.tensors()) {
        grads.push(g.get_or_zeros(v, &t));
    }
    Ok((value, grads))
}

/// Mean loss over pairs and its averaged gradient. Pair results are reduced
/// in pair order so the sum does not depend on scheduling.
pub fn batch_loss_and_grad(pairs: &[FitPair], weights: &Weights, hyper: &LossHyper) -> Result<(f64, Vec<Tensor2>)> {
    if pairs.is_empty() {
        return Err(Error::Config("fit needs at least one pair".into()));
    }
    let results: Vec<Result<(f64, Vec<Tensor2>)>> = pairs
        .par_iter()
        .map(|p| pair_loss_and_grad(p, weights, hyper))
        .collect();
    let scale = 1.0 / pairs.len() as f64;
    let mut total = 0.0;
    let mut acc: Option<Vec<Tensor2>> = None;
    for r in results {
        let (l, g) = r?;
        total += l;
        match &mut acc {
            None => acc = Some(g),
            Some(a) => {
                for (x, y) in a.iter_mut().zip(&g) {
                    x.add_assign(y)?;
                }
            }
        }
    }
    let grads = acc.expect("non-empty").into_iter().map(|g| g.scale(scale)).collect();
    Ok((total * scale, grads))
}

#[derive(Clone, Debug)]
pub struct FitReport {
    /// Mean loss before each update, plus the loss after the final one.
    pub losses: Vec<f64>,
    pub weights: Weights,
}

impl FitReport {
    pub fn initial_loss(&self) -> f64 {
        self.losses[0]
    }

    pub fn final_loss(&self) -> f64 {
        *self.losses.last().expect("at least the initial loss")
    }
}

/// Runs `steps` Adam updates, each over all pairs. `progress` sees
/// `(step, loss)` before every update.
pub fn fit(
    pairs: &[FitPair],
    initial: &Weights,
    config: &Config,
    steps: usize,
    mut progress: impl FnMut(usize, f64),
) -> Result<FitReport> {
    let hyper = LossHyper::from_config(config);
    let mut tensors = initial.tensors();
    let mut adam = Adam::new(config.learning_rate, &tensors);
    let mut weights = initial.clone();
    let mut losses = Vec::with_capacity(steps + 1);
    for step in 0..steps {
        let (loss, grads) = batch_loss_and_grad(pairs, &weights, &hyper)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("loss at step {step}")));
        }
        progress(step, loss);
        losses.push(loss);
        adam.step(&mut tensors, &grads);
        weights = weights.with_tensors(&tensors)?;
    }
    let (loss, _) = batch_loss_and_grad(pairs, &weights, &hyper)?;
    progress(steps, loss);
    losses.push(loss);
    Ok(FitReport { losses, weights })
}
