//! Flow accuracy metrics and analytic model-size counters.
//!
//! Thresholds follow the usual scene-flow convention: a point is *strictly*
//! accurate when its end-point error is below 0.05 or 5 % of the true flow
//! magnitude, *relaxed* accurate below 0.1 / 10 %, and an outlier above
//! 0.3 or 10 %.

use serde::Serialize;

use crate::correspondence::FlowField;
use crate::error::{Error, Result};
use crate::geometry::{norm_sq, sub, PAIR_WIDTH};
use crate::io::Config;
use crate::params::shape_template;

pub const STRICT_ABS: f64 = 0.05;
pub const STRICT_REL: f64 = 0.05;
pub const RELAXED_ABS: f64 = 0.1;
pub const RELAXED_REL: f64 = 0.1;
pub const OUTLIER_ABS: f64 = 0.3;
pub const OUTLIER_REL: f64 = 0.1;
const MAGNITUDE_FLOOR: f64 = 1e-12;

/// Per-point `(error, error / max(‖gt‖, 1e-12))`.
pub fn point_errors(pred: &FlowField, gt: &FlowField) -> Result<Vec<(f64, f64)>> {
    if pred.len() != gt.len() {
        return Err(Error::shape(format!(
            "prediction has {} vectors, ground truth {}",
            pred.len(),
            gt.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::shape("metrics on an empty flow"));
    }
    Ok(pred
        .vectors
        .iter()
        .zip(&gt.vectors)
        .map(|(&p, &g)| {
            let e = norm_sq(sub(p, g)).sqrt();
            (e, e / norm_sq(g).sqrt().max(MAGNITUDE_FLOOR))
        })
        .collect())
}

fn percent(errs: &[(f64, f64)], pred: impl Fn(f64, f64) -> bool) -> f64 {
    let hits = errs.iter().filter(|&&(e, r)| pred(e, r)).count();
    100.0 * hits as f64 / errs.len() as f64
}

pub fn epe(pred: &FlowField, gt: &FlowField) -> Result<f64> {
    let errs = point_errors(pred, gt)?;
    Ok(errs.iter().map(|e| e.0).sum::<f64>() / errs.len() as f64)
}

pub fn accuracy_strict(pred: &FlowField, gt: &FlowField) -> Result<f64> {
    Ok(percent(&point_errors(pred, gt)?, |e, r| e < STRICT_ABS || r < STRICT_REL))
}

pub fn accuracy_relaxed(pred: &FlowField, gt: &FlowField) -> Result<f64> {
    Ok(percent(&point_errors(pred, gt)?, |e, r| e < RELAXED_ABS || r < RELAXED_REL))
}

pub fn outliers(pred: &FlowField, gt: &FlowField) -> Result<f64> {
    Ok(percent(&point_errors(pred, gt)?, |e, r| e > OUTLIER_ABS || r > OUTLIER_REL))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub n: usize,
    pub epe: f64,
    pub as_pct: f64,
    pub ar_pct: f64,
    pub out_pct: f64,
    pub params_m: Option<f64>,
    pub flops_g: Option<f64>,
}

impl EvalReport {
    pub fn new(pred: &FlowField, gt: &FlowField) -> Result<Self> {
        let errs = point_errors(pred, gt)?;
        Ok(Self {
            n: errs.len(),
            epe: errs.iter().map(|e| e.0).sum::<f64>() / errs.len() as f64,
            as_pct: percent(&errs, |e, r| e < STRICT_ABS || r < STRICT_REL),
            ar_pct: percent(&errs, |e, r| e < RELAXED_ABS || r < RELAXED_REL),
            out_pct: percent(&errs, |e, r| e > OUTLIER_ABS || r > OUTLIER_REL),
            params_m: None,
            flops_g: None,
        })
    }

    pub fn with_model_size(mut self, size: ModelSize) -> Self {
        self.params_m = Some(size.params_m());
        self.flops_g = Some(size.flops_g());
        self
    }

    /// `key value` lines.
    pub fn to_text(&self) -> String {
        let mut s = format!(
            "N {}\nEPE {:.6}\nAS {:.2}\nAR {:.2}\nOut {:.2}\n",
            self.n, self.epe, self.as_pct, self.ar_pct, self.out_pct
        );
        if let Some(p) = self.params_m {
            s.push_str(&format!("Params(M) {p:.6}\n"));
        }
        if let Some(f) = self.flops_g {
            s.push_str(&format!("FLOPs(G) {f:.6}\n"));
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}

/// Parameter and multiply-accumulate tally. One MAC counts as two FLOPs;
/// normalization, activations, softmax and other elementwise work are not
/// counted.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ModelSize {
    pub params: u64,
    pub macs: u64,
}

impl ModelSize {
    pub fn new() -> Self {
        Self::default()
    }

    /// A dense layer applied to `rows` inputs.
    pub fn linear(&mut self, rows: u64, inputs: u64, outputs: u64, bias: bool) -> &mut Self {
        self.params += inputs * outputs + if bias { outputs } else { 0 };
        self.macs += rows * inputs * outputs;
        self
    }

    pub fn mlp(&mut self, rows: u64, widths: &[u64]) -> &mut Self {
        for w in widths.windows(2) {
            self.linear(rows, w[0], w[1], true);
        }
        self
    }

    pub fn flops(&self) -> u64 {
        2 * self.macs
    }

    pub fn params_m(&self) -> f64 {
        self.params as f64 / 1e6
    }

    pub fn flops_g(&self) -> f64 {
        self.flops() as f64 / 1e9
    }
}

/// Analytic size of the encoder for clouds of `n` points (both clouds).
///
/// Occupied voxels are taken as `M = min(n, r³)`, packed into full windows of
/// `min(M, W³)` voxels. Attention counts q/k/v/output projections, the two
/// positional projections, scores and the weighted sum, for the unshifted and
/// shifted passes. Matching and Sinkhorn are not counted.
pub fn count_params_flops(config: &Config, n: usize) -> ModelSize {
    let n = n as u64;
    let mut s = ModelSize::new();
    let ku = config.k_usfe as u64;
    let ksc = config.k_sc as u64;
    let ds = config.d_s as u64;
    s.mlp(n * ku, &[PAIR_WIDTH as u64, ds, ds]);
    let widths = config.layer_widths().map(|w| w as u64);
    let inputs = [3 + ds, widths[0], widths[1]];
    let r3 = (config.r as u64).pow(3);
    let m = n.min(r3);
    let per_window = m.min((config.w as u64).pow(3));
    for l in 0..3 {
        let (cin, c) = (inputs[l], widths[l]);
        s.mlp(n * ksc, &[3 + cin, c, c]);
        s.linear(n, cin, c, true);
        // attention parameters: 4 C×C projections + C×3 positional map
        s.params += 4 * c * c + 3 * c;
        for _pass in 0..2 {
            s.macs += 4 * m * c * c;
            s.macs += 2 * m * 3 * c;
            s.macs += 2 * m * per_window * c;
        }
        // mean pooling and 8-corner interpolation
        s.macs += n * c + 8 * n * c;
    }
    s.linear(n, widths.iter().sum(), config.d as u64, true);
    // both clouds go through the encoder
    ModelSize {
        params: s.params,
        macs: 2 * s.macs,
    }
}

/// Exact parameter count of the weights a configuration implies.
pub fn param_count(config: &Config) -> u64 {
    shape_template(config).param_count() as u64
}
