//! Point/voxel fusion encoder producing per-point embeddings.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::geometry::{umbrella_features, usfe_tape, PointCloud, UmbrellaFeatures};
use crate::io::Config;
use crate::params::{PipelineParams, Weights, FUSION_LAYERS};
use crate::point::{set_conv_tape, PointContext};
use crate::tensor::Tensor2;
use crate::voxel::{voxel_stage_tape, VoxelContext};

/// Which stage of the encoder a feature matrix came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeatureLayer {
    Surface,
    Point(usize),
    Voxel(usize),
    Fused(usize),
    Embedding,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    pub values: Tensor2,
    pub layer: FeatureLayer,
}

impl FeatureMatrix {
    pub fn new(values: Tensor2, layer: FeatureLayer) -> Result<Self> {
        values.ensure_finite("feature matrix")?;
        Ok(Self { values, layer })
    }

    pub fn rows(&self) -> usize {
        self.values.rows()
    }

    pub fn width(&self) -> usize {
        self.values.cols()
    }
}

/// Elementwise sum of the two branch outputs.
pub fn fuse(point_feats: &Tensor2, voxel_feats: &Tensor2) -> Result<Tensor2> {
    if point_feats.shape() != voxel_feats.shape() {
        return Err(Error::shape(format!(
            "fuse: point features {:?} vs voxel features {:?}",
            point_feats.shape(),
            voxel_feats.shape()
        )));
    }
    point_feats.add(voxel_feats)
}

/// All weight-independent structure of one cloud: neighbourhoods, umbrella
/// geometry and voxelization. Built once and reused across layers and
/// optimization steps.
#[derive(Clone, Debug)]
pub struct CloudContext {
    pub cloud: PointCloud,
    pub umbrella: UmbrellaFeatures,
    pub point: PointContext,
    pub voxel: VoxelContext,
    /// Positions relative to the cloud centroid, the coordinate part of the
    /// first layer's input.
    pub centered: Tensor2,
}

impl CloudContext {
    pub fn new(cloud: &PointCloud, config: &Config) -> Result<Self> {
        config.validate()?;
        let umbrella = umbrella_features(cloud, config.k_usfe)?;
        let point = PointContext::new(cloud, config.k_sc)?;
        let voxel = VoxelContext::new(cloud, config.r, config.w)?;
        let c = cloud.centroid();
        let centered = Tensor2::from_fn(cloud.len(), 3, |i, a| cloud.point(i)[a] - c[a]);
        Ok(Self {
            cloud: cloud.clone(),
            umbrella,
            point,
            voxel,
            centered,
        })
    }

    pub fn len(&self) -> usize {
        self.cloud.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cloud.is_empty()
    }
}

/// Intermediate outputs of one encoder run, all on the same tape.
#[derive(Clone, Debug)]
pub struct EmbedTrace {
    pub surface: Var,
    pub point: Vec<Var>,
    pub voxel: Vec<Var>,
    pub fused: Vec<Var>,
    /// Output of the final projection, before normalization.
    pub projected: Var,
    pub embedding: Var,
}

pub fn embed_trace_tape(
    tape: &mut Tape,
    ctx: &CloudContext,
    params: &PipelineParams<Var>,
) -> Result<EmbedTrace> {
    let surface = usfe_tape(tape, &ctx.umbrella, &params.usfe)?;
    let xyz = tape.leaf(ctx.centered.clone());
    let mut x = tape.concat_cols(&[xyz, surface])?;
    let mut point = Vec::with_capacity(FUSION_LAYERS);
    let mut voxel = Vec::with_capacity(FUSION_LAYERS);
    let mut fused = Vec::with_capacity(FUSION_LAYERS);
    for l in 0..params.point.len() {
        let p = set_conv_tape(tape, &ctx.point, x, &params.point[l])?;
        let vin = &params.voxel_in[l];
        let v_in = tape.linear(x, vin.weight, vin.bias)?;
        let v = voxel_stage_tape(tape, &ctx.voxel, v_in, &params.voxel[l])?;
        x = tape.add(p, v)?;
        point.push(p);
        voxel.push(v);
        fused.push(x);
    }
    let cat = tape.concat_cols(&fused)?;
    let projected = tape.linear(cat, params.proj.weight, params.proj.bias)?;
    // per-cloud channel standardization removes the component shared by all
    // points, which otherwise dominates cosine matching
    let embedding = tape.instance_norm(projected)?;
    Ok(EmbedTrace {
        surface,
        point,
        voxel,
        fused,
        projected,
        embedding,
    })
}

/// N×D embedding recorded on `tape`.
pub fn embed_tape(tape: &mut Tape, ctx: &CloudContext, params: &PipelineParams<Var>) -> Result<Var> {
    Ok(embed_trace_tape(tape, ctx, params)?.embedding)
}

pub fn embed_context(ctx: &CloudContext, weights: &Weights) -> Result<FeatureMatrix> {
    let mut tape = Tape::new();
    let p = weights.bind(&mut tape);
    let y = embed_tape(&mut tape, ctx, &p)?;
    FeatureMatrix::new(tape.value(y).clone(), FeatureLayer::Embedding)
}

pub fn embed(cloud: &PointCloud, weights: &Weights, config: &Config) -> Result<FeatureMatrix> {
    embed_context(&CloudContext::new(cloud, config)?, weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{init_weights, zero_weights};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_config() -> Config {
        let mut c = Config::default();
        c.k_usfe = 5;
        c.k_sc = 6;
        c.r = 4;
        c.w = 2;
        c.h = 2;
        c.width1 = 8;
        c.width2 = 8;
        c.d = 8;
        c.d_s = 4;
        c
    }

    fn cloud(n: usize, seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PointCloud::new((0..n).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect()).unwrap()
    }

    #[test]
    fn fuse_is_sum() {
        let a = Tensor2::from_fn(3, 2, |i, j| (i + 2 * j) as f64);
        assert_eq!(fuse(&a, &Tensor2::zeros(3, 2)).unwrap(), a);
        assert_eq!(fuse(&a, &a.scale(-1.0)).unwrap(), Tensor2::zeros(3, 2));
        assert!(fuse(&a, &Tensor2::zeros(2, 3)).is_err());
    }

    #[test]
    fn zero_weights_embed_to_zero() {
        let c = small_config();
        let f = embed(&cloud(20, 1), &zero_weights(&c), &c).unwrap();
        assert_eq!(f.values, Tensor2::zeros(20, c.d));
    }

    #[test]
    fn identical_clouds_identical_embeddings() {
        let c = small_config();
        let w = init_weights(&c, 5);
        let s = cloud(24, 2);
        let a = embed(&s, &w, &c).unwrap();
        let b = embed(&s.clone(), &w, &c).unwrap();
        assert_eq!(a, b);
    }
}
