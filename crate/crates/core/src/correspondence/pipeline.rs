use super::cost::{matching_cost, CostMatrix};
use super::flow::{initial_flow, refine_flow_detailed, FlowField, SoftCorrespondence, soft_correspondence};
use super::sinkhorn::{sinkhorn, TransportPlan};
use crate::error::{Error, Result};
use crate::fusion::{embed_context, CloudContext, FeatureMatrix};
use crate::geometry::PointCloud;
use crate::io::Config;
use crate::params::Weights;

/// Every intermediate of one `estimate` run.
#[derive(Clone, Debug)]
pub struct Estimate {
    pub source_features: FeatureMatrix,
    pub target_features: FeatureMatrix,
    pub cost: CostMatrix,
    pub plan: TransportPlan,
    pub correspondences: SoftCorrespondence,
    pub initial: FlowField,
    pub flow: FlowField,
    /// Refinement objective at the start and after each accepted step.
    pub objective: Vec<f64>,
}

pub fn check_equal_sizes(source: &PointCloud, target: &PointCloud) -> Result<()> {
    if source.len() != target.len() {
        return Err(Error::UnequalSizes {
            source_len: source.len(),
            target_len: target.len(),
        });
    }
    Ok(())
}

pub fn estimate_detailed(
    source: &PointCloud,
    target: &PointCloud,
    weights: &Weights,
    config: &Config,
) -> Result<Estimate> {
    check_equal_sizes(source, target)?;
    config.validate()?;
    let (cs, ct) = rayon::join(
        || CloudContext::new(source, config),
        || CloudContext::new(target, config),
    );
    let (cs, ct) = (cs?, ct?);
    let (fs, ft) = rayon::join(|| embed_context(&cs, weights), || embed_context(&ct, weights));
    let (fs, ft) = (fs?, ft?);
    let cost = matching_cost(&fs.values, &ft.values)?;
    let plan = sinkhorn(&cost, config.epsilon, config.sinkhorn_iters, config.tol_marg)?;
    let correspondences = soft_correspondence(&plan, target)?;
    let initial = initial_flow(source, &correspondences.points)?;
    let refined = refine_flow_detailed(
        source,
        &correspondences.points,
        &initial,
        config.k_smooth,
        config.lambda_smooth,
        config.refine_steps,
        config.step_size,
    )?;
    Ok(Estimate {
        source_features: fs,
        target_features: ft,
        cost,
        plan,
        correspondences,
        initial,
        flow: refined.flow,
        objective: refined.objective,
    })
}

/// Scene flow from `source` to `target`.
pub fn estimate(source: &PointCloud, target: &PointCloud, weights: &Weights, config: &Config) -> Result<FlowField> {
    Ok(estimate_detailed(source, target, weights, config)?.flow)
}
