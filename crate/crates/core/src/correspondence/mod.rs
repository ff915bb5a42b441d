//! Matching cost, optimal transport, correspondences and flow.

mod cost;
mod flow;
mod loss;
mod pipeline;
mod sinkhorn;

pub use cost::{matching_cost, matching_cost_tape, CostMatrix};
pub use flow::{
    gradient_norm, initial_flow, refine_flow, refine_flow_detailed, refine_with_objective,
    soft_correspondence, FlowField, FlowStage, RefineObjective, RefineResult, SoftCorrespondence,
};
pub use loss::{
    edge_difference_map, self_supervised_loss, self_supervised_loss_tape, soft_correspondence_tape,
    LossContext, LossHyper, LossValue,
};
pub use pipeline::{check_equal_sizes, estimate, estimate_detailed, Estimate};
pub use sinkhorn::{sinkhorn, TransportPlan};
