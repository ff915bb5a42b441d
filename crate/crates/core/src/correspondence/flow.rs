//! Soft correspondences, initial flow and test-time refinement.

use super::sinkhorn::TransportPlan;
use crate::error::{Error, Result};
use crate::geometry::{knn, sub, NeighborGraph, Point3, PointCloud};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FlowStage {
    Initial,
    Refined,
}

/// Per-point 3-D motion, in the clouds' units.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    pub vectors: Vec<Point3>,
    pub stage: FlowStage,
}

impl FlowField {
    pub fn new(vectors: Vec<Point3>, stage: FlowStage) -> Self {
        Self { vectors, stage }
    }

    pub fn zeros(n: usize) -> Self {
        Self::new(vec![[0.0; 3]; n], FlowStage::Initial)
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.vectors.iter().flatten().all(|v| v.is_finite())
    }

    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self::new(perm.iter().map(|&i| self.vectors[i]).collect(), self.stage)
    }
}

/// Barycentric targets, one per source point.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftCorrespondence {
    pub points: Vec<Point3>,
    /// Rows whose plan mass was zero (or non-finite) and fell back to uniform
    /// weights.
    pub zero_rows: Vec<usize>,
}

/// `q̂_i = Σ_j (P_ij / Σ_j' P_ij') q_j`.
pub fn soft_correspondence(plan: &TransportPlan, target: &PointCloud) -> Result<SoftCorrespondence> {
    let p = &plan.values;
    if p.cols() != target.len() {
        return Err(Error::shape(format!(
            "plan has {} columns for {} target points",
            p.cols(),
            target.len()
        )));
    }
    let uniform = 1.0 / target.len() as f64;
    let mut points = Vec::with_capacity(p.rows());
    let mut zero_rows = Vec::new();
    for i in 0..p.rows() {
        let row = p.row(i);
        let mass: f64 = row.iter().sum();
        let ok = mass > 0.0 && mass.is_finite();
        if !ok {
            zero_rows.push(i);
        }
        let mut q = [0.0; 3];
        for (j, &w) in row.iter().enumerate() {
            let w = if ok { w / mass } else { uniform };
            let t = target.point(j);
            for a in 0..3 {
                q[a] += w * t[a];
            }
        }
        points.push(q);
    }
    Ok(SoftCorrespondence { points, zero_rows })
}

/// `f_i = q̂_i − p_i`.
pub fn initial_flow(source: &PointCloud, correspondences: &[Point3]) -> Result<FlowField> {
    if correspondences.len() != source.len() {
        return Err(Error::shape(format!(
            "{} correspondences for {} source points",
            correspondences.len(),
            source.len()
        )));
    }
    Ok(FlowField::new(
        source
            .positions()
            .iter()
            .zip(correspondences)
            .map(|(&p, &q)| sub(q, p))
            .collect(),
        FlowStage::Initial,
    ))
}

/// `J(F) = Σ_i ‖p_i + f_i − q̂_i‖² + λ Σ_i Σ_{k∈KNN(i)} ‖f_i − f_k‖²`.
#[derive(Clone, Debug)]
pub struct RefineObjective<'a> {
    /// `q̂_i − p_i`, the flow the data term pulls towards.
    pub anchor: Vec<Point3>,
    pub graph: &'a NeighborGraph,
    pub lambda: f64,
}

impl<'a> RefineObjective<'a> {
    pub fn new(
        source: &PointCloud,
        correspondences: &[Point3],
        graph: &'a NeighborGraph,
        lambda: f64,
    ) -> Result<Self> {
        if graph.len() != source.len() {
            return Err(Error::shape("neighbour graph built for a different cloud"));
        }
        let anchor = initial_flow(source, correspondences)?.vectors;
        Ok(Self {
            anchor,
            graph,
            lambda,
        })
    }

    pub fn value(&self, f: &[Point3]) -> f64 {
        let mut data = 0.0;
        let mut smooth = 0.0;
        for i in 0..f.len() {
            for a in 0..3 {
                let d = f[i][a] - self.anchor[i][a];
                data += d * d;
            }
            for &k in self.graph.neighbors(i) {
                for a in 0..3 {
                    let d = f[i][a] - f[k][a];
                    smooth += d * d;
                }
            }
        }
        data + self.lambda * smooth
    }

    pub fn gradient(&self, f: &[Point3]) -> Vec<Point3> {
        let mut g: Vec<Point3> = f
            .iter()
            .zip(&self.anchor)
            .map(|(fi, ai)| [2.0 * (fi[0] - ai[0]), 2.0 * (fi[1] - ai[1]), 2.0 * (fi[2] - ai[2])])
            .collect();
        for i in 0..f.len() {
            for &k in self.graph.neighbors(i) {
                for a in 0..3 {
                    let d = 2.0 * self.lambda * (f[i][a] - f[k][a]);
                    g[i][a] += d;
                    g[k][a] -= d;
                }
            }
        }
        g
    }
}

pub fn gradient_norm(g: &[Point3]) -> f64 {
    g.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
}

#[derive(Clone, Debug)]
pub struct RefineResult {
    pub flow: FlowField,
    /// Objective at the start and after every accepted step.
    pub objective: Vec<f64>,
    pub accepted_steps: usize,
}

/// Halvings tried before a step is given up as non-improving.
const MAX_HALVINGS: usize = 60;

/// Gradient descent with a halving line search. Each step starts from
/// `step_size`; a step is accepted only if it strictly lowers `J`, and the
/// search stops early once no step helps.
pub fn refine_with_objective(
    objective: &RefineObjective<'_>,
    initial: &FlowField,
    steps: usize,
    step_size: f64,
) -> Result<RefineResult> {
    if !(step_size > 0.0) {
        return Err(Error::Config("step_size must be positive".into()));
    }
    if initial.len() != objective.anchor.len() {
        return Err(Error::shape("initial flow length differs from source size"));
    }
    let mut f = initial.vectors.clone();
    let mut j = objective.value(&f);
    let mut history = vec![j];
    let mut accepted = 0;
    for _ in 0..steps {
        let g = objective.gradient(&f);
        if gradient_norm(&g) == 0.0 {
            break;
        }
        let mut alpha = step_size;
        let mut improved = None;
        for _ in 0..MAX_HALVINGS {
            let cand: Vec<Point3> = f
                .iter()
                .zip(&g)
                .map(|(fi, gi)| [fi[0] - alpha * gi[0], fi[1] - alpha * gi[1], fi[2] - alpha * gi[2]])
                .collect();
            let jc = objective.value(&cand);
            if jc < j {
                improved = Some((cand, jc));
                break;
            }
            alpha *= 0.5;
        }
        match improved {
            Some((cand, jc)) => {
                f = cand;
                j = jc;
                history.push(j);
                accepted += 1;
            }
            None => break,
        }
    }
    Ok(RefineResult {
        flow: FlowField::new(f, FlowStage::Refined),
        objective: history,
        accepted_steps: accepted,
    })
}

pub fn refine_flow_detailed(
    source: &PointCloud,
    correspondences: &[Point3],
    initial: &FlowField,
    k_smooth: usize,
    lambda_smooth: f64,
    steps: usize,
    step_size: f64,
) -> Result<RefineResult> {
    if !(lambda_smooth >= 0.0) {
        return Err(Error::Config("lambda_smooth must be non-negative".into()));
    }
    let k = k_smooth.min(source.len().saturating_sub(1));
    let graph = if k == 0 {
        NeighborGraph::empty(source.len())
    } else {
        knn(source, k)?
    };
    let obj = RefineObjective::new(source, correspondences, &graph, lambda_smooth)?;
    refine_with_objective(&obj, initial, steps, step_size)
}

/// Minimizes the refinement objective starting from `initial`.
pub fn refine_flow(
    source: &PointCloud,
    correspondences: &[Point3],
    initial: &FlowField,
    k_smooth: usize,
    lambda_smooth: f64,
    steps: usize,
    step_size: f64,
) -> Result<FlowField> {
    Ok(refine_flow_detailed(
        source,
        correspondences,
        initial,
        k_smooth,
        lambda_smooth,
        steps,
        step_size,
    )?
    .flow)
}
