use serde::{Deserialize, Serialize};

use super::assign::{assign_step, AssignMode};
use super::kmeans::spherical_kmeans_init;
use super::objective::grouping_objective;
use super::procrustes::{centroids, orthogonalize_centroids};
use super::{GradientBatch, GroupingPolicy};
use crate::linops::DenseMatrix;
use crate::{Error, Result};

pub const DEFAULT_MAX_ITER: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DogConfig {
    pub max_iter: usize,
    pub mode: AssignMode,
    pub seed: u64,
}

impl Default for DogConfig {
    fn default() -> Self {
        Self {
            max_iter: DEFAULT_MAX_ITER,
            mode: AssignMode::Exact,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DogOutcome {
    pub policy: GroupingPolicy,
    /// Refinement iterations executed (each is centroids → orthogonalise → assign).
    pub iterations: usize,
    /// `true` when the last iteration left the policy unchanged.
    pub converged: bool,
    /// Grouping objective of the starting policy, then after each iteration.
    pub objective_trace: Vec<f64>,
    /// Orthonormal directions used by the final assignment.
    pub directions: DenseMatrix,
    pub warnings: Vec<String>,
}

/// Full grouping pipeline: spherical K-means seeding, one assignment against
/// the orthogonalised K-means centroids to reach a balanced policy, then up to
/// `max_iter` refinement iterations until the policy stops changing.
///
/// With fewer live components than experts the K-means stage is skipped and
/// refinement starts from the identity grouping; a warning is recorded.
pub fn dog_run(batch: &GradientBatch, k: usize, r: usize, config: &DogConfig) -> Result<DogOutcome> {
    if k == 0 || r == 0 || r * k != batch.len() {
        return Err(Error::Constraint(format!(
            "{} components cannot form {k} experts of rank {r}",
            batch.len()
        )));
    }
    if batch.dim() < k {
        return Err(Error::Dimension(format!(
            "{k} orthogonal directions do not fit in dimension {}",
            batch.dim()
        )));
    }
    let mut warnings = Vec::new();
    let (start, directions) = if batch.live_count() >= k {
        let clustering = spherical_kmeans_init(batch, k, config.seed)?;
        let q0 = orthogonalize_centroids(&clustering.centroids)?;
        (assign_step(batch, &q0, r, config.mode)?, q0)
    } else {
        let msg = if batch.live_count() == 0 {
            "all components are dead; assignment is the deterministic fill".to_string()
        } else {
            format!(
                "only {} live components for {k} experts; clustering seeded from the identity grouping",
                batch.live_count()
            )
        };
        warnings.push(msg);
        let pi = GroupingPolicy::identity(k, r);
        let q = orthogonalize_centroids(&centroids(&pi, batch)?)?;
        (pi, q)
    };
    let mut outcome = refine(batch, start, directions, config)?;
    outcome.warnings.splice(0..0, warnings);
    Ok(outcome)
}

/// Runs only the refinement loop from a given feasible policy.
pub fn dog_run_from(
    batch: &GradientBatch,
    start: GroupingPolicy,
    config: &DogConfig,
) -> Result<DogOutcome> {
    if start.num_components() != batch.len() {
        return Err(Error::Constraint(format!(
            "start policy covers {} components, batch has {}",
            start.num_components(),
            batch.len()
        )));
    }
    let q = orthogonalize_centroids(&centroids(&start, batch)?)?;
    refine(batch, start, q, config)
}

fn refine(
    batch: &GradientBatch,
    start: GroupingPolicy,
    mut directions: DenseMatrix,
    config: &DogConfig,
) -> Result<DogOutcome> {
    let r = start.rank();
    let mut policy = start;
    let mut trace = vec![grouping_objective(&policy, batch)?];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < config.max_iter {
        iterations += 1;
        let q = orthogonalize_centroids(&centroids(&policy, batch)?)?;
        let next = assign_step(batch, &q, r, config.mode)?;
        trace.push(grouping_objective(&next, batch)?);
        directions = q;
        if next == policy {
            converged = true;
            break;
        }
        policy = next;
    }
    Ok(DogOutcome {
        policy,
        iterations,
        converged,
        objective_trace: trace,
        directions,
        warnings: Vec::new(),
    })
}
