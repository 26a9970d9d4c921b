use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{gradient_angles, grouping_objective, AssignMode, DogConfig, DogOutcome, GradientBatch};
use crate::linops::orthonormality_defect;
use crate::{Result, FORMAT_VERSION};

/// Contents of `dog.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DogReport {
    pub format_version: u32,
    pub iterations: usize,
    pub converged: bool,
    pub objective_trace: Vec<f64>,
    /// Final grouping objective.
    pub objective: f64,
    pub intra_deg: Option<f64>,
    pub inter_deg: Option<f64>,
    /// Expert of each component, by global component index.
    pub assignment: Vec<usize>,
    pub mode: AssignMode,
    pub seed: u64,
    pub live_components: usize,
    /// `‖QᵀQ − I‖_max` of the final directions.
    pub direction_defect: f64,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl DogReport {
    pub fn new(batch: &GradientBatch, outcome: &DogOutcome, config: &DogConfig) -> Result<Self> {
        let angles = gradient_angles(batch, &outcome.policy)?;
        Ok(Self {
            format_version: FORMAT_VERSION,
            iterations: outcome.iterations,
            converged: outcome.converged,
            objective_trace: outcome.objective_trace.clone(),
            objective: grouping_objective(&outcome.policy, batch)?,
            intra_deg: angles.intra_deg,
            inter_deg: angles.inter_deg,
            assignment: outcome.policy.labels().to_vec(),
            mode: config.mode,
            seed: config.seed,
            live_components: batch.live_count(),
            direction_defect: orthonormality_defect(&outcome.directions)?,
            warnings: outcome.warnings.clone(),
        })
    }
}

/// `component_index,old_expert,new_expert`, where the old expert is the
/// contiguous block the component occupied when gradients were taken.
pub fn write_assignment_csv(path: impl AsRef<Path>, labels: &[usize], r: usize) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    w.write_record(["component_index", "old_expert", "new_expert"])?;
    for (i, &k) in labels.iter().enumerate() {
        w.write_record([i.to_string(), (i / r).to_string(), k.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
