use serde::{Deserialize, Serialize};

use super::objective::{check_compatible, group_sums};
use super::{GradientBatch, GroupingPolicy};
use crate::linops::{dot, norm2};
use crate::Result;

/// Mean pairwise gradient angles, in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AngleReport {
    /// Mean over experts of the mean pairwise angle between live members.
    /// `None` when no expert has two live members.
    pub intra_deg: Option<f64>,
    /// Mean pairwise angle between normalised expert aggregates.
    /// `None` when fewer than two experts have a non-zero aggregate.
    pub inter_deg: Option<f64>,
    /// Experts that contributed to `intra_deg`.
    pub intra_experts: usize,
    /// Experts that contributed to `inter_deg`.
    pub inter_experts: usize,
}

pub(crate) fn angle_deg(cos: f64) -> f64 {
    cos.clamp(-1.0, 1.0).acos().to_degrees()
}

pub fn gradient_angles(batch: &GradientBatch, pi: &GroupingPolicy) -> Result<AngleReport> {
    check_compatible(pi, batch)?;

    let mut intra_sum = 0.0;
    let mut intra_experts = 0;
    for k in 0..pi.num_experts() {
        let live: Vec<usize> = pi.members(k).into_iter().filter(|&i| !batch.is_dead(i)).collect();
        if live.len() < 2 {
            continue;
        }
        let mut total = 0.0;
        let mut pairs = 0usize;
        for (a, &i) in live.iter().enumerate() {
            for &j in &live[a + 1..] {
                total += angle_deg(dot(batch.vector(i), batch.vector(j)));
                pairs += 1;
            }
        }
        intra_sum += total / pairs as f64;
        intra_experts += 1;
    }

    let dirs: Vec<Vec<f64>> = group_sums(pi, batch)
        .into_iter()
        .filter_map(|s| {
            let nrm = norm2(&s);
            (nrm > 0.0).then(|| s.into_iter().map(|x| x / nrm).collect())
        })
        .collect();
    let mut inter_total = 0.0;
    let mut inter_pairs = 0usize;
    for (a, u) in dirs.iter().enumerate() {
        for v in &dirs[a + 1..] {
            inter_total += angle_deg(dot(u, v));
            inter_pairs += 1;
        }
    }

    Ok(AngleReport {
        intra_deg: (intra_experts > 0).then(|| intra_sum / intra_experts as f64),
        inter_deg: (inter_pairs > 0).then(|| inter_total / inter_pairs as f64),
        intra_experts,
        inter_experts: dirs.len(),
    })
}
