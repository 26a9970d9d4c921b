use super::{GradientBatch, GroupingPolicy};
use crate::linops::dot;
use crate::{Error, Result};

pub(crate) fn check_compatible(pi: &GroupingPolicy, batch: &GradientBatch) -> Result<()> {
    if pi.num_components() != batch.len() {
        return Err(Error::Constraint(format!(
            "policy covers {} components, batch has {}",
            pi.num_components(),
            batch.len()
        )));
    }
    Ok(())
}

/// Per-expert sums `Σ_{i ∈ k} ĝ_i`.
pub(crate) fn group_sums(pi: &GroupingPolicy, batch: &GradientBatch) -> Vec<Vec<f64>> {
    let mut sums = vec![vec![0.0; batch.dim()]; pi.num_experts()];
    for i in 0..batch.len() {
        let s = &mut sums[pi.expert_of(i)];
        s.iter_mut().zip(batch.vector(i)).for_each(|(a, b)| *a += b);
    }
    sums
}

/// Intra-group coherence `Σ_k ‖Σ_i π_ik ĝ_i‖²`. Dead components are zero
/// vectors and contribute nothing.
pub fn grouping_objective(pi: &GroupingPolicy, batch: &GradientBatch) -> Result<f64> {
    check_compatible(pi, batch)?;
    Ok(group_sums(pi, batch).iter().map(|s| dot(s, s)).sum())
}

/// `(l_intra, l_inter)` where `l_inter = ‖Σ_i ĝ_i‖² − l_intra` collects the
/// cross-group inner products. The two always add up to the grouping-free
/// constant, so maximising `l_intra` is the same as minimising `l_inter` for
/// any positive trade-off weight.
pub fn objective_split(pi: &GroupingPolicy, batch: &GradientBatch) -> Result<(f64, f64)> {
    let intra = grouping_objective(pi, batch)?;
    let mut total = vec![0.0; batch.dim()];
    for i in 0..batch.len() {
        total.iter_mut().zip(batch.vector(i)).for_each(|(a, b)| *a += b);
    }
    Ok((intra, dot(&total, &total) - intra))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linops::DenseMatrix;

    fn batch(rows: &[Vec<f64>]) -> GradientBatch {
        GradientBatch::from_unit_vectors(DenseMatrix::from_rows(rows).unwrap()).unwrap()
    }

    #[test]
    fn orthogonal_singletons_score_k() {
        let b = batch(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        for labels in [vec![0, 1], vec![1, 0]] {
            let p = GroupingPolicy::new(labels, 2, 1).unwrap();
            assert_eq!(grouping_objective(&p, &b).unwrap(), 2.0);
            assert_eq!(objective_split(&p, &b).unwrap(), (2.0, 0.0));
        }
    }

    #[test]
    fn identical_pair_in_one_group() {
        let b = batch(&[vec![1.0, 0.0], vec![1.0, 0.0]]);
        let p = GroupingPolicy::identity(1, 2);
        assert_eq!(grouping_objective(&p, &b).unwrap(), 4.0);
    }

    #[test]
    fn identical_pair_split_across_groups() {
        let b = batch(&[vec![1.0, 0.0], vec![1.0, 0.0]]);
        let p = GroupingPolicy::identity(2, 1);
        assert_eq!(objective_split(&p, &b).unwrap(), (2.0, 2.0));
    }

    #[test]
    fn mismatched_policy_is_a_constraint_error() {
        let b = batch(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let p = GroupingPolicy::identity(2, 2);
        assert!(matches!(grouping_objective(&p, &b), Err(Error::Constraint(_))));
    }
}
