use crate::linops::DenseMatrix;
use crate::{Error, Result};

/// Balanced assignment of `r · K` rank-1 components to `K` experts; every
/// expert receives exactly `r` components.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GroupingPolicy {
    labels: Vec<usize>,
    k: usize,
    r: usize,
}

impl GroupingPolicy {
    /// `labels[i]` is the expert of component `i`.
    pub fn new(labels: Vec<usize>, k: usize, r: usize) -> Result<Self> {
        if k == 0 || r == 0 {
            return Err(Error::Constraint(format!("k = {k}, r = {r} must be positive")));
        }
        if labels.len() != k * r {
            return Err(Error::Constraint(format!(
                "{} components for k = {k}, r = {r}",
                labels.len()
            )));
        }
        let mut counts = vec![0usize; k];
        for (i, &l) in labels.iter().enumerate() {
            if l >= k {
                return Err(Error::Constraint(format!("component {i} assigned to expert {l} >= {k}")));
            }
            counts[l] += 1;
        }
        if let Some(bad) = counts.iter().position(|&c| c != r) {
            return Err(Error::Constraint(format!(
                "expert {bad} holds {} components, expected {r}",
                counts[bad]
            )));
        }
        Ok(Self { labels, k, r })
    }

    /// Component `i` stays with expert `i / r`.
    pub fn identity(k: usize, r: usize) -> Self {
        Self {
            labels: (0..k * r).map(|i| i / r).collect(),
            k,
            r,
        }
    }

    /// Reads a binary `rK x K` matrix; rows must sum to 1 and columns to `r`.
    pub fn from_matrix(pi: &DenseMatrix, r: usize) -> Result<Self> {
        let k = pi.cols();
        let mut labels = Vec::with_capacity(pi.rows());
        for i in 0..pi.rows() {
            let row = pi.row(i);
            if row.iter().any(|&v| v != 0.0 && v != 1.0) {
                return Err(Error::Constraint(format!("row {i} is not binary")));
            }
            let ones: Vec<usize> = (0..k).filter(|&j| row[j] == 1.0).collect();
            if ones.len() != 1 {
                return Err(Error::Constraint(format!("row {i} sums to {}", ones.len())));
            }
            labels.push(ones[0]);
        }
        Self::new(labels, k, r)
    }

    pub fn to_matrix(&self) -> DenseMatrix {
        let mut m = DenseMatrix::zeros(self.labels.len(), self.k);
        for (i, &l) in self.labels.iter().enumerate() {
            m[(i, l)] = 1.0;
        }
        m
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn expert_of(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn num_experts(&self) -> usize {
        self.k
    }

    pub fn rank(&self) -> usize {
        self.r
    }

    pub fn num_components(&self) -> usize {
        self.labels.len()
    }

    /// Members of expert `k` in ascending component order.
    pub fn members(&self, k: usize) -> Vec<usize> {
        (0..self.labels.len()).filter(|&i| self.labels[i] == k).collect()
    }

    pub fn is_identity(&self) -> bool {
        self.labels.iter().enumerate().all(|(i, &l)| l == i / self.r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_round_trip_and_feasibility() {
        let p = GroupingPolicy::new(vec![1, 0, 0, 1], 2, 2).unwrap();
        let m = p.to_matrix();
        for i in 0..4 {
            assert_eq!(m.row(i).iter().sum::<f64>(), 1.0);
        }
        for j in 0..2 {
            assert_eq!(m.column(j).iter().sum::<f64>(), 2.0);
        }
        assert_eq!(GroupingPolicy::from_matrix(&m, 2).unwrap(), p);
        assert_eq!(p.members(1), vec![0, 3]);
    }

    #[test]
    fn infeasible_assignments_are_rejected() {
        assert!(GroupingPolicy::new(vec![0, 0, 0, 1], 2, 2).is_err());
        assert!(GroupingPolicy::new(vec![0, 2], 2, 1).is_err());
        assert!(GroupingPolicy::new(vec![0, 1, 1], 2, 2).is_err());
        let mut m = GroupingPolicy::identity(2, 1).to_matrix();
        m[(0, 1)] = 1.0;
        assert!(GroupingPolicy::from_matrix(&m, 1).is_err());
    }

    #[test]
    fn identity_is_contiguous_blocks() {
        let p = GroupingPolicy::identity(3, 2);
        assert_eq!(p.labels(), &[0, 0, 1, 1, 2, 2]);
        assert!(p.is_identity());
    }
}
