use super::GroupingPolicy;
use crate::bad::{ExpertBank, ExpertFactors};
use crate::linops::DenseMatrix;
use crate::{Error, Result};

/// Smallest routing weight a receiving expert may carry.
pub const MIN_DESTINATION_ALPHA: f64 = 1e-12;

/// How a moved component's A-column is rescaled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rescale {
    /// Multiply by `α_source / α_destination` so the routed sum is unchanged.
    RoutingRatio,
    /// Move the factors untouched.
    None,
}

/// Rebuilds the experts according to `pi` with routing-ratio rescaling.
///
/// Expert `v` of the result holds the components labelled `v`, in ascending
/// global index. A component moving from `u` to `v` has its A-column scaled by
/// `α_u / α_v`; B-rows are copied unchanged and routing weights are kept, so
/// `reconstruct` is preserved.
pub fn regroup(bank: &ExpertBank, pi: &GroupingPolicy) -> Result<ExpertBank> {
    regroup_with(bank, pi, Rescale::RoutingRatio)
}

pub fn regroup_with(bank: &ExpertBank, pi: &GroupingPolicy, rescale: Rescale) -> Result<ExpertBank> {
    let (k, r) = (bank.num_experts(), bank.rank());
    if pi.num_experts() != k || pi.rank() != r {
        return Err(Error::Dimension(format!(
            "policy for {} experts of rank {} applied to a bank of {k} experts of rank {r}",
            pi.num_experts(),
            pi.rank()
        )));
    }
    let alpha = bank.routing();
    if rescale == Rescale::RoutingRatio {
        for (i, &v) in pi.labels().iter().enumerate() {
            if i / r != v && alpha[v].abs() < MIN_DESTINATION_ALPHA {
                return Err(Error::DivisionHazard { expert: v, alpha: alpha[v] });
            }
        }
    }
    let (m, n) = bank.shape();
    let old = bank.experts();
    let experts = (0..k)
        .map(|v| {
            let mut a = DenseMatrix::zeros(m, r);
            let mut b = DenseMatrix::zeros(r, n);
            for (slot, i) in pi.members(v).into_iter().enumerate() {
                let (u, j) = (i / r, i % r);
                let gamma = match rescale {
                    Rescale::RoutingRatio if u != v => Some(alpha[u] / alpha[v]),
                    _ => None,
                };
                for row in 0..m {
                    let x = old[u].a[(row, j)];
                    a[(row, slot)] = gamma.map_or(x, |g| x * g);
                }
                b.row_mut(slot).copy_from_slice(old[u].b.row(j));
            }
            ExpertFactors { a, b }
        })
        .collect();
    ExpertBank::new(bank.residual().clone(), experts, alpha.to_vec(), bank.scale())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bad::{decompose, reconstruct};

    fn bank() -> ExpertBank {
        let w = DenseMatrix::from_fn(6, 5, |i, j| ((i * 5 + j * 7) % 11) as f64 - 5.0);
        decompose(&w, 2, 2, 2.0).unwrap()
    }

    #[test]
    fn identity_policy_is_bit_identical() {
        let mut b = bank();
        b.set_routing(vec![0.3, 2.0]).unwrap();
        assert_eq!(regroup(&b, &GroupingPolicy::identity(2, 2)).unwrap(), b);
    }

    #[test]
    fn heterogeneous_routing_preserves_weights() {
        let mut b = bank();
        b.set_routing(vec![2.0, 0.5]).unwrap();
        let pi = GroupingPolicy::new(vec![0, 1, 0, 1], 2, 2).unwrap();
        let out = regroup(&b, &pi).unwrap();
        assert_eq!(out.routing(), b.routing());
        assert_eq!(out.residual_checksum(), b.residual_checksum());
        let diff = reconstruct(&out).sub(&reconstruct(&b)).unwrap().frobenius_norm();
        assert!(diff <= 1e-12 * reconstruct(&b).frobenius_norm());
    }

    #[test]
    fn zero_destination_weight_is_refused() {
        let mut b = bank();
        b.set_routing(vec![1.0, 0.0]).unwrap();
        let pi = GroupingPolicy::new(vec![0, 1, 0, 1], 2, 2).unwrap();
        assert!(matches!(regroup(&b, &pi), Err(Error::DivisionHazard { expert: 1, .. })));
        // without rescaling nothing is divided
        assert!(regroup_with(&b, &pi, Rescale::None).is_ok());
    }

    #[test]
    fn policy_shape_must_match() {
        assert!(regroup(&bank(), &GroupingPolicy::identity(4, 1)).is_err());
    }
}
