use super::objective::{check_compatible, group_sums};
use super::{GradientBatch, GroupingPolicy};
use crate::linops::{full_svd, DenseMatrix};
use crate::{Error, Result};

/// Raw group sums and their nearest orthonormal frame.
#[derive(Debug, Clone)]
pub struct CentroidSet {
    /// `d x K`, column `k` is `Σ_{i ∈ k} ĝ_i` (unnormalised).
    pub raw: DenseMatrix,
    /// `d x K`, orthonormal columns.
    pub ortho: DenseMatrix,
}

impl CentroidSet {
    pub fn from_policy(pi: &GroupingPolicy, batch: &GradientBatch) -> Result<Self> {
        let raw = centroids(pi, batch)?;
        let ortho = orthogonalize_centroids(&raw)?;
        Ok(Self { raw, ortho })
    }
}

/// Column `k` is the plain sum of the unit gradients assigned to expert `k`.
pub fn centroids(pi: &GroupingPolicy, batch: &GradientBatch) -> Result<DenseMatrix> {
    check_compatible(pi, batch)?;
    DenseMatrix::from_columns(batch.dim(), &group_sums(pi, batch))
}

/// `Q = U_c V_cᵀ` from the thin SVD `C = U_c Σ_c V_cᵀ`: the orthonormal-column
/// matrix closest to `C` in Frobenius norm. Rank-deficient input still yields
/// orthonormal columns because the SVD completes `U_c`.
pub fn orthogonalize_centroids(raw: &DenseMatrix) -> Result<DenseMatrix> {
    let (d, k) = raw.shape();
    if d < k {
        return Err(Error::Dimension(format!(
            "cannot orthogonalise {k} centroids in dimension {d}"
        )));
    }
    if !raw.is_finite() {
        return Err(Error::InvalidInput("centroids contain non-finite values".into()));
    }
    let svd = full_svd(raw);
    svd.u.matmul(&svd.v.transpose())
}
