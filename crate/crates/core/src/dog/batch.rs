use crate::linops::{norm2, DenseMatrix};
use crate::{Error, Result};

/// Default threshold below which a rank-1 gradient is treated as dead.
pub const DEFAULT_EPS_G: f64 = 1e-12;

/// Concatenates, for every expert `k` and rank slot `j`, column `j` of
/// `grad_a[k]` with row `j` of `grad_b[k]`. Row `k·r + j` of the result is the
/// gradient of global component `k·r + j`; the width is `m + n`.
pub fn extract_rank1_gradients(
    grad_a: &[DenseMatrix],
    grad_b: &[DenseMatrix],
) -> Result<DenseMatrix> {
    if grad_a.len() != grad_b.len() || grad_a.is_empty() {
        return Err(Error::Dimension(format!(
            "{} A-gradients and {} B-gradients",
            grad_a.len(),
            grad_b.len()
        )));
    }
    let (m, r) = grad_a[0].shape();
    let n = grad_b[0].cols();
    for (k, (ga, gb)) in grad_a.iter().zip(grad_b).enumerate() {
        if ga.shape() != (m, r) || gb.shape() != (r, n) {
            return Err(Error::Dimension(format!(
                "expert {k}: grad A {:?}, grad B {:?}, expected ({m}, {r}) and ({r}, {n})",
                ga.shape(),
                gb.shape()
            )));
        }
    }
    let mut out = DenseMatrix::zeros(r * grad_a.len(), m + n);
    for (k, (ga, gb)) in grad_a.iter().zip(grad_b).enumerate() {
        for j in 0..r {
            let row = out.row_mut(k * r + j);
            for i in 0..m {
                row[i] = ga[(i, j)];
            }
            row[m..].copy_from_slice(gb.row(j));
        }
    }
    Ok(out)
}

/// Unit-normalised rank-1 gradients. Dead components (raw norm below the
/// threshold) are stored as zero rows.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBatch {
    vectors: DenseMatrix,
    raw_norms: Vec<f64>,
    dead: Vec<bool>,
}

impl GradientBatch {
    /// Number of components (`r · K`).
    pub fn len(&self) -> usize {
        self.vectors.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Vector dimension (`m + n`).
    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    pub fn vector(&self, i: usize) -> &[f64] {
        self.vectors.row(i)
    }

    /// Components as rows.
    pub fn vectors(&self) -> &DenseMatrix {
        &self.vectors
    }

    pub fn raw_norms(&self) -> &[f64] {
        &self.raw_norms
    }

    pub fn dead_mask(&self) -> &[bool] {
        &self.dead
    }

    pub fn is_dead(&self, i: usize) -> bool {
        self.dead[i]
    }

    pub fn live_count(&self) -> usize {
        self.dead.iter().filter(|d| !**d).count()
    }

    /// Wraps vectors that are already unit length (or exactly zero for dead
    /// components), checking the batch invariants.
    pub fn from_unit_vectors(vectors: DenseMatrix) -> Result<Self> {
        let mut raw_norms = Vec::with_capacity(vectors.rows());
        let mut dead = Vec::with_capacity(vectors.rows());
        for i in 0..vectors.rows() {
            let nrm = norm2(vectors.row(i));
            if nrm == 0.0 {
                dead.push(true);
            } else if (nrm - 1.0).abs() <= 1e-9 {
                dead.push(false);
            } else {
                return Err(Error::InvalidInput(format!(
                    "component {i} has norm {nrm}, expected 1 or 0"
                )));
            }
            raw_norms.push(nrm);
        }
        Ok(Self {
            vectors,
            raw_norms,
            dead,
        })
    }
}

/// Projects every raw gradient (one per row) onto the unit sphere.
pub fn normalize(raw: &DenseMatrix, eps_g: f64) -> Result<GradientBatch> {
    if eps_g.is_nan() || eps_g <= 0.0 {
        return Err(Error::InvalidParameter(format!("eps_g must be > 0, got {eps_g}")));
    }
    let mut vectors = raw.clone();
    let mut raw_norms = Vec::with_capacity(raw.rows());
    let mut dead = Vec::with_capacity(raw.rows());
    for i in 0..raw.rows() {
        let nrm = norm2(raw.row(i));
        let row = vectors.row_mut(i);
        if nrm < eps_g {
            row.iter_mut().for_each(|x| *x = 0.0);
            dead.push(true);
        } else {
            row.iter_mut().for_each(|x| *x /= nrm);
            dead.push(false);
        }
        raw_norms.push(nrm);
    }
    Ok(GradientBatch {
        vectors,
        raw_norms,
        dead,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradients_extract_to_zero_rows() {
        let ga = vec![DenseMatrix::zeros(3, 2); 2];
        let gb = vec![DenseMatrix::zeros(2, 4); 2];
        let g = extract_rank1_gradients(&ga, &gb).unwrap();
        assert_eq!(g.shape(), (4, 7));
        assert_eq!(g.max_abs(), 0.0);
    }

    #[test]
    fn single_component_concatenates_column_and_row() {
        let ga = DenseMatrix::from_rows(&[vec![1.0], vec![0.0]]).unwrap();
        let gb = DenseMatrix::from_rows(&[vec![0.0, 2.0]]).unwrap();
        let g = extract_rank1_gradients(&[ga], &[gb]).unwrap();
        assert_eq!(g.row(0), &[1.0, 0.0, 0.0, 2.0]);
    }

    #[test]
    fn global_index_is_expert_major() {
        let ga: Vec<_> = (0..2)
            .map(|k| DenseMatrix::from_fn(2, 3, |i, j| (100 * k + 10 * j + i) as f64))
            .collect();
        let gb: Vec<_> = (0..2)
            .map(|k| DenseMatrix::from_fn(3, 1, |j, _| -((100 * k + 10 * j) as f64)))
            .collect();
        let g = extract_rank1_gradients(&ga, &gb).unwrap();
        // expert 1, slot 2 -> global 5
        assert_eq!(g.row(5), &[120.0, 121.0, -120.0]);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let ga = vec![DenseMatrix::zeros(3, 2), DenseMatrix::zeros(3, 1)];
        let gb = vec![DenseMatrix::zeros(2, 4), DenseMatrix::zeros(1, 4)];
        assert!(matches!(extract_rank1_gradients(&ga, &gb), Err(Error::Dimension(_))));
        assert!(extract_rank1_gradients(&ga[..1], &gb).is_err());
    }

    #[test]
    fn normalize_examples() {
        let raw = DenseMatrix::from_rows(&[vec![3.0, 4.0, 0.0, 0.0], vec![0.0; 4]]).unwrap();
        let b = normalize(&raw, 1e-12).unwrap();
        assert_eq!(b.vector(0), &[0.6, 0.8, 0.0, 0.0]);
        assert_eq!(b.dead_mask(), &[false, true]);
        assert_eq!(b.vector(1), &[0.0; 4]);
        assert_eq!(b.raw_norms(), &[5.0, 0.0]);
        assert!(normalize(&raw, 0.0).is_err());
    }
}
