//! Dense linear algebra shared by every other module.

mod io;
mod matrix;
mod svd;

pub use io::{read_bmat, read_csv_matrix, write_bmat, write_csv_matrix, BMAT_MAGIC};
pub use matrix::{dot, norm2, DenseMatrix};
pub use svd::{full_svd, truncated_svd, SvdResult};

pub(crate) use svd::reorthonormalize;

use crate::{Error, Result};

/// `Σ_ij x_ij y_ij`.
pub fn frobenius_inner(x: &DenseMatrix, y: &DenseMatrix) -> Result<f64> {
    if x.shape() != y.shape() {
        return Err(Error::Dimension(format!(
            "Frobenius inner product of {:?} and {:?}",
            x.shape(),
            y.shape()
        )));
    }
    Ok(dot(x.as_slice(), y.as_slice()))
}

/// `‖QᵀQ − I‖_max` for a matrix with at most as many columns as rows.
pub fn orthonormality_defect(q: &DenseMatrix) -> Result<f64> {
    if q.cols() > q.rows() {
        return Err(Error::Dimension(format!(
            "orthonormality of {}x{} needs cols <= rows",
            q.rows(),
            q.cols()
        )));
    }
    let gram = q.tr_matmul(q)?;
    let mut worst = 0.0f64;
    for i in 0..gram.rows() {
        for j in 0..gram.cols() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((gram[(i, j)] - target).abs());
        }
    }
    Ok(worst)
}
