//! One-sided (Hestenes) Jacobi SVD.
//!
//! Deterministic and accurate to working precision: singular vectors come out
//! orthonormal to roughly machine epsilon regardless of conditioning, which the
//! orthogonality checks downstream rely on.

use super::matrix::{dot, DenseMatrix};
use crate::{Error, Result};

const MAX_SWEEPS: usize = 80;

/// Thin SVD `W ≈ U diag(sigma) Vᵀ` with `R` retained triplets.
#[derive(Debug, Clone)]
pub struct SvdResult {
    /// `m x R`, orthonormal columns.
    pub u: DenseMatrix,
    /// Length `R`, non-negative, descending.
    pub sigma: Vec<f64>,
    /// `n x R`, orthonormal columns.
    pub v: DenseMatrix,
}

impl SvdResult {
    pub fn rank(&self) -> usize {
        self.sigma.len()
    }

    /// `U diag(sigma) Vᵀ`.
    pub fn reconstruct(&self) -> DenseMatrix {
        let us = DenseMatrix::from_fn(self.u.rows(), self.rank(), |i, j| {
            self.u[(i, j)] * self.sigma[j]
        });
        us.matmul(&self.v.transpose())
            .expect("SVD factors have consistent shapes")
    }

    /// Keeps the leading `rank` triplets.
    pub fn truncate(mut self, rank: usize) -> Self {
        self.u = self.u.columns(0, rank);
        self.v = self.v.columns(0, rank);
        self.sigma.truncate(rank);
        self
    }
}

/// Best rank-`rank` approximation of `w` via its leading singular triplets.
///
/// Each left singular vector is sign-normalised so that its largest-magnitude
/// entry is positive (first such entry on ties); the matching right vector is
/// flipped with it.
pub fn truncated_svd(w: &DenseMatrix, rank: usize) -> Result<SvdResult> {
    let max = w.rows().min(w.cols());
    if rank == 0 || rank > max {
        return Err(Error::InvalidRank { rank, max });
    }
    if !w.is_finite() {
        return Err(Error::InvalidInput("matrix has non-finite entries".into()));
    }
    Ok(full_svd(w).truncate(rank))
}

/// Thin SVD keeping all `min(m, n)` triplets.
pub fn full_svd(w: &DenseMatrix) -> SvdResult {
    let (m, n) = w.shape();
    if m >= n {
        let (u, sigma, v) = jacobi_tall(w);
        finish(u, sigma, v, m, n)
    } else {
        let (v, sigma, u) = jacobi_tall(&w.transpose());
        finish(u, sigma, v, m, n)
    }
}

/// Jacobi on a tall (`m >= n`) matrix. Returns column lists for `U`, `σ`, `V`
/// sorted by descending `σ`.
fn jacobi_tall(w: &DenseMatrix) -> (Vec<Vec<f64>>, Vec<f64>, Vec<Vec<f64>>) {
    let (m, n) = w.shape();
    let mut g: Vec<Vec<f64>> = (0..n).map(|j| w.column(j)).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();
    let mut norms: Vec<f64> = g.iter().map(|c| dot(c, c)).collect();
    let tol = f64::EPSILON;

    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let alpha = norms[p];
                let beta = norms[q];
                if alpha == 0.0 || beta == 0.0 {
                    continue;
                }
                let gamma = dot(&g[p], &g[q]);
                if gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                let (gp, gq) = pair_mut(&mut g, p, q);
                rotate(gp, gq, c, s);
                let (vp, vq) = pair_mut(&mut v, p, q);
                rotate(vp, vq, c, s);
                norms[p] = dot(&g[p], &g[p]);
                norms[q] = dot(&g[q], &g[q]);
            }
        }
        if !rotated {
            break;
        }
    }

    let sigma: Vec<f64> = g.iter().map(|c| dot(c, c).sqrt()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| sigma[b].total_cmp(&sigma[a]).then(a.cmp(&b)));

    let smax = order.first().map_or(0.0, |&i| sigma[i]);
    let negligible = smax * f64::EPSILON * (m.max(n) as f64);
    let mut u_cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut sig_sorted = Vec::with_capacity(n);
    let mut v_cols = Vec::with_capacity(n);
    for &j in &order {
        let s = sigma[j];
        let col = if s > negligible && s > 0.0 {
            g[j].iter().map(|x| x / s).collect()
        } else {
            vec![0.0; m]
        };
        u_cols.push(col);
        sig_sorted.push(if s > negligible { s } else { 0.0 });
        v_cols.push(v[j].clone());
    }
    reorthonormalize(&mut u_cols);
    (u_cols, sig_sorted, v_cols)
}

fn finish(
    mut u: Vec<Vec<f64>>,
    sigma: Vec<f64>,
    mut v: Vec<Vec<f64>>,
    m: usize,
    n: usize,
) -> SvdResult {
    for (uc, vc) in u.iter_mut().zip(v.iter_mut()) {
        let mut best = 0;
        for (i, x) in uc.iter().enumerate() {
            if x.abs() > uc[best].abs() {
                best = i;
            }
        }
        if uc[best] < 0.0 {
            uc.iter_mut().for_each(|x| *x = -*x);
            vc.iter_mut().for_each(|x| *x = -*x);
        }
    }
    SvdResult {
        u: DenseMatrix::from_columns(m, &u).expect("column lengths are m"),
        sigma,
        v: DenseMatrix::from_columns(n, &v).expect("column lengths are n"),
    }
}

/// Modified Gram-Schmidt pass (applied twice). Columns that collapse, including
/// the zero placeholders for null singular values, are replaced by the
/// coordinate vector with the largest residual, completing the basis.
pub(crate) fn reorthonormalize(cols: &mut [Vec<f64>]) {
    let len = cols.first().map_or(0, Vec::len);
    for j in 0..cols.len() {
        let (done, rest) = cols.split_at_mut(j);
        let col = &mut rest[0];
        let original = dot(col, col).sqrt();
        for _ in 0..2 {
            for prev in done.iter() {
                let proj = dot(prev, col);
                col.iter_mut().zip(prev).for_each(|(c, p)| *c -= proj * p);
            }
        }
        let nrm = dot(col, col).sqrt();
        if original > 0.0 && nrm > 0.5 * original {
            col.iter_mut().for_each(|c| *c /= nrm);
            continue;
        }
        // completion from the canonical basis
        let mut best: Option<(f64, Vec<f64>)> = None;
        for e in 0..len {
            let mut cand = vec![0.0; len];
            cand[e] = 1.0;
            for _ in 0..2 {
                for prev in done.iter() {
                    let proj = dot(prev, &cand);
                    cand.iter_mut().zip(prev).for_each(|(c, p)| *c -= proj * p);
                }
            }
            let cn = dot(&cand, &cand).sqrt();
            if best.as_ref().is_none_or(|(b, _)| cn > *b + 1e-12) {
                best = Some((cn, cand));
            }
        }
        let (cn, cand) = best.expect("basis completion needs len >= number of columns");
        *col = cand.into_iter().map(|c| c / cn).collect();
    }
}

fn pair_mut<T>(items: &mut [T], p: usize, q: usize) -> (&mut T, &mut T) {
    debug_assert!(p < q);
    let (lo, hi) = items.split_at_mut(q);
    (&mut lo[p], &mut hi[0])
}

#[inline]
fn rotate(xp: &mut [f64], xq: &mut [f64], c: f64, s: f64) {
    for (a, b) in xp.iter_mut().zip(xq.iter_mut()) {
        let (pa, qb) = (*a, *b);
        *a = c * pa - s * qb;
        *b = s * pa + c * qb;
    }
}
