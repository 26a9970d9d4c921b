//! Decomposition of a weight matrix into `K` orthogonal rank-`r` LoRA experts
//! plus a frozen residual.
//!
//! Expert `k` (0-based) owns singular triplets `r·k .. r·k + r`, largest first.
//! Factors carry `√(σ / s)` on each side so that `s · A_k B_k = U_k Σ_k V_kᵀ`
//! holds for every scale `s > 0`.

mod io;

pub use io::{load_bank, save_bank, BankManifest};

use crate::linops::{frobenius_inner, full_svd, DenseMatrix};
use crate::{Error, Result};

/// Low-rank factor pair of one expert: `a` is `m x r`, `b` is `r x n`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpertFactors {
    pub a: DenseMatrix,
    pub b: DenseMatrix,
}

impl ExpertFactors {
    /// `A · B` (unscaled).
    pub fn product(&self) -> DenseMatrix {
        self.a.matmul(&self.b).expect("factor shapes checked at construction")
    }
}

/// Residual, expert factors, routing weights and the LoRA scale of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpertBank {
    residual: DenseMatrix,
    experts: Vec<ExpertFactors>,
    routing: Vec<f64>,
    scale: f64,
    rank: usize,
}

impl ExpertBank {
    /// Assembles a bank from parts, validating every shape.
    pub fn new(
        residual: DenseMatrix,
        experts: Vec<ExpertFactors>,
        routing: Vec<f64>,
        scale: f64,
    ) -> Result<Self> {
        let (m, n) = residual.shape();
        let k = experts.len();
        if k == 0 {
            return Err(Error::InvalidParameter("a bank needs at least one expert".into()));
        }
        let rank = experts[0].a.cols();
        if rank == 0 {
            return Err(Error::InvalidParameter("expert rank must be positive".into()));
        }
        for (i, e) in experts.iter().enumerate() {
            if e.a.shape() != (m, rank) || e.b.shape() != (rank, n) {
                return Err(Error::Dimension(format!(
                    "expert {i}: A is {:?}, B is {:?}; expected ({m}, {rank}) and ({rank}, {n})",
                    e.a.shape(),
                    e.b.shape()
                )));
            }
        }
        if rank * k > m.min(n) {
            return Err(Error::Capacity {
                needed: rank * k,
                available: m.min(n),
            });
        }
        if routing.len() != k {
            return Err(Error::Dimension(format!(
                "{} routing weights for {k} experts",
                routing.len()
            )));
        }
        if routing.iter().any(|a| !a.is_finite()) {
            return Err(Error::InvalidInput("routing weights must be finite".into()));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidParameter(format!("scale must be > 0, got {scale}")));
        }
        Ok(Self {
            residual,
            experts,
            routing,
            scale,
            rank,
        })
    }

    pub fn num_experts(&self) -> usize {
        self.experts.len()
    }

    /// Rank `r` of every expert.
    pub fn rank(&self) -> usize {
        self.rank
    }

    /// Total number of rank-1 components, `r · K`.
    pub fn num_components(&self) -> usize {
        self.rank * self.experts.len()
    }

    /// `(m, n)` of the layer weight.
    pub fn shape(&self) -> (usize, usize) {
        self.residual.shape()
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn residual(&self) -> &DenseMatrix {
        &self.residual
    }

    pub fn experts(&self) -> &[ExpertFactors] {
        &self.experts
    }

    pub fn expert(&self, k: usize) -> Result<&ExpertFactors> {
        self.experts.get(k).ok_or(Error::IndexOutOfRange {
            index: k,
            len: self.experts.len(),
        })
    }

    /// Mutable factors. The residual has no mutable accessor.
    pub fn experts_mut(&mut self) -> &mut [ExpertFactors] {
        &mut self.experts
    }

    pub fn routing(&self) -> &[f64] {
        &self.routing
    }

    pub fn routing_mut(&mut self) -> &mut [f64] {
        &mut self.routing
    }

    pub fn set_routing(&mut self, routing: Vec<f64>) -> Result<()> {
        if routing.len() != self.experts.len() {
            return Err(Error::Dimension(format!(
                "{} routing weights for {} experts",
                routing.len(),
                self.experts.len()
            )));
        }
        self.routing = routing;
        Ok(())
    }

    /// FNV-1a over the residual's bit patterns and shape.
    pub fn residual_checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let (m, n) = self.residual.shape();
        let words = [m as u64, n as u64]
            .into_iter()
            .chain(self.residual.as_slice().iter().map(|v| v.to_bits()));
        for w in words {
            for byte in w.to_le_bytes() {
                h ^= u64::from(byte);
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        h
    }

    pub(crate) fn from_parts_unchecked(
        residual: DenseMatrix,
        experts: Vec<ExpertFactors>,
        routing: Vec<f64>,
        scale: f64,
        rank: usize,
    ) -> Self {
        Self {
            residual,
            experts,
            routing,
            scale,
            rank,
        }
    }
}

/// Splits `w` into `k` experts of rank `r` and a residual, routing weights all 1.
pub fn decompose(w: &DenseMatrix, k: usize, r: usize, scale: f64) -> Result<ExpertBank> {
    if k == 0 || r == 0 {
        return Err(Error::InvalidParameter(format!(
            "expert count and rank must be positive (k = {k}, r = {r})"
        )));
    }
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::InvalidParameter(format!("scale must be > 0, got {scale}")));
    }
    let (m, n) = w.shape();
    if r * k > m.min(n) {
        return Err(Error::Capacity {
            needed: r * k,
            available: m.min(n),
        });
    }
    if !w.is_finite() {
        return Err(Error::InvalidInput("matrix has non-finite entries".into()));
    }

    let svd = full_svd(w);
    let experts = (0..k)
        .map(|e| {
            let idx = e * r..(e + 1) * r;
            let root: Vec<f64> = svd.sigma[idx.clone()]
                .iter()
                .map(|s| (s / scale).sqrt())
                .collect();
            let a = DenseMatrix::from_fn(m, r, |i, j| svd.u[(i, idx.start + j)] * root[j]);
            let b = DenseMatrix::from_fn(r, n, |i, j| root[i] * svd.v[(j, idx.start + i)]);
            ExpertFactors { a, b }
        })
        .collect();

    let mut residual = DenseMatrix::zeros(m, n);
    for t in r * k..svd.sigma.len() {
        let s = svd.sigma[t];
        if s == 0.0 {
            continue;
        }
        for i in 0..m {
            let us = svd.u[(i, t)] * s;
            for (out, j) in residual.row_mut(i).iter_mut().zip(0..n) {
                *out += us * svd.v[(j, t)];
            }
        }
    }

    Ok(ExpertBank::from_parts_unchecked(
        residual,
        experts,
        vec![1.0; k],
        scale,
        r,
    ))
}

/// `s · A_k B_k`; routing is not applied.
pub fn expert_delta(bank: &ExpertBank, k: usize) -> Result<DenseMatrix> {
    Ok(bank.expert(k)?.product().scaled(bank.scale))
}

/// `Ŵ + Σ_k α_k · s · A_k B_k`.
pub fn reconstruct(bank: &ExpertBank) -> DenseMatrix {
    let mut out = bank.residual.clone();
    for (e, alpha) in bank.experts.iter().zip(&bank.routing) {
        out.add_scaled(alpha * bank.scale, &e.product())
            .expect("expert shapes match the residual");
    }
    out
}

/// Normalised Frobenius Gram matrix of the expert deltas.
#[derive(Debug, Clone)]
pub struct OrthogonalityReport {
    /// `K x K`; entry `(k, l) = ⟨ΔW_k, ΔW_l⟩ / (‖ΔW_k‖‖ΔW_l‖)`. Rows and
    /// columns of zero-norm experts are 0, including their diagonal.
    pub matrix: DenseMatrix,
    /// `true` for experts whose delta has zero Frobenius norm; their
    /// normalised entries are undefined and reported as 0.
    pub zero_norm: Vec<bool>,
}

impl OrthogonalityReport {
    /// Largest `|entry|` off the diagonal.
    pub fn max_offdiag(&self) -> f64 {
        let k = self.matrix.rows();
        let mut worst = 0.0f64;
        for i in 0..k {
            for j in 0..k {
                if i != j {
                    worst = worst.max(self.matrix[(i, j)].abs());
                }
            }
        }
        worst
    }
}

pub fn pairwise_orthogonality(bank: &ExpertBank) -> OrthogonalityReport {
    let deltas: Vec<DenseMatrix> = (0..bank.num_experts())
        .map(|k| expert_delta(bank, k).expect("index in range"))
        .collect();
    let norms: Vec<f64> = deltas.iter().map(DenseMatrix::frobenius_norm).collect();
    let zero_norm: Vec<bool> = norms.iter().map(|&n| n == 0.0).collect();
    let k = deltas.len();
    let mut matrix = DenseMatrix::zeros(k, k);
    for i in 0..k {
        for j in i..k {
            if zero_norm[i] || zero_norm[j] {
                continue;
            }
            let v = if i == j {
                1.0
            } else {
                frobenius_inner(&deltas[i], &deltas[j]).expect("same shapes") / (norms[i] * norms[j])
            };
            matrix[(i, j)] = v;
            matrix[(j, i)] = v;
        }
    }
    OrthogonalityReport { matrix, zero_norm }
}
