//! Splits a random weight matrix into orthogonal low-rank experts and checks
//! that the bank reproduces the matrix.

use badit::bad::{decompose, pairwise_orthogonality, reconstruct};
use badit::linops::DenseMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn main() -> badit::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let w = DenseMatrix::from_fn(64, 48, |_, _| rng.sample(StandardNormal));
    let bank = decompose(&w, 8, 4, 2.0)?;

    let ortho = pairwise_orthogonality(&bank);
    let err = reconstruct(&bank).sub(&w)?.frobenius_norm() / w.frobenius_norm();
    println!("experts: {} of rank {}", bank.num_experts(), bank.rank());
    println!("max normalised overlap between experts: {:.2e}", ortho.max_offdiag());
    println!("residual norm: {:.4}", bank.residual().frobenius_norm());
    println!("relative reconstruction error: {err:.2e}");
    for (k, f) in bank.experts().iter().enumerate() {
        println!("  expert {k}: |A B| = {:.4}", f.product().frobenius_norm());
    }
    Ok(())
}
