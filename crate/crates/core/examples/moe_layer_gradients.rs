//! Forward and backward passes of the expert layer in both gating modes,
//! checked against central differences.

use badit::bad::decompose;
use badit::linops::{dot, DenseMatrix};
use badit::moe::MoeLoraLayer;

fn probe(name: &str, layer: &MoeLoraLayer, x: &[f64], u: &[f64]) -> badit::Result<()> {
    let grads = layer.backward(x, u)?;
    let step = 1e-6;
    let mut plus = layer.clone();
    let mut minus = layer.clone();
    plus.bank_mut().experts_mut()[0].a[(0, 0)] += step;
    minus.bank_mut().experts_mut()[0].a[(0, 0)] -= step;
    let numeric = (dot(u, &plus.forward(x)?) - dot(u, &minus.forward(x)?)) / (2.0 * step);
    println!("{name}: output {:?}", layer.forward(x)?.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>());
    println!(
        "{name}: dA[0][0,0] analytic {:.6} numeric {:.6}, alpha grads {:?}",
        grads.grad_a[0][(0, 0)],
        numeric,
        grads.grad_alpha.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>()
    );
    Ok(())
}

fn main() -> badit::Result<()> {
    let w = DenseMatrix::from_fn(5, 4, |i, j| ((i + 2 * j) % 5) as f64 - 2.0);
    let bank = decompose(&w, 2, 2, 1.0)?;
    let x = [0.5, -1.0, 2.0, 0.25];
    let u = [1.0, 0.0, -1.0, 0.5, 2.0];

    let scalar = MoeLoraLayer::scalar(bank.clone());
    probe("scalar", &scalar, &x, &u)?;

    let router = DenseMatrix::from_fn(4, 2, |i, j| 0.3 * (i as f64 - j as f64));
    let gated = MoeLoraLayer::gated(bank, router, 1)?;
    println!("gated: gate weights {:?}", gated.gate_weights(&x)?);
    probe("gated", &gated, &x, &u)?;
    Ok(())
}
