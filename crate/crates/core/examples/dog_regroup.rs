//! Groups rank-1 gradient directions into experts and regroups a bank with
//! the result, keeping the layer function unchanged.

use badit::bad::decompose;
use badit::dog::{dog_run, gradient_angles, normalize, DogConfig, GroupingPolicy, DEFAULT_EPS_G};
use badit::linops::DenseMatrix;
use badit::moe::MoeLoraLayer;

fn main() -> badit::Result<()> {
    let (k, r, m, n) = (3, 2, 6, 6);
    // three bundles of two nearly parallel directions, interleaved
    let raw = DenseMatrix::from_fn(k * r, m + n, |i, j| {
        let bundle = i % k;
        let base = if j == 2 * bundle { 1.0 } else { 0.0 };
        base + 0.05 * (((i * 7 + j * 3) % 5) as f64 - 2.0)
    });
    let batch = normalize(&raw, DEFAULT_EPS_G)?;

    let identity = GroupingPolicy::identity(k, r);
    let out = dog_run(&batch, k, r, &DogConfig::default())?;
    let before = gradient_angles(&batch, &identity)?;
    let after = gradient_angles(&batch, &out.policy)?;
    println!("assignment: {:?} after {} iterations", out.policy.labels(), out.iterations);
    println!("intra/inter before: {:?} / {:?}", before.intra_deg, before.inter_deg);
    println!("intra/inter after:  {:?} / {:?}", after.intra_deg, after.inter_deg);

    let w = DenseMatrix::from_fn(m, n, |i, j| (i as f64 - j as f64) / 3.0 + if i == j { 2.0 } else { 0.0 });
    let mut bank = decompose(&w, k, r, 1.0)?;
    bank.set_routing(vec![0.5, 1.0, 2.5])?;
    let mut layer = MoeLoraLayer::scalar(bank);
    let x = vec![1.0, -0.5, 0.25, 2.0, 0.0, -1.5];
    let y0 = layer.forward(&x)?;
    layer.regroup(&out.policy)?;
    let y1 = layer.forward(&x)?;
    let diff: f64 = y0.iter().zip(&y1).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    println!("largest output change after regrouping: {diff:.2e}");
    Ok(())
}
