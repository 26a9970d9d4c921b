#![allow(dead_code)]

use badit::bad::{decompose, ExpertBank};
use badit::dog::GradientBatch;
use badit::linops::DenseMatrix;
use badit::moe::MoeLoraLayer;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

pub fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Unit-norm random rows, with the listed rows set to zero.
pub fn random_batch(rng: &mut ChaCha8Rng, n: usize, d: usize, dead: &[usize]) -> GradientBatch {
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            if dead.contains(&i) {
                vec![0.0; d]
            } else {
                let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
                unit(&v)
            }
        })
        .collect();
    GradientBatch::from_unit_vectors(DenseMatrix::from_rows(&rows).unwrap()).unwrap()
}

/// Orthonormal `d x k` via Gram-Schmidt on Gaussian columns.
pub fn random_orthonormal(rng: &mut ChaCha8Rng, d: usize, k: usize) -> DenseMatrix {
    let mut cols: Vec<Vec<f64>> = Vec::new();
    while cols.len() < k {
        let mut v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        for _ in 0..2 {
            for c in &cols {
                let p = dot(c, &v);
                v.iter_mut().zip(c).for_each(|(x, y)| *x -= p * y);
            }
        }
        cols.push(unit(&v));
    }
    DenseMatrix::from_columns(d, &cols).unwrap()
}

/// A random balanced labelling: `r` copies of each expert, shuffled.
pub fn random_policy_labels(rng: &mut ChaCha8Rng, k: usize, r: usize) -> Vec<usize> {
    let mut labels: Vec<usize> = (0..k * r).map(|i| i / r).collect();
    labels.shuffle(rng);
    labels
}

/// Every balanced labelling of `k * r` items, in lexicographic order.
pub fn balanced_labellings(k: usize, r: usize) -> Vec<Vec<usize>> {
    fn rec(pos: usize, n: usize, k: usize, r: usize, load: &mut Vec<usize>, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if pos == n {
            out.push(cur.clone());
            return;
        }
        for e in 0..k {
            if load[e] < r {
                load[e] += 1;
                cur.push(e);
                rec(pos + 1, n, k, r, load, cur, out);
                cur.pop();
                load[e] -= 1;
            }
        }
    }
    let mut out = Vec::new();
    rec(0, k * r, k, r, &mut vec![0; k], &mut Vec::new(), &mut out);
    out
}

/// Adjusted Rand index between two labellings.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len();
    let ka = a.iter().max().map_or(0, |m| m + 1);
    let kb = b.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![vec![0u64; kb]; ka];
    for (&x, &y) in a.iter().zip(b) {
        table[x][y] += 1;
    }
    let c2 = |x: u64| (x * x.saturating_sub(1)) as f64 / 2.0;
    let sum_cells: f64 = table.iter().flatten().map(|&x| c2(x)).sum();
    let sum_a: f64 = table.iter().map(|row| c2(row.iter().sum())).sum();
    let sum_b: f64 = (0..kb).map(|j| c2(table.iter().map(|row| row[j]).sum())).sum();
    let total = c2(n as u64);
    let expected = sum_a * sum_b / total;
    let max = (sum_a + sum_b) / 2.0;
    if max == expected {
        return 1.0;
    }
    (sum_cells - expected) / (max - expected)
}

/// `k` orthogonal bundles of `r` noisy unit vectors in dimension `d`, in a
/// shuffled order. Returns the batch and the planted bundle of each row.
pub fn planted_bundles(rng: &mut ChaCha8Rng, k: usize, r: usize, d: usize, sigma: f64) -> (GradientBatch, Vec<usize>) {
    let dirs = random_orthonormal(rng, d, k);
    let mut labels: Vec<usize> = (0..k * r).map(|i| i / r).collect();
    labels.shuffle(rng);
    let rows: Vec<Vec<f64>> = labels
        .iter()
        .map(|&b| {
            let v: Vec<f64> = (0..d)
                .map(|i| dirs[(i, b)] + sigma * rng.sample::<f64, _>(StandardNormal))
                .collect();
            unit(&v)
        })
        .collect();
    let batch = GradientBatch::from_unit_vectors(DenseMatrix::from_rows(&rows).unwrap()).unwrap();
    (batch, labels)
}

/// Bank from a random matrix with routing weights drawn from `[lo, hi]`.
pub fn random_bank(rng: &mut ChaCha8Rng, m: usize, n: usize, k: usize, r: usize, lo: f64, hi: f64) -> ExpertBank {
    let w = gaussian(rng, m, n);
    let mut bank = decompose(&w, k, r, rng.random_range(0.5..2.0)).unwrap();
    let alpha: Vec<f64> = (0..k).map(|_| rng.random_range(lo..=hi)).collect();
    bank.set_routing(alpha).unwrap();
    bank
}

pub fn random_vector(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Largest `|a − n| / max(1, |a|, |n|)` between analytic gradients and
/// central differences of `⟨u, forward(x)⟩`, over every trainable entry.
pub fn finite_difference_error(layer: &MoeLoraLayer, x: &[f64], u: &[f64], step: f64) -> f64 {
    let grads = layer.backward(x, u).unwrap();
    let f = |l: &MoeLoraLayer| dot(u, &l.forward(x).unwrap());
    let mut worst = 0.0f64;
    let mut check = |analytic: f64, plus: &MoeLoraLayer, minus: &MoeLoraLayer| {
        let numeric = (f(plus) - f(minus)) / (2.0 * step);
        let denom = 1.0f64.max(analytic.abs()).max(numeric.abs());
        worst = worst.max((analytic - numeric).abs() / denom);
    };
    let k = layer.bank().num_experts();
    for e in 0..k {
        for which in 0..2 {
            let len = if which == 0 {
                layer.bank().experts()[e].a.as_slice().len()
            } else {
                layer.bank().experts()[e].b.as_slice().len()
            };
            for idx in 0..len {
                let mut plus = layer.clone();
                let mut minus = layer.clone();
                let get = |l: &mut MoeLoraLayer| -> *mut f64 {
                    let f = &mut l.bank_mut().experts_mut()[e];
                    let m = if which == 0 { &mut f.a } else { &mut f.b };
                    &mut m.as_mut_slice()[idx]
                };
                unsafe {
                    *get(&mut plus) += step;
                    *get(&mut minus) -= step;
                }
                let analytic = if which == 0 {
                    grads.grad_a[e].as_slice()[idx]
                } else {
                    grads.grad_b[e].as_slice()[idx]
                };
                check(analytic, &plus, &minus);
            }
        }
        let mut plus = layer.clone();
        let mut minus = layer.clone();
        plus.bank_mut().routing_mut()[e] += step;
        minus.bank_mut().routing_mut()[e] -= step;
        check(grads.grad_alpha[e], &plus, &minus);
    }
    if let Some(gr) = &grads.grad_router {
        for idx in 0..gr.as_slice().len() {
            let mut plus = layer.clone();
            let mut minus = layer.clone();
            plus.router_mut().unwrap().as_mut_slice()[idx] += step;
            minus.router_mut().unwrap().as_mut_slice()[idx] -= step;
            check(gr.as_slice()[idx], &plus, &minus);
        }
    }
    worst
}
