//! Unconstrained spherical K-means used to seed the grouping loop.

use rand::Rng as _;

use super::GradientBatch;
use crate::linops::{dot, norm2, DenseMatrix};
use crate::rng;
use crate::{Error, Result};

pub const MAX_KMEANS_ROUNDS: usize = 50;

/// Hard clustering of the live components. Not capacity-balanced.
#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    /// Cluster of each component; `None` for dead components.
    pub labels: Vec<Option<usize>>,
    /// `d x K`, unit-norm columns.
    pub centroids: DenseMatrix,
    pub rounds: usize,
    pub converged: bool,
}

impl Clustering {
    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.centroids.cols()];
        for l in self.labels.iter().flatten() {
            sizes[*l] += 1;
        }
        sizes
    }
}

/// Cosine K-means with k-means++ seeding (distance `1 − cos`). Empty clusters
/// take the live point with the smallest cosine to its own centroid.
pub fn spherical_kmeans_init(batch: &GradientBatch, k: usize, seed: u64) -> Result<Clustering> {
    let live: Vec<usize> = (0..batch.len()).filter(|&i| !batch.is_dead(i)).collect();
    if k == 0 || live.len() < k {
        return Err(Error::DegenerateInput(format!(
            "{} live components cannot form {k} clusters",
            live.len()
        )));
    }
    let d = batch.dim();
    let mut rng = rng::seeded(seed);
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut chosen: Vec<usize> = Vec::with_capacity(k);

    let first = live[rng.random_range(0..live.len())];
    centroids.push(batch.vector(first).to_vec());
    chosen.push(first);
    while centroids.len() < k {
        let weights: Vec<f64> = live
            .iter()
            .map(|&i| {
                let best = centroids
                    .iter()
                    .map(|c| dot(c, batch.vector(i)))
                    .fold(f64::NEG_INFINITY, f64::max);
                (1.0 - best).max(0.0)
            })
            .collect();
        let total: f64 = weights.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = *live.last().expect("live is non-empty");
            for (&i, &w) in live.iter().zip(&weights) {
                if w > 0.0 && target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            pick
        } else {
            // every live point coincides with a centroid
            live.iter().copied().find(|i| !chosen.contains(i)).unwrap_or(live[0])
        };
        centroids.push(batch.vector(pick).to_vec());
        chosen.push(pick);
    }

    let mut labels: Vec<Option<usize>> = vec![None; batch.len()];
    let mut rounds = 0;
    let mut converged = false;
    while rounds < MAX_KMEANS_ROUNDS {
        rounds += 1;
        let mut next = vec![None; batch.len()];
        let mut sims = vec![0.0; batch.len()];
        for &i in &live {
            let (mut best_k, mut best_s) = (0, f64::NEG_INFINITY);
            for (c, cent) in centroids.iter().enumerate() {
                let s = dot(cent, batch.vector(i));
                if s > best_s {
                    best_k = c;
                    best_s = s;
                }
            }
            next[i] = Some(best_k);
            sims[i] = best_s;
        }
        // refill empty clusters
        loop {
            let mut sizes = vec![0usize; k];
            for l in next.iter().flatten() {
                sizes[*l] += 1;
            }
            let Some(empty) = sizes.iter().position(|&s| s == 0) else {
                break;
            };
            let donor = live
                .iter()
                .copied()
                .filter(|&i| sizes[next[i].expect("live")] > 1)
                .min_by(|&a, &b| sims[a].total_cmp(&sims[b]).then(a.cmp(&b)))
                .expect("some cluster has two members when one is empty");
            next[donor] = Some(empty);
            sims[donor] = 1.0;
            centroids[empty] = batch.vector(donor).to_vec();
        }

        for (c, cent) in centroids.iter_mut().enumerate() {
            let mut sum = vec![0.0; d];
            let mut first_member = None;
            for &i in &live {
                if next[i] == Some(c) {
                    first_member.get_or_insert(i);
                    sum.iter_mut().zip(batch.vector(i)).for_each(|(a, b)| *a += b);
                }
            }
            let nrm = norm2(&sum);
            if nrm > 0.0 {
                *cent = sum.into_iter().map(|x| x / nrm).collect();
            } else if let Some(i) = first_member {
                *cent = batch.vector(i).to_vec();
            }
        }

        if next == labels {
            converged = true;
            break;
        }
        labels = next;
    }

    Ok(Clustering {
        labels,
        centroids: DenseMatrix::from_columns(d, &centroids)?,
        rounds,
        converged,
    })
}
