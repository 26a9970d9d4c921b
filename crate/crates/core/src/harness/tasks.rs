use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::linops::{reorthonormalize, DenseMatrix};
use crate::rng::{self, Rng};
use crate::{Error, Result};

/// Parameters of a synthetic task family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TaskConfig {
    pub t: usize,
    pub n: usize,
    pub m: usize,
    /// Rank of the core shared by every teacher.
    pub rank: usize,
    /// Rank of each teacher's private term, orthogonal to the core.
    pub task_rank: usize,
    /// Size of the task rotations of the core: `R_t` orthonormalizes
    /// `I + rotation · G` with Gaussian `G`.
    pub rotation: f64,
    /// Standard deviation of the label noise.
    pub noise: f64,
    /// Norm of each task's input mean.
    pub input_shift: f64,
    /// Entry scale of the random perturbation in the pretrained weight.
    pub pretrain_noise: f64,
    /// Fraction of every private term already present in the pretrained weight.
    pub private_prior: f64,
    pub train_samples: usize,
    pub eval_samples: usize,
    pub seed: u64,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            t: 4,
            n: 24,
            m: 24,
            rank: 4,
            task_rank: 2,
            rotation: 0.5,
            noise: 0.05,
            input_shift: 1.0,
            pretrain_noise: 0.1,
            private_prior: 0.5,
            train_samples: 64,
            eval_samples: 64,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTask {
    pub teacher: DenseMatrix,
    pub input_mean: Vec<f64>,
    /// Samples are rows.
    pub train_x: DenseMatrix,
    pub train_y: DenseMatrix,
    pub eval_x: DenseMatrix,
    pub eval_y: DenseMatrix,
}

impl SyntheticTask {
    pub fn eval_variance(&self) -> f64 {
        output_variance(&self.eval_y)
    }
}

/// Tasks `y = W_t x + noise` with `W_t = P diag(s) R_t Qᵀ + U_t diag(s') V_tᵀ`:
/// one shared core `P, Q` seen through a task-specific rotation `R_t`, plus a
/// private part orthogonal to the core.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTaskSet {
    config: TaskConfig,
    core_left: DenseMatrix,
    core_right: DenseMatrix,
    core_sv: Vec<f64>,
    pretrained: DenseMatrix,
    tasks: Vec<SyntheticTask>,
}

impl SyntheticTaskSet {
    pub fn config(&self) -> &TaskConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn task(&self, t: usize) -> &SyntheticTask {
        &self.tasks[t]
    }

    pub fn tasks(&self) -> &[SyntheticTask] {
        &self.tasks
    }

    /// `m x rank` orthonormal core output basis.
    pub fn core_left(&self) -> &DenseMatrix {
        &self.core_left
    }

    /// `n x rank` orthonormal core input basis.
    pub fn core_right(&self) -> &DenseMatrix {
        &self.core_right
    }

    pub fn core_singular_values(&self) -> &[f64] {
        &self.core_sv
    }

    /// Starting weight: the unrotated core, `private_prior` times every private
    /// term, and a random perturbation.
    pub fn pretrained(&self) -> &DenseMatrix {
        &self.pretrained
    }
}

pub fn make_tasks(t: usize, n: usize, m: usize, rank: usize, noise: f64, seed: u64) -> Result<SyntheticTaskSet> {
    make_tasks_with(&TaskConfig {
        t,
        n,
        m,
        rank,
        noise,
        seed,
        ..TaskConfig::default()
    })
}

pub fn make_tasks_with(config: &TaskConfig) -> Result<SyntheticTaskSet> {
    let c = config;
    if c.t == 0 {
        return Err(Error::InvalidParameter("need at least one task".into()));
    }
    if c.rank == 0 || c.rank + c.task_rank > c.n.min(c.m) {
        return Err(Error::InvalidRank {
            rank: c.rank + c.task_rank,
            max: c.n.min(c.m),
        });
    }
    if c.train_samples == 0 || c.eval_samples == 0 {
        return Err(Error::InvalidParameter("sample counts must be positive".into()));
    }
    for (name, v) in [("noise", c.noise), ("rotation", c.rotation), ("input_shift", c.input_shift), ("pretrain_noise", c.pretrain_noise), ("private_prior", c.private_prior)] {
        if !(v.is_finite() && v >= 0.0) {
            return Err(Error::InvalidParameter(format!("{name} = {v} must be finite and non-negative")));
        }
    }

    let mut rng = rng::seeded(c.seed);
    let left = orthonormal_columns(&mut rng, c.m, c.rank + c.t * c.task_rank);
    let right = orthonormal_columns(&mut rng, c.n, c.rank + c.t * c.task_rank);
    let core_left = DenseMatrix::from_columns(c.m, &left[..c.rank])?;
    let core_right = DenseMatrix::from_columns(c.n, &right[..c.rank])?;
    let core_sv: Vec<f64> = (0..c.rank).map(|i| 4.0 - 2.0 * i as f64 / c.rank as f64).collect();
    let core = core_left.matmul(&DenseMatrix::diag(&core_sv))?;

    let mut pretrained = core.matmul(&core_right.transpose())?;

    let mut tasks = Vec::with_capacity(c.t);
    for t in 0..c.t {
        let rot = near_identity_rotation(&mut rng, c.rank, c.rotation)?;
        let mut teacher = core.matmul(&rot)?.matmul(&core_right.transpose())?;
        if c.task_rank > 0 {
            let cols = c.rank + t * c.task_rank..c.rank + (t + 1) * c.task_rank;
            let u = DenseMatrix::from_columns(c.m, &left[cols.clone()])?;
            let v = DenseMatrix::from_columns(c.n, &right[cols])?;
            let sv: Vec<f64> = (0..c.task_rank).map(|i| 2.0 - i as f64 / c.task_rank as f64).collect();
            let private = u.matmul(&DenseMatrix::diag(&sv))?.matmul(&v.transpose())?;
            teacher = teacher.add(&private)?;
            pretrained.add_scaled(c.private_prior, &private)?;
        }
        let mut mean: Vec<f64> = (0..c.n).map(|_| rng.sample(StandardNormal)).collect();
        let nrm = crate::linops::norm2(&mean);
        mean.iter_mut().for_each(|x| *x *= c.input_shift / nrm);

        let (train_x, train_y) = sample(&mut rng, &teacher, &mean, c.noise, c.train_samples)?;
        let (eval_x, eval_y) = sample(&mut rng, &teacher, &mean, c.noise, c.eval_samples)?;
        tasks.push(SyntheticTask {
            teacher,
            input_mean: mean,
            train_x,
            train_y,
            eval_x,
            eval_y,
        });
    }
    let scale = c.pretrain_noise / (c.n as f64).sqrt();
    for v in pretrained.as_mut_slice() {
        *v += scale * rng.sample::<f64, _>(StandardNormal);
    }
    Ok(SyntheticTaskSet {
        config: c.clone(),
        core_left,
        core_right,
        core_sv,
        pretrained,
        tasks,
    })
}

fn orthonormal_columns(rng: &mut Rng, rows: usize, cols: usize) -> Vec<Vec<f64>> {
    let mut c: Vec<Vec<f64>> = (0..cols)
        .map(|_| (0..rows).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    reorthonormalize(&mut c);
    c
}

fn near_identity_rotation(rng: &mut Rng, k: usize, size: f64) -> Result<DenseMatrix> {
    let mut cols: Vec<Vec<f64>> = (0..k)
        .map(|j| {
            (0..k)
                .map(|i| size * rng.sample::<f64, _>(StandardNormal) + if i == j { 1.0 } else { 0.0 })
                .collect()
        })
        .collect();
    reorthonormalize(&mut cols);
    DenseMatrix::from_columns(k, &cols)
}

fn sample(
    rng: &mut Rng,
    teacher: &DenseMatrix,
    mean: &[f64],
    noise: f64,
    count: usize,
) -> Result<(DenseMatrix, DenseMatrix)> {
    let (m, n) = teacher.shape();
    let mut x = DenseMatrix::zeros(count, n);
    let mut y = DenseMatrix::zeros(count, m);
    for i in 0..count {
        for (v, mu) in x.row_mut(i).iter_mut().zip(mean) {
            *v = mu + rng.sample::<f64, _>(StandardNormal);
        }
        let clean = teacher.matvec(x.row(i))?;
        for (v, c) in y.row_mut(i).iter_mut().zip(clean) {
            *v = c + noise * rng.sample::<f64, _>(StandardNormal);
        }
    }
    Ok((x, y))
}

/// Mean over outputs of the per-output sample variance.
pub fn output_variance(y: &DenseMatrix) -> f64 {
    let (s, m) = y.shape();
    let mut total = 0.0;
    for j in 0..m {
        let col = y.column(j);
        let mean = col.iter().sum::<f64>() / s as f64;
        total += col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / s as f64;
    }
    total / m as f64
}
