use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::metrics::ScoreGrid;
use super::tasks::{SyntheticTask, SyntheticTaskSet};
use crate::bad::decompose;
use crate::dog::{
    dog_run, extract_rank1_gradients, gradient_angles, normalize, AssignMode, DogConfig, GroupingPolicy,
    DEFAULT_EPS_G, DEFAULT_MAX_ITER,
};
use crate::linops::DenseMatrix;
use crate::moe::{GateModeTag, LayerGradients, MoeLoraLayer};
use crate::rng::{self, derive, Rng};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub k: usize,
    pub r: usize,
    pub scale: f64,
    pub gate_mode: GateModeTag,
    /// Used by the input-gated mode only.
    pub top_k: usize,
    /// Entry standard deviation of the initial router.
    pub router_init: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            k: 4,
            r: 4,
            scale: 1.0,
            gate_mode: GateModeTag::ScalarAlpha,
            top_k: 2,
            router_init: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DogSettings {
    pub enabled: bool,
    /// Regroup on every `regroup_interval`-th optimizer step of a stage.
    pub regroup_interval: usize,
    pub max_iter: usize,
    pub mode: AssignMode,
    pub eps_g: f64,
}

impl Default for DogSettings {
    fn default() -> Self {
        Self {
            enabled: true,
            regroup_interval: 1,
            max_iter: DEFAULT_MAX_ITER,
            mode: AssignMode::Exact,
            eps_g: DEFAULT_EPS_G,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub dog: DogSettings,
    /// Also train each task in isolation to fill the grid baseline.
    pub baseline: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            lr: 1e-2,
            batch_size: 8,
            dog: DogSettings::default(),
            baseline: true,
            seed: 0,
        }
    }
}

/// Angles measured on one optimizer batch. With grouping enabled the policy
/// is the one chosen for that batch; otherwise it is the current layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngleEvent {
    pub stage: usize,
    /// Global epoch counter across stages.
    pub epoch: usize,
    pub step: usize,
    pub intra_deg: Option<f64>,
    pub inter_deg: Option<f64>,
    pub regrouped: bool,
    /// Components whose expert changed.
    pub moved: usize,
}

/// Per-epoch mean over the epoch's angle events.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochAngles {
    pub epoch: usize,
    pub intra_deg: Option<f64>,
    pub inter_deg: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainRun {
    pub grid: ScoreGrid,
    /// Task index of each grid column.
    pub order: Vec<usize>,
    pub events: Vec<AngleEvent>,
    pub epoch_angles: Vec<EpochAngles>,
    pub residual_checksum: u64,
    pub warnings: Vec<String>,
    pub model: MoeLoraLayer,
}

/// Decomposes the task set's pretrained weight into a layer.
pub fn build_model(tasks: &SyntheticTaskSet, config: &ModelConfig, seed: u64) -> Result<MoeLoraLayer> {
    let bank = decompose(tasks.pretrained(), config.k, config.r, config.scale)?;
    match config.gate_mode {
        GateModeTag::ScalarAlpha => Ok(MoeLoraLayer::scalar(bank)),
        GateModeTag::InputTopk => {
            let mut rng = rng::seeded(derive(seed, 0x5157));
            let n = bank.shape().1;
            let router = DenseMatrix::from_fn(n, config.k, |_, _| {
                config.router_init * rng.sample::<f64, _>(StandardNormal)
            });
            MoeLoraLayer::gated(bank, router, config.top_k)
        }
    }
}

/// `100 · max(0, 1 − MSE / var)` on the task's evaluation split.
pub fn evaluate(layer: &MoeLoraLayer, task: &SyntheticTask) -> Result<f64> {
    let (s, m) = task.eval_y.shape();
    let mut sse = 0.0;
    for i in 0..s {
        let h = layer.forward(task.eval_x.row(i))?;
        sse += h.iter().zip(task.eval_y.row(i)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
    }
    let mse = sse / (s * m) as f64;
    let var = task.eval_variance();
    if var <= 0.0 {
        return Ok(if mse == 0.0 { 100.0 } else { 0.0 });
    }
    Ok(100.0 * (1.0 - mse / var).max(0.0))
}

/// Gradients of the batch mean of `‖h − y‖² / m`, and that loss.
pub fn batch_gradients(
    layer: &MoeLoraLayer,
    samples: &[(&[f64], &[f64])],
) -> Result<(LayerGradients, f64)> {
    if samples.is_empty() {
        return Err(Error::EmptyData("empty batch".into()));
    }
    let m = layer.shape().0 as f64;
    let w = 1.0 / samples.len() as f64;
    let mut total = LayerGradients::zeros_like(layer);
    let mut loss = 0.0;
    for (x, y) in samples {
        let h = layer.forward(x)?;
        let diff: Vec<f64> = h.iter().zip(*y).map(|(a, b)| a - b).collect();
        loss += w * diff.iter().map(|d| d * d).sum::<f64>() / m;
        let upstream: Vec<f64> = diff.iter().map(|d| 2.0 * d / m).collect();
        total.accumulate(w, &layer.backward(x, &upstream)?);
    }
    Ok((total, loss))
}

struct Trainer<'a> {
    tasks: &'a SyntheticTaskSet,
    config: &'a TrainConfig,
    events: Vec<AngleEvent>,
    warnings: Vec<String>,
    checksum: u64,
}

impl Trainer<'_> {
    fn check_residual(&self, layer: &MoeLoraLayer) -> Result<()> {
        if layer.bank().residual_checksum() != self.checksum {
            return Err(Error::Invariant("frozen residual changed during training".into()));
        }
        Ok(())
    }

    fn warn(&mut self, msg: String) {
        if !self.warnings.contains(&msg) {
            self.warnings.push(msg);
        }
    }

    /// Trains on `(task, sample)` pairs for the configured epochs.
    fn run_stage(
        &mut self,
        layer: &mut MoeLoraLayer,
        mut pairs: Vec<(usize, usize)>,
        stage: usize,
        stream: u64,
    ) -> Result<()> {
        let cfg = self.config;
        let mut rng: Rng = rng::seeded(derive(cfg.seed, stream));
        let (k, r) = (layer.bank().num_experts(), layer.bank().rank());
        let mut step = 0usize;
        for epoch in 0..cfg.epochs {
            pairs.shuffle(&mut rng);
            for chunk in pairs.chunks(cfg.batch_size) {
                let samples: Vec<(&[f64], &[f64])> = chunk
                    .iter()
                    .map(|&(t, i)| {
                        let task = self.tasks.task(t);
                        (task.train_x.row(i), task.train_y.row(i))
                    })
                    .collect();
                let (mut grads, _) = batch_gradients(layer, &samples)?;
                if step.is_multiple_of(cfg.dog.regroup_interval) {
                    let raw = extract_rank1_gradients(&grads.grad_a, &grads.grad_b)?;
                    let batch = normalize(&raw, cfg.dog.eps_g)?;
                    let mut policy = GroupingPolicy::identity(k, r);
                    let mut regrouped = false;
                    if cfg.dog.enabled {
                        let dog_cfg = DogConfig {
                            max_iter: cfg.dog.max_iter,
                            mode: cfg.dog.mode,
                            seed: derive(derive(cfg.seed, stream), step as u64),
                        };
                        let outcome = dog_run(&batch, k, r, &dog_cfg)?;
                        for w in outcome.warnings {
                            self.warn(w);
                        }
                        if !outcome.policy.is_identity() {
                            match layer.regroup(&outcome.policy) {
                                Ok(warning) => {
                                    if let Some(w) = warning {
                                        self.warn(w);
                                    }
                                    regrouped = true;
                                    policy = outcome.policy;
                                }
                                Err(Error::DivisionHazard { expert, alpha }) => self.warn(format!(
                                    "regroup skipped: routing weight {alpha:e} of expert {expert} is too small"
                                )),
                                Err(e) => return Err(e),
                            }
                        }
                    }
                    let angles = gradient_angles(&batch, &policy)?;
                    let moved = policy.labels().iter().enumerate().filter(|&(i, &e)| i / r != e).count();
                    self.events.push(AngleEvent {
                        stage,
                        epoch: stage * cfg.epochs + epoch,
                        step,
                        intra_deg: angles.intra_deg,
                        inter_deg: angles.inter_deg,
                        regrouped,
                        moved,
                    });
                    if regrouped {
                        grads = batch_gradients(layer, &samples)?.0;
                    }
                }
                layer.sgd_step(&grads, cfg.lr);
                step += 1;
            }
        }
        self.check_residual(layer)
    }
}

fn validate(config: &TrainConfig) -> Result<()> {
    if config.batch_size == 0 {
        return Err(Error::InvalidParameter("batch_size must be positive".into()));
    }
    if config.dog.regroup_interval == 0 {
        return Err(Error::InvalidParameter("regroup_interval must be positive".into()));
    }
    if !(config.lr.is_finite() && config.lr > 0.0) {
        return Err(Error::InvalidParameter(format!("lr = {} must be positive", config.lr)));
    }
    Ok(())
}

fn check_order(order: &[usize], t: usize) -> Result<()> {
    let mut seen = vec![false; t];
    for &o in order {
        if o >= t || seen[o] {
            return Err(Error::InvalidParameter(format!("{order:?} is not a permutation of 0..{t}")));
        }
        seen[o] = true;
    }
    if order.len() != t {
        return Err(Error::InvalidParameter(format!("{order:?} is not a permutation of 0..{t}")));
    }
    Ok(())
}

/// A seed-derived permutation of `0..t`.
pub fn seeded_order(t: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..t).collect();
    order.shuffle(&mut rng::seeded(derive(seed, 0x4F52_4445)));
    order
}

fn epoch_means(events: &[AngleEvent]) -> Vec<EpochAngles> {
    let Some(last) = events.iter().map(|e| e.epoch).max() else {
        return Vec::new();
    };
    let mean = |vals: Vec<f64>| (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64);
    (0..=last)
        .map(|epoch| {
            let here: Vec<&AngleEvent> = events.iter().filter(|e| e.epoch == epoch).collect();
            EpochAngles {
                epoch,
                intra_deg: mean(here.iter().filter_map(|e| e.intra_deg).collect()),
                inter_deg: mean(here.iter().filter_map(|e| e.inter_deg).collect()),
            }
        })
        .collect()
}

const MIXED_STREAM: u64 = 2 << 32;

/// Isolated training of each task from `model`, column `j` being task
/// `order[j]` trained with the same seed stream as stage `j`.
pub fn isolated_baselines(
    model: &MoeLoraLayer,
    tasks: &SyntheticTaskSet,
    order: &[usize],
    config: &TrainConfig,
) -> Result<Vec<f64>> {
    validate(config)?;
    check_order(order, tasks.len())?;
    let mut trainer = Trainer {
        tasks,
        config,
        events: Vec::new(),
        warnings: Vec::new(),
        checksum: model.bank().residual_checksum(),
    };
    order
        .iter()
        .enumerate()
        .map(|(j, &t)| {
            let mut layer = model.clone();
            let pairs = (0..tasks.task(t).train_x.rows()).map(|i| (t, i)).collect();
            trainer.run_stage(&mut layer, pairs, j, j as u64)?;
            evaluate(&layer, tasks.task(t))
        })
        .collect()
}

/// Trains the tasks one after another in `order`, evaluating every task after
/// each stage.
pub fn train_sequential(
    model: &MoeLoraLayer,
    tasks: &SyntheticTaskSet,
    order: &[usize],
    config: &TrainConfig,
) -> Result<TrainRun> {
    validate(config)?;
    check_order(order, tasks.len())?;
    let mut layer = model.clone();
    let mut trainer = Trainer {
        tasks,
        config,
        events: Vec::new(),
        warnings: Vec::new(),
        checksum: model.bank().residual_checksum(),
    };
    let mut rows = Vec::with_capacity(order.len());
    for (stage, &t) in order.iter().enumerate() {
        let pairs = (0..tasks.task(t).train_x.rows()).map(|i| (t, i)).collect();
        trainer.run_stage(&mut layer, pairs, stage, stage as u64)?;
        rows.push(
            order
                .iter()
                .map(|&u| evaluate(&layer, tasks.task(u)))
                .collect::<Result<Vec<_>>>()?,
        );
    }
    let baseline = if config.baseline {
        Some(isolated_baselines(model, tasks, order, config)?)
    } else {
        None
    };
    let labels = order.iter().map(|t| t.to_string()).collect();
    let grid = ScoreGrid::with_labels(rows, baseline, labels)?;
    Ok(TrainRun {
        grid,
        order: order.to_vec(),
        epoch_angles: epoch_means(&trainer.events),
        events: trainer.events,
        residual_checksum: trainer.checksum,
        warnings: trainer.warnings,
        model: layer,
    })
}

/// Trains on the shuffled union of all tasks; the grid has a single row.
pub fn train_mixed(model: &MoeLoraLayer, tasks: &SyntheticTaskSet, config: &TrainConfig) -> Result<TrainRun> {
    validate(config)?;
    let order: Vec<usize> = (0..tasks.len()).collect();
    let mut layer = model.clone();
    let mut trainer = Trainer {
        tasks,
        config,
        events: Vec::new(),
        warnings: Vec::new(),
        checksum: model.bank().residual_checksum(),
    };
    let pairs = tasks
        .tasks()
        .iter()
        .enumerate()
        .flat_map(|(t, task)| (0..task.train_x.rows()).map(move |i| (t, i)))
        .collect();
    trainer.run_stage(&mut layer, pairs, 0, MIXED_STREAM)?;
    let row = order
        .iter()
        .map(|&t| evaluate(&layer, tasks.task(t)))
        .collect::<Result<Vec<_>>>()?;
    let baseline = if config.baseline {
        Some(isolated_baselines(model, tasks, &order, config)?)
    } else {
        None
    };
    let labels = order.iter().map(|t| t.to_string()).collect();
    let grid = ScoreGrid::with_labels(vec![row], baseline, labels)?;
    Ok(TrainRun {
        grid,
        order,
        epoch_angles: epoch_means(&trainer.events),
        events: trainer.events,
        residual_checksum: trainer.checksum,
        warnings: trainer.warnings,
        model: layer,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::tasks::{make_tasks_with, TaskConfig};

    fn small() -> (SyntheticTaskSet, MoeLoraLayer) {
        let tasks = make_tasks_with(&TaskConfig {
            t: 2,
            n: 8,
            m: 8,
            rank: 2,
            task_rank: 1,
            train_samples: 16,
            eval_samples: 16,
            ..TaskConfig::default()
        })
        .unwrap();
        let model = build_model(&tasks, &ModelConfig { k: 2, r: 2, ..ModelConfig::default() }, 0).unwrap();
        (tasks, model)
    }

    fn quick() -> TrainConfig {
        TrainConfig {
            epochs: 3,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn training_improves_the_score() {
        let (tasks, model) = small();
        let cfg = TrainConfig { epochs: 20, baseline: false, ..TrainConfig::default() };
        assert!(train_sequential(&model, &tasks, &[0], &cfg).is_err(), "order must cover every task");
        let one = make_tasks_with(&TaskConfig { t: 1, ..tasks.config().clone() }).unwrap();
        let before = evaluate(&model, one.task(0)).unwrap();
        let run = train_sequential(&model, &one, &[0], &cfg).unwrap();
        assert!(run.grid.get(0, 0) > before);
    }

    #[test]
    fn reruns_are_bit_identical() {
        let (tasks, model) = small();
        let a = train_sequential(&model, &tasks, &[1, 0], &quick()).unwrap();
        let b = train_sequential(&model, &tasks, &[1, 0], &quick()).unwrap();
        assert_eq!(a.grid, b.grid);
        assert_eq!(a.events, b.events);
        assert_eq!(a.model, b.model);
    }

    #[test]
    fn first_stage_matches_isolated_baseline() {
        let (tasks, model) = small();
        let run = train_sequential(&model, &tasks, &[1, 0], &quick()).unwrap();
        assert_eq!(run.grid.get(0, 0), run.grid.baseline().unwrap()[0]);
        assert_eq!(run.grid.labels(), &["1", "0"]);
    }

    #[test]
    fn angle_events_every_step() {
        let (tasks, model) = small();
        for enabled in [true, false] {
            let mut cfg = quick();
            cfg.dog.enabled = enabled;
            let run = train_sequential(&model, &tasks, &[0, 1], &cfg).unwrap();
            // 16 samples / batch 8 = 2 steps per epoch
            assert_eq!(run.events.len(), 2 * 3 * 2);
            assert_eq!(run.epoch_angles.len(), 6);
            if !enabled {
                assert!(run.events.iter().all(|e| !e.regrouped && e.moved == 0));
            }
        }
    }

    #[test]
    fn mixed_training_single_row() {
        let (tasks, model) = small();
        let run = train_mixed(&model, &tasks, &quick()).unwrap();
        assert_eq!(run.grid.stages(), 1);
        assert_eq!(run.grid.tasks(), 2);
        assert_eq!(run.residual_checksum, model.bank().residual_checksum());
    }

    #[test]
    fn gated_model_trains() {
        let (tasks, _) = small();
        let cfg = ModelConfig {
            k: 2,
            r: 2,
            gate_mode: GateModeTag::InputTopk,
            top_k: 1,
            ..ModelConfig::default()
        };
        let model = build_model(&tasks, &cfg, 3).unwrap();
        let run = train_sequential(&model, &tasks, &[0, 1], &quick()).unwrap();
        assert!(run.grid.rows().iter().flatten().all(|v| v.is_finite()));
    }

    #[test]
    fn order_validation() {
        assert!(check_order(&[0, 1, 2], 3).is_ok());
        assert!(check_order(&[0, 0, 2], 3).is_err());
        assert!(check_order(&[0, 1], 3).is_err());
        assert!(check_order(&[0, 3, 1], 3).is_err());
        let o = seeded_order(5, 9);
        assert!(check_order(&o, 5).is_ok());
        assert_eq!(o, seeded_order(5, 9));
    }
}
