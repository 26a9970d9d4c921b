use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::{write_scores_csv, ForgetVariant, ForwardMode, MetricsReport};
use super::tasks::{make_tasks_with, TaskConfig};
use super::train::{build_model, seeded_order, train_mixed, train_sequential, ModelConfig, TrainConfig, TrainRun};
use crate::{Error, Result, FORMAT_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    #[default]
    Sequential,
    Mixed,
}

/// Contents of `run_config.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub format_version: u32,
    pub setting: Setting,
    pub tasks: TaskConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// One run per seed; each replaces `train.seed`.
    pub seeds: Vec<u64>,
    /// Task order for sequential runs; seed-derived when absent.
    pub order: Option<Vec<usize>>,
    pub forget_variant: ForgetVariant,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            format_version: FORMAT_VERSION,
            setting: Setting::Sequential,
            tasks: TaskConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            seeds: vec![0],
            order: None,
            forget_variant: ForgetVariant::AsWritten,
        }
    }
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let cfg: RunConfig = serde_json::from_str(&fs::read_to_string(path)?).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?;
        if cfg.format_version != FORMAT_VERSION {
            return Err(Error::Format {
                path: path.to_path_buf(),
                msg: format!("unsupported format_version {}", cfg.format_version),
            });
        }
        if cfg.seeds.is_empty() {
            return Err(Error::InvalidParameter("seeds must not be empty".into()));
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub seed: u64,
    pub run: TrainRun,
    pub metrics: MetricsReport,
}

/// Builds tasks and model from the config and trains with `seed`.
pub fn execute(config: &RunConfig, seed: u64) -> Result<RunOutput> {
    let tasks = make_tasks_with(&config.tasks)?;
    let model = build_model(&tasks, &config.model, seed)?;
    let train = TrainConfig {
        seed,
        ..config.train.clone()
    };
    let (run, mode) = match config.setting {
        Setting::Sequential => {
            let order = config.order.clone().unwrap_or_else(|| seeded_order(tasks.len(), seed));
            (train_sequential(&model, &tasks, &order, &train)?, ForwardMode::Sequential)
        }
        Setting::Mixed => (train_mixed(&model, &tasks, &train)?, ForwardMode::Mixed),
    };
    let metrics = MetricsReport::compute(&run.grid, mode, config.forget_variant);
    Ok(RunOutput { seed, run, metrics })
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// Writes `scores.csv`, `angles.csv`, `events.csv` and `metrics.json`.
pub fn write_outputs(dir: impl AsRef<Path>, out: &RunOutput) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    write_scores_csv(dir.join("scores.csv"), &out.run.grid)?;

    let mut w = csv::Writer::from_path(dir.join("angles.csv"))?;
    w.write_record(["epoch", "intra_deg", "inter_deg"])?;
    for a in &out.run.epoch_angles {
        w.write_record([a.epoch.to_string(), opt(a.intra_deg), opt(a.inter_deg)])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("events.csv"))?;
    w.write_record(["stage", "epoch", "step", "intra_deg", "inter_deg", "regrouped", "moved"])?;
    for e in &out.run.events {
        w.write_record([
            e.stage.to_string(),
            e.epoch.to_string(),
            e.step.to_string(),
            opt(e.intra_deg),
            opt(e.inter_deg),
            e.regrouped.to_string(),
            e.moved.to_string(),
        ])?;
    }
    w.flush()?;

    fs::write(dir.join("metrics.json"), serde_json::to_string_pretty(&out.metrics)? + "\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trips_and_fills_defaults() {
        let cfg: RunConfig = serde_json::from_str(r#"{"seeds": [3, 4], "model": {"k": 2}}"#).unwrap();
        assert_eq!(cfg.model.k, 2);
        assert_eq!(cfg.model.r, 4);
        assert_eq!(cfg.train.epochs, 30);
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&text).unwrap(), cfg);
    }

    #[test]
    fn rejects_other_versions() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        fs::write(&p, r#"{"format_version": 2}"#).unwrap();
        assert!(matches!(RunConfig::load(&p), Err(Error::Format { .. })));
        fs::write(&p, r#"{"seeds": []}"#).unwrap();
        assert!(RunConfig::load(&p).is_err());
    }
}
