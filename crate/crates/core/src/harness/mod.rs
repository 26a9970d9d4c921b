//! Toy multi-task training on synthetic linear tasks that share a low-rank
//! core, continual-learning metrics over the resulting score grids, and
//! importance/overlap analysis of trained layers.

mod analysis;
mod config;
mod metrics;
mod tasks;
mod train;

pub use analysis::{
    activated_neurons, fisher_diagonal, overlap_from_sets, overlap_report, task_profile, top_units, OverlapReport,
    TaskProfile,
};
pub use config::{execute, write_outputs, RunConfig, RunOutput, Setting};
pub use metrics::{
    metric_avg_score, metric_backward, metric_forget, metric_forward, read_baseline_csv, read_grid_csv,
    write_scores_csv, Discrepancy, ForgetVariant, ForwardMode, GridFile, MetricsReport, ReportedMetrics, ScoreGrid,
    FORGET_MATCH_TOLERANCE,
};
pub use tasks::{make_tasks, make_tasks_with, output_variance, SyntheticTask, SyntheticTaskSet, TaskConfig};
pub use train::{
    batch_gradients, build_model, evaluate, isolated_baselines, seeded_order, train_mixed, train_sequential,
    AngleEvent, DogSettings, EpochAngles, ModelConfig, TrainConfig, TrainRun,
};
