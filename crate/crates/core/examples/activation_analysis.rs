//! Fisher importance and activation overlap of a trained layer across tasks.

use badit::harness::{
    activated_neurons, build_model, make_tasks_with, overlap_from_sets, overlap_report, task_profile,
    train_sequential, ModelConfig, TaskConfig, TrainConfig,
};

fn main() -> badit::Result<()> {
    let tasks = make_tasks_with(&TaskConfig {
        t: 3,
        n: 10,
        m: 10,
        rank: 2,
        ..TaskConfig::default()
    })?;
    let model = build_model(&tasks, &ModelConfig { k: 2, r: 2, ..ModelConfig::default() }, 0)?;
    let train = TrainConfig {
        epochs: 5,
        baseline: false,
        ..TrainConfig::default()
    };
    let run = train_sequential(&model, &tasks, &[0, 1, 2], &train)?;

    let profiles = tasks
        .tasks()
        .iter()
        .map(|t| task_profile(&run.model, &t.train_x, &t.train_y))
        .collect::<badit::Result<Vec<_>>>()?;
    let report = overlap_report(&profiles, 0.3)?;
    println!("units kept by how many tasks: {:?}", report.unit_task_counts);
    println!("histogram: {:?}", report.histogram);
    println!("positive/negative gradient tasks: {:?} / {:?}", report.positive_tasks, report.negative_tasks);

    let masks = tasks
        .tasks()
        .iter()
        .map(|t| activated_neurons(&run.model, &t.train_x, 0.05))
        .collect::<badit::Result<Vec<_>>>()?;
    let (counts, hist) = overlap_from_sets(&masks)?;
    println!("activated units per task count: {counts:?} -> {hist:?}");
    Ok(())
}
