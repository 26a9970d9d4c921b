//! Continual-learning metrics on a small score grid, including both
//! forgetting variants.

use badit::harness::{
    metric_avg_score, metric_backward, metric_forget, metric_forward, ForgetVariant, ForwardMode, MetricsReport,
    ReportedMetrics, ScoreGrid,
};

fn main() -> badit::Result<()> {
    let rows = vec![
        vec![72.0, 10.0, 5.0],
        vec![80.0, 65.0, 12.0],
        vec![61.0, 58.0, 70.0],
    ];
    let grid = ScoreGrid::new(rows, Some(vec![70.0, 66.0, 71.0]))?;
    println!("avg score: {:.2}", metric_avg_score(&grid));
    println!("forward (sequential): {:.2}", metric_forward(&grid, ForwardMode::Sequential)?);
    println!("forget as written: {:.2}", metric_forget(&grid, ForgetVariant::AsWritten)?);
    println!("forget over history: {:.2}", metric_forget(&grid, ForgetVariant::MaxOverHistory)?);
    println!("backward: {:.2}", metric_backward(&grid)?);

    let report = MetricsReport::compute(&grid, ForwardMode::Sequential, ForgetVariant::AsWritten).with_reported(
        ReportedMetrics {
            avg: Some(63.0),
            forget: Some(15.0),
            backward: Some(-5.0),
        },
    );
    println!("{}", serde_json::to_string_pretty(&report.discrepancy)?);
    Ok(())
}
