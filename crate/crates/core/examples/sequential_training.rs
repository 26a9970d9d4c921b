//! Sequential training on synthetic tasks with and without gradient
//! regrouping. Pass a seed as the first argument.

use badit::harness::{execute, RunConfig, Setting, TaskConfig};

fn main() -> badit::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let mut cfg = RunConfig {
        setting: Setting::Sequential,
        tasks: TaskConfig {
            t: 3,
            n: 12,
            m: 12,
            rank: 3,
            seed,
            ..TaskConfig::default()
        },
        ..RunConfig::default()
    };
    cfg.model.k = 3;
    cfg.model.r = 3;
    cfg.train.epochs = 10;

    for dog in [true, false] {
        cfg.train.dog.enabled = dog;
        let out = execute(&cfg, seed)?;
        let m = &out.metrics;
        println!("regrouping {}", if dog { "on" } else { "off" });
        println!("  order {:?}", out.run.order);
        for row in out.run.grid.rows() {
            println!("  {}", row.iter().map(|v| format!("{v:6.1}")).collect::<String>());
        }
        println!(
            "  avg {:.2} forward {:.2} forget {:.2} backward {:.2}",
            m.avg_score,
            m.forward.unwrap_or(f64::NAN),
            m.forget.unwrap_or(f64::NAN),
            m.backward.unwrap_or(f64::NAN)
        );
        if let Some(last) = out.run.epoch_angles.last() {
            println!("  final epoch angles: intra {:?} inter {:?}", last.intra_deg, last.inter_deg);
        }
    }
    Ok(())
}
