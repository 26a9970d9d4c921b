//! Continual-learning metrics over a stage × task score grid.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result, FORMAT_VERSION};

/// `a[s][t]` is the score on task `t` after training stage `s`; columns are in
/// training order so `a[t][t]` is the score right after learning task `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreGrid {
    rows: Vec<Vec<f64>>,
    baseline: Option<Vec<f64>>,
    labels: Vec<String>,
}

impl ScoreGrid {
    pub fn new(rows: Vec<Vec<f64>>, baseline: Option<Vec<f64>>) -> Result<Self> {
        let t = rows.first().map_or(0, Vec::len);
        let labels = (0..t).map(|i| i.to_string()).collect();
        Self::with_labels(rows, baseline, labels)
    }

    pub fn with_labels(rows: Vec<Vec<f64>>, baseline: Option<Vec<f64>>, labels: Vec<String>) -> Result<Self> {
        if rows.is_empty() || rows[0].is_empty() {
            return Err(Error::EmptyData("score grid has no entries".into()));
        }
        let t = rows[0].len();
        if rows.len() > t {
            return Err(Error::Dimension(format!("{} stages for {t} tasks", rows.len())));
        }
        if rows.iter().any(|r| r.len() != t) {
            return Err(Error::Dimension("ragged score grid".into()));
        }
        if labels.len() != t {
            return Err(Error::Dimension(format!("{} labels for {t} tasks", labels.len())));
        }
        if let Some(b) = &baseline {
            if b.len() != t {
                return Err(Error::Dimension(format!("baseline has {} entries for {t} tasks", b.len())));
            }
        }
        let finite = rows.iter().flatten().chain(baseline.iter().flatten()).all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidInput("score grid entries must be finite".into()));
        }
        Ok(Self { rows, baseline, labels })
    }

    pub fn tasks(&self) -> usize {
        self.rows[0].len()
    }

    pub fn stages(&self) -> usize {
        self.rows.len()
    }

    pub fn is_complete(&self) -> bool {
        self.stages() == self.tasks()
    }

    pub fn get(&self, stage: usize, task: usize) -> f64 {
        self.rows[stage][task]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn final_row(&self) -> &[f64] {
        self.rows.last().expect("grid is non-empty")
    }

    pub fn baseline(&self) -> Option<&[f64]> {
        self.baseline.as_deref()
    }

    pub fn set_baseline(&mut self, baseline: Vec<f64>) -> Result<()> {
        *self = Self::with_labels(std::mem::take(&mut self.rows), Some(baseline), std::mem::take(&mut self.labels))?;
        Ok(())
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    fn require_square(&self, min_t: usize) -> Result<()> {
        if !self.is_complete() {
            return Err(Error::Dimension(format!(
                "metric needs a full grid, got {} stages for {} tasks",
                self.stages(),
                self.tasks()
            )));
        }
        if self.tasks() < min_t {
            return Err(Error::InvalidInput(format!("metric needs at least {min_t} tasks")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForwardMode {
    Mixed,
    #[default]
    Sequential,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForgetVariant {
    /// Score right after learning each task.
    #[default]
    AsWritten,
    /// Best score the task ever reached from its own stage on.
    MaxOverHistory,
}

impl fmt::Display for ForwardMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ForwardMode::Mixed => "mixed",
            ForwardMode::Sequential => "sequential",
        })
    }
}

impl FromStr for ForwardMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mixed" => Ok(ForwardMode::Mixed),
            "sequential" => Ok(ForwardMode::Sequential),
            other => Err(Error::InvalidParameter(format!("unknown forward mode {other:?}"))),
        }
    }
}

impl fmt::Display for ForgetVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ForgetVariant::AsWritten => "as_written",
            ForgetVariant::MaxOverHistory => "max_over_history",
        })
    }
}

impl FromStr for ForgetVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "as_written" => Ok(ForgetVariant::AsWritten),
            "max_over_history" => Ok(ForgetVariant::MaxOverHistory),
            other => Err(Error::InvalidParameter(format!("unknown forget variant {other:?}"))),
        }
    }
}

/// Mean of the last row.
pub fn metric_avg_score(grid: &ScoreGrid) -> f64 {
    let last = grid.final_row();
    last.iter().sum::<f64>() / last.len() as f64
}

pub fn metric_forward(grid: &ScoreGrid, mode: ForwardMode) -> Result<f64> {
    let base = grid
        .baseline()
        .ok_or_else(|| Error::InvalidInput("forward transfer needs baseline scores".into()))?;
    let t = grid.tasks();
    let total: f64 = match mode {
        ForwardMode::Mixed => grid.final_row().iter().zip(base).map(|(a, b)| a - b).sum(),
        ForwardMode::Sequential => {
            grid.require_square(1)?;
            (0..t).map(|i| grid.get(i, i) - base[i]).sum()
        }
    };
    Ok(total / t as f64)
}

pub fn metric_forget(grid: &ScoreGrid, variant: ForgetVariant) -> Result<f64> {
    grid.require_square(2)?;
    let t = grid.tasks();
    let last = grid.final_row();
    let total: f64 = (0..t - 1)
        .map(|i| {
            let reference = match variant {
                ForgetVariant::AsWritten => grid.get(i, i),
                ForgetVariant::MaxOverHistory => (i..t).map(|s| grid.get(s, i)).fold(f64::NEG_INFINITY, f64::max),
            };
            reference - last[i]
        })
        .sum();
    Ok(total / (t - 1) as f64)
}

pub fn metric_backward(grid: &ScoreGrid) -> Result<f64> {
    grid.require_square(2)?;
    let t = grid.tasks();
    let last = grid.final_row();
    let total: f64 = (0..t - 1).map(|i| last[i] - grid.get(i, i)).sum();
    Ok(total / (t - 1) as f64)
}

/// Values published alongside a grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReportedMetrics {
    pub avg: Option<f64>,
    pub forget: Option<f64>,
    pub backward: Option<f64>,
}

/// Computed minus reported, per metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Discrepancy {
    pub avg: Option<f64>,
    pub forget_as_written: Option<f64>,
    pub forget_max_over_history: Option<f64>,
    pub backward: Option<f64>,
    /// Forget variants within [`FORGET_MATCH_TOLERANCE`] of the reported value.
    pub forget_matching_variants: Vec<ForgetVariant>,
    /// Whether the reported forget and backward values can both hold under
    /// the as-written identity `backward = -forget`.
    pub reported_pair_consistent: Option<bool>,
}

pub const FORGET_MATCH_TOLERANCE: f64 = 0.05;

/// Contents of `metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub format_version: u32,
    pub tasks: usize,
    pub stages: usize,
    pub avg_score: f64,
    pub forward_mode: ForwardMode,
    pub forward: Option<f64>,
    pub forget_as_written: Option<f64>,
    pub forget_max_over_history: Option<f64>,
    pub backward: Option<f64>,
    /// Variant selected for the headline `forget` value.
    pub forget_variant: ForgetVariant,
    pub forget: Option<f64>,
    pub reported: Option<ReportedMetrics>,
    pub discrepancy: Option<Discrepancy>,
}

impl MetricsReport {
    /// Metrics that need a full grid or a baseline are `None` when those are
    /// missing.
    pub fn compute(grid: &ScoreGrid, forward_mode: ForwardMode, forget_variant: ForgetVariant) -> Self {
        let full = grid.is_complete() && grid.tasks() >= 2;
        let forget_aw = full.then(|| metric_forget(grid, ForgetVariant::AsWritten).expect("full grid"));
        let forget_mh = full.then(|| metric_forget(grid, ForgetVariant::MaxOverHistory).expect("full grid"));
        let forget = match forget_variant {
            ForgetVariant::AsWritten => forget_aw,
            ForgetVariant::MaxOverHistory => forget_mh,
        };
        Self {
            format_version: FORMAT_VERSION,
            tasks: grid.tasks(),
            stages: grid.stages(),
            avg_score: metric_avg_score(grid),
            forward_mode,
            forward: metric_forward(grid, forward_mode).ok(),
            forget_as_written: forget_aw,
            forget_max_over_history: forget_mh,
            backward: full.then(|| metric_backward(grid).expect("full grid")),
            forget_variant,
            forget,
            reported: None,
            discrepancy: None,
        }
    }

    pub fn with_reported(mut self, reported: ReportedMetrics) -> Self {
        let diff = |a: Option<f64>, b: Option<f64>| a.zip(b).map(|(a, b)| a - b);
        let mut matching = Vec::new();
        if let Some(f) = reported.forget {
            for (variant, v) in [
                (ForgetVariant::AsWritten, self.forget_as_written),
                (ForgetVariant::MaxOverHistory, self.forget_max_over_history),
            ] {
                if v.is_some_and(|v| (v - f).abs() <= FORGET_MATCH_TOLERANCE) {
                    matching.push(variant);
                }
            }
        }
        self.discrepancy = Some(Discrepancy {
            avg: diff(Some(self.avg_score), reported.avg),
            forget_as_written: diff(self.forget_as_written, reported.forget),
            forget_max_over_history: diff(self.forget_max_over_history, reported.forget),
            backward: diff(self.backward, reported.backward),
            forget_matching_variants: matching,
            reported_pair_consistent: reported
                .forget
                .zip(reported.backward)
                .map(|(f, b)| (f + b).abs() <= FORGET_MATCH_TOLERANCE),
        });
        self.reported = Some(reported);
        self
    }
}

/// A grid file plus any `# reported: avg=.. forget=.. backward=..` line.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFile {
    pub grid: ScoreGrid,
    pub reported: Option<ReportedMetrics>,
}

/// Reads a grid CSV: `#` lines are comments, the first record is a header
/// whose first cell is ignored and whose remaining cells label the tasks, and
/// every following record is `<stage label>,<scores...>`.
pub fn read_grid_csv(path: impl AsRef<Path>) -> Result<GridFile> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let format_err = |msg: String| Error::Format {
        path: path.to_path_buf(),
        msg,
    };
    let mut reported = None;
    for line in text.lines() {
        if let Some(rest) = line.trim().strip_prefix('#') {
            if let Some(values) = rest.trim().strip_prefix("reported:") {
                reported = Some(parse_reported(values).map_err(format_err)?);
            }
        }
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let labels: Vec<String> = reader.headers()?.iter().skip(1).map(str::to_string).collect();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        let row = record
            .iter()
            .skip(1)
            .map(|v| v.parse::<f64>().map_err(|e| format_err(format!("bad score {v:?}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    let grid = ScoreGrid::with_labels(rows, None, labels).map_err(|e| format_err(e.to_string()))?;
    Ok(GridFile { grid, reported })
}

fn parse_reported(s: &str) -> std::result::Result<ReportedMetrics, String> {
    let mut out = ReportedMetrics {
        avg: None,
        forget: None,
        backward: None,
    };
    for item in s.split_whitespace() {
        let (key, value) = item.split_once('=').ok_or_else(|| format!("expected key=value, got {item:?}"))?;
        let value: f64 = value.parse().map_err(|e| format!("bad value for {key}: {e}"))?;
        match key {
            "avg" => out.avg = Some(value),
            "forget" => out.forget = Some(value),
            "backward" => out.backward = Some(value),
            other => return Err(format!("unknown reported metric {other:?}")),
        }
    }
    Ok(out)
}

/// Reads a baseline CSV: one score per line or a single comma-separated row.
pub fn read_baseline_csv(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)?;
    let mut out = Vec::new();
    for record in reader.records() {
        for v in record?.iter().filter(|v| !v.is_empty()) {
            out.push(v.parse::<f64>().map_err(|e| Error::Format {
                path: path.to_path_buf(),
                msg: format!("bad score {v:?}: {e}"),
            })?);
        }
    }
    Ok(out)
}

/// `stage,task,score` in long format.
pub fn write_scores_csv(path: impl AsRef<Path>, grid: &ScoreGrid) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["stage", "task", "score"])?;
    for (s, row) in grid.rows().iter().enumerate() {
        for (t, v) in row.iter().enumerate() {
            w.write_record([s.to_string(), grid.labels()[t].clone(), v.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(rows: Vec<Vec<f64>>) -> ScoreGrid {
        ScoreGrid::new(rows, None).unwrap()
    }

    #[test]
    fn two_task_hand_example() {
        let g = grid(vec![vec![10.0, 0.0], vec![4.0, 8.0]]);
        assert_eq!(metric_forget(&g, ForgetVariant::AsWritten).unwrap(), 6.0);
        assert_eq!(metric_backward(&g).unwrap(), -6.0);
        assert_eq!(metric_avg_score(&g), 6.0);
    }

    #[test]
    fn constant_grid() {
        let g = grid(vec![vec![7.5; 3]; 3]);
        assert_eq!(metric_avg_score(&g), 7.5);
        assert_eq!(metric_backward(&g).unwrap(), 0.0);
    }

    #[test]
    fn variants_agree_when_diagonal_is_the_peak() {
        let g = grid(vec![vec![9.0, 1.0, 0.0], vec![7.0, 8.0, 0.0], vec![7.0, 6.0, 5.0]]);
        assert_eq!(
            metric_forget(&g, ForgetVariant::AsWritten).unwrap(),
            metric_forget(&g, ForgetVariant::MaxOverHistory).unwrap()
        );
    }

    #[test]
    fn history_max_sees_later_peaks() {
        let g = grid(vec![vec![5.0, 0.0], vec![3.0, 8.0]]);
        let g3 = grid(vec![vec![5.0, 0.0, 0.0], vec![9.0, 8.0, 0.0], vec![3.0, 8.0, 1.0]]);
        assert_eq!(metric_forget(&g, ForgetVariant::MaxOverHistory).unwrap(), 2.0);
        assert_eq!(metric_forget(&g3, ForgetVariant::MaxOverHistory).unwrap(), 3.0);
        assert_eq!(metric_forget(&g3, ForgetVariant::AsWritten).unwrap(), 1.0);
    }

    #[test]
    fn forward_modes() {
        let mut g = grid(vec![vec![3.0, 0.0], vec![1.0, 5.0]]);
        assert!(metric_forward(&g, ForwardMode::Mixed).is_err());
        g.set_baseline(vec![2.0, 4.0]).unwrap();
        assert_eq!(metric_forward(&g, ForwardMode::Sequential).unwrap(), 1.0);
        assert_eq!(metric_forward(&g, ForwardMode::Mixed).unwrap(), 0.0);
    }

    #[test]
    fn single_task_grid_has_no_forgetting() {
        let g = grid(vec![vec![42.0]]);
        assert!(metric_forget(&g, ForgetVariant::AsWritten).is_err());
        assert!(metric_backward(&g).is_err());
        let report = MetricsReport::compute(&g, ForwardMode::Sequential, ForgetVariant::AsWritten);
        assert_eq!(report.avg_score, 42.0);
        assert_eq!(report.forget, None);
    }

    #[test]
    fn partial_grid_supports_mixed_metrics_only() {
        let g = ScoreGrid::new(vec![vec![1.0, 3.0, 5.0]], Some(vec![1.0, 1.0, 1.0])).unwrap();
        assert_eq!(metric_avg_score(&g), 3.0);
        assert_eq!(metric_forward(&g, ForwardMode::Mixed).unwrap(), 2.0);
        assert!(metric_forward(&g, ForwardMode::Sequential).is_err());
        assert!(metric_forget(&g, ForgetVariant::AsWritten).is_err());
    }

    #[test]
    fn grid_validation() {
        assert!(ScoreGrid::new(vec![], None).is_err());
        assert!(ScoreGrid::new(vec![vec![1.0, 2.0], vec![1.0]], None).is_err());
        assert!(ScoreGrid::new(vec![vec![f64::NAN]], None).is_err());
        assert!(ScoreGrid::new(vec![vec![1.0]; 2], None).is_err());
    }

    #[test]
    fn discrepancy_fields() {
        let g = grid(vec![vec![10.0, 0.0], vec![4.0, 8.0]]);
        let r = MetricsReport::compute(&g, ForwardMode::Sequential, ForgetVariant::AsWritten).with_reported(
            ReportedMetrics {
                avg: Some(6.5),
                forget: Some(6.02),
                backward: Some(-5.0),
            },
        );
        let d = r.discrepancy.unwrap();
        assert_eq!(d.avg, Some(-0.5));
        assert_eq!(d.forget_matching_variants, vec![ForgetVariant::AsWritten, ForgetVariant::MaxOverHistory]);
        assert_eq!(d.reported_pair_consistent, Some(false));
    }

    #[test]
    fn grid_csv_with_comments_and_labels() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.csv");
        fs::write(&p, "# note\n# reported: avg=6 forget=6 backward=-6\ntask,a,b\na,10,0\nb, 4 ,8\n").unwrap();
        let f = read_grid_csv(&p).unwrap();
        assert_eq!(f.grid.rows(), &[vec![10.0, 0.0], vec![4.0, 8.0]]);
        assert_eq!(f.grid.labels(), &["a", "b"]);
        assert_eq!(f.reported.unwrap().backward, Some(-6.0));

        fs::write(&p, "task,a\na,ten\n").unwrap();
        assert!(matches!(read_grid_csv(&p), Err(Error::Format { .. })));
    }

    #[test]
    fn baseline_csv_either_layout() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.csv");
        fs::write(&p, "1.5\n2\n").unwrap();
        assert_eq!(read_baseline_csv(&p).unwrap(), vec![1.5, 2.0]);
        fs::write(&p, "1.5, 2\n").unwrap();
        assert_eq!(read_baseline_csv(&p).unwrap(), vec![1.5, 2.0]);
    }
}
