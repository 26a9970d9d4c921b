//! Command-line front end. Exit codes: 0 success, 1 usage, 2 invalid input,
//! 3 failed numeric invariant.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use crate::bad::{decompose, load_bank, pairwise_orthogonality, reconstruct, save_bank};
use crate::dog::{dog_run, normalize, write_assignment_csv, AssignMode, DogConfig, DogReport, DEFAULT_EPS_G};
use crate::harness::{
    activated_neurons, execute, make_tasks_with, overlap_from_sets, overlap_report, read_baseline_csv, read_grid_csv,
    task_profile, write_outputs, ForgetVariant, ForwardMode, MetricsReport, OverlapReport, RunConfig, RunOutput,
};
use crate::linops::{read_bmat, write_bmat};
use crate::moe::{load_layer, save_layer};
use crate::{Error, Result, FORMAT_VERSION};

/// Largest normalized inner product accepted between fresh experts.
pub const ORTHOGONALITY_TOL: f64 = 1e-10;
/// Largest relative Frobenius error accepted when rebuilding a weight.
pub const RECONSTRUCTION_TOL: f64 = 1e-10;
/// Largest `‖QᵀQ − I‖_max` accepted for grouping directions.
pub const DIRECTION_TOL: f64 = 1e-10;

#[derive(Debug, Parser)]
#[command(name = "badit", version, about = "Orthogonal LoRA expert banks and gradient regrouping")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Split a weight matrix into a frozen residual and K orthogonal experts.
    Decompose(DecomposeArgs),
    /// Rebuild the dense weight from a bank directory.
    Reconstruct(ReconstructArgs),
    /// Group rank-1 component gradients into orthogonal experts.
    Dog(DogArgs),
    /// Run a synthetic multi-task training experiment.
    Train(TrainArgs),
    /// Continual-learning metrics of a score grid.
    Metrics(MetricsArgs),
    /// Fisher/activation overlap of a trained layer across tasks.
    Analyze(AnalyzeArgs),
}

/// Rank per expert: a number, or `full` for `min(m, n) / k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RankArg {
    Full,
    Value(usize),
}

impl FromStr for RankArg {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s == "full" {
            return Ok(RankArg::Full);
        }
        s.parse().map(RankArg::Value).map_err(|_| format!("expected a number or `full`, got {s:?}"))
    }
}

#[derive(Debug, Args)]
pub struct DecomposeArgs {
    /// Weight matrix in BMAT format.
    pub input: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub k: usize,
    #[arg(long, default_value = "4")]
    pub r: RankArg,
    #[arg(long, default_value_t = 1.0)]
    pub scale: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReconstructArgs {
    pub bank: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Compare against this matrix and fail if the relative error is too large.
    #[arg(long)]
    pub reference: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DogArgs {
    /// Raw gradients, one row per component (rK rows of length m + n).
    pub gradients: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub k: usize,
    #[arg(long, default_value_t = 4)]
    pub r: usize,
    #[arg(long, default_value_t = AssignMode::Exact)]
    pub mode: AssignMode,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 10)]
    pub max_iter: usize,
    #[arg(long, default_value_t = DEFAULT_EPS_G)]
    pub eps_g: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Runs executed in parallel when several seeds are configured.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Replace the configured seed list.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, conflicts_with = "no_dog")]
    pub dog: bool,
    #[arg(long)]
    pub no_dog: bool,
    #[arg(long)]
    pub mode: Option<AssignMode>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub eps_g: Option<f64>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub r: Option<usize>,
    #[arg(long)]
    pub scale: Option<f64>,
    #[arg(long)]
    pub top_k: Option<usize>,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    /// Grid CSV: header row of task labels, one row per stage.
    pub grid: PathBuf,
    #[arg(long)]
    pub baseline: Option<PathBuf>,
    #[arg(long, default_value = "sequential")]
    pub mode: ForwardMode,
    #[arg(long, default_value = "as_written")]
    pub forget_variant: ForgetVariant,
    /// Output JSON path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Layer directory (as written by `train` under `model/`).
    pub model: PathBuf,
    /// Run config describing the tasks.
    pub config: PathBuf,
    #[arg(long, default_value_t = 1e-3)]
    pub eps: f64,
    #[arg(long, default_value_t = 0.25)]
    pub keep: f64,
    #[arg(long)]
    pub out: PathBuf,
}

impl Error {
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Invariant(_) | Error::DivisionHazard { .. } => 3,
            _ => 2,
        }
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Decompose(a) => cmd_decompose(&a),
        Command::Reconstruct(a) => cmd_reconstruct(&a),
        Command::Dog(a) => cmd_dog(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Metrics(a) => cmd_metrics(&a),
        Command::Analyze(a) => cmd_analyze(&a),
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

/// Contents of `ortho.json`.
#[derive(Debug, Serialize)]
pub struct OrthoReport {
    pub format_version: u32,
    pub k: usize,
    pub r: usize,
    pub scale: f64,
    pub max_offdiag: f64,
    pub zero_experts: Vec<usize>,
    pub matrix: Vec<Vec<f64>>,
    pub residual_fro_norm: f64,
    pub reconstruction_rel_error: f64,
}

fn relative_error(a: &crate::linops::DenseMatrix, b: &crate::linops::DenseMatrix) -> Result<f64> {
    let diff = a.sub(b)?.frobenius_norm();
    let nb = b.frobenius_norm();
    Ok(if nb == 0.0 { diff } else { diff / nb })
}

fn cmd_decompose(a: &DecomposeArgs) -> Result<()> {
    let w = read_bmat(&a.input)?;
    let r = match a.r {
        RankArg::Value(r) => r,
        RankArg::Full if a.k == 0 => 0,
        RankArg::Full => w.rows().min(w.cols()) / a.k,
    };
    let bank = decompose(&w, a.k, r, a.scale)?;
    save_bank(&bank, &a.out)?;
    let ortho = pairwise_orthogonality(&bank);
    let k = bank.num_experts();
    let report = OrthoReport {
        format_version: FORMAT_VERSION,
        k,
        r,
        scale: a.scale,
        max_offdiag: ortho.max_offdiag(),
        zero_experts: (0..k).filter(|&i| ortho.zero_norm[i]).collect(),
        matrix: (0..k).map(|i| ortho.matrix.row(i).to_vec()).collect(),
        residual_fro_norm: bank.residual().frobenius_norm(),
        reconstruction_rel_error: relative_error(&reconstruct(&bank), &w)?,
    };
    write_json(&a.out.join("ortho.json"), &report)?;
    println!(
        "k={k} r={r} max_offdiag={:e} residual_fro={:e}",
        report.max_offdiag, report.residual_fro_norm
    );
    if report.max_offdiag > ORTHOGONALITY_TOL {
        return Err(Error::Invariant(format!(
            "expert orthogonality {:e} exceeds {ORTHOGONALITY_TOL:e}",
            report.max_offdiag
        )));
    }
    if report.reconstruction_rel_error > RECONSTRUCTION_TOL {
        return Err(Error::Invariant(format!(
            "reconstruction error {:e} exceeds {RECONSTRUCTION_TOL:e}",
            report.reconstruction_rel_error
        )));
    }
    Ok(())
}

fn cmd_reconstruct(a: &ReconstructArgs) -> Result<()> {
    let bank = load_bank(&a.bank)?;
    let w = reconstruct(&bank);
    write_bmat(&a.out, &w)?;
    if let Some(reference) = &a.reference {
        let err = relative_error(&w, &read_bmat(reference)?)?;
        println!("relative_error={err:e}");
        if err > RECONSTRUCTION_TOL {
            return Err(Error::Invariant(format!(
                "reconstruction error {err:e} exceeds {RECONSTRUCTION_TOL:e}"
            )));
        }
    }
    Ok(())
}

fn cmd_dog(a: &DogArgs) -> Result<()> {
    let raw = read_bmat(&a.gradients)?;
    if raw.rows() != a.k * a.r {
        return Err(Error::Constraint(format!(
            "{} gradient rows cannot form {} experts of rank {}",
            raw.rows(),
            a.k,
            a.r
        )));
    }
    let batch = normalize(&raw, a.eps_g)?;
    let config = DogConfig {
        max_iter: a.max_iter,
        mode: a.mode,
        seed: a.seed,
    };
    let outcome = dog_run(&batch, a.k, a.r, &config)?;
    let report = DogReport::new(&batch, &outcome, &config)?;
    fs::create_dir_all(&a.out)?;
    write_json(&a.out.join("dog.json"), &report)?;
    write_assignment_csv(a.out.join("assignment.csv"), outcome.policy.labels(), a.r)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    println!(
        "iterations={} converged={} objective={}",
        report.iterations, report.converged, report.objective
    );
    if report.direction_defect > DIRECTION_TOL {
        return Err(Error::Invariant(format!(
            "grouping directions are not orthonormal (defect {:e})",
            report.direction_defect
        )));
    }
    Ok(())
}

fn apply_overrides(cfg: &mut RunConfig, a: &TrainArgs) {
    if let Some(s) = &a.seeds {
        cfg.seeds = s.clone();
    }
    if let Some(v) = a.epochs {
        cfg.train.epochs = v;
    }
    if let Some(v) = a.lr {
        cfg.train.lr = v;
    }
    if a.dog {
        cfg.train.dog.enabled = true;
    }
    if a.no_dog {
        cfg.train.dog.enabled = false;
    }
    if let Some(v) = a.mode {
        cfg.train.dog.mode = v;
    }
    if let Some(v) = a.max_iter {
        cfg.train.dog.max_iter = v;
    }
    if let Some(v) = a.eps_g {
        cfg.train.dog.eps_g = v;
    }
    if let Some(v) = a.k {
        cfg.model.k = v;
    }
    if let Some(v) = a.r {
        cfg.model.r = v;
    }
    if let Some(v) = a.scale {
        cfg.model.scale = v;
    }
    if let Some(v) = a.top_k {
        cfg.model.top_k = v;
    }
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let mut cfg = RunConfig::load(&a.config)?;
    apply_overrides(&mut cfg, a);
    if cfg.seeds.is_empty() {
        return Err(Error::InvalidParameter("seeds must not be empty".into()));
    }
    if a.jobs == 0 {
        return Err(Error::InvalidParameter("--jobs must be positive".into()));
    }
    fs::create_dir_all(&a.out)?;
    write_json(&a.out.join("run_config.json"), &cfg)?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(a.jobs)
        .build()
        .map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let outputs: Vec<RunOutput> =
        pool.install(|| cfg.seeds.par_iter().map(|&s| execute(&cfg, s)).collect::<Result<Vec<_>>>())?;

    let single = outputs.len() == 1;
    for out in &outputs {
        let dir = if single {
            a.out.clone()
        } else {
            a.out.join(format!("seed_{}", out.seed))
        };
        write_outputs(&dir, out)?;
        save_layer(&out.run.model, dir.join("model"))?;
        for w in &out.run.warnings {
            eprintln!("warning (seed {}): {w}", out.seed);
        }
        let m = &out.metrics;
        println!(
            "seed={} avg={:.4} forward={} forget={} backward={}",
            out.seed,
            m.avg_score,
            fmt_opt(m.forward),
            fmt_opt(m.forget),
            fmt_opt(m.backward)
        );
    }
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |v| format!("{v:.4}"))
}

fn cmd_metrics(a: &MetricsArgs) -> Result<()> {
    let file = read_grid_csv(&a.grid)?;
    let mut grid = file.grid;
    if let Some(b) = &a.baseline {
        grid.set_baseline(read_baseline_csv(b)?)?;
    }
    let mut report = MetricsReport::compute(&grid, a.mode, a.forget_variant);
    if let Some(reported) = file.reported {
        report = report.with_reported(reported);
    }
    write_json(&a.out, &report)?;
    println!(
        "avg={:.4} forward={} forget_as_written={} forget_max_over_history={} backward={}",
        report.avg_score,
        fmt_opt(report.forward),
        fmt_opt(report.forget_as_written),
        fmt_opt(report.forget_max_over_history),
        fmt_opt(report.backward)
    );
    if let (Some(f), Some(b)) = (report.forget_as_written, report.backward) {
        if f + b != 0.0 {
            return Err(Error::Invariant(format!("backward {b} is not the negated forget rate {f}")));
        }
    }
    Ok(())
}

/// Contents of `overlap.json`.
#[derive(Debug, Serialize)]
pub struct AnalysisReport {
    #[serde(flatten)]
    pub fisher: OverlapReport,
    pub eps: f64,
    /// Number of tasks for which each unit is activated.
    pub activated_task_counts: Vec<usize>,
    pub activated_histogram: Vec<usize>,
}

fn cmd_analyze(a: &AnalyzeArgs) -> Result<()> {
    let layer = load_layer(&a.model)?;
    let cfg = RunConfig::load(&a.config)?;
    let tasks = make_tasks_with(&cfg.tasks)?;
    if layer.shape() != (cfg.tasks.m, cfg.tasks.n) {
        return Err(Error::Dimension(format!(
            "layer is {:?}, tasks are ({}, {})",
            layer.shape(),
            cfg.tasks.m,
            cfg.tasks.n
        )));
    }
    let profiles = tasks
        .tasks()
        .iter()
        .map(|t| task_profile(&layer, &t.train_x, &t.train_y))
        .collect::<Result<Vec<_>>>()?;
    let fisher = overlap_report(&profiles, a.keep)?;
    let masks = tasks
        .tasks()
        .iter()
        .map(|t| activated_neurons(&layer, &t.train_x, a.eps))
        .collect::<Result<Vec<_>>>()?;
    let (activated_task_counts, activated_histogram) = overlap_from_sets(&masks)?;
    let report = AnalysisReport {
        fisher,
        eps: a.eps,
        activated_task_counts,
        activated_histogram,
    };
    fs::create_dir_all(&a.out)?;
    write_json(&a.out.join("overlap.json"), &report)?;
    let mut w = csv::Writer::from_path(a.out.join("overlap.csv"))?;
    w.write_record(["unit", "fisher_tasks", "activated_tasks", "positive_tasks", "negative_tasks"])?;
    for i in 0..report.activated_task_counts.len() {
        w.write_record([
            i.to_string(),
            report.fisher.unit_task_counts[i].to_string(),
            report.activated_task_counts[i].to_string(),
            report.fisher.positive_tasks[i].to_string(),
            report.fisher.negative_tasks[i].to_string(),
        ])?;
    }
    w.flush()?;
    println!("fisher_histogram={:?}", report.fisher.histogram);
    Ok(())
}
