//! Importance and activation statistics of a trained layer, per task, and how
//! much they overlap across tasks. A "unit" is one output coordinate `h_i`,
//! i.e. one row of the effective dense weight.

use serde::{Deserialize, Serialize};

use crate::linops::DenseMatrix;
use crate::moe::MoeLoraLayer;
use crate::{Error, Result, FORMAT_VERSION};

/// Per-task statistics gathered in one pass over the data.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskProfile {
    /// `m x n`, mean squared per-sample gradient of the loss with respect to
    /// the effective dense weight.
    pub fisher: DenseMatrix,
    /// `m x n`, mean per-sample gradient.
    pub mean_grad: DenseMatrix,
    /// Mean output `h̄` over the data.
    pub mean_activation: Vec<f64>,
}

fn check_data(layer: &MoeLoraLayer, x: &DenseMatrix, y: Option<&DenseMatrix>) -> Result<()> {
    if x.rows() == 0 {
        return Err(Error::EmptyData("no samples".into()));
    }
    let (m, n) = layer.shape();
    if x.cols() != n {
        return Err(Error::Dimension(format!("inputs have {} columns, expected {n}", x.cols())));
    }
    if let Some(y) = y {
        if y.shape() != (x.rows(), m) {
            return Err(Error::Dimension(format!("targets are {:?}, expected ({}, {m})", y.shape(), x.rows())));
        }
    }
    Ok(())
}

/// Loss is `‖h − y‖² / m`, so the per-sample dense gradient is `(2/m)(h − y)xᵀ`.
pub fn task_profile(layer: &MoeLoraLayer, x: &DenseMatrix, y: &DenseMatrix) -> Result<TaskProfile> {
    check_data(layer, x, Some(y))?;
    let (m, n) = layer.shape();
    let s = x.rows() as f64;
    let mut fisher = DenseMatrix::zeros(m, n);
    let mut mean_grad = DenseMatrix::zeros(m, n);
    let mut mean_activation = vec![0.0; m];
    for k in 0..x.rows() {
        let xs = x.row(k);
        let h = layer.forward(xs)?;
        for i in 0..m {
            mean_activation[i] += h[i] / s;
            let u = 2.0 * (h[i] - y[(k, i)]) / m as f64;
            for (f, xj) in fisher.row_mut(i).iter_mut().zip(xs) {
                let g = u * xj;
                *f += g * g / s;
            }
            for (g, xj) in mean_grad.row_mut(i).iter_mut().zip(xs) {
                *g += u * xj / s;
            }
        }
    }
    Ok(TaskProfile {
        fisher,
        mean_grad,
        mean_activation,
    })
}

pub fn fisher_diagonal(layer: &MoeLoraLayer, x: &DenseMatrix, y: &DenseMatrix) -> Result<DenseMatrix> {
    Ok(task_profile(layer, x, y)?.fisher)
}

/// `|mean_i h_i| > eps` per output unit.
pub fn activated_neurons(layer: &MoeLoraLayer, x: &DenseMatrix, eps: f64) -> Result<Vec<bool>> {
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::InvalidParameter(format!("eps = {eps} must be positive")));
    }
    check_data(layer, x, None)?;
    let m = layer.shape().0;
    let mut mean = vec![0.0; m];
    for k in 0..x.rows() {
        for (a, h) in mean.iter_mut().zip(layer.forward(x.row(k))?) {
            *a += h;
        }
    }
    Ok(mean.iter().map(|v| (v / x.rows() as f64).abs() > eps).collect())
}

/// Rows holding the largest Fisher mass, `ceil(keep_fraction · m)` of them;
/// ties go to the lower row.
pub fn top_units(fisher: &DenseMatrix, keep_fraction: f64) -> Result<Vec<bool>> {
    check_keep(keep_fraction)?;
    let m = fisher.rows();
    let mass: Vec<f64> = (0..m).map(|i| fisher.row(i).iter().sum()).collect();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| mass[b].total_cmp(&mass[a]).then(a.cmp(&b)));
    let keep = ((keep_fraction * m as f64).ceil() as usize).min(m);
    let mut mask = vec![false; m];
    for &i in &order[..keep] {
        mask[i] = true;
    }
    Ok(mask)
}

fn check_keep(keep_fraction: f64) -> Result<()> {
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(Error::InvalidParameter(format!("keep fraction {keep_fraction} outside (0, 1]")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapReport {
    pub format_version: u32,
    pub tasks: usize,
    pub keep_fraction: Option<f64>,
    /// Number of tasks selecting each unit.
    pub unit_task_counts: Vec<usize>,
    /// `histogram[c]` = units selected by exactly `c` tasks.
    pub histogram: Vec<usize>,
    /// Per unit, tasks whose mean gradient over the row is positive / negative.
    pub positive_tasks: Vec<usize>,
    pub negative_tasks: Vec<usize>,
}

/// Counts per unit over boolean selections, one per task.
pub fn overlap_from_sets(sets: &[Vec<bool>]) -> Result<(Vec<usize>, Vec<usize>)> {
    if sets.len() < 2 {
        return Err(Error::InvalidInput("overlap needs at least two tasks".into()));
    }
    let m = sets[0].len();
    if sets.iter().any(|s| s.len() != m) {
        return Err(Error::Dimension("selections differ in length".into()));
    }
    let counts: Vec<usize> = (0..m).map(|i| sets.iter().filter(|s| s[i]).count()).collect();
    let mut histogram = vec![0; sets.len() + 1];
    for &c in &counts {
        histogram[c] += 1;
    }
    Ok((counts, histogram))
}

/// Overlap of the per-task top-Fisher units, plus the per-row gradient sign
/// split.
pub fn overlap_report(profiles: &[TaskProfile], keep_fraction: f64) -> Result<OverlapReport> {
    check_keep(keep_fraction)?;
    let sets = profiles
        .iter()
        .map(|p| top_units(&p.fisher, keep_fraction))
        .collect::<Result<Vec<_>>>()?;
    let (unit_task_counts, histogram) = overlap_from_sets(&sets)?;
    let m = unit_task_counts.len();
    let mut positive_tasks = vec![0; m];
    let mut negative_tasks = vec![0; m];
    for p in profiles {
        for i in 0..m {
            let s: f64 = p.mean_grad.row(i).iter().sum();
            if s > 0.0 {
                positive_tasks[i] += 1;
            } else if s < 0.0 {
                negative_tasks[i] += 1;
            }
        }
    }
    Ok(OverlapReport {
        format_version: FORMAT_VERSION,
        tasks: profiles.len(),
        keep_fraction: Some(keep_fraction),
        unit_task_counts,
        histogram,
        positive_tasks,
        negative_tasks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bad::{ExpertBank, ExpertFactors};

    fn two_unit_layer() -> MoeLoraLayer {
        // h = (x0, 0)
        let bank = ExpertBank::new(
            DenseMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap(),
            vec![ExpertFactors {
                a: DenseMatrix::zeros(2, 1),
                b: DenseMatrix::zeros(1, 2),
            }],
            vec![1.0],
            1.0,
        )
        .unwrap();
        MoeLoraLayer::scalar(bank)
    }

    #[test]
    fn crafted_activation_mask() {
        let x = DenseMatrix::from_rows(&[vec![0.4, 1.0], vec![0.6, -3.0]]).unwrap();
        let layer = two_unit_layer();
        assert_eq!(activated_neurons(&layer, &x, 0.1).unwrap(), vec![true, false]);
        assert_eq!(activated_neurons(&layer, &x, 0.6).unwrap(), vec![false, false]);
        assert!(activated_neurons(&layer, &x, 0.0).is_err());
        assert!(activated_neurons(&layer, &DenseMatrix::zeros(0, 2), 0.1).is_err());
    }

    #[test]
    fn perfect_fit_has_zero_fisher() {
        let layer = two_unit_layer();
        let x = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![-1.0, 0.5]]).unwrap();
        let y = DenseMatrix::from_rows(&[vec![1.0, 0.0], vec![-1.0, 0.0]]).unwrap();
        assert_eq!(fisher_diagonal(&layer, &x, &y).unwrap(), DenseMatrix::zeros(2, 2));
    }

    #[test]
    fn single_sample_fisher_is_squared_gradient() {
        let layer = two_unit_layer();
        let x = DenseMatrix::from_rows(&[vec![2.0, 3.0]]).unwrap();
        let y = DenseMatrix::from_rows(&[vec![1.0, 1.0]]).unwrap();
        // h = (2, 0), u = (2/2)(h - y) = (1, -1)
        let f = fisher_diagonal(&layer, &x, &y).unwrap();
        assert_eq!(f, DenseMatrix::from_rows(&[vec![4.0, 9.0], vec![4.0, 9.0]]).unwrap());
    }

    #[test]
    fn top_units_ties_prefer_lower_rows() {
        let f = DenseMatrix::from_rows(&[vec![1.0], vec![3.0], vec![1.0], vec![0.0]]).unwrap();
        assert_eq!(top_units(&f, 0.5).unwrap(), vec![true, true, false, false]);
        assert_eq!(top_units(&f, 0.1).unwrap(), vec![false, true, false, false]);
        assert!(top_units(&f, 0.0).is_err());
        assert!(top_units(&f, 1.5).is_err());
    }

    #[test]
    fn overlap_counts() {
        let same = vec![vec![true, false, true]; 3];
        let (c, h) = overlap_from_sets(&same).unwrap();
        assert_eq!(c, vec![3, 0, 3]);
        assert_eq!(h, vec![1, 0, 0, 2]);

        let disjoint = vec![vec![true, false, false], vec![false, true, false], vec![false, false, true]];
        let (c, h) = overlap_from_sets(&disjoint).unwrap();
        assert_eq!(c, vec![1, 1, 1]);
        assert_eq!(h, vec![0, 3, 0, 0]);

        assert!(overlap_from_sets(&same[..1]).is_err());
    }
}
