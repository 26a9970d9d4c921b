//! Capacity-constrained assignment of components to orthonormal directions.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{GradientBatch, GroupingPolicy};
use crate::linops::{dot, DenseMatrix};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AssignMode {
    /// Hungarian algorithm on the slot-expanded square problem.
    #[default]
    Exact,
    /// Sorted-pair greedy fill.
    Greedy,
}

impl fmt::Display for AssignMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AssignMode::Exact => "exact",
            AssignMode::Greedy => "greedy",
        })
    }
}

impl FromStr for AssignMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(AssignMode::Exact),
            "greedy" => Ok(AssignMode::Greedy),
            other => Err(Error::InvalidParameter(format!("unknown assignment mode {other:?}"))),
        }
    }
}

/// `sim[i][k] = ⟨ĝ_i, q_k⟩`.
pub fn similarities(batch: &GradientBatch, q: &DenseMatrix) -> Result<Vec<Vec<f64>>> {
    if q.rows() != batch.dim() {
        return Err(Error::Dimension(format!(
            "directions have dimension {}, gradients {}",
            q.rows(),
            batch.dim()
        )));
    }
    let qt = q.transpose();
    Ok((0..batch.len())
        .map(|i| (0..q.cols()).map(|k| dot(batch.vector(i), qt.row(k))).collect())
        .collect())
}

/// `Σ_i ⟨ĝ_i, q_{π(i)}⟩`.
pub fn assignment_score(batch: &GradientBatch, q: &DenseMatrix, pi: &GroupingPolicy) -> Result<f64> {
    if pi.num_experts() != q.cols() || pi.num_components() != batch.len() {
        return Err(Error::Constraint("policy does not match batch and directions".into()));
    }
    let sim = similarities(batch, q)?;
    Ok(pi.labels().iter().enumerate().map(|(i, &k)| sim[i][k]).sum())
}

/// Maximises `Σ_k Σ_i π_ik ⟨ĝ_i, q_k⟩` with every expert taking exactly `r`
/// components. Dead components are placed last, in index order, into the
/// lowest-indexed expert with spare capacity.
pub fn assign_step(
    batch: &GradientBatch,
    q: &DenseMatrix,
    r: usize,
    mode: AssignMode,
) -> Result<GroupingPolicy> {
    let k = q.cols();
    if r == 0 || k == 0 || r * k != batch.len() {
        return Err(Error::Constraint(format!(
            "{} components cannot fill {k} experts of capacity {r}",
            batch.len()
        )));
    }
    let sim = similarities(batch, q)?;
    let live: Vec<usize> = (0..batch.len()).filter(|&i| !batch.is_dead(i)).collect();

    let mut labels: Vec<Option<usize>> = vec![None; batch.len()];
    let mut load = vec![0usize; k];
    match mode {
        AssignMode::Exact => {
            // one column per (expert, slot); cost = -similarity
            let cost: Vec<Vec<f64>> = live
                .iter()
                .map(|&i| (0..r * k).map(|slot| -sim[i][slot / r]).collect())
                .collect();
            for (row, slot) in hungarian(&cost, r * k).into_iter().enumerate() {
                let e = slot / r;
                labels[live[row]] = Some(e);
                load[e] += 1;
            }
        }
        AssignMode::Greedy => {
            let mut pairs: Vec<(usize, usize)> = live
                .iter()
                .flat_map(|&i| (0..k).map(move |e| (i, e)))
                .collect();
            pairs.sort_by(|&(i, a), &(j, b)| {
                sim[j][b].total_cmp(&sim[i][a]).then(i.cmp(&j)).then(a.cmp(&b))
            });
            for (i, e) in pairs {
                if labels[i].is_none() && load[e] < r {
                    labels[i] = Some(e);
                    load[e] += 1;
                }
            }
        }
    }
    for label in labels.iter_mut().filter(|l| l.is_none()) {
        let e = (0..k).find(|&e| load[e] < r).expect("capacity matches component count");
        *label = Some(e);
        load[e] += 1;
    }
    GroupingPolicy::new(labels.into_iter().map(|l| l.expect("filled")).collect(), k, r)
}

/// Minimum-cost assignment of every row to a distinct column
/// (`rows <= cols`), via shortest augmenting paths with potentials.
/// Returns the column chosen for each row.
pub(crate) fn hungarian(cost: &[Vec<f64>], cols: usize) -> Vec<usize> {
    let n = cost.len();
    assert!(n <= cols, "hungarian needs rows <= cols");
    if n == 0 {
        return Vec::new();
    }
    let m = cols;
    let inf = f64::INFINITY;
    // 1-based with a virtual column 0
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0usize; n];
    for j in 1..=m {
        if p[j] != 0 {
            assignment[p[j] - 1] = j - 1;
        }
    }
    assignment
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch(rows: &[Vec<f64>]) -> GradientBatch {
        GradientBatch::from_unit_vectors(DenseMatrix::from_rows(rows).unwrap()).unwrap()
    }

    #[test]
    fn hungarian_small_known_optimum() {
        let cost = vec![vec![4.0, 1.0, 3.0], vec![2.0, 0.0, 5.0], vec![3.0, 2.0, 2.0]];
        let a = hungarian(&cost, 3);
        let total: f64 = a.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
        assert_eq!(total, 5.0);
    }

    #[test]
    fn hungarian_rectangular() {
        let cost = vec![vec![5.0, 1.0, 9.0, 0.5], vec![0.2, 8.0, 9.0, 7.0]];
        assert_eq!(hungarian(&cost, 4), vec![3, 0]);
    }

    #[test]
    fn coordinate_directions_give_identity() {
        let rows: Vec<Vec<f64>> = (0..4)
            .map(|i| (0..4).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        let b = batch(&rows);
        let q = DenseMatrix::identity(4);
        for mode in [AssignMode::Exact, AssignMode::Greedy] {
            let p = assign_step(&b, &q, 1, mode).unwrap();
            assert!(p.is_identity());
            assert_eq!(assignment_score(&b, &q, &p).unwrap(), 4.0);
        }
    }

    #[test]
    fn greedy_is_strictly_worse_on_competing_pair() {
        // both components prefer direction 0; the first prefers it more
        let rest0 = (1.0f64 - 0.49 - 0.36).sqrt();
        let rest1 = (1.0f64 - 0.4225 - 0.0025).sqrt();
        let b = batch(&[vec![0.7, 0.6, rest0], vec![0.65, 0.05, rest1]]);
        let q = DenseMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 0.0]]).unwrap();
        let exact = assign_step(&b, &q, 1, AssignMode::Exact).unwrap();
        let greedy = assign_step(&b, &q, 1, AssignMode::Greedy).unwrap();
        assert_eq!(exact.labels(), &[1, 0]);
        assert_eq!(greedy.labels(), &[0, 1]);
        let se = assignment_score(&b, &q, &exact).unwrap();
        let sg = assignment_score(&b, &q, &greedy).unwrap();
        assert!((se - 1.25).abs() < 1e-12 && (sg - 0.75).abs() < 1e-12);
    }

    #[test]
    fn dead_components_fill_lowest_experts_last() {
        let b = batch(&[vec![0.0, 0.0], vec![0.0, 1.0], vec![0.0, 0.0], vec![0.0, 1.0]]);
        let q = DenseMatrix::identity(2);
        for mode in [AssignMode::Exact, AssignMode::Greedy] {
            let p = assign_step(&b, &q, 2, mode).unwrap();
            assert_eq!(p.labels(), &[0, 1, 0, 1], "{mode}");
        }
        let all_dead = batch(&vec![vec![0.0, 0.0]; 4]);
        let p = assign_step(&all_dead, &q, 2, AssignMode::Exact).unwrap();
        assert!(p.is_identity());
    }

    #[test]
    fn capacity_mismatch_is_a_constraint_error() {
        let b = batch(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0]]);
        assert!(matches!(
            assign_step(&b, &DenseMatrix::identity(2), 1, AssignMode::Exact),
            Err(Error::Constraint(_))
        ));
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("greedy".parse::<AssignMode>().unwrap(), AssignMode::Greedy);
        assert!("optimal".parse::<AssignMode>().is_err());
    }
}
