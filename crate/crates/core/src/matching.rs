//! Slot matching between predicted instance logits and one-hot targets.
//!
//! [`hungarian_assign`] is the usual minimum cross-entropy one-to-one
//! matching. [`overseg_match`] starts from it and then greedily rewrites the
//! target so that a confident over-segmentation of a target part by an
//! otherwise unused prediction slot is rewarded instead of penalized.

use std::collections::BTreeSet;

use crate::error::{Error, Result};

/// Minimum number of rows each half of an accepted over-segmentation needs
/// (strictly more than this).
pub const MIN_OVERSEG_ROWS: usize = 10;
/// Share of an unused slot's argmax rows that must fall on the target part
/// it would over-segment (strictly more than this).
pub const MIN_OVERSEG_MODE_FRACTION: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MatrixKind {
    Logits,
    OneHot,
}

/// Row-major `rows × cols` matrix: one row per point, one column per slot.
#[derive(Clone, Debug, PartialEq)]
pub struct InstanceMatrix {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
    pub kind: MatrixKind,
}

impl InstanceMatrix {
    pub fn logits(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {rows}x{cols} matrix",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format("non-finite logit".into()));
        }
        Ok(InstanceMatrix {
            rows,
            cols,
            values,
            kind: MatrixKind::Logits,
        })
    }

    /// One-hot target with `labels[n]` hot in row `n`.
    pub fn one_hot(labels: &[usize], cols: usize) -> Result<Self> {
        let mut values = vec![0.0; labels.len() * cols];
        for (n, &l) in labels.iter().enumerate() {
            if l >= cols {
                return Err(Error::ShapeMismatch(format!("label {l} with {cols} slots")));
            }
            values[n * cols + l] = 1.0;
        }
        Ok(InstanceMatrix {
            rows: labels.len(),
            cols,
            values,
            kind: MatrixKind::OneHot,
        })
    }

    pub fn row(&self, n: usize) -> &[f64] {
        &self.values[n * self.cols..(n + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, n: usize, k: usize) -> f64 {
        self.values[n * self.cols + k]
    }

    /// Column with the largest value; ties to the lower column.
    pub fn argmax(&self, n: usize) -> usize {
        let row = self.row(n);
        (0..self.cols).fold(0, |best, k| if row[k] > row[best] { k } else { best })
    }

    /// Per-row hot column of a one-hot matrix.
    pub fn labels(&self) -> Vec<usize> {
        (0..self.rows).map(|n| self.argmax(n)).collect()
    }

    pub fn column_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for n in 0..self.rows {
            for (k, v) in self.row(n).iter().enumerate() {
                out[k] += v;
            }
        }
        out
    }

    /// Number of columns with at least one hot row.
    pub fn used_columns(&self) -> usize {
        self.column_sums().iter().filter(|&&s| s > 0.0).count()
    }
}

fn log_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    row.iter().map(|v| v - lse).collect()
}

/// `cost[p][t]`: cross-entropy of prediction slot `p` against the rows of
/// target slot `t`.
pub fn cross_entropy_costs(
    pred: &InstanceMatrix,
    target: &InstanceMatrix,
) -> Result<Vec<Vec<f64>>> {
    if pred.rows != target.rows || pred.cols != target.cols {
        return Err(Error::ShapeMismatch(format!(
            "prediction {}x{} vs target {}x{}",
            pred.rows, pred.cols, target.rows, target.cols
        )));
    }
    let k = pred.cols;
    let mut cost = vec![vec![0.0; k]; k];
    for n in 0..pred.rows {
        let lp = log_softmax(pred.row(n));
        for (t, &w) in target.row(n).iter().enumerate() {
            if w != 0.0 {
                for (row, l) in cost.iter_mut().zip(&lp) {
                    row[t] -= w * l;
                }
            }
        }
    }
    Ok(cost)
}

/// Minimum-cost perfect matching on a square matrix; returns the column of
/// each row.
pub fn solve_assignment(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    // potentials formulation, 1-based with a virtual column 0
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        owner[0] = row;
        let mut col0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[col0] = true;
            let r = owner[col0];
            let mut delta = f64::INFINITY;
            let mut col1 = 0;
            for c in 1..=n {
                if used[c] {
                    continue;
                }
                let cur = cost[r - 1][c - 1] - u[r] - v[c];
                if cur < minv[c] {
                    minv[c] = cur;
                    way[c] = col0;
                }
                if minv[c] < delta {
                    delta = minv[c];
                    col1 = c;
                }
            }
            for c in 0..=n {
                if used[c] {
                    u[owner[c]] += delta;
                    v[c] -= delta;
                } else {
                    minv[c] -= delta;
                }
            }
            col0 = col1;
            if owner[col0] == 0 {
                break;
            }
        }
        loop {
            let col1 = way[col0];
            owner[col0] = owner[col1];
            col0 = col1;
            if col0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![0; n];
    for c in 1..=n {
        out[owner[c] - 1] = c - 1;
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct Assignment {
    /// Target slot matched to each prediction slot; `None` for prediction
    /// slots that landed on an empty target column.
    pub pred_to_target: Vec<Option<usize>>,
    pub cost: f64,
}

pub fn hungarian_assign(pred: &InstanceMatrix, target: &InstanceMatrix) -> Result<Assignment> {
    let cost = cross_entropy_costs(pred, target)?;
    let perm = solve_assignment(&cost);
    let nonempty: Vec<bool> = target.column_sums().iter().map(|&s| s > 0.0).collect();
    let total = perm.iter().enumerate().map(|(p, &t)| cost[p][t]).sum();
    Ok(Assignment {
        pred_to_target: perm.into_iter().map(|t| nonempty[t].then_some(t)).collect(),
        cost: total,
    })
}

/// One accepted over-segmentation: target part `target_a`, matched to
/// prediction slot `pred_a`, was split and its rows claimed by `unused_pred`
/// moved to the formerly empty target slot `unused_target`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Overseg {
    pub pred_a: usize,
    pub unused_pred: usize,
    pub target_a: usize,
    pub unused_target: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MatchResult {
    pub assignment: Vec<Option<usize>>,
    pub modified_target: InstanceMatrix,
    pub accepted: Vec<Overseg>,
}

impl MatchResult {
    /// Per-row training label in prediction-slot space.
    pub fn pred_slot_targets(&self) -> Vec<usize> {
        let mut owner = vec![usize::MAX; self.modified_target.cols];
        for (p, t) in self.assignment.iter().enumerate() {
            if let Some(t) = t {
                owner[*t] = p;
            }
        }
        self.modified_target
            .labels()
            .into_iter()
            .map(|t| owner[t])
            .collect()
    }
}

/// Hungarian matching without any target modification.
pub fn plain_match(pred: &InstanceMatrix, target: &InstanceMatrix) -> Result<MatchResult> {
    Ok(MatchResult {
        assignment: hungarian_assign(pred, target)?.pred_to_target,
        modified_target: target.clone(),
        accepted: Vec::new(),
    })
}

/// Hungarian matching followed by the greedy over-segmentation rewrite.
///
/// Unused prediction slots are visited in ascending order, each paired with
/// the lowest still-unused target slot. Let `A` be the target part that
/// most of the unused slot's argmax rows belong to (ties to the lower slot)
/// and `P_A` the prediction slot matched to `A`. The rows of `A` are split by
/// comparing the `P_A` and unused-slot logits; the split is accepted when
/// both halves have more than [`MIN_OVERSEG_ROWS`] rows and `A` holds more
/// than [`MIN_OVERSEG_MODE_FRACTION`] of the unused slot's argmax rows.
/// Unused slots without any argmax row are skipped.
pub fn overseg_match(pred: &InstanceMatrix, target: &InstanceMatrix) -> Result<MatchResult> {
    let base = hungarian_assign(pred, target)?;
    let mut assignment = base.pred_to_target;
    let mut labels = target.labels();
    let k = pred.cols;

    let used_targets: BTreeSet<usize> = assignment.iter().flatten().copied().collect();
    let mut free_targets: BTreeSet<usize> = (0..k).filter(|t| !used_targets.contains(t)).collect();
    let unused_preds: Vec<usize> = (0..k).filter(|&p| assignment[p].is_none()).collect();
    let pred_argmax: Vec<usize> = (0..pred.rows).map(|n| pred.argmax(n)).collect();
    let mut accepted = Vec::new();

    for up in unused_preds {
        let Some(&ut) = free_targets.iter().next() else {
            break;
        };
        let claimed: Vec<usize> = (0..pred.rows).filter(|&n| pred_argmax[n] == up).collect();
        if claimed.is_empty() {
            continue;
        }
        let mut counts = vec![0usize; k];
        for &n in &claimed {
            counts[labels[n]] += 1;
        }
        let a = (0..k).fold(0, |best, t| if counts[t] > counts[best] { t } else { best });
        let mode_fraction = counts[a] as f64 / claimed.len() as f64;
        let Some(pa) = (0..k).find(|&p| assignment[p] == Some(a)) else {
            continue;
        };
        let (to_up, to_pa): (Vec<usize>, Vec<usize>) = (0..pred.rows)
            .filter(|&n| labels[n] == a)
            .partition(|&n| pred.get(n, up) > pred.get(n, pa));
        if to_pa.len() > MIN_OVERSEG_ROWS
            && to_up.len() > MIN_OVERSEG_ROWS
            && mode_fraction > MIN_OVERSEG_MODE_FRACTION
        {
            for n in to_up {
                labels[n] = ut;
            }
            assignment[up] = Some(ut);
            free_targets.remove(&ut);
            accepted.push(Overseg {
                pred_a: pa,
                unused_pred: up,
                target_a: a,
                unused_target: ut,
            });
        }
    }

    Ok(MatchResult {
        assignment,
        modified_target: InstanceMatrix::one_hot(&labels, k)?,
        accepted,
    })
}
