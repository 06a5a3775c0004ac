// SPDX-License-Identifier: Apache-2.0

//! Accuracy, macro-F1, MAE, and the variance-by-error breakdown.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::aggregation::{BagPrediction, VoteMethod};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Patch,
    Bag,
}

impl std::fmt::Display for Level {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Level::Patch => "patch",
            Level::Bag => "bag",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub level: Level,
    /// `argmax` for patches, `MV` or `PV` for bags.
    pub method: String,
    pub accuracy: f64,
    pub macro_f1: f64,
    /// Grade-index units.
    pub mae: f64,
    pub samples: usize,
}

impl MetricsReport {
    pub fn compute(
        level: Level,
        method: impl Into<String>,
        y_true: &[usize],
        y_pred: &[usize],
        num_grades: usize,
    ) -> Result<Self> {
        Ok(Self {
            level,
            method: method.into(),
            accuracy: accuracy(y_true, y_pred)?,
            macro_f1: macro_f1(y_true, y_pred, num_grades)?,
            mae: mae_grades(y_true, y_pred)?,
            samples: y_true.len(),
        })
    }
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::invalid(format!("length mismatch: {a} vs {b}")));
    }
    if a == 0 {
        return Err(Error::invalid("metrics need at least one sample"));
    }
    Ok(())
}

pub fn accuracy(y_true: &[usize], y_pred: &[usize]) -> Result<f64> {
    check_lengths(y_true.len(), y_pred.len())?;
    let hits = y_true.iter().zip(y_pred).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / y_true.len() as f64)
}

/// `counts[t][p]`: samples with true grade `t` predicted as `p`.
pub fn confusion_matrix(
    y_true: &[usize],
    y_pred: &[usize],
    num_grades: usize,
) -> Result<Vec<Vec<usize>>> {
    check_lengths(y_true.len(), y_pred.len())?;
    let mut counts = vec![vec![0usize; num_grades]; num_grades];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        if t >= num_grades || p >= num_grades {
            return Err(Error::invalid(format!(
                "grade out of range for {num_grades} grades: true {t}, predicted {p}"
            )));
        }
        counts[t][p] += 1;
    }
    Ok(counts)
}

/// Per-class F1; a class with no true and no predicted samples scores 0.
pub fn per_class_f1(y_true: &[usize], y_pred: &[usize], num_grades: usize) -> Result<Vec<f64>> {
    let cm = confusion_matrix(y_true, y_pred, num_grades)?;
    Ok((0..num_grades)
        .map(|c| {
            let tp = cm[c][c] as f64;
            let actual: usize = cm[c].iter().sum();
            let predicted: usize = cm.iter().map(|row| row[c]).sum();
            // 2 tp / (2 tp + fp + fn) equals 2 P R / (P + R) whenever both are defined.
            let denom = (actual + predicted) as f64;
            if tp == 0.0 || denom == 0.0 {
                0.0
            } else {
                2.0 * tp / denom
            }
        })
        .collect())
}

/// Unweighted mean of F1 over all `num_grades` classes.
pub fn macro_f1(y_true: &[usize], y_pred: &[usize], num_grades: usize) -> Result<f64> {
    if num_grades == 0 {
        return Err(Error::invalid("macro F1 needs at least one class"));
    }
    let f1 = per_class_f1(y_true, y_pred, num_grades)?;
    Ok(f1.iter().sum::<f64>() / num_grades as f64)
}

/// Mean absolute difference; accepts real-valued predictions such as
/// expected grades.
pub fn mae(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    check_lengths(y_true.len(), y_pred.len())?;
    Ok(y_true
        .iter()
        .zip(y_pred)
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / y_true.len() as f64)
}

pub fn mae_grades(y_true: &[usize], y_pred: &[usize]) -> Result<f64> {
    let a: Vec<f64> = y_true.iter().map(|&v| v as f64).collect();
    let b: Vec<f64> = y_pred.iter().map(|&v| v as f64).collect();
    mae(&a, &b)
}

/// Five-number summary plus mean. Quartiles interpolate linearly between
/// order statistics at position `q * (n - 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub count: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub mean: f64,
}

impl GroupSummary {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Some(Self {
            count: sorted.len(),
            min: sorted[0],
            q1: quantile_sorted(&sorted, 0.25),
            median: quantile_sorted(&sorted, 0.5),
            q3: quantile_sorted(&sorted, 0.75),
            max: sorted[sorted.len() - 1],
            mean: sorted.iter().sum::<f64>() / sorted.len() as f64,
        })
    }
}

/// Linear-interpolation quantile of an ascending, nonempty slice.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// PV variances grouped by `|y_true - predicted_grade|`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceByErrorGroup {
    pub groups: BTreeMap<usize, Vec<f64>>,
    pub summaries: BTreeMap<usize, GroupSummary>,
}

impl VarianceByErrorGroup {
    /// Raw `abs_error,variance` table.
    pub fn write_csv(&self, out: &mut impl Write) -> std::io::Result<()> {
        writeln!(out, "abs_error,variance")?;
        for (err, values) in &self.groups {
            for v in values {
                writeln!(out, "{err},{v}")?;
            }
        }
        Ok(())
    }

    pub fn mean_of(&self, pred: impl Fn(usize) -> bool) -> Option<f64> {
        let values: Vec<f64> = self
            .groups
            .iter()
            .filter(|(k, _)| pred(**k))
            .flat_map(|(_, v)| v.iter().copied())
            .collect();
        (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
    }
}

pub fn variance_by_error(
    predictions: &[BagPrediction],
    y_true: &[usize],
) -> Result<VarianceByErrorGroup> {
    check_lengths(predictions.len(), y_true.len())?;
    let mut groups: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for (p, &y) in predictions.iter().zip(y_true) {
        let variance = match (p.method, p.variance) {
            (VoteMethod::Probability, Some(v)) => v,
            _ => {
                return Err(Error::invalid(format!(
                    "bag {} has no variance; only PV predictions carry one",
                    p.bag_id
                )))
            }
        };
        groups
            .entry(y.abs_diff(p.predicted_grade))
            .or_default()
            .push(variance);
    }
    let summaries = groups
        .iter()
        .filter_map(|(k, v)| GroupSummary::of(v).map(|s| (*k, s)))
        .collect();
    Ok(VarianceByErrorGroup { groups, summaries })
}
