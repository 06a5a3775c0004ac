// SPDX-License-Identifier: Apache-2.0

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SIMPLEX_TOL: f64 = 1e-9;

/// A discrete distribution over ordinal grades `0..N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Posterior {
    probs: Vec<f64>,
}

impl Posterior {
    /// Validates that `probs` is a simplex within 1e-9.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::invalid("posterior needs at least one grade"));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::invalid("posterior entries must be finite and nonnegative"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::invalid(format!("posterior sums to {total}, not 1")));
        }
        Ok(Self { probs })
    }

    pub fn uniform(num_grades: usize) -> Self {
        assert!(num_grades > 0, "uniform posterior over zero grades");
        Self {
            probs: vec![1.0 / num_grades as f64; num_grades],
        }
    }

    pub fn one_hot(num_grades: usize, grade: usize) -> Self {
        assert!(grade < num_grades, "grade {grade} out of range");
        let mut probs = vec![0.0; num_grades];
        probs[grade] = 1.0;
        Self { probs }
    }

    /// Normalizes nonnegative scores. Returns `None` when they sum below `floor`.
    pub(crate) fn from_scores(scores: &[f64], floor: f64) -> Option<Self> {
        let total: f64 = scores.iter().sum();
        if !(total >= floor) {
            return None;
        }
        Some(Self {
            probs: scores.iter().map(|s| s / total).collect(),
        })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn num_grades(&self) -> usize {
        self.probs.len()
    }

    /// `sum_r r p_r`.
    pub fn expected_grade(&self) -> f64 {
        self.probs
            .iter()
            .enumerate()
            .map(|(r, p)| r as f64 * p)
            .sum()
    }

    /// `sum_r p_r (r - mean)^2`.
    pub fn variance(&self) -> f64 {
        let mean = self.expected_grade();
        self.probs
            .iter()
            .enumerate()
            .map(|(r, p)| p * (r as f64 - mean).powi(2))
            .sum()
    }

    /// Most probable grade; ties go to the higher grade.
    pub fn argmax_grade(&self) -> usize {
        let mut best = 0;
        for (r, p) in self.probs.iter().enumerate() {
            if *p >= self.probs[best] {
                best = r;
            }
        }
        best
    }
}

impl TryFrom<Vec<f64>> for Posterior {
    type Error = Error;

    fn try_from(probs: Vec<f64>) -> Result<Self> {
        Posterior::new(probs)
    }
}

impl From<Posterior> for Vec<f64> {
    fn from(p: Posterior) -> Self {
        p.probs
    }
}
