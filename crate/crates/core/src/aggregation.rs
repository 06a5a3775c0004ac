// SPDX-License-Identifier: Apache-2.0

//! Bag-level predictions from patch posteriors.
//!
//! Probability vote averages the patch distributions uniformly, which is
//! the law of total probability with every patch equally likely given the
//! bag. Majority vote counts per-patch argmax grades. Both break ties
//! toward the higher grade.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::posterior::Posterior;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VoteMethod {
    #[serde(rename = "MV")]
    Majority,
    #[serde(rename = "PV")]
    Probability,
}

impl VoteMethod {
    pub fn tag(&self) -> &'static str {
        match self {
            VoteMethod::Majority => "MV",
            VoteMethod::Probability => "PV",
        }
    }
}

impl std::fmt::Display for VoteMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

/// One bag's prediction. Distribution, mean and variance exist only for PV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BagPrediction {
    pub bag_id: String,
    pub method: VoteMethod,
    pub distribution: Option<Posterior>,
    pub predicted_grade: usize,
    pub expected_grade: Option<f64>,
    pub variance: Option<f64>,
    pub num_patches: usize,
}

/// Elementwise mean of the patch posteriors.
pub fn probability_vote(patches: &[Posterior]) -> Result<Posterior> {
    let n = check_patches(patches)?;
    let mut sum = vec![0.0; n];
    for p in patches {
        for (s, v) in sum.iter_mut().zip(p.probs()) {
            *s += v;
        }
    }
    let count = patches.len() as f64;
    Posterior::new(sum.into_iter().map(|s| s / count).collect())
}

/// Modal grade, ties toward the higher grade.
pub fn majority_vote(grades: &[usize], num_grades: usize) -> Result<usize> {
    if grades.is_empty() {
        return Err(Error::invalid("majority vote over an empty bag"));
    }
    let mut counts = vec![0usize; num_grades];
    for &g in grades {
        if g >= num_grades {
            return Err(Error::invalid(format!(
                "grade {g} out of range for {num_grades} grades"
            )));
        }
        counts[g] += 1;
    }
    let mut best = 0;
    for (g, c) in counts.iter().enumerate() {
        if *c >= counts[best] {
            best = g;
        }
    }
    Ok(best)
}

pub fn predict_bag(
    bag_id: &str,
    patches: &[Posterior],
    method: VoteMethod,
) -> Result<BagPrediction> {
    let n = check_patches(patches)?;
    Ok(match method {
        VoteMethod::Probability => {
            let dist = probability_vote(patches)?;
            BagPrediction {
                bag_id: bag_id.to_string(),
                method,
                predicted_grade: dist.argmax_grade(),
                expected_grade: Some(dist.expected_grade()),
                variance: Some(dist.variance()),
                distribution: Some(dist),
                num_patches: patches.len(),
            }
        }
        VoteMethod::Majority => {
            let grades: Vec<usize> = patches.iter().map(Posterior::argmax_grade).collect();
            BagPrediction {
                bag_id: bag_id.to_string(),
                method,
                distribution: None,
                predicted_grade: majority_vote(&grades, n)?,
                expected_grade: None,
                variance: None,
                num_patches: patches.len(),
            }
        }
    })
}

fn check_patches(patches: &[Posterior]) -> Result<usize> {
    let Some(first) = patches.first() else {
        return Err(Error::invalid("bag has no patches"));
    };
    let n = first.num_grades();
    if patches.iter().any(|p| p.num_grades() != n) {
        return Err(Error::invalid("patch posteriors disagree on the number of grades"));
    }
    Ok(n)
}

/// `bag_id,method,predicted_grade,expected_grade,variance,num_patches,p0,...`
/// MV rows leave the distribution columns empty.
pub fn write_bag_csv(
    predictions: &[BagPrediction],
    num_grades: usize,
    out: &mut impl Write,
) -> std::io::Result<()> {
    write!(out, "bag_id,method,predicted_grade,expected_grade,variance,num_patches")?;
    for r in 0..num_grades {
        write!(out, ",p{r}")?;
    }
    writeln!(out)?;
    for p in predictions {
        write!(out, "{},{},{},", p.bag_id, p.method, p.predicted_grade)?;
        if let Some(e) = p.expected_grade {
            write!(out, "{e}")?;
        }
        write!(out, ",")?;
        if let Some(v) = p.variance {
            write!(out, "{v}")?;
        }
        write!(out, ",{}", p.num_patches)?;
        match &p.distribution {
            Some(d) => {
                for v in d.probs() {
                    write!(out, ",{v}")?;
                }
            }
            None => {
                for _ in 0..num_grades {
                    write!(out, ",")?;
                }
            }
        }
        writeln!(out)?;
    }
    Ok(())
}
