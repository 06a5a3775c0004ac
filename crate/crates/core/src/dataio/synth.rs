// SPDX-License-Identifier: Apache-2.0

//! Synthetic ordinal bags.
//!
//! Each bag draws a latent severity `t ~ U[0, N)` and takes label
//! `floor(t)`. Its patches are `mu(t) + sigma * noise`, where `mu(t)` sits on
//! a half circle of radius `N / pi` in the first two coordinates,
//! `(cos(pi t / N), sin(pi t / N))`, and is zero elsewhere, so every grade
//! covers an arc of length one. Noise is i.i.d. standard normal in every
//! coordinate.
//!
//! Draw order per bag: `t`, then the noise of each patch in coordinate order.

use std::f64::consts::PI;

use super::{FeatureDataset, PatchRecord};
use crate::error::{Error, Result};
use crate::rng::SeededStream;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthParams {
    pub num_bags: usize,
    pub patches_per_bag: usize,
    pub feature_dim: usize,
    pub num_grades: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

/// The noiseless feature vector at severity `t`.
pub fn curve_point(t: f64, num_grades: usize, feature_dim: usize) -> Vec<f64> {
    let radius = num_grades as f64 / PI;
    let angle = PI * t / num_grades as f64;
    let mut mu = vec![0.0; feature_dim];
    mu[0] = radius * angle.cos();
    mu[1] = radius * angle.sin();
    mu
}

pub fn synth_generate(p: &SynthParams) -> Result<FeatureDataset> {
    if p.num_bags == 0 || p.patches_per_bag == 0 || p.num_grades == 0 {
        return Err(Error::invalid("bag count, patch count and grade count must be positive"));
    }
    if p.feature_dim < 2 {
        return Err(Error::invalid("synthetic features need at least 2 dimensions"));
    }
    if !(p.noise_sigma.is_finite() && p.noise_sigma >= 0.0) {
        return Err(Error::invalid("noise sigma must be nonnegative"));
    }
    let n = p.num_grades;
    let mut stream = SeededStream::new(p.seed);
    let mut records = Vec::with_capacity(p.num_bags * p.patches_per_bag);
    let bag_width = p.num_bags.to_string().len().max(4);
    let patch_width = p.patches_per_bag.to_string().len().max(2);
    for b in 0..p.num_bags {
        let t = stream.uniform_in(0.0, n as f64);
        let label = (t.floor() as usize).min(n - 1);
        let mu = curve_point(t, n, p.feature_dim);
        let bag_id = format!("bag{b:0bag_width$}");
        for j in 0..p.patches_per_bag {
            let features = mu
                .iter()
                .map(|m| m + p.noise_sigma * stream.normal())
                .collect();
            records.push(PatchRecord {
                bag_id: bag_id.clone(),
                patch_id: format!("p{j:0patch_width$}"),
                label: Some(label),
                features,
            });
        }
    }
    FeatureDataset::new(p.feature_dim, n, records)
}
