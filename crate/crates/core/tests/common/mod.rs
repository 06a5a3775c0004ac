// SPDX-License-Identifier: Apache-2.0
#![allow(dead_code)]

use dqmor::rng::SeededStream;
use dqmor::{FeatureDataset, StateVector};

pub fn unit_state(rng: &mut SeededStream, dim: usize) -> StateVector {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
        if let Ok(s) = StateVector::normalized(v) {
            return s;
        }
    }
}

pub fn labeled_batch(
    rng: &mut SeededStream,
    dim: usize,
    num_grades: usize,
    size: usize,
) -> Vec<(StateVector, usize)> {
    (0..size)
        .map(|_| (unit_state(rng, dim), rng.index(num_grades)))
        .collect()
}

pub fn random_simplex(rng: &mut SeededStream, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| -rng.uniform().max(1e-300).ln()).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Per-patch nearest class centroid: (accuracy, share of errors that are adjacent).
pub fn nearest_centroid(ds: &FeatureDataset) -> (f64, f64) {
    let (n, d) = (ds.num_grades(), ds.input_dim());
    let mut centroids = vec![vec![0.0; d]; n];
    let mut counts = vec![0usize; n];
    for r in ds.records() {
        let y = r.label.expect("labeled");
        counts[y] += 1;
        for (c, x) in centroids[y].iter_mut().zip(&r.features) {
            *c += x;
        }
    }
    for (c, &k) in centroids.iter_mut().zip(&counts) {
        c.iter_mut().for_each(|v| *v /= k.max(1) as f64);
    }
    let (mut hits, mut errors, mut adjacent) = (0usize, 0usize, 0usize);
    for r in ds.records() {
        let y = r.label.expect("labeled");
        let dist = |c: &Vec<f64>| -> f64 { c.iter().zip(&r.features).map(|(a, b)| (a - b).powi(2)).sum() };
        let pred = (0..n)
            .min_by(|&a, &b| dist(&centroids[a]).total_cmp(&dist(&centroids[b])))
            .expect("grades");
        if pred == y {
            hits += 1;
        } else {
            errors += 1;
            if pred.abs_diff(y) == 1 {
                adjacent += 1;
            }
        }
    }
    (
        hits as f64 / ds.len() as f64,
        if errors == 0 { 1.0 } else { adjacent as f64 / errors as f64 },
    )
}
