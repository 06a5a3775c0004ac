// SPDX-License-Identifier: Apache-2.0

//! Random Fourier feature encoder for the RBF kernel `exp(-gamma |x - y|^2)`.
//!
//! The map is `z(x)_i = sqrt(2/D) cos(w_i . x + b_i)` with `w_i ~ N(0, 2 gamma I)`
//! and `b_i ~ U[0, 2 pi)`, so `E[z(x) . z(y)]` equals the kernel. Encoded
//! states are `z(x) / |z(x)|`.
//!
//! Sampling order: all of `W` in row-major order (row `i` is `w_i`), then
//! all of `b`, from one [`SeededStream`].

use std::f64::consts::TAU;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::SeededStream;

const MIN_FEATURE_NORM: f64 = 1e-12;
const UNIT_NORM_TOL: f64 = 1e-9;

/// A unit-norm encoded input.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector(Vec<f64>);

impl StateVector {
    /// Wraps `values`, checking the unit-norm invariant.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        let norm = l2_norm(&values);
        if !norm.is_finite() || (norm - 1.0).abs() > UNIT_NORM_TOL {
            return Err(Error::invalid(format!(
                "state vector norm {norm} is not 1 within {UNIT_NORM_TOL:e}"
            )));
        }
        Ok(Self(values))
    }

    /// Normalizes `values` to unit length.
    pub fn normalized(mut values: Vec<f64>) -> Result<Self> {
        let norm = l2_norm(&values);
        if !norm.is_finite() || norm < MIN_FEATURE_NORM {
            return Err(Error::DegenerateEncoding { norm });
        }
        values.iter_mut().for_each(|v| *v /= norm);
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl AsRef<[f64]> for StateVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

pub(crate) fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Frozen random projection. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct RffEncoder {
    input_dim: usize,
    rff_dim: usize,
    gamma: f64,
    seed: u64,
    /// `rff_dim x input_dim`, row-major.
    weights: Vec<f64>,
    phases: Vec<f64>,
}

impl RffEncoder {
    /// Samples a new encoder. Identical arguments give bit-identical encoders.
    pub fn sample(input_dim: usize, rff_dim: usize, gamma: f64, seed: u64) -> Result<Self> {
        check_shape(input_dim, rff_dim, gamma)?;
        let mut stream = SeededStream::new(seed);
        let std = (2.0 * gamma).sqrt();
        let weights = (0..rff_dim * input_dim)
            .map(|_| std * stream.normal())
            .collect();
        let phases = (0..rff_dim).map(|_| TAU * stream.uniform()).collect();
        Ok(Self {
            input_dim,
            rff_dim,
            gamma,
            seed,
            weights,
            phases,
        })
    }

    /// Rebuilds an encoder from materialized arrays, e.g. from a checkpoint.
    pub fn from_parts(
        input_dim: usize,
        rff_dim: usize,
        gamma: f64,
        seed: u64,
        weights: Vec<f64>,
        phases: Vec<f64>,
    ) -> Result<Self> {
        check_shape(input_dim, rff_dim, gamma)?;
        if weights.len() != rff_dim * input_dim {
            return Err(Error::invalid(format!(
                "W has {} entries, expected {rff_dim}x{input_dim}",
                weights.len()
            )));
        }
        if phases.len() != rff_dim {
            return Err(Error::invalid(format!(
                "b has {} entries, expected {rff_dim}",
                phases.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::invalid("W contains non-finite entries"));
        }
        if phases.iter().any(|b| !(0.0..=TAU).contains(b)) {
            return Err(Error::invalid("b entries must lie in [0, 2pi]"));
        }
        Ok(Self {
            input_dim,
            rff_dim,
            gamma,
            seed,
            weights,
            phases,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn rff_dim(&self) -> usize {
        self.rff_dim
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Frequency matrix, row-major `rff_dim x input_dim`.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight_row(&self, i: usize) -> &[f64] {
        &self.weights[i * self.input_dim..(i + 1) * self.input_dim]
    }

    pub fn phases(&self) -> &[f64] {
        &self.phases
    }

    /// The un-normalized feature map `z(x)`.
    pub fn feature_map(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let scale = (2.0 / self.rff_dim as f64).sqrt();
        Ok(self
            .weights
            .chunks_exact(self.input_dim)
            .zip(&self.phases)
            .map(|(w, b)| scale * (dot(w, x) + b).cos())
            .collect())
    }

    /// Encodes `x` as a unit-norm state.
    pub fn encode(&self, x: &[f64]) -> Result<StateVector> {
        StateVector::normalized(self.feature_map(x)?)
    }

    /// Encodes many inputs in parallel; output order follows input order.
    pub fn encode_batch<X>(&self, xs: &[X]) -> Result<Vec<StateVector>>
    where
        X: AsRef<[f64]> + Sync,
    {
        xs.par_iter().map(|x| self.encode(x.as_ref())).collect()
    }

    /// `z(x) . z(y)` on the un-normalized maps.
    pub fn raw_kernel_estimate(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        let zx = self.feature_map(x)?;
        let zy = self.feature_map(y)?;
        Ok(dot(&zx, &zy))
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::invalid(format!(
                "input has length {}, encoder expects {}",
                x.len(),
                self.input_dim
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("input contains non-finite values"));
        }
        Ok(())
    }
}

fn check_shape(input_dim: usize, rff_dim: usize, gamma: f64) -> Result<()> {
    if input_dim == 0 || rff_dim == 0 {
        return Err(Error::invalid(format!(
            "dimensions must be positive (input_dim={input_dim}, rff_dim={rff_dim})"
        )));
    }
    if !(gamma.is_finite() && gamma > 0.0) {
        return Err(Error::invalid(format!("gamma must be positive, got {gamma}")));
    }
    Ok(())
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Closed-form RBF kernel.
pub fn rbf_kernel(gamma: f64, x: &[f64], y: &[f64]) -> f64 {
    let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum();
    (-gamma * d2).exp()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gaussian_vec(stream: &mut SeededStream, n: usize) -> Vec<f64> {
        (0..n).map(|_| stream.normal()).collect()
    }

    #[test]
    fn default_scale_shape() {
        let enc = RffEncoder::sample(2048, 1024, 2f64.powi(-13), 11).unwrap();
        assert_eq!(enc.weights().len(), 1024 * 2048);
        assert_eq!(enc.phases().len(), 1024);
    }

    #[test]
    fn smallest_shape() {
        let enc = RffEncoder::sample(1, 1, 1.0, 5).unwrap();
        assert_eq!(enc.weights().len(), 1);
        assert!((0.0..=TAU).contains(&enc.phases()[0]));
    }

    #[test]
    fn deterministic_in_seed() {
        let a = RffEncoder::sample(8, 64, 0.5, 99).unwrap();
        let b = RffEncoder::sample(8, 64, 0.5, 99).unwrap();
        let bits = |e: &RffEncoder| -> Vec<u64> {
            e.weights().iter().chain(e.phases()).map(|v| v.to_bits()).collect()
        };
        assert_eq!(bits(&a), bits(&b));
        let c = RffEncoder::sample(8, 64, 0.5, 100).unwrap();
        assert_ne!(bits(&a), bits(&c));
    }

    #[test]
    fn rejects_bad_arguments() {
        assert!(RffEncoder::sample(0, 4, 1.0, 0).is_err());
        assert!(RffEncoder::sample(4, 0, 1.0, 0).is_err());
        assert!(RffEncoder::sample(4, 4, 0.0, 0).is_err());
        assert!(RffEncoder::sample(4, 4, -1.0, 0).is_err());
        assert!(RffEncoder::sample(4, 4, f64::NAN, 0).is_err());
    }

    #[test]
    fn weight_variance_is_two_gamma() {
        let gamma = 0.3;
        let enc = RffEncoder::sample(10, 5000, gamma, 1).unwrap();
        let w = enc.weights();
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let var = w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / w.len() as f64;
        assert!(mean.abs() < 0.01);
        assert!((var - 2.0 * gamma).abs() < 0.02, "var {var}");
        assert!(enc.phases().iter().all(|b| (0.0..=TAU).contains(b)));
    }

    #[test]
    fn single_component_normalizes_to_one() {
        let enc = RffEncoder::from_parts(1, 1, 1.0, 0, vec![0.0], vec![0.0]).unwrap();
        let raw = enc.feature_map(&[5.0]).unwrap();
        assert!((raw[0] - 2f64.sqrt()).abs() < 1e-15);
        let psi = enc.encode(&[5.0]).unwrap();
        assert_eq!(psi.as_slice(), &[1.0]);
    }

    #[test]
    fn degenerate_encoding_is_an_error() {
        // cos(pi/2) = 6e-17 after rounding, well under the 1e-12 floor.
        let enc =
            RffEncoder::from_parts(1, 1, 1.0, 0, vec![0.0], vec![std::f64::consts::FRAC_PI_2])
                .unwrap();
        assert!(matches!(
            enc.encode(&[1.0]),
            Err(Error::DegenerateEncoding { .. })
        ));
    }

    #[test]
    fn dimension_mismatch() {
        let enc = RffEncoder::sample(3, 8, 1.0, 0).unwrap();
        assert!(enc.encode(&[1.0, 2.0]).is_err());
        assert!(enc.raw_kernel_estimate(&[1.0, 2.0, 3.0], &[1.0]).is_err());
        assert!(enc.encode(&[1.0, f64::INFINITY, 0.0]).is_err());
    }

    #[test]
    fn self_estimate_nonnegative_and_near_one() {
        let mut s = SeededStream::new(4);
        let enc = RffEncoder::sample(6, 4096, 0.2, 8).unwrap();
        for _ in 0..20 {
            let x = gaussian_vec(&mut s, 6);
            let k = enc.raw_kernel_estimate(&x, &x).unwrap();
            assert!(k >= 0.0);
            // mean of 2cos^2 over 4096 phases: 1 +- a few 1/sqrt(D)
            assert!((k - 1.0).abs() < 0.05, "k {k}");
        }
    }

    #[test]
    fn far_points_estimate_near_zero() {
        let enc = RffEncoder::sample(4, 4096, 1.0, 21).unwrap();
        let x = [0.0, 0.0, 0.0, 0.0];
        let y = [3.0, -3.0, 3.0, 3.0];
        let exact = rbf_kernel(1.0, &x, &y);
        let est = enc.raw_kernel_estimate(&x, &y).unwrap();
        assert!((est - exact).abs() < 0.05, "est {est}");
    }

    #[test]
    fn encode_batch_matches_sequential() {
        let mut s = SeededStream::new(2);
        let enc = RffEncoder::sample(5, 32, 0.5, 3).unwrap();
        let xs: Vec<Vec<f64>> = (0..10).map(|_| gaussian_vec(&mut s, 5)).collect();
        let batch = enc.encode_batch(&xs).unwrap();
        for (x, psi) in xs.iter().zip(&batch) {
            assert_eq!(&enc.encode(x).unwrap(), psi);
        }
    }

    /// Splits the estimate into the difference term, which depends on x - y
    /// only, and the residual term that averages out over the phases.
    fn split_estimate(enc: &RffEncoder, x: &[f64], y: &[f64]) -> (f64, f64) {
        let d = enc.rff_dim() as f64;
        let (mut diff, mut sum) = (0.0, 0.0);
        for i in 0..enc.rff_dim() {
            let w = enc.weight_row(i);
            let b = enc.phases()[i];
            let wx = dot(w, x);
            let wy = dot(w, y);
            diff += (wx - wy).cos();
            sum += (wx + wy + 2.0 * b).cos();
        }
        (diff / d, sum / d)
    }

    #[test]
    fn estimate_is_difference_term_plus_residual() {
        let mut s = SeededStream::new(30);
        let enc = RffEncoder::sample(5, 512, 0.3, 31).unwrap();
        for _ in 0..20 {
            let x = gaussian_vec(&mut s, 5);
            let y = gaussian_vec(&mut s, 5);
            let (diff, sum) = split_estimate(&enc, &x, &y);
            let est = enc.raw_kernel_estimate(&x, &y).unwrap();
            assert!((est - (diff + sum)).abs() < 1e-12);
        }
    }

    #[test]
    fn translation_leaves_difference_term_fixed() {
        let mut s = SeededStream::new(32);
        let enc = RffEncoder::sample(6, 4096, 0.2, 33).unwrap();
        let mut worst: f64 = 0.0;
        for _ in 0..20 {
            let x = gaussian_vec(&mut s, 6);
            let y = gaussian_vec(&mut s, 6);
            let t: Vec<f64> = gaussian_vec(&mut s, 6).iter().map(|v| 3.0 * v).collect();
            let xt: Vec<f64> = x.iter().zip(&t).map(|(a, b)| a + b).collect();
            let yt: Vec<f64> = y.iter().zip(&t).map(|(a, b)| a + b).collect();
            let (d0, _) = split_estimate(&enc, &x, &y);
            let (d1, _) = split_estimate(&enc, &xt, &yt);
            assert!((d0 - d1).abs() < 1e-9);
            // the full estimate only moves by the residual, O(1/sqrt(D))
            let e0 = enc.raw_kernel_estimate(&x, &y).unwrap();
            let e1 = enc.raw_kernel_estimate(&xt, &yt).unwrap();
            worst = worst.max((e0 - e1).abs());
        }
        assert!(worst < 0.08, "shift moved the estimate by {worst}");
    }
}
