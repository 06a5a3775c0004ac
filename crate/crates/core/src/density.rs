// SPDX-License-Identifier: Apache-2.0

//! Factored density parameterization shared by the QMR and DMKDC models.
//!
//! A density matrix is stored as unconstrained `logits` (eigenvalues are
//! `softmax(logits)`) and unconstrained `vectors` whose rows are normalized
//! to unit length on every forward pass. Both maps are differentiated
//! through in the backward helpers here.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rff::l2_norm;
use crate::rng::SeededStream;

/// Learnable parameters, flattened. Gradients use the same layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub logits: Vec<f64>,
    pub vectors: Vec<f64>,
}

impl Params {
    pub fn zeros_like(other: &Params) -> Self {
        Self {
            logits: vec![0.0; other.logits.len()],
            vectors: vec![0.0; other.vectors.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.logits.len() + self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, i: usize) -> f64 {
        if i < self.logits.len() {
            self.logits[i]
        } else {
            self.vectors[i - self.logits.len()]
        }
    }

    pub fn set(&mut self, i: usize, value: f64) {
        if i < self.logits.len() {
            self.logits[i] = value;
        } else {
            let j = i - self.logits.len();
            self.vectors[j] = value;
        }
    }

    pub fn add_assign(&mut self, other: &Params) {
        self.logits
            .iter_mut()
            .zip(&other.logits)
            .for_each(|(a, b)| *a += b);
        self.vectors
            .iter_mut()
            .zip(&other.vectors)
            .for_each(|(a, b)| *a += b);
    }

    pub fn scale(&mut self, c: f64) {
        self.logits.iter_mut().for_each(|a| *a *= c);
        self.vectors.iter_mut().for_each(|a| *a *= c);
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.logits.iter().chain(&self.vectors).copied()
    }

    pub fn norm(&self) -> f64 {
        self.iter().map(|g| g * g).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(f64::is_finite)
    }

    /// Zero logits and i.i.d. standard normal vectors, rows normalized.
    pub(crate) fn random(
        num_logits: usize,
        row_len: usize,
        stream: &mut SeededStream,
    ) -> Self {
        let mut vectors: Vec<f64> = (0..num_logits * row_len).map(|_| stream.normal()).collect();
        for row in vectors.chunks_exact_mut(row_len) {
            let n = l2_norm(row);
            row.iter_mut().for_each(|v| *v /= n);
        }
        Self {
            logits: vec![0.0; num_logits],
            vectors,
        }
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|a| (a - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Pulls `d loss / d lambda` back through the softmax.
pub(crate) fn softmax_backward(lambda: &[f64], grad_lambda: &[f64], out: &mut [f64]) {
    let inner: f64 = lambda.iter().zip(grad_lambda).map(|(l, g)| l * g).sum();
    for ((o, l), g) in out.iter_mut().zip(lambda).zip(grad_lambda) {
        *o += l * (g - inner);
    }
}

/// Rows of `vectors` normalized to unit length, with the original norms.
#[derive(Debug, Clone)]
pub(crate) struct UnitRows {
    pub rows: Vec<f64>,
    pub norms: Vec<f64>,
    pub row_len: usize,
}

impl UnitRows {
    pub fn new(vectors: &[f64], row_len: usize) -> Result<Self> {
        let mut rows = vectors.to_vec();
        let mut norms = Vec::with_capacity(vectors.len() / row_len);
        for row in rows.chunks_exact_mut(row_len) {
            let n = l2_norm(row);
            if !(n.is_finite() && n > 0.0) {
                return Err(Error::invalid(format!(
                    "eigenvector row has norm {n}; rows must be nonzero and finite"
                )));
            }
            row.iter_mut().for_each(|v| *v /= n);
            norms.push(n);
        }
        Ok(Self {
            rows,
            norms,
            row_len,
        })
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.rows[k * self.row_len..(k + 1) * self.row_len]
    }

    /// Adds `(I - u u^T) g / |v|` for row `k` into `out`.
    pub fn backward_row(&self, k: usize, grad_unit: &[f64], out: &mut [f64]) {
        let u = self.row(k);
        let along: f64 = u.iter().zip(grad_unit).map(|(a, b)| a * b).sum();
        let inv = 1.0 / self.norms[k];
        for ((o, ui), gi) in out.iter_mut().zip(u).zip(grad_unit) {
            *o += (gi - ui * along) * inv;
        }
    }
}

/// Checks that `logits` and `vectors` have the expected sizes and are finite.
pub(crate) fn check_params(params: &Params, num_logits: usize, row_len: usize) -> Result<()> {
    if params.logits.len() != num_logits {
        return Err(Error::invalid(format!(
            "expected {num_logits} eigenvalue logits, found {}",
            params.logits.len()
        )));
    }
    if params.vectors.len() != num_logits * row_len {
        return Err(Error::invalid(format!(
            "expected {} eigenvector entries, found {}",
            num_logits * row_len,
            params.vectors.len()
        )));
    }
    if !params.is_finite() {
        return Err(Error::invalid("parameters contain non-finite values"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_is_simplex() {
        let l = softmax(&[1000.0, 0.0, -1000.0, 3.0]);
        assert!((l.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(l.iter().all(|v| *v >= 0.0));
        assert_eq!(softmax(&[0.0; 4]), vec![0.25; 4]);
    }

    #[test]
    fn softmax_backward_matches_differences() {
        let a = [0.3, -1.2, 0.7];
        let g = [0.5, 2.0, -1.0];
        let f = |a: &[f64]| -> f64 { softmax(a).iter().zip(&g).map(|(l, g)| l * g).sum() };
        let mut out = [0.0; 3];
        softmax_backward(&softmax(&a), &g, &mut out);
        for i in 0..3 {
            let h = 1e-6;
            let mut p = a;
            let mut m = a;
            p[i] += h;
            m[i] -= h;
            let fd = (f(&p) - f(&m)) / (2.0 * h);
            assert!((fd - out[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn zero_row_rejected() {
        assert!(UnitRows::new(&[0.0, 0.0, 1.0, 0.0], 2).is_err());
    }
}
