// SPDX-License-Identifier: Apache-2.0

//! Quantum measurement regression.
//!
//! The joint density over `inputs (x) labels` is `rho = sum_k lambda_k v_k v_k^T`
//! with each `v_k` living in `R^(D*N)`, stored as a `D x N` block in row-major
//! order (entry `(d, r)` at `d * N + r`). Measuring with `pi = |psi><psi| (x) I_N`
//! and tracing out the input leaves a label density whose diagonal is
//!
//! ```text
//! p_r  proportional to  sum_k lambda_k (sum_d v_k[d, r] psi_d)^2
//! ```
//!
//! [`QmrModel::measure`] evaluates that closed form directly;
//! [`QmrModel::brute_force_posterior`] builds every matrix explicitly and is
//! only meant for checking the fast path on small shapes.

use serde::{Deserialize, Serialize};

use crate::density::{check_params, softmax, softmax_backward, Params, UnitRows};
use crate::error::{Error, Result};
use crate::rff::StateVector;
use crate::rng::SeededStream;
use crate::training::Trainable;

pub use crate::posterior::Posterior;

/// Below this total score the measurement carries no label information.
pub const DEGENERATE_FLOOR: f64 = 1e-12;
/// Largest `D * N` the brute-force oracle will materialize.
pub const ORACLE_MAX_JOINT_DIM: usize = 256;

/// Result of one measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub posterior: Posterior,
    /// Set when `Tr[pi rho pi]` fell below [`DEGENERATE_FLOOR`] and the
    /// posterior was replaced by the uniform distribution.
    pub degenerate: bool,
}

/// Training hyperparameters shared by both model kinds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QmrConfig {
    pub rff_dim: usize,
    pub num_grades: usize,
    pub num_components: usize,
    pub gamma: f64,
    pub alpha: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    #[serde(default)]
    pub init: InitStrategy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitStrategy {
    /// Standard normal eigenvectors, uniform eigenvalues.
    #[default]
    Random,
    /// Eigenvector `k` is the encoded state of a random training sample
    /// tensored with the one-hot of its label.
    Data,
}

impl Default for QmrConfig {
    /// 1024 features, 32 components, gamma = 2^-13, alpha = 0.4, lr = 6e-5.
    fn default() -> Self {
        Self {
            rff_dim: 1024,
            num_grades: 5,
            num_components: 32,
            gamma: 2f64.powi(-13),
            alpha: 0.4,
            learning_rate: 6e-5,
            epochs: 50,
            batch_size: 32,
            seed: 0,
            init: InitStrategy::Random,
        }
    }
}

impl QmrConfig {
    /// Defaults for the per-class classifier: same embedding, lr = 5e-3.
    pub fn dmkdc_default() -> Self {
        Self {
            learning_rate: 5e-3,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("rff_dim", self.rff_dim),
            ("num_grades", self.num_grades),
            ("num_components", self.num_components),
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be positive")));
            }
        }
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(Error::invalid("gamma must be positive"));
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::invalid("alpha must be nonnegative"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        Ok(())
    }
}

/// Factored joint density over `R^D (x) R^N`.
#[derive(Debug, Clone, PartialEq)]
pub struct QmrModel {
    state_dim: usize,
    num_grades: usize,
    num_components: usize,
    params: Params,
}

/// Per-call forward cache: eigenvalues and unit eigenvectors.
pub struct QmrForward {
    lambda: Vec<f64>,
    unit: UnitRows,
}

impl QmrModel {
    pub fn new(
        state_dim: usize,
        num_grades: usize,
        num_components: usize,
        params: Params,
    ) -> Result<Self> {
        if state_dim == 0 || num_grades == 0 || num_components == 0 {
            return Err(Error::invalid("QMR dimensions must be positive"));
        }
        check_params(&params, num_components, state_dim * num_grades)?;
        // Rejects zero rows up front.
        UnitRows::new(&params.vectors, state_dim * num_grades)?;
        Ok(Self {
            state_dim,
            num_grades,
            num_components,
            params,
        })
    }

    /// Zero logits, standard normal eigenvectors.
    pub fn random(state_dim: usize, num_grades: usize, num_components: usize, seed: u64) -> Result<Self> {
        if state_dim == 0 || num_grades == 0 || num_components == 0 {
            return Err(Error::invalid("QMR dimensions must be positive"));
        }
        let mut stream = SeededStream::new(seed);
        let params = Params::random(num_components, state_dim * num_grades, &mut stream);
        Self::new(state_dim, num_grades, num_components, params)
    }

    /// Eigenvector `k` set to `psi_k (x) e_{y_k}` for the given samples.
    pub fn from_samples(num_grades: usize, samples: &[(&StateVector, usize)]) -> Result<Self> {
        let Some((first, _)) = samples.first() else {
            return Err(Error::invalid("data-driven init needs at least one sample"));
        };
        let state_dim = first.dim();
        let row_len = state_dim * num_grades;
        let mut vectors = vec![0.0; samples.len() * row_len];
        for (k, (psi, y)) in samples.iter().enumerate() {
            if psi.dim() != state_dim || *y >= num_grades {
                return Err(Error::invalid("data-driven init sample has wrong shape or label"));
            }
            let row = &mut vectors[k * row_len..(k + 1) * row_len];
            for (d, v) in psi.as_slice().iter().enumerate() {
                row[d * num_grades + y] = *v;
            }
        }
        let params = Params {
            logits: vec![0.0; samples.len()],
            vectors,
        };
        Self::new(state_dim, num_grades, samples.len(), params)
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn num_grades(&self) -> usize {
        self.num_grades
    }

    pub fn num_components(&self) -> usize {
        self.num_components
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    /// `softmax(logits)`.
    pub fn eigenvalues(&self) -> Vec<f64> {
        softmax(&self.params.logits)
    }

    /// Unit-normalized eigenvectors, `K x (D*N)` row-major.
    pub fn unit_eigenvectors(&self) -> Vec<f64> {
        self.forward().unit.rows
    }

    pub fn forward(&self) -> QmrForward {
        QmrForward {
            lambda: self.eigenvalues(),
            // Rows were checked nonzero at construction and after every step.
            unit: UnitRows::new(&self.params.vectors, self.state_dim * self.num_grades)
                .expect("eigenvector rows are nonzero"),
        }
    }

    /// Measures any length-`D` vector; `psi` need not be normalized.
    pub fn measure(&self, psi: &[f64]) -> Result<Measurement> {
        self.check_state(psi)?;
        let fwd = self.forward();
        let scores = self.scores(&fwd, psi, None);
        Ok(measurement_from_scores(&scores))
    }

    pub fn posterior(&self, psi: &StateVector) -> Result<Posterior> {
        Ok(self.measure(psi.as_slice())?.posterior)
    }

    /// Unnormalized diagonal scores `s_r`. Optionally keeps `u_{k,r}`.
    fn scores(&self, fwd: &QmrForward, psi: &[f64], mut proj: Option<&mut Vec<f64>>) -> Vec<f64> {
        let n = self.num_grades;
        let mut scores = vec![0.0; n];
        let mut u = vec![0.0; n];
        if let Some(p) = proj.as_deref_mut() {
            p.clear();
        }
        for (k, lambda) in fwd.lambda.iter().enumerate() {
            u.iter_mut().for_each(|v| *v = 0.0);
            for (block, x) in fwd.unit.row(k).chunks_exact(n).zip(psi) {
                for (ur, vr) in u.iter_mut().zip(block) {
                    *ur += vr * x;
                }
            }
            for (s, ur) in scores.iter_mut().zip(&u) {
                *s += lambda * ur * ur;
            }
            if let Some(p) = proj.as_deref_mut() {
                p.extend_from_slice(&u);
            }
        }
        scores
    }

    fn check_state(&self, psi: &[f64]) -> Result<()> {
        if psi.len() != self.state_dim {
            return Err(Error::invalid(format!(
                "state has length {}, model expects {}",
                psi.len(),
                self.state_dim
            )));
        }
        Ok(())
    }

    /// Materialized `rho_train`, `(D*N) x (D*N)` row-major.
    pub fn density_matrix(&self) -> Result<Vec<f64>> {
        let m = self.state_dim * self.num_grades;
        if m > ORACLE_MAX_JOINT_DIM {
            return Err(Error::OracleTooLarge {
                size: m,
                limit: ORACLE_MAX_JOINT_DIM,
            });
        }
        let lambda = softmax(&self.params.logits);
        let mut rho = vec![0.0; m * m];
        for (k, l) in lambda.iter().enumerate() {
            let raw = &self.params.vectors[k * m..(k + 1) * m];
            let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
            let v: Vec<f64> = raw.iter().map(|x| x / norm).collect();
            for i in 0..m {
                for j in 0..m {
                    rho[i * m + j] += l * v[i] * v[j];
                }
            }
        }
        Ok(rho)
    }

    /// Label-space density `Tr_X[pi rho pi] / Tr[pi rho pi]`, `N x N`,
    /// computed literally. `None` if the trace vanishes.
    pub fn brute_force_label_density(&self, psi: &StateVector) -> Result<Option<Vec<f64>>> {
        self.check_state(psi.as_slice())?;
        let (d_dim, n) = (self.state_dim, self.num_grades);
        let m = d_dim * n;
        let rho = self.density_matrix()?;
        let psi = psi.as_slice();

        // pi[(d, r), (d', r')] = psi_d psi_d' delta_{r r'}
        let mut pi = vec![0.0; m * m];
        for d in 0..d_dim {
            for dp in 0..d_dim {
                for r in 0..n {
                    pi[(d * n + r) * m + dp * n + r] = psi[d] * psi[dp];
                }
            }
        }
        let pi_rho = matmul(&pi, &rho, m);
        let collapsed = matmul(&pi_rho, &pi, m);
        let trace: f64 = (0..m).map(|i| collapsed[i * m + i]).sum();
        if !(trace >= DEGENERATE_FLOOR) {
            return Ok(None);
        }
        let mut label = vec![0.0; n * n];
        for r in 0..n {
            for rp in 0..n {
                let s: f64 = (0..d_dim)
                    .map(|d| collapsed[(d * n + r) * m + d * n + rp])
                    .sum();
                label[r * n + rp] = s / trace;
            }
        }
        Ok(Some(label))
    }

    /// Diagonal of [`Self::brute_force_label_density`]; uniform if degenerate.
    pub fn brute_force_posterior(&self, psi: &StateVector) -> Result<Posterior> {
        let n = self.num_grades;
        match self.brute_force_label_density(psi)? {
            Some(label) => {
                let diag: Vec<f64> = (0..n).map(|r| label[r * n + r].max(0.0)).collect();
                let total: f64 = diag.iter().sum();
                Posterior::new(diag.iter().map(|v| v / total).collect())
            }
            None => Ok(Posterior::uniform(n)),
        }
    }

    /// Loss of one sample; accumulates the gradient w.r.t. eigenvalues into
    /// `grad.logits` and w.r.t. unit eigenvectors into `grad.vectors`.
    pub(crate) fn sample_loss(
        &self,
        fwd: &QmrForward,
        psi: &[f64],
        label: usize,
        alpha: f64,
        grad: Option<&mut Params>,
    ) -> f64 {
        let n = self.num_grades;
        let mut proj = Vec::with_capacity(self.num_components * n);
        let scores = self.scores(fwd, psi, Some(&mut proj));
        let total: f64 = scores.iter().sum();
        let degenerate = !(total >= DEGENERATE_FLOOR);
        let probs: Vec<f64> = if degenerate {
            vec![1.0 / n as f64; n]
        } else {
            scores.iter().map(|s| s / total).collect()
        };
        let y = label as f64;
        let mean: f64 = probs.iter().enumerate().map(|(r, p)| r as f64 * p).sum();
        let var: f64 = probs
            .iter()
            .enumerate()
            .map(|(r, p)| p * (mean - r as f64).powi(2))
            .sum();
        let loss = (y - mean).powi(2) + alpha * var;

        let Some(grad) = grad else { return loss };
        if degenerate {
            return loss;
        }
        // d loss / d p_j on the simplex (terms constant in j drop out below).
        let grad_p: Vec<f64> = (0..n)
            .map(|j| {
                let j = j as f64;
                -2.0 * (y - mean) * j + alpha * (mean - j).powi(2)
            })
            .collect();
        let centered: f64 = grad_p.iter().zip(&probs).map(|(g, p)| g * p).sum();
        let grad_s: Vec<f64> = grad_p.iter().map(|g| (g - centered) / total).collect();

        let row_len = self.state_dim * n;
        for (k, lambda) in fwd.lambda.iter().enumerate() {
            let u = &proj[k * n..(k + 1) * n];
            grad.logits[k] += u.iter().zip(&grad_s).map(|(ur, gs)| ur * ur * gs).sum::<f64>();
            let grad_u: Vec<f64> = u
                .iter()
                .zip(&grad_s)
                .map(|(ur, gs)| 2.0 * lambda * ur * gs)
                .collect();
            let row = &mut grad.vectors[k * row_len..(k + 1) * row_len];
            for (block, x) in row.chunks_exact_mut(n).zip(psi) {
                for (g, gu) in block.iter_mut().zip(&grad_u) {
                    *g += gu * x;
                }
            }
        }
        loss
    }

    /// Pulls eigenvalue / unit-row gradients back to logits / raw rows.
    pub(crate) fn pull_back(&self, fwd: &QmrForward, raw: &Params) -> Params {
        pull_back_factored(&fwd.lambda, &fwd.unit, raw)
    }
}

pub(crate) fn pull_back_factored(lambda: &[f64], unit: &UnitRows, raw: &Params) -> Params {
    let mut out = Params::zeros_like(raw);
    softmax_backward(lambda, &raw.logits, &mut out.logits);
    let row_len = unit.row_len;
    for k in 0..lambda.len() {
        unit.backward_row(
            k,
            &raw.vectors[k * row_len..(k + 1) * row_len],
            &mut out.vectors[k * row_len..(k + 1) * row_len],
        );
    }
    out
}

pub(crate) fn measurement_from_scores(scores: &[f64]) -> Measurement {
    match Posterior::from_scores(scores, DEGENERATE_FLOOR) {
        Some(posterior) => Measurement {
            posterior,
            degenerate: false,
        },
        None => Measurement {
            posterior: Posterior::uniform(scores.len()),
            degenerate: true,
        },
    }
}

fn matmul(a: &[f64], b: &[f64], m: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * m];
    for i in 0..m {
        for k in 0..m {
            let aik = a[i * m + k];
            if aik == 0.0 {
                continue;
            }
            for j in 0..m {
                c[i * m + j] += aik * b[k * m + j];
            }
        }
    }
    c
}

/// Batch-mean of `(y - y_hat)^2 + alpha * Var[p]`.
pub fn qmr_loss(model: &QmrModel, batch: &[(StateVector, usize)], alpha: f64) -> Result<f64> {
    let objective = QmrObjective::new(model.clone(), alpha)?;
    crate::training::batch_loss(&objective, batch)
}

/// A QMR model paired with its loss weight, for training.
#[derive(Debug, Clone)]
pub struct QmrObjective {
    pub model: QmrModel,
    pub alpha: f64,
}

impl QmrObjective {
    pub fn new(model: QmrModel, alpha: f64) -> Result<Self> {
        if !(alpha.is_finite() && alpha >= 0.0) {
            return Err(Error::invalid(format!("alpha must be nonnegative, got {alpha}")));
        }
        Ok(Self { model, alpha })
    }
}

impl Trainable for QmrObjective {
    type Forward = QmrForward;

    fn state_dim(&self) -> usize {
        self.model.state_dim
    }

    fn num_grades(&self) -> usize {
        self.model.num_grades
    }

    fn params(&self) -> &Params {
        &self.model.params
    }

    fn params_mut(&mut self) -> &mut Params {
        self.model.params_mut()
    }

    fn forward(&self) -> QmrForward {
        self.model.forward()
    }

    fn sample_loss(
        &self,
        fwd: &QmrForward,
        psi: &[f64],
        label: usize,
        grad: Option<&mut Params>,
    ) -> f64 {
        self.model.sample_loss(fwd, psi, label, self.alpha, grad)
    }

    fn pull_back(&self, fwd: &QmrForward, raw: &Params) -> Params {
        self.model.pull_back(fwd, raw)
    }
}
