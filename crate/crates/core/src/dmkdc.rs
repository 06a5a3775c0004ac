// SPDX-License-Identifier: Apache-2.0

//! Density matrix kernel density classification: one factored density per
//! class, scored by `<psi| rho_c |psi>` and normalized across classes.

use crate::density::{check_params, softmax, softmax_backward, Params, UnitRows};
use crate::error::{Error, Result};
use crate::posterior::Posterior;
use crate::qmr::{measurement_from_scores, Measurement};
use crate::rff::StateVector;
use crate::rng::SeededStream;
use crate::training::Trainable;

/// Guard inside the cross-entropy logarithm.
pub const LOG_EPSILON: f64 = 1e-12;

/// Per-class factored densities sharing `K`.
///
/// Layout: logits are `N x K`, vectors are `N x K x D`, class-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DmkdcModel {
    state_dim: usize,
    num_grades: usize,
    num_components: usize,
    params: Params,
}

pub struct DmkdcForward {
    /// Class-major `N x K`.
    lambda: Vec<f64>,
    unit: UnitRows,
}

impl DmkdcModel {
    pub fn new(
        state_dim: usize,
        num_grades: usize,
        num_components: usize,
        params: Params,
    ) -> Result<Self> {
        if state_dim == 0 || num_grades == 0 || num_components == 0 {
            return Err(Error::invalid("DMKDC dimensions must be positive"));
        }
        check_params(&params, num_grades * num_components, state_dim)?;
        UnitRows::new(&params.vectors, state_dim)?;
        Ok(Self {
            state_dim,
            num_grades,
            num_components,
            params,
        })
    }

    pub fn random(state_dim: usize, num_grades: usize, num_components: usize, seed: u64) -> Result<Self> {
        if state_dim == 0 || num_grades == 0 || num_components == 0 {
            return Err(Error::invalid("DMKDC dimensions must be positive"));
        }
        let mut stream = SeededStream::new(seed);
        let params = Params::random(num_grades * num_components, state_dim, &mut stream);
        Self::new(state_dim, num_grades, num_components, params)
    }

    /// Class `c` gets the states of its samples as eigenvectors. Every class
    /// needs exactly `num_components` samples.
    pub fn from_class_samples(num_grades: usize, per_class: &[Vec<&StateVector>]) -> Result<Self> {
        if per_class.len() != num_grades {
            return Err(Error::invalid("need one sample list per class"));
        }
        let k = per_class[0].len();
        let Some(first) = per_class[0].first() else {
            return Err(Error::invalid("data-driven init needs samples for every class"));
        };
        let d = first.dim();
        let mut vectors = Vec::with_capacity(num_grades * k * d);
        for class in per_class {
            if class.len() != k || class.iter().any(|s| s.dim() != d) {
                return Err(Error::invalid("every class needs the same number of samples"));
            }
            for s in class {
                vectors.extend_from_slice(s.as_slice());
            }
        }
        let params = Params {
            logits: vec![0.0; num_grades * k],
            vectors,
        };
        Self::new(d, num_grades, k, params)
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

    /// Eigenvalues of each class, `N x K` class-major.
    pub fn eigenvalues(&self) -> Vec<f64> {
        self.params
            .logits
            .chunks_exact(self.num_components)
            .flat_map(softmax)
            .collect()
    }

    pub fn forward(&self) -> DmkdcForward {
        DmkdcForward {
            lambda: self.eigenvalues(),
            unit: UnitRows::new(&self.params.vectors, self.state_dim)
                .expect("eigenvector rows are nonzero"),
        }
    }

    /// `<psi| rho_c |psi>` for every class.
    pub fn class_scores(&self, psi: &[f64]) -> Result<Vec<f64>> {
        self.check_state(psi)?;
        Ok(self.scores(&self.forward(), psi, None))
    }

    fn scores(&self, fwd: &DmkdcForward, psi: &[f64], mut proj: Option<&mut Vec<f64>>) -> Vec<f64> {
        let k = self.num_components;
        (0..self.num_grades)
            .map(|c| {
                (0..k)
                    .map(|j| {
                        let idx = c * k + j;
                        let a: f64 = fwd.unit.row(idx).iter().zip(psi).map(|(v, x)| v * x).sum();
                        if let Some(p) = proj.as_deref_mut() {
                            p.push(a);
                        }
                        fwd.lambda[idx] * a * a
                    })
                    .sum()
            })
            .collect()
    }

    pub fn measure(&self, psi: &[f64]) -> Result<Measurement> {
        let scores = self.class_scores(psi)?;
        Ok(measurement_from_scores(&scores))
    }

    /// Normalized class scores, no priors.
    pub fn posterior(&self, psi: &StateVector) -> Result<Posterior> {
        Ok(self.measure(psi.as_slice())?.posterior)
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

    /// Reference scores through explicit `D x D` density matrices.
    pub fn full_matrix_scores(&self, psi: &[f64]) -> Result<Vec<f64>> {
        self.check_state(psi)?;
        let (d, k) = (self.state_dim, self.num_components);
        let mut out = Vec::with_capacity(self.num_grades);
        for c in 0..self.num_grades {
            let lambda = softmax(&self.params.logits[c * k..(c + 1) * k]);
            let mut rho = vec![0.0; d * d];
            for (j, l) in lambda.iter().enumerate() {
                let start = (c * k + j) * d;
                let raw = &self.params.vectors[start..start + d];
                let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
                for a in 0..d {
                    for b in 0..d {
                        rho[a * d + b] += l * raw[a] * raw[b] / (norm * norm);
                    }
                }
            }
            let mut q = 0.0;
            for a in 0..d {
                for b in 0..d {
                    q += psi[a] * rho[a * d + b] * psi[b];
                }
            }
            out.push(q);
        }
        Ok(out)
    }

    pub(crate) fn sample_loss(
        &self,
        fwd: &DmkdcForward,
        psi: &[f64],
        label: usize,
        grad: Option<&mut Params>,
    ) -> f64 {
        let n = self.num_grades;
        let mut proj = Vec::with_capacity(n * self.num_components);
        let scores = self.scores(fwd, psi, Some(&mut proj));
        let total: f64 = scores.iter().sum();
        let degenerate = !(total >= crate::qmr::DEGENERATE_FLOOR);
        let p_true = if degenerate {
            1.0 / n as f64
        } else {
            scores[label] / total
        };
        let loss = -(p_true + LOG_EPSILON).ln();

        let Some(grad) = grad else { return loss };
        if degenerate {
            return loss;
        }
        // d loss / d s_c = (g_y delta_cy - g_y p_y) / S with g_y = -1 / (p_y + eps)
        let g_y = -1.0 / (p_true + LOG_EPSILON);
        let d = self.state_dim;
        for c in 0..n {
            let mut gs = -g_y * p_true;
            if c == label {
                gs += g_y;
            }
            gs /= total;
            for j in 0..self.num_components {
                let idx = c * self.num_components + j;
                let a = proj[idx];
                grad.logits[idx] += gs * a * a;
                let ga = 2.0 * gs * fwd.lambda[idx] * a;
                for (g, x) in grad.vectors[idx * d..(idx + 1) * d].iter_mut().zip(psi) {
                    *g += ga * x;
                }
            }
        }
        loss
    }

    pub(crate) fn pull_back(&self, fwd: &DmkdcForward, raw: &Params) -> Params {
        let k = self.num_components;
        let mut out = Params::zeros_like(raw);
        for c in 0..self.num_grades {
            let r = c * k..(c + 1) * k;
            softmax_backward(&fwd.lambda[r.clone()], &raw.logits[r.clone()], &mut out.logits[r]);
        }
        let d = self.state_dim;
        for idx in 0..self.num_grades * k {
            fwd.unit.backward_row(
                idx,
                &raw.vectors[idx * d..(idx + 1) * d],
                &mut out.vectors[idx * d..(idx + 1) * d],
            );
        }
        out
    }
}

impl Trainable for DmkdcModel {
    type Forward = DmkdcForward;

    fn state_dim(&self) -> usize {
        self.state_dim
    }

    fn num_grades(&self) -> usize {
        self.num_grades
    }

    fn params(&self) -> &Params {
        &self.params
    }

    fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    fn forward(&self) -> DmkdcForward {
        DmkdcModel::forward(self)
    }

    fn sample_loss(
        &self,
        fwd: &DmkdcForward,
        psi: &[f64],
        label: usize,
        grad: Option<&mut Params>,
    ) -> f64 {
        DmkdcModel::sample_loss(self, fwd, psi, label, grad)
    }

    fn pull_back(&self, fwd: &DmkdcForward, raw: &Params) -> Params {
        DmkdcModel::pull_back(self, fwd, raw)
    }
}

/// Batch-mean of `-ln(p_y + 1e-12)`.
pub fn cross_entropy_loss(model: &DmkdcModel, batch: &[(StateVector, usize)]) -> Result<f64> {
    crate::training::batch_loss(model, batch)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_state(stream: &mut SeededStream, d: usize) -> StateVector {
        StateVector::normalized((0..d).map(|_| stream.normal()).collect()).unwrap()
    }

    /// Class `c` holds the single eigenvector `states[c]`.
    fn single_component(states: &[StateVector]) -> DmkdcModel {
        let per_class: Vec<Vec<&StateVector>> = states.iter().map(|s| vec![s]).collect();
        DmkdcModel::from_class_samples(states.len(), &per_class).unwrap()
    }

    fn basis(d: usize, i: usize) -> StateVector {
        let mut v = vec![0.0; d];
        v[i] = 1.0;
        StateVector::new(v).unwrap()
    }

    #[test]
    fn aligned_and_orthogonal_scores() {
        let states: Vec<_> = (0..5).map(|i| basis(5, i)).collect();
        let model = single_component(&states);
        let scores = model.class_scores(states[0].as_slice()).unwrap();
        assert!((scores[0] - 1.0).abs() < 1e-15);
        assert!(scores[1..].iter().all(|s| s.abs() < 1e-15));
        let p = model.posterior(&states[0]).unwrap();
        assert_eq!(p.probs(), &[1.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn equal_scores_uniform() {
        let psi = StateVector::normalized(vec![1.0; 4]).unwrap();
        let states = vec![psi.clone(); 5];
        let model = single_component(&states);
        let p = model.posterior(&psi).unwrap();
        for v in p.probs() {
            assert!((v - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn scores_normalize_directly() {
        // Scores [0.2, 0.6, 0.2, 0, 0] sum to one, so the posterior equals them.
        let m = measurement_from_scores(&[0.2, 0.6, 0.2, 0.0, 0.0]);
        assert!(!m.degenerate);
        let want = [0.2, 0.6, 0.2, 0.0, 0.0];
        for (a, b) in m.posterior.probs().iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn matches_full_matrix_small() {
        let mut s = SeededStream::new(8);
        let model = DmkdcModel::random(6, 5, 3, 2).unwrap();
        for _ in 0..10 {
            let psi = random_state(&mut s, 6);
            let a = model.class_scores(psi.as_slice()).unwrap();
            let b = model.full_matrix_scores(psi.as_slice()).unwrap();
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-10);
                assert!((-1e-9..=1.0 + 1e-9).contains(x));
            }
        }
    }

    #[test]
    fn cross_entropy_examples() {
        let states: Vec<_> = (0..5).map(|i| basis(5, i)).collect();
        let model = single_component(&states);
        let loss = cross_entropy_loss(&model, &[(states[2].clone(), 2)]).unwrap();
        assert!(loss <= 1e-9);

        let psi = StateVector::normalized(vec![1.0; 4]).unwrap();
        let uniform = single_component(&vec![psi.clone(); 5]);
        let loss = cross_entropy_loss(&uniform, &[(psi.clone(), 3)]).unwrap();
        assert!((loss - 5f64.ln()).abs() < 1e-9);

        // Two classes share the state: p_true = 0.5.
        let e0 = basis(2, 0);
        let two = single_component(&[e0.clone(), e0.clone()]);
        let loss = cross_entropy_loss(&two, &[(e0, 0)]).unwrap();
        assert!((loss - 2f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn degenerate_is_uniform() {
        let model = single_component(&[basis(3, 0), basis(3, 0)]);
        let m = model.measure(&[0.0, 1.0, 0.0]).unwrap();
        assert!(m.degenerate);
        assert_eq!(m.posterior, Posterior::uniform(2));
    }

    #[test]
    fn bad_inputs() {
        let model = DmkdcModel::random(3, 2, 2, 1).unwrap();
        assert!(model.class_scores(&[1.0]).is_err());
        let psi = basis(3, 0);
        assert!(cross_entropy_loss(&model, &[]).is_err());
        assert!(cross_entropy_loss(&model, &[(psi, 2)]).is_err());
    }
}
