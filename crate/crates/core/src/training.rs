// SPDX-License-Identifier: Apache-2.0

//! Minibatch Adam over the factored density parameters, exact gradients,
//! and a central-difference checker.
//!
//! Batch gradients are reduced in a fixed order: samples are split into
//! consecutive chunks of [`REDUCTION_CHUNK`], each chunk is summed
//! sequentially (possibly on another thread), and chunk sums are added in
//! chunk order. Results are therefore bit-identical for any thread count.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::FeatureDataset;
use crate::density::Params;
use crate::dmkdc::DmkdcModel;
use crate::error::{Error, Result};
use crate::qmr::{InitStrategy, QmrConfig, QmrModel, QmrObjective};
use crate::rff::{RffEncoder, StateVector};
use crate::rng::SeededStream;

pub const REDUCTION_CHUNK: usize = 8;
/// Largest parameter count [`gradient_check`] will perturb one by one.
pub const GRADCHECK_MAX_PARAMS: usize = 20_000;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

/// A model with a per-sample loss and an exact per-sample gradient.
///
/// `sample_loss` accumulates gradients with respect to the *constrained*
/// quantities (eigenvalues into `grad.logits`, unit eigenvectors into
/// `grad.vectors`); `pull_back` maps such a gradient to the raw parameters.
/// Splitting it this way lets the softmax and normalization Jacobians be
/// applied once per batch.
pub trait Trainable: Sync {
    type Forward: Sync;

    fn state_dim(&self) -> usize;
    fn num_grades(&self) -> usize;
    fn params(&self) -> &Params;
    fn params_mut(&mut self) -> &mut Params;
    fn forward(&self) -> Self::Forward;
    fn sample_loss(
        &self,
        fwd: &Self::Forward,
        psi: &[f64],
        label: usize,
        grad: Option<&mut Params>,
    ) -> f64;
    fn pull_back(&self, fwd: &Self::Forward, raw: &Params) -> Params;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Qmr,
    Dmkdc,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Qmr => "qmr",
            ModelKind::Dmkdc => "dmkdc",
        })
    }
}

/// Either trained model.
#[derive(Debug, Clone, PartialEq)]
pub enum TrainedModel {
    Qmr(QmrModel),
    Dmkdc(DmkdcModel),
}

impl TrainedModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            TrainedModel::Qmr(_) => ModelKind::Qmr,
            TrainedModel::Dmkdc(_) => ModelKind::Dmkdc,
        }
    }

    pub fn state_dim(&self) -> usize {
        match self {
            TrainedModel::Qmr(m) => m.state_dim(),
            TrainedModel::Dmkdc(m) => m.state_dim(),
        }
    }

    pub fn num_grades(&self) -> usize {
        match self {
            TrainedModel::Qmr(m) => m.num_grades(),
            TrainedModel::Dmkdc(m) => m.num_grades(),
        }
    }

    pub fn num_components(&self) -> usize {
        match self {
            TrainedModel::Qmr(m) => m.num_components(),
            TrainedModel::Dmkdc(m) => m.num_components(),
        }
    }

    pub fn params(&self) -> &Params {
        match self {
            TrainedModel::Qmr(m) => m.params(),
            TrainedModel::Dmkdc(m) => m.params(),
        }
    }

    pub fn measure(&self, psi: &[f64]) -> Result<crate::qmr::Measurement> {
        match self {
            TrainedModel::Qmr(m) => m.measure(psi),
            TrainedModel::Dmkdc(m) => m.measure(psi),
        }
    }

    pub fn posterior(&self, psi: &StateVector) -> Result<crate::posterior::Posterior> {
        Ok(self.measure(psi.as_slice())?.posterior)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub model: ModelKind,
    /// Full-dataset loss before the first step.
    pub initial_loss: f64,
    /// Full-dataset loss after each epoch.
    pub epoch_losses: Vec<f64>,
    pub final_loss: f64,
    pub best_loss: f64,
    /// 1-based epoch whose parameters were kept; 0 means the initialization.
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub seed: u64,
    pub wall_time_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub logits_max_relative_error: f64,
    pub vectors_max_relative_error: f64,
    /// Flat index (logits first, then vectors) of the worst parameter.
    pub worst_index: usize,
    pub num_params: usize,
    pub step: f64,
}

fn validate_batch<T: Trainable>(model: &T, batch: &[(StateVector, usize)]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::invalid("batch is empty"));
    }
    for (i, (psi, y)) in batch.iter().enumerate() {
        if *y >= model.num_grades() {
            return Err(Error::invalid(format!(
                "sample {i}: label {y} is out of range for {} grades",
                model.num_grades()
            )));
        }
        if psi.dim() != model.state_dim() {
            return Err(Error::invalid(format!(
                "sample {i}: state has length {}, model expects {}",
                psi.dim(),
                model.state_dim()
            )));
        }
    }
    Ok(())
}

/// Sum of losses (and raw gradients) over `idx`, in the fixed reduction order.
fn reduce<T: Trainable>(
    model: &T,
    fwd: &T::Forward,
    samples: &[(StateVector, usize)],
    idx: &[usize],
    with_grad: bool,
) -> (f64, Option<Params>) {
    let partials: Vec<(f64, Option<Params>)> = idx
        .par_chunks(REDUCTION_CHUNK)
        .map(|chunk| {
            let mut grad = with_grad.then(|| Params::zeros_like(model.params()));
            let mut loss = 0.0;
            for &i in chunk {
                let (psi, y) = &samples[i];
                loss += model.sample_loss(fwd, psi.as_slice(), *y, grad.as_mut());
            }
            (loss, grad)
        })
        .collect();
    let mut loss = 0.0;
    let mut grad = with_grad.then(|| Params::zeros_like(model.params()));
    for (l, g) in partials {
        loss += l;
        if let (Some(acc), Some(g)) = (grad.as_mut(), g) {
            acc.add_assign(&g);
        }
    }
    (loss, grad)
}

fn mean_loss_and_grad<T: Trainable>(
    model: &T,
    samples: &[(StateVector, usize)],
    idx: &[usize],
) -> (f64, Params) {
    let fwd = model.forward();
    let (loss, raw) = reduce(model, &fwd, samples, idx, true);
    let mut grad = model.pull_back(&fwd, &raw.expect("gradient requested"));
    let inv = 1.0 / idx.len() as f64;
    grad.scale(inv);
    (loss * inv, grad)
}

fn mean_loss<T: Trainable>(model: &T, samples: &[(StateVector, usize)], idx: &[usize]) -> f64 {
    let fwd = model.forward();
    reduce(model, &fwd, samples, idx, false).0 / idx.len() as f64
}

/// Batch-mean loss.
pub fn batch_loss<T: Trainable>(model: &T, batch: &[(StateVector, usize)]) -> Result<f64> {
    validate_batch(model, batch)?;
    let idx: Vec<usize> = (0..batch.len()).collect();
    Ok(mean_loss(model, batch, &idx))
}

/// Exact gradient of the batch-mean loss with respect to the raw logits
/// and eigenvector entries. Returns the loss alongside.
pub fn analytic_gradient<T: Trainable>(
    model: &T,
    batch: &[(StateVector, usize)],
) -> Result<(f64, Params)> {
    validate_batch(model, batch)?;
    let idx: Vec<usize> = (0..batch.len()).collect();
    Ok(mean_loss_and_grad(model, batch, &idx))
}

/// Compares [`analytic_gradient`] against central differences for every
/// parameter.
pub fn gradient_check<T: Trainable + Clone>(
    model: &T,
    batch: &[(StateVector, usize)],
    h: f64,
) -> Result<GradCheckReport> {
    gradient_check_perturbed(model, batch, h, 0.0)
}

/// Same as [`gradient_check`], but adds `offset` to the first analytic
/// gradient entry before comparing. Used as a negative control.
pub fn gradient_check_perturbed<T: Trainable + Clone>(
    model: &T,
    batch: &[(StateVector, usize)],
    h: f64,
    offset: f64,
) -> Result<GradCheckReport> {
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::invalid(format!("step must be positive, got {h}")));
    }
    let num_params = model.params().len();
    if num_params > GRADCHECK_MAX_PARAMS {
        return Err(Error::CheckTooLarge {
            params: num_params,
            limit: GRADCHECK_MAX_PARAMS,
        });
    }
    let (_, mut analytic) = analytic_gradient(model, batch)?;
    if offset != 0.0 && num_params > 0 {
        analytic.set(0, analytic.get(0) + offset);
    }
    let idx: Vec<usize> = (0..batch.len()).collect();
    let num_logits = model.params().logits.len();
    let mut probe = model.clone();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        logits_max_relative_error: 0.0,
        vectors_max_relative_error: 0.0,
        worst_index: 0,
        num_params,
        step: h,
    };
    for i in 0..num_params {
        let theta = model.params().get(i);
        probe.params_mut().set(i, theta + h);
        let plus = mean_loss(&probe, batch, &idx);
        probe.params_mut().set(i, theta - h);
        let minus = mean_loss(&probe, batch, &idx);
        probe.params_mut().set(i, theta);
        let numeric = (plus - minus) / (2.0 * h);
        let a = analytic.get(i);
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        if i < num_logits {
            report.logits_max_relative_error = report.logits_max_relative_error.max(err);
        } else {
            report.vectors_max_relative_error = report.vectors_max_relative_error.max(err);
        }
        if err > report.max_relative_error || err.is_nan() {
            report.max_relative_error = err;
            report.worst_index = i;
        }
    }
    Ok(report)
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    learning_rate: f64,
    first: Params,
    second: Params,
    steps: i32,
}

impl Adam {
    pub fn new(learning_rate: f64, like: &Params) -> Self {
        Self {
            learning_rate,
            first: Params::zeros_like(like),
            second: Params::zeros_like(like),
            steps: 0,
        }
    }

    pub fn step(&mut self, params: &mut Params, grad: &Params) {
        self.steps += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.steps);
        let c2 = 1.0 - ADAM_BETA2.powi(self.steps);
        let lr = self.learning_rate;
        let update = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
            for (((p, g), m), v) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p -= lr * m_hat / (v_hat.sqrt() + ADAM_EPSILON);
            }
        };
        update(
            &mut params.logits,
            &grad.logits,
            &mut self.first.logits,
            &mut self.second.logits,
        );
        update(
            &mut params.vectors,
            &grad.vectors,
            &mut self.first.vectors,
            &mut self.second.vectors,
        );
    }
}

/// Runs minibatch Adam on already-encoded samples. `on_epoch(epoch, loss)`
/// is called after each epoch with the full-dataset loss.
pub fn train_states<T: Trainable + Clone>(
    mut model: T,
    samples: &[(StateVector, usize)],
    config: &QmrConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<(T, TrainReport)>
where
    T: ReportKind,
{
    config.validate()?;
    validate_batch(&model, samples)?;
    let started = Instant::now();
    let all: Vec<usize> = (0..samples.len()).collect();
    let initial_loss = mean_loss(&model, samples, &all);
    if !initial_loss.is_finite() {
        return Err(Error::TrainingDiverged { epoch: 0, batch: 0 });
    }
    let mut adam = Adam::new(config.learning_rate, model.params());
    let mut order = all.clone();
    let mut best = (initial_loss, 0, model.clone());
    let mut epoch_losses = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        let mut shuffle = SeededStream::with_stream(config.seed, SHUFFLE_STREAM_BASE + epoch as u64);
        order.copy_from_slice(&all);
        shuffle.shuffle(&mut order);
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let (loss, grad) = mean_loss_and_grad(&model, samples, batch);
            if !loss.is_finite() || !grad.is_finite() {
                return Err(Error::TrainingDiverged { epoch, batch: b });
            }
            adam.step(model.params_mut(), &grad);
            debug_assert!(model.params().is_finite());
        }
        let loss = mean_loss(&model, samples, &all);
        if !loss.is_finite() {
            return Err(Error::TrainingDiverged {
                epoch,
                batch: order.len().div_ceil(config.batch_size),
            });
        }
        on_epoch(epoch, loss);
        epoch_losses.push(loss);
        if loss < best.0 {
            best = (loss, epoch, model.clone());
        }
    }

    let report = TrainReport {
        model: T::KIND,
        initial_loss,
        final_loss: *epoch_losses.last().unwrap_or(&initial_loss),
        epoch_losses,
        best_loss: best.0,
        best_epoch: best.1,
        epochs_run: config.epochs,
        seed: config.seed,
        wall_time_seconds: started.elapsed().as_secs_f64(),
    };
    Ok((best.2, report))
}

/// Tags a [`Trainable`] with its model kind for reports.
pub trait ReportKind {
    const KIND: ModelKind;
}

impl ReportKind for QmrObjective {
    const KIND: ModelKind = ModelKind::Qmr;
}

impl ReportKind for DmkdcModel {
    const KIND: ModelKind = ModelKind::Dmkdc;
}

const SHUFFLE_STREAM_BASE: u64 = 1 << 32;
const INIT_STREAM: u64 = 1;

/// Encodes `dataset`, initializes a model of `kind`, and trains it.
pub fn train(
    kind: ModelKind,
    dataset: &FeatureDataset,
    encoder: &RffEncoder,
    config: &QmrConfig,
) -> Result<(TrainedModel, TrainReport)> {
    train_with_progress(kind, dataset, encoder, config, |_, _| {})
}

pub fn train_with_progress(
    kind: ModelKind,
    dataset: &FeatureDataset,
    encoder: &RffEncoder,
    config: &QmrConfig,
    on_epoch: impl FnMut(usize, f64),
) -> Result<(TrainedModel, TrainReport)> {
    config.validate()?;
    let samples = encode_labeled(dataset, encoder, config)?;
    match kind {
        ModelKind::Qmr => {
            let model = init_qmr(&samples, config)?;
            let objective = QmrObjective::new(model, config.alpha)?;
            let (trained, report) = train_states(objective, &samples, config, on_epoch)?;
            Ok((TrainedModel::Qmr(trained.model), report))
        }
        ModelKind::Dmkdc => {
            let model = init_dmkdc(&samples, config)?;
            let (trained, report) = train_states(model, &samples, config, on_epoch)?;
            Ok((TrainedModel::Dmkdc(trained), report))
        }
    }
}

/// Encodes every record of a labeled dataset after checking it against
/// the encoder and config.
pub fn encode_labeled(
    dataset: &FeatureDataset,
    encoder: &RffEncoder,
    config: &QmrConfig,
) -> Result<Vec<(StateVector, usize)>> {
    if dataset.is_empty() {
        return Err(Error::invalid("dataset is empty"));
    }
    if dataset.input_dim() != encoder.input_dim() {
        return Err(Error::invalid(format!(
            "dataset has {} features, encoder expects {}",
            dataset.input_dim(),
            encoder.input_dim()
        )));
    }
    if config.rff_dim != encoder.rff_dim() {
        return Err(Error::invalid(format!(
            "config rff_dim {} does not match encoder rff_dim {}",
            config.rff_dim,
            encoder.rff_dim()
        )));
    }
    if dataset.num_grades() != config.num_grades {
        return Err(Error::invalid(format!(
            "dataset has {} grades, config has {}",
            dataset.num_grades(),
            config.num_grades
        )));
    }
    let labels = dataset.labels()?;
    let states = encoder.encode_batch(&dataset.feature_rows())?;
    Ok(states.into_iter().zip(labels).collect())
}

fn init_qmr(samples: &[(StateVector, usize)], config: &QmrConfig) -> Result<QmrModel> {
    let (d, n, k) = (config.rff_dim, config.num_grades, config.num_components);
    let mut stream = SeededStream::with_stream(config.seed, INIT_STREAM);
    match config.init {
        InitStrategy::Random => {
            let params = Params::random(k, d * n, &mut stream);
            QmrModel::new(d, n, k, params)
        }
        InitStrategy::Data => {
            let picks = pick_indices(&mut stream, samples.len(), k);
            let chosen: Vec<(&StateVector, usize)> =
                picks.iter().map(|&i| (&samples[i].0, samples[i].1)).collect();
            let model = QmrModel::from_samples(n, &chosen)?;
            QmrModel::new(d, n, k, model.params().clone())
        }
    }
}

fn init_dmkdc(samples: &[(StateVector, usize)], config: &QmrConfig) -> Result<DmkdcModel> {
    let (d, n, k) = (config.rff_dim, config.num_grades, config.num_components);
    let mut stream = SeededStream::with_stream(config.seed, INIT_STREAM);
    let mut params = Params::random(n * k, d, &mut stream);
    if config.init == InitStrategy::Data {
        for c in 0..n {
            let members: Vec<usize> = (0..samples.len()).filter(|&i| samples[i].1 == c).collect();
            if members.is_empty() {
                continue;
            }
            for (j, pick) in pick_indices(&mut stream, members.len(), k).into_iter().enumerate() {
                let row = (c * k + j) * d;
                params.vectors[row..row + d]
                    .copy_from_slice(samples[members[pick]].0.as_slice());
            }
        }
    }
    DmkdcModel::new(d, n, k, params)
}

/// `k` indices from `0..n`: distinct when `k <= n`, cycling otherwise.
fn pick_indices(stream: &mut SeededStream, n: usize, k: usize) -> Vec<usize> {
    let mut all: Vec<usize> = (0..n).collect();
    stream.shuffle(&mut all);
    (0..k).map(|j| all[j % n]).collect()
}
