// SPDX-License-Identifier: Apache-2.0

//! Dataset-level prediction and evaluation with a trained checkpoint.

use rayon::prelude::*;

use crate::aggregation::{predict_bag, BagPrediction, VoteMethod};
use crate::dataio::FeatureDataset;
use crate::error::{Error, Result};
use crate::evaluation::{variance_by_error, Level, MetricsReport, VarianceByErrorGroup};
use crate::posterior::Posterior;
use crate::rff::RffEncoder;
use crate::training::TrainedModel;

#[derive(Debug, Clone)]
pub struct PatchPredictions {
    /// One posterior per dataset record, in record order.
    pub posteriors: Vec<Posterior>,
    /// Patches whose measurement was degenerate and fell back to uniform.
    pub degenerate: usize,
}

pub fn predict_patches(
    model: &TrainedModel,
    encoder: &RffEncoder,
    dataset: &FeatureDataset,
) -> Result<PatchPredictions> {
    if dataset.input_dim() != encoder.input_dim() {
        return Err(Error::invalid(format!(
            "dataset has {} features, encoder expects {}",
            dataset.input_dim(),
            encoder.input_dim()
        )));
    }
    let measured = dataset
        .records()
        .par_iter()
        .map(|r| model.measure(encoder.encode(&r.features)?.as_slice()))
        .collect::<Result<Vec<_>>>()?;
    let degenerate = measured.iter().filter(|m| m.degenerate).count();
    Ok(PatchPredictions {
        posteriors: measured.into_iter().map(|m| m.posterior).collect(),
        degenerate,
    })
}

/// One prediction per bag, in order of first appearance.
pub fn predict_bags(
    dataset: &FeatureDataset,
    posteriors: &[Posterior],
    method: VoteMethod,
) -> Result<Vec<BagPrediction>> {
    if posteriors.len() != dataset.len() {
        return Err(Error::invalid("one posterior per record is required"));
    }
    dataset
        .bags()
        .iter()
        .map(|bag| {
            let patches: Vec<Posterior> =
                bag.patches.iter().map(|&i| posteriors[i].clone()).collect();
            predict_bag(&bag.id, &patches, method)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub patch: MetricsReport,
    pub bag_mv: MetricsReport,
    pub bag_pv: MetricsReport,
    pub variance: VarianceByErrorGroup,
    pub patch_true: Vec<usize>,
    pub patch_pred: Vec<usize>,
    pub bag_true: Vec<usize>,
    pub mv: Vec<BagPrediction>,
    pub pv: Vec<BagPrediction>,
    pub degenerate: usize,
}

impl Evaluation {
    pub fn reports(&self) -> [&MetricsReport; 3] {
        [&self.patch, &self.bag_mv, &self.bag_pv]
    }
}

pub fn evaluate(
    model: &TrainedModel,
    encoder: &RffEncoder,
    dataset: &FeatureDataset,
) -> Result<Evaluation> {
    let n = model.num_grades();
    if dataset.num_grades() != n {
        return Err(Error::invalid(format!(
            "dataset has {} grades, model has {n}",
            dataset.num_grades()
        )));
    }
    let patch_true = dataset.labels()?;
    let preds = predict_patches(model, encoder, dataset)?;
    let patch_pred: Vec<usize> = preds.posteriors.iter().map(Posterior::argmax_grade).collect();
    let bag_true = dataset
        .bags()
        .iter()
        .map(|b| dataset.bag_label(b))
        .collect::<Result<Vec<_>>>()?;
    let mv = predict_bags(dataset, &preds.posteriors, VoteMethod::Majority)?;
    let pv = predict_bags(dataset, &preds.posteriors, VoteMethod::Probability)?;
    let grades = |ps: &[BagPrediction]| ps.iter().map(|p| p.predicted_grade).collect::<Vec<_>>();
    Ok(Evaluation {
        patch: MetricsReport::compute(Level::Patch, "argmax", &patch_true, &patch_pred, n)?,
        bag_mv: MetricsReport::compute(Level::Bag, "MV", &bag_true, &grades(&mv), n)?,
        bag_pv: MetricsReport::compute(Level::Bag, "PV", &bag_true, &grades(&pv), n)?,
        variance: variance_by_error(&pv, &bag_true)?,
        patch_true,
        patch_pred,
        bag_true,
        mv,
        pv,
        degenerate: preds.degenerate,
    })
}
