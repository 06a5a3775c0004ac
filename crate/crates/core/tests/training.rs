// SPDX-License-Identifier: Apache-2.0

mod common;

use common::{labeled_batch, nearest_centroid};
use dqmor::dataio::{synth_generate, PatchRecord, SynthParams};
use dqmor::qmr::{InitStrategy, QmrObjective};
use dqmor::rng::SeededStream;
use dqmor::training::{gradient_check, train};
use dqmor::{DmkdcModel, FeatureDataset, ModelKind, QmrConfig, QmrModel, RffEncoder};

fn config(rff_dim: usize, grades: usize, lr: f64, epochs: usize) -> QmrConfig {
    QmrConfig {
        rff_dim,
        num_grades: grades,
        num_components: 4,
        gamma: 0.5,
        alpha: 0.4,
        learning_rate: lr,
        epochs,
        batch_size: 16,
        seed: 3,
        init: InitStrategy::Random,
    }
}

fn two_blobs() -> FeatureDataset {
    let mut rng = SeededStream::new(77);
    let mut records = Vec::new();
    for i in 0..80 {
        let label = i % 2;
        let center = if label == 0 { -1.5 } else { 1.5 };
        records.push(PatchRecord {
            bag_id: format!("b{}", i / 4),
            patch_id: format!("p{i}"),
            label: Some(label),
            features: vec![center + 0.3 * rng.normal(), 0.3 * rng.normal()],
        });
    }
    FeatureDataset::new(2, 2, records).unwrap()
}

#[test]
fn dmkdc_loss_does_not_increase_on_separable_classes() {
    let ds = two_blobs();
    let enc = RffEncoder::sample(2, 64, 0.5, 1).unwrap();
    let (_, report) = train(ModelKind::Dmkdc, &ds, &enc, &config(64, 2, 5e-3, 50)).unwrap();
    let mut prev = report.initial_loss;
    for (epoch, &loss) in report.epoch_losses.iter().enumerate() {
        assert!(loss <= prev + 1e-12, "epoch {}: {loss} > {prev}", epoch + 1);
        prev = loss;
    }
    assert!(report.best_loss < report.initial_loss);
}

#[test]
fn qmr_loss_halves_within_200_epochs() {
    let ds = synth_generate(&SynthParams {
        num_bags: 20,
        patches_per_bag: 4,
        feature_dim: 2,
        num_grades: 5,
        noise_sigma: 0.2,
        seed: 5,
    })
    .unwrap();
    let enc = RffEncoder::sample(2, 64, 2.0, 5).unwrap();
    let (_, report) = train(ModelKind::Qmr, &ds, &enc, &config(64, 5, 0.01, 200)).unwrap();
    assert!(
        report.best_loss <= 0.5 * report.initial_loss,
        "{} -> {}",
        report.initial_loss,
        report.best_loss
    );
}

#[test]
fn finite_difference_error_shrinks_with_step() {
    let mut rng = SeededStream::new(31);
    for seed in 0..5 {
        let batch = labeled_batch(&mut rng, 6, 4, 10);
        let qmr = QmrObjective::new(QmrModel::random(6, 4, 3, seed).unwrap(), 0.4).unwrap();
        let dmk = DmkdcModel::random(6, 4, 3, seed).unwrap();
        let coarse = gradient_check(&qmr, &batch, 1e-3).unwrap().max_relative_error;
        let fine = gradient_check(&qmr, &batch, 1e-5).unwrap().max_relative_error;
        assert!(fine <= coarse || fine < 1e-7, "qmr: {coarse} -> {fine}");
        let coarse = gradient_check(&dmk, &batch, 1e-3).unwrap().max_relative_error;
        let fine = gradient_check(&dmk, &batch, 1e-5).unwrap().max_relative_error;
        assert!(fine <= coarse || fine < 1e-7, "dmkdc: {coarse} -> {fine}");
    }
}

#[test]
fn data_init_starts_below_random_init() {
    let ds = synth_generate(&SynthParams {
        num_bags: 20,
        patches_per_bag: 4,
        feature_dim: 2,
        num_grades: 5,
        noise_sigma: 0.1,
        seed: 6,
    })
    .unwrap();
    let enc = RffEncoder::sample(2, 64, 2.0, 6).unwrap();
    for kind in [ModelKind::Qmr, ModelKind::Dmkdc] {
        let random = config(64, 5, 0.01, 1);
        let data = QmrConfig { init: InitStrategy::Data, ..random.clone() };
        let (_, r) = train(kind, &ds, &enc, &random).unwrap();
        let (_, d) = train(kind, &ds, &enc, &data).unwrap();
        assert!(d.initial_loss < r.initial_loss, "{kind}: data {} vs random {}", d.initial_loss, r.initial_loss);
    }
}

#[test]
fn nearest_centroid_errors_are_mostly_adjacent() {
    let ds = synth_generate(&SynthParams {
        num_bags: 400,
        patches_per_bag: 8,
        feature_dim: 16,
        num_grades: 5,
        noise_sigma: 0.65,
        seed: 12,
    })
    .unwrap();
    let (acc, adjacent) = nearest_centroid(&ds);
    assert!((0.55..=0.65).contains(&acc), "accuracy {acc}");
    assert!(adjacent >= 0.8, "adjacent share {adjacent}");
}
