// SPDX-License-Identifier: Apache-2.0

use proptest::collection::vec;
use proptest::prelude::*;

use dqmor::aggregation::{majority_vote, probability_vote};
use dqmor::dataio::{load_csv, load_csv_unlabeled, save_csv, PatchRecord};
use dqmor::evaluation::{mae, mae_grades};
use dqmor::{DmkdcModel, FeatureDataset, Posterior, QmrModel, StateVector};

fn simplex(n: usize) -> impl Strategy<Value = Vec<f64>> {
    vec(0.0f64..1.0, n).prop_filter_map("all zero", |raw| {
        let total: f64 = raw.iter().sum();
        (total > 1e-6).then(|| raw.into_iter().map(|v| v / total).collect())
    })
}

fn state(dim: usize) -> impl Strategy<Value = StateVector> {
    vec(-1.0f64..1.0, dim).prop_filter_map("zero state", |v| StateVector::normalized(v).ok())
}

/// (D, N, K, seed, psi)
fn qmr_case(max_dim: usize) -> impl Strategy<Value = (usize, usize, usize, u64, StateVector)> {
    (1usize..=max_dim, 2usize..=6, 1usize..=8, any::<u64>())
        .prop_flat_map(|(d, n, k, seed)| (Just(d), Just(n), Just(k), Just(seed), state(d)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn qmr_posterior_is_a_simplex((d, n, k, seed, psi) in qmr_case(24)) {
        let m = QmrModel::random(d, n, k, seed).unwrap();
        let p = m.posterior(&psi).unwrap();
        let sum: f64 = p.probs().iter().sum();
        prop_assert!((sum - 1.0).abs() <= 1e-9);
        prop_assert!(p.probs().iter().all(|&v| (0.0..=1.0 + 1e-9).contains(&v)));
        prop_assert!(p.expected_grade() >= -1e-12 && p.expected_grade() <= (n - 1) as f64 + 1e-12);
        let max_var = ((n - 1) as f64).powi(2) / 4.0;
        prop_assert!(p.variance() >= 0.0 && p.variance() <= max_var + 1e-9);
    }

    #[test]
    fn dmkdc_posterior_is_a_simplex((d, n, k, seed, psi) in qmr_case(24)) {
        let m = DmkdcModel::random(d, n, k, seed).unwrap();
        let p = m.posterior(&psi).unwrap();
        let sum: f64 = p.probs().iter().sum();
        prop_assert!((sum - 1.0).abs() <= 1e-9);
        prop_assert!(p.probs().iter().all(|&v| v >= 0.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(150))]

    #[test]
    fn factored_measurement_matches_materialized_oracle((d, n, k, seed, psi) in qmr_case(10)) {
        let n = n.min(5);
        let m = QmrModel::random(d, n, k, seed).unwrap();
        let fast = m.posterior(&psi).unwrap();
        let slow = m.brute_force_posterior(&psi).unwrap();
        for (a, b) in fast.probs().iter().zip(slow.probs()) {
            prop_assert!((a - b).abs() <= 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn dmkdc_scores_match_full_matrix((d, n, k, seed, psi) in qmr_case(16)) {
        let m = DmkdcModel::random(d, n, k, seed).unwrap();
        let a = m.class_scores(psi.as_slice()).unwrap();
        let b = m.full_matrix_scores(psi.as_slice()).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-10);
        }
    }

    #[test]
    fn measurement_ignores_state_scale((d, n, k, seed, psi) in qmr_case(16), c in prop_oneof![1e-4f64..1e-1, 1.5f64..1e3, -50.0f64..-0.5]) {
        let m = QmrModel::random(d, n, k, seed).unwrap();
        let base = m.measure(psi.as_slice()).unwrap();
        let scaled: Vec<f64> = psi.as_slice().iter().map(|v| v * c).collect();
        let other = m.measure(&scaled).unwrap();
        for (a, b) in base.posterior.probs().iter().zip(other.posterior.probs()) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn zero_variance_iff_one_hot(n in 1usize..8, g in 0usize..8, p in simplex(6)) {
        let g = g % n;
        prop_assert_eq!(Posterior::one_hot(n, g).variance(), 0.0);
        let post = Posterior::new(p.clone()).unwrap();
        let peak = p.iter().cloned().fold(0.0, f64::max);
        if peak < 1.0 - 1e-6 {
            prop_assert!(post.variance() > 0.0);
        }
    }

    #[test]
    fn pv_is_permutation_invariant_and_bounded(rows in vec(simplex(5), 1..12), rot in 0usize..12) {
        let posts: Vec<Posterior> = rows.iter().map(|r| Posterior::new(r.clone()).unwrap()).collect();
        let pv = probability_vote(&posts).unwrap();
        let mut rotated = posts.clone();
        let len = rotated.len();
        rotated.rotate_left(rot % len);
        rotated.reverse();
        let pv2 = probability_vote(&rotated).unwrap();
        for j in 0..5 {
            prop_assert!((pv.probs()[j] - pv2.probs()[j]).abs() <= 1e-12);
            let lo = rows.iter().map(|r| r[j]).fold(f64::INFINITY, f64::min);
            let hi = rows.iter().map(|r| r[j]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(pv.probs()[j] >= lo - 1e-12 && pv.probs()[j] <= hi + 1e-12);
        }
        let same = vec![posts[0].clone(); len];
        let idem = probability_vote(&same).unwrap();
        for (a, b) in idem.probs().iter().zip(posts[0].probs()) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn mv_returns_a_mode_among_inputs(grades in vec(0usize..6, 1..30)) {
        let g = majority_vote(&grades, 6).unwrap();
        prop_assert!(grades.contains(&g));
        let count = |x: usize| grades.iter().filter(|&&v| v == x).count();
        let best = (0..6).map(count).max().unwrap();
        prop_assert_eq!(count(g), best);
        prop_assert!((g + 1..6).all(|h| count(h) < best));
    }

    #[test]
    fn mae_is_symmetric(pairs in vec((0usize..5, 0usize..5), 1..50)) {
        let (a, b): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
        prop_assert_eq!(mae_grades(&a, &b).unwrap(), mae_grades(&b, &a).unwrap());
        let af: Vec<f64> = a.iter().map(|&v| v as f64 + 0.25).collect();
        let bf: Vec<f64> = b.iter().map(|&v| v as f64).collect();
        prop_assert_eq!(mae(&af, &bf).unwrap(), mae(&bf, &af).unwrap());
        if a == b {
            prop_assert_eq!(mae_grades(&a, &b).unwrap(), 0.0);
        }
    }
}

fn dataset_strategy() -> impl Strategy<Value = (FeatureDataset, bool)> {
    (1usize..5, 1usize..6, any::<bool>()).prop_flat_map(|(dim, bags, labeled)| {
        let feature = prop_oneof![-1e6f64..1e6, -1.0f64..1.0, Just(0.0), Just(-0.0), Just(f64::MIN_POSITIVE)];
        let patch = (vec(feature, dim), 0usize..4);
        vec(vec(patch, 1..4), bags).prop_map(move |bags| {
            let mut records = Vec::new();
            for (b, patches) in bags.into_iter().enumerate() {
                for (p, (features, label)) in patches.into_iter().enumerate() {
                    records.push(PatchRecord {
                        bag_id: format!("bag-{b}"),
                        patch_id: format!("p_{p}"),
                        label: labeled.then_some(label),
                        features,
                    });
                }
            }
            (FeatureDataset::new(dim, 4, records).unwrap(), labeled)
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn csv_round_trip_is_exact((ds, labeled) in dataset_strategy()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        save_csv(&ds, &path).unwrap();
        let back = if labeled { load_csv(&path, 4) } else { load_csv_unlabeled(&path, 4) }.unwrap();
        prop_assert_eq!(back.records().len(), ds.records().len());
        for (a, b) in ds.records().iter().zip(back.records()) {
            prop_assert_eq!(&a.bag_id, &b.bag_id);
            prop_assert_eq!(&a.patch_id, &b.patch_id);
            prop_assert_eq!(a.label, b.label);
            let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(&a.features), bits(&b.features));
        }
    }
}
