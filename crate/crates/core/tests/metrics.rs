//! Weighted metrics against a brute-force implementation (pairwise AUC,
//! explicit per-class counting) plus invariance properties.

use mimofuse::eval::{compute_metrics, roc_auc};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

mod common;
use common::metrics::{oracle, random_problem};

fn close(a: f64, b: f64) -> bool {
    (a.is_nan() && b.is_nan()) || (a - b).abs() <= 1e-9
}

#[test]
fn metrics_match_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    for case in 0..300 {
        let (probs, labels, k) = random_problem(&mut rng);
        let got = compute_metrics(&probs, &labels, k).unwrap();
        let want = oracle(&probs, &labels, k);
        assert!(close(got.weighted_f1, want.f1), "case {case}: f1 {} vs {}", got.weighted_f1, want.f1);
        assert!(close(got.weighted_sensitivity, want.sens), "case {case}: sensitivity");
        assert!(close(got.weighted_specificity, want.spec), "case {case}: specificity");
        assert!(close(got.weighted_auc, want.auc), "case {case}: auc {} vs {}", got.weighted_auc, want.auc);
    }
}

#[test]
fn perfect_and_chance_classifiers() {
    let labels: Vec<usize> = (0..50).map(|i| i % 5).collect();
    let perfect: Vec<Vec<f64>> = labels
        .iter()
        .map(|&y| (0..5).map(|j| if j == y { 0.9 } else { 0.025 }).collect())
        .collect();
    let m = compute_metrics(&perfect, &labels, 5).unwrap();
    for v in [m.weighted_f1, m.weighted_sensitivity, m.weighted_specificity, m.weighted_auc] {
        assert_eq!(v, 100.0);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let labels: Vec<usize> = (0..20_000).map(|i| i % 2).collect();
    let probs: Vec<Vec<f64>> = labels
        .iter()
        .map(|_| {
            let p: f64 = rng.random();
            vec![p, 1.0 - p]
        })
        .collect();
    let m = compute_metrics(&probs, &labels, 2).unwrap();
    for v in [m.weighted_f1, m.weighted_sensitivity, m.weighted_specificity, m.weighted_auc] {
        assert!((v - 50.0).abs() < 2.0, "{v}");
    }
}

#[test]
fn auc_without_both_classes_is_undefined() {
    assert_eq!(roc_auc(&[0.1, 0.2], &[true, true]), None);
    let m = compute_metrics(&[vec![0.7, 0.3], vec![0.6, 0.4]], &[0, 0], 2).unwrap();
    assert!(m.weighted_auc.is_nan());
    let json = serde_json::to_string(&m).unwrap();
    assert!(json.contains("\"weighted_auc\":null"));
    let back: mimofuse::eval::MetricsReport = serde_json::from_str(&json).unwrap();
    assert!(back.weighted_auc.is_nan());
}

fn problem() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<usize>)> {
    (2usize..5, 2usize..40).prop_flat_map(|(k, n)| {
        (
            prop::collection::vec(prop::collection::vec(0.0f64..1.0, k), n),
            prop::collection::vec(0..k, n),
        )
    })
}

proptest! {
    #[test]
    fn invariant_to_item_order((probs, labels) in problem(), seed in any::<u64>()) {
        let k = probs[0].len();
        let mut order: Vec<usize> = (0..labels.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..order.len()).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        let p2: Vec<Vec<f64>> = order.iter().map(|&i| probs[i].clone()).collect();
        let l2: Vec<usize> = order.iter().map(|&i| labels[i]).collect();
        let a = compute_metrics(&probs, &labels, k).unwrap();
        let b = compute_metrics(&p2, &l2, k).unwrap();
        prop_assert!(close(a.weighted_f1, b.weighted_f1));
        prop_assert!(close(a.weighted_specificity, b.weighted_specificity));
        prop_assert!(close(a.weighted_auc, b.weighted_auc));
    }

    #[test]
    fn weighted_sensitivity_equals_accuracy((probs, labels) in problem()) {
        let m = compute_metrics(&probs, &labels, probs[0].len()).unwrap();
        prop_assert!((m.weighted_sensitivity - m.accuracy).abs() <= 1e-9);
    }

    #[test]
    fn auc_invariant_under_monotone_maps((probs, labels) in problem()) {
        let k = probs[0].len();
        let mapped: Vec<Vec<f64>> = probs.iter().map(|p| p.iter().map(|v| (3.0 * v).exp() + 1.0).collect()).collect();
        let a = compute_metrics(&probs, &labels, k).unwrap();
        let b = compute_metrics(&mapped, &labels, k).unwrap();
        prop_assert!(close(a.weighted_auc, b.weighted_auc));
        prop_assert!(close(a.weighted_f1, b.weighted_f1));
    }
}
