mod common;

use dfda::autodiff::Tensor;
use dfda::metrics::{average_precision, evaluate, prediction_histogram, HISTOGRAM_BINS};
use proptest::prelude::*;

#[test]
fn fixture_matches_brute_force_exactly() {
    let (pred, labels) = common::metrics_fixture();
    for tau in [0.3, 0.5, 0.7] {
        let r = evaluate(&common::to_tensor(&pred), &common::labels_tensor(&labels), tau).unwrap();
        let oracle = common::brute_force_metrics(&pred, &labels, tau);
        let got = [r.map, r.cp, r.cr, r.cf1, r.op, r.or_, r.of1];
        for (name, (a, b)) in ["mAP", "CP", "CR", "CF1", "OP", "OR", "OF1"].iter().zip(got.iter().zip(oracle)) {
            assert_eq!(*a, b, "{name} at tau {tau}");
        }
    }
}

#[test]
fn worked_three_element_ap() {
    // Ranked: positive, negative, positive.
    let ap = average_precision(&[0.9, 0.8, 0.3], &[1.0, 0.0, 1.0]).unwrap().unwrap();
    assert!((ap - 5.0 / 6.0).abs() < 1e-15);
}

#[test]
fn pooled_precision_identity() {
    // OP·(TP+FP) = TP with counts taken independently.
    let (pred, labels) = common::metrics_fixture();
    let r = evaluate(&common::to_tensor(&pred), &common::labels_tensor(&labels), 0.5).unwrap();
    let (mut tp, mut fp) = (0.0, 0.0);
    for (p, l) in pred.iter().flatten().zip(labels.iter().flatten()) {
        if *p > 0.5 {
            if *l == 1 {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
        }
    }
    assert!((r.op * (tp + fp) - tp).abs() < 1e-12);
}

#[test]
fn class_without_positives_is_excluded() {
    let pred = vec![vec![0.9, 0.2], vec![0.1, 0.8]];
    let with = evaluate(&common::to_tensor(&pred), &Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 0.0]).unwrap(), 0.5).unwrap();
    assert_eq!(with.map, 1.0);
    assert_eq!(with.cp, 1.0);
    // The empty class still adds a pooled false positive.
    assert_eq!(with.op, 0.5);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn ap_invariant_under_monotone_rescaling(
        rows in prop::collection::vec((0.0f64..1.0, any::<bool>()), 2..40),
    ) {
        prop_assume!(rows.iter().any(|r| r.1));
        let scores: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let cubed: Vec<f64> = scores.iter().map(|s| s.powi(3)).collect();
        let labels: Vec<f64> = rows.iter().map(|r| f64::from(u8::from(r.1))).collect();
        // Cubing can merge distinct tiny scores, so only compare when the
        // ordering is preserved strictly.
        let distinct = |v: &[f64]| {
            let mut s = v.to_vec();
            s.sort_by(f64::total_cmp);
            s.dedup();
            s.len()
        };
        prop_assume!(distinct(&scores) == distinct(&cubed));
        let a = average_precision(&scores, &labels).unwrap().unwrap();
        let b = average_precision(&cubed, &labels).unwrap().unwrap();
        prop_assert_eq!(a, b);
        prop_assert!(a > 0.0 && a <= 1.0);
    }

    #[test]
    fn histogram_conserves_count(values in prop::collection::vec(-0.5f64..1.5, 0..300)) {
        let h = prediction_histogram(&values);
        prop_assert_eq!(h.counts().len(), HISTOGRAM_BINS);
        prop_assert_eq!(h.total(), values.len() as u64);
        let csv = h.to_csv();
        let summed: u64 = csv.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse::<u64>().unwrap()).sum();
        prop_assert_eq!(summed, values.len() as u64);
    }

    #[test]
    fn metrics_lie_in_unit_interval(
        data in prop::collection::vec((0.0f64..1.0, any::<bool>()), 12),
        tau in 0.05f64..0.95,
    ) {
        let pred: Vec<Vec<f64>> = data.chunks(3).map(|c| c.iter().map(|r| r.0).collect()).collect();
        let mut labels: Vec<Vec<u8>> = data.chunks(3).map(|c| c.iter().map(|r| u8::from(r.1)).collect()).collect();
        labels[0][0] = 1;
        let r = evaluate(&common::to_tensor(&pred), &common::labels_tensor(&labels), tau).unwrap();
        for v in [r.map, r.cp, r.cr, r.cf1, r.op, r.or_, r.of1] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        let oracle = common::brute_force_metrics(&pred, &labels, tau);
        prop_assert_eq!([r.map, r.cp, r.cr, r.cf1, r.op, r.or_, r.of1], oracle);
    }
}
