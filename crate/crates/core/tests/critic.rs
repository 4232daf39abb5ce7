mod common;

use dfda::autodiff::{finite_difference_check_many, Graph, NodeId, Tensor};
use dfda::critic::{
    adversarial_loss, kl_gaussian, kl_loss, two_means, w1_gaussian, w1_loss, w2, w2_squared, CriticError,
    CriticWeights, MeanStd,
};
use dfda::deepem::GmmParamsNode;
use proptest::prelude::*;
use rand::Rng;
use statrs::distribution::{ContinuousCDF, Normal};

#[test]
fn kl_of_unit_and_wide_normal() {
    let kl = kl_gaussian(MeanStd::new(0.0, 1.0), MeanStd::new(0.0, 2.0));
    let expected = std::f64::consts::LN_2 - 0.375;
    assert!((kl - expected).abs() <= 1e-9, "{kl} vs {expected}");
    assert!((kl - 0.318147).abs() < 1e-6);
}

#[test]
fn w2_squared_is_plain_arithmetic() {
    // Dyadic inputs make every step exact.
    assert_eq!(w2_squared(MeanStd::new(1.5, 0.25), MeanStd::new(0.5, 0.75)), 1.25);
    let mut rng = common::rng(40);
    for _ in 0..200 {
        let a = MeanStd::new(rng.random_range(0.0..1.0), rng.random_range(1e-3..0.5));
        let b = MeanStd::new(rng.random_range(0.0..1.0), rng.random_range(1e-3..0.5));
        let expected = (a.mean - b.mean).powi(2) + (a.std - b.std).powi(2);
        assert_eq!(w2_squared(a, b), expected);
        assert_eq!(w2_squared(a, b), w2_squared(b, a));
        assert_eq!(w2(a, a), 0.0);
    }
}

/// `∫₀¹ |F_p⁻¹(u) − F_q⁻¹(u)| du`, split where the integrand changes sign.
fn w1_by_quadrature(p: MeanStd, q: MeanStd) -> f64 {
    let std_normal = Normal::new(0.0, 1.0).unwrap();
    let (a, b) = (p.mean - q.mean, p.std - q.std);
    let diff = |u: f64| (a + b * std_normal.inverse_cdf(u)).abs();
    if b == 0.0 {
        return a.abs();
    }
    let kink = std_normal.cdf(-a / b);
    common::tanh_sinh(diff, 0.0, kink) + common::tanh_sinh(diff, kink, 1.0)
}

#[test]
fn w1_matches_quantile_integration() {
    let mut rng = common::rng(41);
    for case in 0..100 {
        let p = MeanStd::new(rng.random_range(-1.0..1.0), rng.random_range(0.01..1.0));
        let q = MeanStd::new(rng.random_range(-1.0..1.0), rng.random_range(0.01..1.0));
        let closed = w1_gaussian(p, q);
        let numeric = w1_by_quadrature(p, q);
        assert!((closed - numeric).abs() <= 1e-6, "case {case}: {closed} vs {numeric}");
    }
    // Equal spreads reduce to the mean gap.
    assert_eq!(w1_gaussian(MeanStd::new(0.25, 0.1), MeanStd::new(0.75, 0.1)), 0.5);
}

/// Leaf-backed mixture parameters: means then stds, for source and target.
fn params_node(g: &mut Graph, ids: &[NodeId]) -> GmmParamsNode {
    let w = g.constant(Tensor::matrix(1, 1, vec![0.5]).unwrap());
    GmmParamsNode {
        weight: [w, w],
        mean: [ids[0], ids[1]],
        std: [ids[2], ids[3]],
        order: [0, 1],
    }
}

type Loss = fn(&mut Graph, &GmmParamsNode, &GmmParamsNode, CriticWeights) -> Result<NodeId, CriticError>;

fn gradcheck_loss(loss: Loss, seed: u64) {
    let mut rng = common::rng(seed);
    for case in 0..20 {
        let mut leaves = Vec::new();
        for _ in 0..2 {
            for lo_hi in [(0.0, 0.4), (0.6, 1.0)] {
                leaves.push(rng.random_range(lo_hi.0..lo_hi.1));
            }
            for _ in 0..2 {
                leaves.push(rng.random_range(0.05..0.3));
            }
        }
        let params: Vec<Tensor> = leaves.iter().map(|&v| Tensor::matrix(1, 1, vec![v]).unwrap()).collect();
        let weights = CriticWeights::new(0.3, 0.7).unwrap();
        let report = finite_difference_check_many(
            |g, ids| {
                let s = params_node(g, &ids[..4]);
                let t = params_node(g, &ids[4..]);
                let l = loss(g, &s, &t, weights).map_err(|e| match e {
                    CriticError::Autodiff(a) => a,
                    other => panic!("{other}"),
                })?;
                g.sum(l)
            },
            &params,
            common::FD_STEP,
            common::FD_TOL,
        )
        .unwrap();
        assert!(report.passed, "case {case}: {:e}", report.max_rel_error);
    }
}

#[test]
fn w2_loss_gradients() {
    gradcheck_loss(adversarial_loss, 50);
}

#[test]
fn kl_loss_gradients() {
    gradcheck_loss(kl_loss, 51);
}

#[test]
fn w1_loss_gradients() {
    gradcheck_loss(w1_loss, 52);
}

#[test]
fn weighted_loss_matches_scalar_forms() {
    let mut g = Graph::new();
    let vals = [0.1, 0.8, 0.05, 0.1, 0.2, 0.9, 0.07, 0.15];
    let ids: Vec<NodeId> = vals.iter().map(|&v| g.constant(Tensor::matrix(1, 1, vec![v]).unwrap())).collect();
    let s = params_node(&mut g, &ids[..4]);
    let t = params_node(&mut g, &ids[4..]);
    let w = CriticWeights::new(0.25, 0.75).unwrap();
    let lo = (MeanStd::new(0.1, 0.05), MeanStd::new(0.2, 0.07));
    let hi = (MeanStd::new(0.8, 0.1), MeanStd::new(0.9, 0.15));
    let cases: [(Loss, fn(MeanStd, MeanStd) -> f64); 3] =
        [(adversarial_loss, w2_squared), (kl_loss, kl_gaussian), (w1_loss, w1_gaussian)];
    for (loss, scalar) in cases {
        let l = loss(&mut g, &s, &t, w).unwrap();
        let expected = 0.25 * scalar(lo.0, lo.1) + 0.75 * scalar(hi.0, hi.1);
        assert!((g.scalar_value(l) - expected).abs() < 1e-14);
    }
}

#[test]
fn two_means_separates_clusters() {
    let xs = [0.05, 0.1, 0.12, 0.08, 0.9, 0.95, 0.85];
    let km = two_means(&xs).unwrap();
    assert_eq!(km.assignments, vec![0, 0, 0, 0, 1, 1, 1]);
    assert!((km.centers[0] - 0.0875).abs() < 1e-15);
    assert!((km.centers[1] - 0.9).abs() < 1e-15);
    assert!(matches!(two_means(&[0.3, 0.3, 0.3]), Err(CriticError::TooFewDistinct)));
    assert!(matches!(two_means(&[0.3]), Err(CriticError::TooFewDistinct)));
}

#[test]
fn bad_weights_rejected() {
    assert!(CriticWeights::new(-0.1, 0.5).is_err());
    assert!(CriticWeights::new(0.0, 0.0).is_err());
    assert!(CriticWeights::new(f64::NAN, 0.5).is_err());
    assert!(CriticWeights::new(0.0, 1.0).is_ok());
}

fn normal() -> impl Strategy<Value = MeanStd> {
    (-2.0f64..2.0, 1e-3f64..2.0).prop_map(|(m, s)| MeanStd::new(m, s))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn w2_satisfies_triangle_inequality(a in normal(), b in normal(), c in normal()) {
        prop_assert!(w2(a, c) <= w2(a, b) + w2(b, c) + 1e-12);
    }

    #[test]
    fn kl_is_nonnegative(a in normal(), b in normal()) {
        prop_assert!(kl_gaussian(a, b) >= -1e-12);
        prop_assert!(kl_gaussian(a, a).abs() < 1e-12);
    }

    #[test]
    fn w1_bounded_by_w2(a in normal(), b in normal()) {
        let w1 = w1_gaussian(a, b);
        prop_assert!(w1 >= -1e-12);
        prop_assert!(w1 <= w2(a, b) + 1e-12);
        prop_assert!(w1 >= (a.mean - b.mean).abs() - 1e-12);
    }
}
