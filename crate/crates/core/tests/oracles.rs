mod common;

use common::*;
use gradleak_core::attack::auc;
use gradleak_core::metrics::{jacobian_of_gradients, sensitivity, Norm, OutputSide};
use gradleak_core::nn::{build_model, forward, layer_gradient, loss_softmax_ce, model_zoo};
use gradleak_core::rng;
use rand::Rng;

#[test]
fn analytic_gradients_match_finite_differences() {
    for (kind, spec) in layer_kind_specs() {
        for seed in 0..10 {
            let e = gradcheck_rel_error(&spec, seed);
            assert!(e <= 1e-6, "{kind} seed {seed}: relative error {e:e}");
        }
    }
}

#[test]
fn jacobian_columns_match_seed_finite_differences() {
    for (kind, spec) in layer_kind_specs() {
        for seed in 0..10 {
            let e = jacobian_fd_rel_error(&spec, seed);
            assert!(e <= 1e-8, "{kind} seed {seed}: relative error {e:e}");
        }
    }
}

#[test]
fn backward_is_linear_in_the_seed() {
    for (kind, spec) in layer_kind_specs() {
        for seed in 0..10 {
            let e = linearity_abs_error(&spec, seed);
            assert!(e <= 1e-12, "{kind} seed {seed}: deviation {e:e}");
        }
    }
}

#[test]
fn hand_case_jacobian_and_sensitivity() {
    let (m, x) = hand_case_model();
    let j = jacobian_of_gradients(&m, &x, 0, 0, OutputSide::Logits).unwrap();
    // Unit seed e_j at the output leaves x in row j of the weight gradient.
    assert_eq!(j.column(0), vec![1.0, 0.0, 0.0, 0.0]);
    assert_eq!(j.column(1), vec![0.0, 0.0, 1.0, 0.0]);
    // Loss seed (p - y) = (-1/2, 1/2) gives gradient [-1/2, 0, 1/2, 0].
    assert_eq!(j.range, 1.0);
    let f = sensitivity(&m, &x, &[0], 0, Norm::Frobenius).unwrap();
    assert!((f - 2f64.sqrt() / 2.0).abs() <= 1e-12, "{f}");
    let inf = sensitivity(&m, &x, &[0], 0, Norm::Inf).unwrap();
    assert!((inf - 1.0).abs() <= 1e-12, "{inf}");
}

#[test]
fn sensitivity_matches_direct_evaluation() {
    // Rebuild J from seed-side differences and the range from the loss
    // gradient, then evaluate the normalized norms by hand.
    let spec = model_zoo("fcnet", &[8], 2).unwrap();
    let m = build_model(&spec, 4).unwrap();
    let x = random_tensor(&[1, 8], 9);
    let trace = forward(&m, &x).unwrap();
    let (_, loss_seed) = loss_softmax_ce(&trace, &[1]).unwrap();
    for l in [0, 4, 8] {
        let g = layer_gradient(&m, &trace, &loss_seed, l).unwrap().weights.into_data();
        let lo = g.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = g.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let range = hi - lo;
        let n = g.len() as f64;
        let cols: Vec<Vec<f64>> = (0..2)
            .map(|c| {
                let at = |h: f64| {
                    let mut s = loss_seed.clone();
                    s.data_mut()[c] += h;
                    layer_gradient(&m, &trace, &s, l).unwrap().weights.into_data()
                };
                let (up, down) = (at(SEED_STEP), at(-SEED_STEP));
                up.iter().zip(&down).map(|(u, d)| (u - d) / (2.0 * SEED_STEP)).collect()
            })
            .collect();
        let fro = cols.iter().flatten().map(|v| (v / range).powi(2)).sum::<f64>().sqrt() / n.sqrt();
        // The 1- and inf-norms treat the flattened Jacobian as a vector.
        let inf = cols.iter().flatten().map(|v| (v / range).abs()).fold(0.0, f64::max);
        let one = cols.iter().flatten().map(|v| (v / range).abs()).sum::<f64>() / n;
        for (norm, want) in [(Norm::Frobenius, fro), (Norm::Inf, inf), (Norm::One, one)] {
            let got = sensitivity(&m, &x, &[1], l, norm).unwrap();
            assert!((got - want).abs() <= 1e-6 * want, "layer {l} {norm}: {got} vs {want}");
        }
    }
}

#[test]
fn sort_auc_equals_pairwise_on_random_vectors() {
    let mut r = rng::rng(77);
    for _ in 0..1000 {
        let n = r.random_range(2..=500);
        let ties = r.random_bool(0.5);
        let scores: Vec<f64> = (0..n)
            .map(|_| if ties { r.random_range(0..8) as f64 } else { r.random::<f64>() })
            .collect();
        let mut labels: Vec<u8> = (0..n).map(|_| r.random_range(0..2)).collect();
        labels[0] = 0;
        labels[1] = 1;
        assert_eq!(auc(&scores, &labels).unwrap(), pairwise_auc(&scores, &labels));
    }
}

#[test]
fn worked_auc_example() {
    let s = [0.1, 0.4, 0.35, 0.8];
    assert_eq!(pairwise_auc(&s, &[0, 0, 1, 1]), 0.75);
    assert_eq!(auc(&s, &[0, 0, 1, 1]).unwrap(), 0.75);
}
