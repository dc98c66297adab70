mod common;

use common::*;
use gradleak_core::attack::auc;
use gradleak_core::datagen::{generate_with_directions, LabeledDataset, PropertySpec, SynthConfig};
use gradleak_core::fedsim::partition;
use gradleak_core::metrics::{normalized_sensitivity_profile, v_information, EvalMode, Norm, PredictiveFamily, PropertySample, VInfoOptions};
use gradleak_core::report::{delta_r, pearson};
use gradleak_core::Tensor;
use proptest::collection::vec;
use proptest::prelude::*;
use std::collections::BTreeMap;

fn scored_labels() -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
    (2usize..=500).prop_flat_map(|n| {
        (
            prop_oneof![
                vec(-1.0f64..1.0, n),
                vec((0u8..6).prop_map(f64::from), n),
            ],
            vec(0u8..2, n),
        )
            .prop_map(|(s, mut l)| {
                l[0] = 0;
                l[1] = 1;
                (s, l)
            })
    })
}

fn spread(n: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = Vec<f64>> {
    n.prop_flat_map(|n| vec(-10.0f64..10.0, n)).prop_filter("non-constant", |v| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|x| (x - m).powi(2)).sum::<f64>() > 1e-3
    })
}

fn nonzero() -> impl Strategy<Value = f64> {
    prop_oneof![0.1f64..10.0, -10.0f64..-0.1]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn auc_equals_pairwise_count((scores, labels) in scored_labels()) {
        prop_assert_eq!(auc(&scores, &labels).unwrap(), pairwise_auc(&scores, &labels));
    }

    #[test]
    fn auc_flips_with_labels_and_ignores_monotone_maps((scores, labels) in scored_labels()) {
        let a = auc(&scores, &labels).unwrap();
        let flipped: Vec<u8> = labels.iter().map(|l| 1 - l).collect();
        prop_assert!((auc(&scores, &flipped).unwrap() - (1.0 - a)).abs() <= 1e-15);
        let mapped: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() + 1.0).collect();
        prop_assert_eq!(auc(&mapped, &labels).unwrap(), a);
    }

    #[test]
    fn pearson_affine_invariance(
        (xs, ys) in (3usize..40).prop_flat_map(|n| (spread(n..=n), spread(n..=n))),
        a in nonzero(), b in -10.0f64..10.0, c in nonzero(), d in -10.0f64..10.0,
    ) {
        let r = pearson(&xs, &ys).unwrap();
        let xa: Vec<f64> = xs.iter().map(|x| a * x + b).collect();
        let yc: Vec<f64> = ys.iter().map(|y| c * y + d).collect();
        let r2 = pearson(&xa, &yc).unwrap();
        prop_assert!((r2 - (a * c).signum() * r).abs() <= 1e-12, "{} vs {}", r2, r);
        prop_assert!((-1.0..=1.0).contains(&r));
    }

    #[test]
    fn delta_r_is_antisymmetric(a in -1.0f64..=1.0, b in -1.0f64..=1.0) {
        prop_assert_eq!(delta_r(a, b), -delta_r(b, a));
        prop_assert_eq!(delta_r(a, a), 0.0);
    }

    #[test]
    fn normalized_profile_keeps_order(values in spread(2..=12)) {
        let p = normalized_sensitivity_profile(&values).unwrap();
        let argmax = |v: &[f64]| v.iter().enumerate().fold(0, |best, (i, x)| if *x > v[best] { i } else { best });
        prop_assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert_eq!(p[argmax(&values)], 1.0);
        prop_assert_eq!(argmax(&p), argmax(&values));
        for i in 0..values.len() {
            for j in 0..values.len() {
                if values[i] < values[j] {
                    prop_assert!(p[i] <= p[j]);
                }
            }
        }
    }

    #[test]
    fn psi_identities_hold(n in 1usize..100_000) {
        let f = Norm::Frobenius.psi(n);
        prop_assert!((f * f * Norm::Inf.psi(n) - n as f64).abs() <= 1e-9 * n as f64);
        prop_assert!((Norm::One.psi(n) - f * f).abs() <= 1e-9 * n as f64);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn backward_linearity(seed in any::<u64>(), which in 0usize..3) {
        let (_, spec) = &layer_kind_specs()[which];
        prop_assert!(linearity_abs_error(spec, seed) <= 1e-12);
    }

    #[test]
    fn partitions_are_disjoint_and_balanced(n in 1usize..300, clients in 1usize..8, seed in any::<u64>()) {
        prop_assume!(clients <= n);
        let inputs = Tensor::new(vec![n, 1], (0..n).map(|i| i as f64).collect()).unwrap();
        let ds = LabeledDataset::new(inputs, vec![0; n], 2, BTreeMap::new()).unwrap();
        let parts = partition(&ds, clients, seed).unwrap();
        let mut all: Vec<usize> = parts.iter().flat_map(|c| c.indices.clone()).collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        let sizes: Vec<usize> = parts.iter().map(|c| c.len()).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }

    #[test]
    fn planted_directions_are_orthogonal(seed in any::<u64>(), classes in 2usize..5, props in 1usize..4) {
        let cfg = SynthConfig {
            num_samples: 8,
            shape: vec![16],
            num_classes: classes,
            class_strength: 1.0,
            properties: (0..props)
                .map(|i| PropertySpec { name: format!("p{i}"), signal_strength: 1.0, correlation_with_main: 0.0 })
                .collect(),
            noise_std: 1.0,
            seed,
        };
        let (_, dirs) = generate_with_directions(&cfg).unwrap();
        for i in 0..dirs.len() {
            for j in 0..dirs.len() {
                let dot: f64 = dirs[i].iter().zip(&dirs[j]).map(|(a, b)| a * b).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                prop_assert!((dot - want).abs() <= 1e-10);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn in_sample_v_information_is_non_negative(seed in any::<u64>(), shift in 0.0f64..2.0) {
        let mut r = gradleak_core::rng::rng(seed);
        use rand::Rng;
        let samples: Vec<PropertySample> = (0..60)
            .map(|i| {
                let p = (i % 2) as u8;
                let f = (0..4).map(|_| r.random_range(-1.0..1.0) + shift * f64::from(p)).collect();
                PropertySample::new(f, p)
            })
            .collect();
        let opts = VInfoOptions { mode: EvalMode::InSample, ..VInfoOptions::default() };
        for family in [PredictiveFamily::constant(), PredictiveFamily::logistic()] {
            let v = v_information(&samples, &family, opts, seed).unwrap();
            prop_assert!(v.v_info_nats >= -1e-9, "{}", v.v_info_nats);
        }
    }
}
