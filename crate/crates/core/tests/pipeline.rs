use std::fs;

use gradleak_core::attack::{attack_layers, collect_gradient_samples, AttackConfig};
use gradleak_core::datagen::{generate, split_indices, PropertySpec, SynthConfig};
use gradleak_core::fedsim::{train, FLConfig};
use gradleak_core::nn::{build_model, model_zoo};
use gradleak_core::report::{load_experiment, run_experiment, write_report, ExperimentConfig, REPORT_FILES};

fn tiny(trials: usize) -> ExperimentConfig {
    let text = format!(
        r#"{{
  "seed": 5, "trials": {trials},
  "data": {{"source": "synthetic", "config": {{"num_samples": 500, "shape": [12], "num_classes": 2,
    "noise_std": 1.0, "seed": 0,
    "properties": [{{"name": "a", "signal_strength": 3.0}}, {{"name": "b", "signal_strength": 0.0}}]}}}},
  "model": {{"preset": "fcnet"}},
  "fl": {{"rounds": 20, "snapshot_every": 10}},
  "properties": ["a", "b"],
  "attack": {{"batches_per_snapshot": 8}},
  "metrics": {{"sensitivity_samples": 12}},
  "correlation": {{"permutations": 1000}}
}}"#
    );
    ExperimentConfig::from_json(&text).unwrap()
}

#[test]
fn single_trial_report_has_a_row_per_layer_and_metric() {
    let rep = run_experiment(&tiny(1)).unwrap();
    assert_eq!(rep.layers.len(), 9);
    // 3 norms of sensitivity, then v_info and auc for each of 2 properties.
    assert_eq!(rep.summary.len(), 9 * (3 + 2 * 2));
    for layer in 0..9 {
        assert_eq!(rep.summary.iter().filter(|r| r.layer_index == layer).count(), 7);
    }
    assert!(rep.summary.iter().all(|r| r.num_trials == 1));
    assert_eq!(rep.correlations.len(), 2 * (3 + 1));
    for c in &rep.correlations {
        assert!(c.r.is_nan() || (-1.0..=1.0).contains(&c.r));
        assert!(c.p_value.is_nan() || (0.0..=1.0).contains(&c.p_value));
    }
    let base: Vec<_> = rep.correlations.iter().filter(|c| c.property == "a").collect();
    assert!(base.iter().all(|c| c.delta_r == 0.0 || c.r.is_nan()));
}

#[test]
fn repeated_trials_carry_confidence_half_widths() {
    let rep = run_experiment(&tiny(3)).unwrap();
    assert_eq!(rep.trials.len(), 3);
    assert!(rep.summary.iter().all(|r| r.num_trials == 3));
    assert!(rep.summary.iter().all(|r| r.ci_half_width.is_finite() && r.ci_half_width >= 0.0));
    let seeds: Vec<u64> = rep.trials.iter().map(|t| t.seed).collect();
    assert_eq!(seeds, rep.manifest.trial_seeds);
}

#[test]
fn reports_are_byte_identical_and_reproducible_from_the_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(2);
    write_report(&dir.path().join("a"), &run_experiment(&cfg).unwrap()).unwrap();
    write_report(&dir.path().join("b"), &run_experiment(&cfg).unwrap()).unwrap();
    let manifest = fs::read_to_string(dir.path().join("a/manifest.json")).unwrap();
    let again = load_experiment(&manifest).unwrap();
    write_report(&dir.path().join("c"), &run_experiment(&again).unwrap()).unwrap();
    for f in REPORT_FILES {
        let a = fs::read(dir.path().join("a").join(f)).unwrap();
        assert_eq!(a, fs::read(dir.path().join("b").join(f)).unwrap(), "{f}");
        assert_eq!(a, fs::read(dir.path().join("c").join(f)).unwrap(), "{f}");
    }
}

fn fcnet_setup(signal: f64) -> (gradleak_core::fedsim::SnapshotLog, gradleak_core::datagen::LabeledDataset, gradleak_core::datagen::LabeledDataset) {
    let data = generate(&SynthConfig {
        num_samples: 3000,
        shape: vec![16],
        num_classes: 2,
        class_strength: 2.0,
        properties: vec![PropertySpec {
            name: "p".into(),
            signal_strength: signal,
            correlation_with_main: 0.0,
        }],
        noise_std: 1.0,
        seed: 21,
    })
    .unwrap();
    let parts = split_indices(&data, &[0.3, 0.7], 22, Some("p")).unwrap();
    let fl_data = data.subset(&parts[1]);
    let model = build_model(&model_zoo("fcnet", &[16], 2).unwrap(), 23).unwrap();
    let cfg = FLConfig {
        rounds: 90,
        snapshot_every: 10,
        seed: 24,
        ..FLConfig::default()
    };
    let log = train(&cfg, &model, &fl_data).unwrap();
    let victim = fl_data.subset(&log.partitions[0]);
    (log, data.subset(&parts[0]), victim)
}

#[test]
fn gradient_sample_counts_follow_snapshots_and_batches() {
    let (log, aux, _) = fcnet_setup(3.0);
    assert_eq!(log.snapshots.len(), 10);
    let cfg = AttackConfig {
        layers: Some(vec![0, 8]),
        batches_per_snapshot: 20,
        ..AttackConfig::new("p")
    };
    let s = collect_gradient_samples(&log, &aux, &cfg).unwrap();
    for layer in &s.samples {
        assert_eq!(layer.len(), 200);
        assert_eq!(layer.iter().filter(|x| x.property == 1).count(), 100);
    }
    assert_eq!(s.samples[0][0].features.len(), 16 * 32);
}

#[test]
fn strong_property_is_recovered_from_the_first_layer() {
    let (log, aux, victim) = fcnet_setup(3.0);
    let cfg = AttackConfig {
        layers: Some(vec![0]),
        batches_per_snapshot: 40,
        ..AttackConfig::new("p")
    };
    let r = attack_layers(&log, &aux, &victim, &cfg).unwrap();
    assert!(r.outcomes[0].auc >= 0.95, "{}", r.outcomes[0].auc);
}

#[test]
fn shuffled_labels_give_chance_auc() {
    let (log, aux, victim) = fcnet_setup(3.0);
    let mut aucs: Vec<f64> = (0..7)
        .map(|seed| {
            let cfg = AttackConfig {
                layers: Some(vec![0]),
                batches_per_snapshot: 40,
                shuffle_labels: true,
                seed,
                ..AttackConfig::new("p")
            };
            attack_layers(&log, &aux, &victim, &cfg).unwrap().outcomes[0].auc
        })
        .collect();
    aucs.sort_by(f64::total_cmp);
    assert!((aucs[3] - 0.5).abs() <= 0.05, "{aucs:?}");
}
