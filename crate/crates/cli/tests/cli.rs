use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn gradleak(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gradleak"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SYNTH: &str = r#"{"num_samples": 400, "shape": [12], "num_classes": 2, "class_strength": 2.0,
 "noise_std": 1.0, "seed": 3, "properties": [{"name": "p", "signal_strength": 3.0}]}"#;

const TRAIN: &str = r#"{"model": {"preset": "fcnet"}, "fl": {"rounds": 20, "snapshot_every": 10},
 "stratify_by": "p"}"#;

const EXPERIMENT: &str = r#"{
  "seed": 11,
  "trials": 2,
  "data": {"source": "synthetic", "config": {"num_samples": 400, "shape": [12], "num_classes": 2,
    "noise_std": 1.0, "seed": 0,
    "properties": [{"name": "p", "signal_strength": 3.0}, {"name": "q", "signal_strength": 0.0}]}},
  "model": {"preset": "fcnet"},
  "fl": {"rounds": 20, "snapshot_every": 10},
  "properties": ["p", "q"],
  "attack": {"batches_per_snapshot": 8},
  "metrics": {"sensitivity_samples": 16},
  "correlation": {"permutations": 1000}
}"#;

fn csv_rows(path: &Path) -> Vec<String> {
    fs::read_to_string(path).unwrap().lines().map(str::to_string).collect()
}

#[test]
fn staged_pipeline_writes_every_table() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("synth.json"), SYNTH).unwrap();
    fs::write(d.join("train.json"), TRAIN).unwrap();

    let o = gradleak(&["datagen", "--config", "synth.json", "--out", "data.fldata"], d);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = gradleak(&["train", "--config", "train.json", "--data", "data.fldata", "--out", "run"], d);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(d.join("run/manifest.json").exists());
    assert!(d.join("run/snapshots/round_20.flsnap").exists());

    let target = ["--snapshots", "run", "--data", "data.fldata"];
    let mut args = vec!["attack"];
    args.extend(target);
    args.extend(["--property", "p", "--layers", "0,1,8", "--out", "attack.csv"]);
    let o = gradleak(&args, d);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = csv_rows(&d.join("attack.csv"));
    assert_eq!(rows[0], "layer_index,property,auc,train_ce_nats,n_train,n_eval,family,seed");
    assert_eq!(rows.len(), 4);

    let mut args = vec!["measure", "sensitivity"];
    args.extend(target);
    args.extend(["--samples", "10", "--norms", "F,inf", "--out", "metrics.csv"]);
    let o = gradleak(&args, d);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = csv_rows(&d.join("metrics.csv"));
    assert_eq!(
        rows[0],
        "layer_index,layer_kind,metric_name,norm,value,num_samples,skipped_degenerate,family,seed"
    );
    assert_eq!(rows.len(), 1 + 9 * 2);

    let mut args = vec!["measure", "vinfo"];
    args.extend(target);
    args.extend(["--property", "p", "--out", "vinfo.csv"]);
    let o = gradleak(&args, d);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(csv_rows(&d.join("vinfo.csv")).len(), 1 + 9);

    let o = gradleak(
        &["report", "--metrics", "metrics.csv", "--attack", "attack.csv", "--permutations", "1000", "--out-dir", "rep"],
        d,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = csv_rows(&d.join("rep/correlations.csv"));
    assert!(rows[0].starts_with("property,metric,norm,r,p_value,delta_r"));
    assert_eq!(rows.len(), 3);
}

#[test]
fn run_is_byte_identical_across_executions() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("exp.json"), EXPERIMENT).unwrap();
    for out in ["a", "b"] {
        let o = gradleak(&["run", "--config", "exp.json", "--out-dir", out], d);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    for f in ["summary.csv", "correlations.csv", "metrics.csv", "attack.csv", "report.json"] {
        let a = fs::read(d.join("a").join(f)).unwrap();
        let b = fs::read(d.join("b").join(f)).unwrap();
        assert!(!a.is_empty());
        assert_eq!(a, b, "{f} differs");
    }

    // The manifest alone reproduces the report.
    let o = gradleak(&["run", "--config", "a/manifest.json", "--out-dir", "c"], d);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        fs::read(d.join("a/summary.csv")).unwrap(),
        fs::read(d.join("c/summary.csv")).unwrap()
    );

    // A different seed changes the results.
    let o = gradleak(&["run", "--config", "exp.json", "--seed", "12", "--out-dir", "e"], d);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_ne!(
        fs::read(d.join("a/attack.csv")).unwrap(),
        fs::read(d.join("e/attack.csv")).unwrap()
    );
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("bad.json"), EXPERIMENT.replace("\"trials\"", "\"trails\"")).unwrap();
    let o = gradleak(&["run", "--config", "bad.json"], d);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("trails"));

    let o = gradleak(&["run"], d);
    assert_eq!(o.status.code(), Some(2));

    fs::write(d.join("preset.json"), EXPERIMENT.replace("fcnet", "resnet")).unwrap();
    let o = gradleak(&["run", "--config", "preset.json"], d);
    assert_eq!(o.status.code(), Some(2));

    let o = gradleak(&["frobnicate"], d);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_with_three_and_name_the_stage() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("train.json"), TRAIN).unwrap();
    let o = gradleak(&["train", "--config", "train.json", "--data", "missing.fldata"], d);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("train:"), "{}", stderr(&o));

    let o = gradleak(
        &["attack", "--snapshots", "nowhere", "--data", "missing.fldata", "--property", "p"],
        d,
    );
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("attack:"), "{}", stderr(&o));
}
