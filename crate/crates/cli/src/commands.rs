use std::fs;
use std::path::{Path, PathBuf};

use gradleak_core::attack::{attack_from_sets, collect_attack_sets, write_attack_csv, AttackConfig, AttackRow};
use gradleak_core::datagen::{self, split_indices, LabeledDataset, SynthConfig};
use gradleak_core::fedsim::{self, load_log, save_log, FLConfig, SnapshotLog, TrainManifest};
use gradleak_core::metrics::{
    sensitivity_norms, v_information_split, write_metric_csv, EvalMode, MetricRow, Norm, OutputSide,
    PredictiveFamily, VInfoOptions,
};
use gradleak_core::nn::build_model;
use gradleak_core::report::{self, correlate_tables, ModelConfig};
use gradleak_core::{rng, Error, Result};
use serde::Deserialize;

use crate::{Cli, Command, Measure, Target};

fn aux_default() -> f64 {
    0.3
}

/// Config accepted by `train`.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainConfig {
    #[serde(default)]
    seed: u64,
    model: ModelConfig,
    #[serde(default)]
    fl: FLConfig,
    /// Share of the dataset held back as the adversary's auxiliary data.
    #[serde(default = "aux_default")]
    aux_fraction: f64,
    /// Property to stratify the auxiliary split by.
    #[serde(default)]
    stratify_by: Option<String>,
}

pub fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Datagen { out } => datagen(cli, out.as_deref()).map_err(|e| e.in_stage("datagen")),
        Command::Train { data, out } => train(cli, data, out.as_deref()).map_err(|e| e.in_stage("train")),
        Command::Measure { metric } => measure(cli, metric).map_err(|e| e.in_stage("measure")),
        Command::Attack {
            target,
            property,
            family,
            out,
        } => attack(cli, target, property, family, out.as_deref()).map_err(|e| e.in_stage("attack")),
        Command::Report {
            metrics,
            attack,
            permutations,
            baseline,
            out,
        } => correlate(cli, metrics, attack, *permutations, baseline.as_deref(), out.as_deref())
            .map_err(|e| e.in_stage("report")),
        Command::Run => run(cli),
    }
}

fn read_config(cli: &Cli) -> Result<String> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("this subcommand needs --config <json-file>".into()))?;
    fs::read_to_string(path)
        .map_err(|e| Error::InvalidConfig(format!("cannot read config {}: {e}", path.display())))
}

fn output(cli: &Cli, explicit: Option<&Path>, default_name: &str) -> PathBuf {
    explicit.map_or_else(|| cli.out_dir.join(default_name), Path::to_path_buf)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| Error::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    fs::write(path, bytes).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn datagen(cli: &Cli, out: Option<&Path>) -> Result<()> {
    let mut cfg: SynthConfig = serde_json::from_str(&read_config(cli)?)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let ds = datagen::generate(&cfg)?;
    let path = output(cli, out, "dataset.fldata");
    write_file(&path, &datagen::encode_dataset(&ds)?)?;
    log::info!("wrote {} samples to {}", ds.len(), path.display());
    Ok(())
}

fn train(cli: &Cli, data_path: &Path, out: Option<&Path>) -> Result<()> {
    let cfg: TrainConfig = serde_json::from_str(&read_config(cli)?)?;
    if !(0.0..1.0).contains(&cfg.aux_fraction) {
        return Err(Error::InvalidConfig("aux_fraction must be in [0, 1)".into()));
    }
    let seed = cli.seed.unwrap_or(cfg.seed);
    let data = datagen::read_dataset(data_path)?;
    let spec = cfg.model.resolve(data.feature_shape(), data.num_classes)?;

    let (aux_indices, fl_indices) = if cfg.aux_fraction > 0.0 {
        let mut parts = split_indices(
            &data,
            &[cfg.aux_fraction, 1.0 - cfg.aux_fraction],
            rng::derive_str(seed, "aux-split"),
            cfg.stratify_by.as_deref(),
        )?;
        let fl = parts.pop().expect("two parts");
        (parts.pop().expect("two parts"), fl)
    } else {
        (Vec::new(), (0..data.len()).collect())
    };
    let model_seed = rng::derive_str(seed, "model");
    let model = build_model(&spec, model_seed)?;
    let fl = FLConfig {
        seed: rng::derive_str(seed, "fl"),
        ..cfg.fl
    };
    let mut log = fedsim::train(&fl, &model, &data.subset(&fl_indices))?;
    for part in &mut log.partitions {
        for i in part.iter_mut() {
            *i = fl_indices[*i];
        }
    }
    let manifest = TrainManifest {
        config: fl,
        model: spec,
        model_seed,
        rounds: log.rounds(),
        client_partitions: log.partitions.clone(),
        aux_indices,
        data_file: Some(data_path.display().to_string()),
    };
    let dir = out.unwrap_or(&cli.out_dir);
    save_log(dir, &log, &manifest)?;
    let final_model = log.final_model().expect("training keeps the initial snapshot");
    let acc = fedsim::accuracy(final_model, &data.subset(&fl_indices))?;
    println!("trained {} rounds, main-task accuracy {acc:.4}", manifest.config.rounds);
    Ok(())
}

/// Snapshot log plus the auxiliary and victim data it was trained with.
struct Loaded {
    log: SnapshotLog,
    aux: LabeledDataset,
    victim: LabeledDataset,
}

fn load_target(target: &Target) -> Result<Loaded> {
    let (manifest, log) = load_log(&target.snapshots)?;
    let data = datagen::read_dataset(&target.data)?;
    let aux = if manifest.aux_indices.is_empty() {
        data.clone()
    } else {
        data.subset(&manifest.aux_indices)
    };
    let victim = match manifest.client_partitions.first() {
        Some(p) => data.subset(p),
        None => data,
    };
    Ok(Loaded { log, aux, victim })
}

fn parse_layers(spec: &str) -> Result<Option<Vec<usize>>> {
    if spec == "all" {
        return Ok(None);
    }
    spec.split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("bad layer index `{s}`")))
        })
        .collect::<Result<Vec<_>>>()
        .map(Some)
}

fn attack_config(cli: &Cli, target: &Target, property: &str, family: &str) -> Result<AttackConfig> {
    let mut cfg: AttackConfig = match &cli.config {
        Some(_) => serde_json::from_str(&read_config(cli)?)?,
        None => AttackConfig::new(property),
    };
    cfg.property = property.to_string();
    if cli.config.is_none() || family != "logistic" {
        cfg.family = family.parse::<PredictiveFamily>()?;
    }
    if target.layers != "all" || cfg.layers.is_none() {
        cfg.layers = parse_layers(&target.layers)?;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn layer_kind(log: &SnapshotLog, ordinal: usize) -> String {
    log.final_model()
        .and_then(|m| m.param_layer_spec(ordinal))
        .map_or_else(String::new, |s| s.kind_name().to_string())
}

fn attack(cli: &Cli, target: &Target, property: &str, family: &str, out: Option<&Path>) -> Result<()> {
    let cfg = attack_config(cli, target, property, family)?;
    let t = load_target(target)?;
    let sets = collect_attack_sets(&t.log, &t.aux, &t.victim, &cfg)?;
    let rows: Vec<AttackRow> = attack_from_sets(&sets, &cfg)?.rows();
    let mut buf = Vec::new();
    write_attack_csv(&rows, &mut buf)?;
    write_file(&output(cli, out, "attack.csv"), &buf)
}

fn measure(cli: &Cli, metric: &Measure) -> Result<()> {
    let (rows, out) = match metric {
        Measure::Vinfo {
            target,
            property,
            family,
            in_sample,
            out,
        } => (vinfo_rows(cli, target, property, family, *in_sample)?, out),
        Measure::Sensitivity {
            target,
            samples,
            norms,
            probabilities,
            out,
        } => (sensitivity_rows(cli, target, *samples, norms, *probabilities)?, out),
    };
    let mut buf = Vec::new();
    write_metric_csv(&rows, &mut buf)?;
    write_file(&output(cli, out.as_deref(), "metrics.csv"), &buf)
}

fn vinfo_rows(cli: &Cli, target: &Target, property: &str, family: &str, in_sample: bool) -> Result<Vec<MetricRow>> {
    let cfg = attack_config(cli, target, property, family)?;
    let t = load_target(target)?;
    let sets = collect_attack_sets(&t.log, &t.aux, &t.victim, &cfg)?;
    let held_out = if in_sample { None } else { Some(attack_from_sets(&sets, &cfg)?) };
    sets.train
        .layers
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            let seed = rng::derive(rng::derive_str(cfg.seed, "vinfo"), l as u64);
            let fit = &sets.train.samples[i];
            let v = match held_out.as_ref().and_then(|r| r.outcomes[i].v_info) {
                Some(v) => v,
                None => {
                    let (mode, eval) = if in_sample {
                        (EvalMode::InSample, fit)
                    } else {
                        (EvalMode::default(), &sets.eval.samples[i])
                    };
                    let options = VInfoOptions {
                        mode,
                        ..VInfoOptions::default()
                    };
                    v_information_split(fit, eval, &cfg.family, options, seed)?
                }
            };
            Ok(MetricRow {
                layer_index: l,
                layer_kind: layer_kind(&t.log, l),
                metric_name: format!("v_info/{property}"),
                norm: String::new(),
                value: v.v_info_nats,
                num_samples: v.n_eval,
                skipped_degenerate: 0,
                family: cfg.family.label(),
                seed,
            })
        })
        .collect()
}

fn sensitivity_rows(
    cli: &Cli,
    target: &Target,
    samples: usize,
    norms: &str,
    probabilities: bool,
) -> Result<Vec<MetricRow>> {
    let norms = norms
        .split(',')
        .map(|s| s.trim().parse::<Norm>())
        .collect::<Result<Vec<_>>>()?;
    let side = if probabilities {
        OutputSide::Probabilities
    } else {
        OutputSide::Logits
    };
    let t = load_target(target)?;
    let model = t.log.final_model().ok_or(Error::EmptyInput("snapshot log"))?;
    let layers = parse_layers(&target.layers)?.unwrap_or_else(|| (0..model.num_param_layers()).collect());
    let n = samples.min(t.aux.len());
    let (x, y) = t.aux.batch(&(0..n).collect::<Vec<_>>());
    let seed = cli.seed.unwrap_or(0);
    let mut rows = Vec::new();
    for l in layers {
        let s = sensitivity_norms(model, &x, &y, l, &norms, side)?;
        for &(norm, value) in &s.values {
            rows.push(MetricRow {
                layer_index: l,
                layer_kind: layer_kind(&t.log, l),
                metric_name: "sensitivity".into(),
                norm: norm.to_string(),
                value,
                num_samples: s.num_samples,
                skipped_degenerate: s.skipped_degenerate,
                family: String::new(),
                seed,
            });
        }
    }
    Ok(rows)
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::Io {
            path: path.to_path_buf(),
            source,
        },
        other => Error::Format {
            path: path.to_path_buf(),
            detail: format!("{other:?}"),
        },
    })?;
    r.deserialize().map(|row| Ok(row?)).collect()
}

fn correlate(
    cli: &Cli,
    metrics: &Path,
    attack: &Path,
    permutations: usize,
    baseline: Option<&str>,
    out: Option<&Path>,
) -> Result<()> {
    let metric_rows: Vec<MetricRow> = read_csv(metrics)?;
    let attack_rows: Vec<AttackRow> = read_csv(attack)?;
    let rows = correlate_tables(&metric_rows, &attack_rows, permutations, cli.seed.unwrap_or(0), baseline)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &rows {
        w.serialize(r)?;
    }
    let buf = w
        .into_inner()
        .map_err(|e| Error::InvalidConfig(format!("csv buffer: {e}")))?;
    write_file(&output(cli, out, "correlations.csv"), &buf)
}

fn run(cli: &Cli) -> Result<()> {
    let mut cfg = report::load_experiment(&read_config(cli)?)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let rep = report::run_experiment(&cfg)?;
    report::write_report(&cli.out_dir, &rep).map_err(|e| e.in_stage("report"))?;
    for c in &rep.correlations {
        println!(
            "{} {}[{}]: r = {:.4} (p = {:.4}, dR = {:.4})",
            c.property, c.metric, c.norm, c.r, c.p_value, c.delta_r
        );
    }
    Ok(())
}
