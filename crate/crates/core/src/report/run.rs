use serde::Serialize;

use super::config::ExperimentConfig;
use super::stats::{delta_r, mean_ci, median, pearson, pearson_pvalue};
use crate::attack::{attack_from_sets, collect_attack_sets, AttackConfig, AttackResult, AttackRow};
use crate::datagen::split_indices;
use crate::error::{Error, Result};
use crate::fedsim::{accuracy, train};
use crate::metrics::{sensitivity_norms, MetricRow, Norm, SensitivityResult};
use crate::nn::{build_model, ModelSpec};
use crate::{par, rng};

/// A parameterized layer as it appears in every report table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerInfo {
    pub layer_index: usize,
    pub layer_kind: String,
    pub num_weights: usize,
}

#[derive(Debug, Clone)]
pub struct TrialResult {
    pub trial: usize,
    pub seed: u64,
    pub main_accuracy: f64,
    /// One entry per parameterized layer, values aligned with the configured norms.
    pub sensitivity: Vec<SensitivityResult>,
    /// One entry per property, in config order.
    pub attacks: Vec<AttackResult>,
}

/// One aggregated value: mean over trials with a 95% half-width.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub layer_index: usize,
    pub layer_kind: String,
    pub metric: String,
    pub property: String,
    pub norm: String,
    pub mean: f64,
    pub ci_half_width: f64,
    pub num_trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationRow {
    pub property: String,
    pub metric: String,
    pub norm: String,
    /// Pearson r across layers of the trial-mean metric and trial-mean AUC.
    pub r: f64,
    pub p_value: f64,
    /// `r` minus the baseline property's `r` for the same metric.
    pub delta_r: f64,
    /// Median over trials of the per-trial r.
    pub median_trial_r: f64,
    pub trials_with_r: usize,
    pub num_layers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: String,
    pub experiment: ExperimentConfig,
    pub model: ModelSpec,
    pub trial_seeds: Vec<u64>,
}

#[derive(Debug, Clone)]
pub struct LayerRiskReport {
    pub manifest: Manifest,
    pub layers: Vec<LayerInfo>,
    pub trials: Vec<TrialResult>,
    pub summary: Vec<SummaryRow>,
    pub correlations: Vec<CorrelationRow>,
}

/// Seed of trial `t` under master seed `seed`.
pub fn trial_seed(seed: u64, t: usize) -> u64 {
    rng::derive(rng::derive_str(seed, "trial"), t as u64)
}

fn attack_config(cfg: &ExperimentConfig, property: &str, trial_seed: u64) -> AttackConfig {
    AttackConfig {
        property: property.to_string(),
        seed: rng::derive_str(trial_seed, &format!("attack:{property}")),
        ..cfg.attack.clone()
    }
}

fn run_trial(cfg: &ExperimentConfig, t: usize, seed: u64) -> Result<(TrialResult, ModelSpec)> {
    let data = cfg
        .data
        .load(rng::derive_str(seed, "data"))
        .map_err(|e| e.in_stage("datagen"))?;
    let spec = cfg.model.resolve(data.feature_shape(), data.num_classes)?;
    let aux_f = cfg.attack.aux_fraction;
    let parts = split_indices(
        &data,
        &[aux_f, 1.0 - aux_f],
        rng::derive_str(seed, "aux-split"),
        Some(cfg.baseline_property()),
    )
    .map_err(|e| e.in_stage("datagen"))?;
    let aux = data.subset(&parts[0]);
    let fl_data = data.subset(&parts[1]);

    let model = build_model(&spec, rng::derive_str(seed, "model")).map_err(|e| e.in_stage("train"))?;
    let fl = crate::fedsim::FLConfig {
        seed: rng::derive_str(seed, "fl"),
        ..cfg.fl.clone()
    };
    let log = train(&fl, &model, &fl_data).map_err(|e| e.in_stage("train"))?;
    let final_model = log.final_model().expect("training keeps the initial snapshot");
    let main_accuracy = accuracy(final_model, &fl_data).map_err(|e| e.in_stage("train"))?;

    let n = cfg.metrics.sensitivity_samples.min(aux.len());
    let (x, y) = aux.batch(&(0..n).collect::<Vec<_>>());
    let sensitivity = (0..final_model.num_param_layers())
        .map(|l| {
            match sensitivity_norms(final_model, &x, &y, l, &cfg.metrics.norms, cfg.metrics.output_side) {
                Err(Error::AllSamplesDegenerate(_)) => Ok(SensitivityResult {
                    layer: l,
                    values: cfg.metrics.norms.iter().map(|&p| (p, f64::NAN)).collect(),
                    num_samples: 0,
                    skipped_degenerate: n,
                }),
                other => other,
            }
        })
        .collect::<Result<Vec<_>>>()
        .map_err(|e| e.in_stage("measure"))?;

    let victim = fl_data.subset(&log.partitions[0]);
    let attacks = cfg
        .properties
        .iter()
        .map(|p| {
            let ac = attack_config(cfg, p, seed);
            let sets = collect_attack_sets(&log, &aux, &victim, &ac)?;
            let mut result = attack_from_sets(&sets, &ac)?;
            if cfg.metrics.clamp_zero {
                for v in result.outcomes.iter_mut().filter_map(|o| o.v_info.as_mut()) {
                    v.v_info_nats = v.v_info_nats.max(0.0);
                }
            }
            Ok(result)
        })
        .collect::<Result<Vec<_>>>()
        .map_err(|e| e.in_stage("attack"))?;
    Ok((
        TrialResult {
            trial: t,
            seed,
            main_accuracy,
            sensitivity,
            attacks,
        },
        spec,
    ))
}

/// Runs every trial of `cfg` and assembles the layer-wise risk report.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<LayerRiskReport> {
    cfg.validate()?;
    let seeds: Vec<u64> = (0..cfg.trials).map(|t| trial_seed(cfg.seed, t)).collect();
    let results = par::try_map_range(cfg.trials, |t| run_trial(cfg, t, seeds[t]))?;
    let spec = results[0].1.clone();
    let trials: Vec<TrialResult> = results.into_iter().map(|(r, _)| r).collect();
    let model = build_model(&spec, 0)?;
    let layers: Vec<LayerInfo> = (0..model.num_param_layers())
        .map(|l| LayerInfo {
            layer_index: l,
            layer_kind: model.param_layer_spec(l).expect("ordinal in range").kind_name().to_string(),
            num_weights: model.params()[l].weights.len(),
        })
        .collect();
    let summary = summarize(cfg, &layers, &trials);
    let correlations = correlate(cfg, &layers, &trials).map_err(|e| e.in_stage("report"))?;
    Ok(LayerRiskReport {
        manifest: Manifest {
            version: env!("CARGO_PKG_VERSION").to_string(),
            experiment: cfg.clone(),
            model: spec,
            trial_seeds: seeds,
        },
        layers,
        trials,
        summary,
        correlations,
    })
}

/// Per-trial series of one metric across layers; NaN marks a missing value.
fn series(trial: &TrialResult, metric: &Metric, layers: usize) -> Vec<f64> {
    (0..layers)
        .map(|l| match metric {
            Metric::Sensitivity(n) => trial.sensitivity[l].value(*n).unwrap_or(f64::NAN),
            Metric::VInfo(p) => trial.attacks[*p]
                .outcomes
                .get(l)
                .and_then(|o| o.v_info.map(|v| v.v_info_nats))
                .unwrap_or(f64::NAN),
            Metric::Auc(p) => trial.attacks[*p].auc_for(l).unwrap_or(f64::NAN),
        })
        .collect()
}

enum Metric {
    Sensitivity(Norm),
    VInfo(usize),
    Auc(usize),
}

fn metric_list(cfg: &ExperimentConfig) -> Vec<(Metric, String, String, String)> {
    let mut out = Vec::new();
    for &n in &cfg.metrics.norms {
        out.push((Metric::Sensitivity(n), "sensitivity".into(), String::new(), n.to_string()));
    }
    for (i, p) in cfg.properties.iter().enumerate() {
        if cfg.metrics.v_info {
            out.push((Metric::VInfo(i), "v_info".into(), p.clone(), String::new()));
        }
        out.push((Metric::Auc(i), "auc".into(), p.clone(), String::new()));
    }
    out
}

fn summarize(cfg: &ExperimentConfig, layers: &[LayerInfo], trials: &[TrialResult]) -> Vec<SummaryRow> {
    let mut rows = Vec::new();
    for (metric, name, property, norm) in metric_list(cfg) {
        let per_trial: Vec<Vec<f64>> = trials.iter().map(|t| series(t, &metric, layers.len())).collect();
        for info in layers {
            let vals: Vec<f64> = per_trial
                .iter()
                .map(|s| s[info.layer_index])
                .filter(|v| v.is_finite())
                .collect();
            let (mean, ci) = mean_ci(&vals);
            rows.push(SummaryRow {
                layer_index: info.layer_index,
                layer_kind: info.layer_kind.clone(),
                metric: name.clone(),
                property: property.clone(),
                norm: norm.clone(),
                mean,
                ci_half_width: ci,
                num_trials: vals.len(),
            });
        }
    }
    rows
}

fn mean_series(per_trial: &[Vec<f64>], layers: usize) -> Vec<f64> {
    (0..layers)
        .map(|l| {
            let v: Vec<f64> = per_trial.iter().map(|s| s[l]).filter(|x| x.is_finite()).collect();
            mean_ci(&v).0
        })
        .collect()
}

fn finite_pair(xs: &[f64], ys: &[f64]) -> (Vec<f64>, Vec<f64>) {
    xs.iter()
        .zip(ys)
        .filter(|(a, b)| a.is_finite() && b.is_finite())
        .map(|(a, b)| (*a, *b))
        .unzip()
}

fn correlate(cfg: &ExperimentConfig, layers: &[LayerInfo], trials: &[TrialResult]) -> Result<Vec<CorrelationRow>> {
    let nl = layers.len();
    let base = cfg
        .properties
        .iter()
        .position(|p| p == cfg.baseline_property())
        .expect("validated");
    let mut rows = Vec::new();
    for (pi, property) in cfg.properties.iter().enumerate() {
        let auc_trials: Vec<Vec<f64>> = trials.iter().map(|t| series(t, &Metric::Auc(pi), nl)).collect();
        let auc_mean = mean_series(&auc_trials, nl);
        let mut metrics: Vec<(Metric, &str, String)> = cfg
            .metrics
            .norms
            .iter()
            .map(|&n| (Metric::Sensitivity(n), "sensitivity", n.to_string()))
            .collect();
        if cfg.metrics.v_info {
            metrics.push((Metric::VInfo(pi), "v_info", String::new()));
        }
        for (metric, name, norm) in metrics {
            let m_trials: Vec<Vec<f64>> = trials.iter().map(|t| series(t, &metric, nl)).collect();
            let (xs, ys) = finite_pair(&mean_series(&m_trials, nl), &auc_mean);
            let (r, p) = match pearson(&xs, &ys) {
                Ok(r) => {
                    let label = format!("pvalue:{property}:{name}:{norm}");
                    let p = pearson_pvalue(&xs, &ys, cfg.correlation.permutations, rng::derive_str(cfg.seed, &label))?;
                    (r, p)
                }
                Err(Error::ConstantVector | Error::InvalidConfig(_)) => (f64::NAN, f64::NAN),
                Err(e) => return Err(e),
            };
            let per_trial_r: Vec<f64> = m_trials
                .iter()
                .zip(&auc_trials)
                .map(|(m, a)| {
                    let (x, y) = finite_pair(m, a);
                    pearson(&x, &y).unwrap_or(f64::NAN)
                })
                .collect();
            rows.push(CorrelationRow {
                property: property.clone(),
                metric: name.to_string(),
                norm,
                r,
                p_value: p,
                delta_r: f64::NAN,
                median_trial_r: median(&per_trial_r),
                trials_with_r: per_trial_r.iter().filter(|r| r.is_finite()).count(),
                num_layers: xs.len(),
            });
        }
    }
    let base_name = &cfg.properties[base];
    let base_rs: Vec<(String, String, f64)> = rows
        .iter()
        .filter(|r| &r.property == base_name)
        .map(|r| (r.metric.clone(), r.norm.clone(), r.r))
        .collect();
    for row in &mut rows {
        if let Some((_, _, rb)) = base_rs.iter().find(|(m, n, _)| *m == row.metric && *n == row.norm) {
            row.delta_r = delta_r(*rb, row.r);
        }
    }
    Ok(rows)
}

impl LayerRiskReport {
    /// Per-trial metric rows in the standard metric table layout.
    pub fn metric_rows(&self) -> Vec<MetricRow> {
        let mut rows = Vec::new();
        for t in &self.trials {
            for (info, s) in self.layers.iter().zip(&t.sensitivity) {
                for &(norm, value) in &s.values {
                    rows.push(MetricRow {
                        layer_index: info.layer_index,
                        layer_kind: info.layer_kind.clone(),
                        metric_name: "sensitivity".into(),
                        norm: norm.to_string(),
                        value,
                        num_samples: s.num_samples,
                        skipped_degenerate: s.skipped_degenerate,
                        family: String::new(),
                        seed: t.seed,
                    });
                }
            }
            for a in &t.attacks {
                for (&l, o) in a.layers.iter().zip(&a.outcomes) {
                    let Some(v) = o.v_info else { continue };
                    rows.push(MetricRow {
                        layer_index: l,
                        layer_kind: self.layers[l].layer_kind.clone(),
                        metric_name: format!("v_info/{}", a.config.property),
                        norm: String::new(),
                        value: v.v_info_nats,
                        num_samples: v.n_eval,
                        skipped_degenerate: 0,
                        family: a.config.family.label(),
                        seed: a.config.seed,
                    });
                }
            }
        }
        rows
    }

    pub fn attack_rows(&self) -> Vec<AttackRow> {
        self.trials
            .iter()
            .flat_map(|t| t.attacks.iter().flat_map(AttackResult::rows))
            .collect()
    }
}
