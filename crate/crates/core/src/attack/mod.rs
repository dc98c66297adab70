//! Passive property-inference adversary over gradient snapshots.

mod auc;

pub use auc::auc;

use rand::seq::{IndexedRandom, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::datagen::{split_indices, LabeledDataset};
use crate::error::{Error, Result};
use crate::fedsim::SnapshotLog;
use crate::metrics::{null_entropy, train_predictor, PredictiveFamily, PropertySample, VInfo};
use crate::nn::{self, Model};
use crate::{par, rng};

fn default_family() -> PredictiveFamily {
    PredictiveFamily::logistic()
}
fn default_batches() -> usize {
    20
}
fn default_batch_size() -> usize {
    32
}
fn default_aux_fraction() -> f64 {
    0.3
}
fn default_calibration() -> f64 {
    0.25
}
fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    /// Parameterized-layer ordinals to attack; `None` means every layer.
    #[serde(default)]
    pub layers: Option<Vec<usize>>,
    /// Property column to infer; experiment configs fill it per property.
    #[serde(default)]
    pub property: String,
    #[serde(default = "default_family")]
    pub family: PredictiveFamily,
    #[serde(default = "default_batches")]
    pub batches_per_snapshot: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    /// Share of the source data reserved for the adversary.
    #[serde(default = "default_aux_fraction")]
    pub aux_fraction: f64,
    /// Share of each batch drawn from the opposite property value.
    #[serde(default)]
    pub mixing: f64,
    #[serde(default = "one")]
    pub snapshot_stride: usize,
    /// Feed bias gradients to the attacker alongside the weights.
    #[serde(default)]
    pub include_biases: bool,
    /// No-signal control: permute property labels before batching.
    #[serde(default)]
    pub shuffle_labels: bool,
    /// Fit a separate attack model for every observed round.
    #[serde(default)]
    pub per_snapshot: bool,
    /// Share of the auxiliary data kept apart to calibrate the attack
    /// model's probabilities for the usable-information estimate; 0 skips it.
    #[serde(default = "default_calibration")]
    pub calibration_fraction: f64,
    #[serde(default)]
    pub seed: u64,
}

impl AttackConfig {
    pub fn new(property: impl Into<String>) -> Self {
        AttackConfig {
            layers: None,
            property: property.into(),
            family: default_family(),
            batches_per_snapshot: default_batches(),
            batch_size: default_batch_size(),
            aux_fraction: default_aux_fraction(),
            mixing: 0.0,
            snapshot_stride: 1,
            include_biases: false,
            shuffle_labels: false,
            per_snapshot: false,
            calibration_fraction: default_calibration(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.family.validate()?;
        if self.batches_per_snapshot == 0 || self.batch_size == 0 || self.snapshot_stride == 0 {
            return Err(Error::InvalidConfig(
                "batches_per_snapshot, batch_size and snapshot_stride must be positive".into(),
            ));
        }
        if !(0.0..=0.5).contains(&self.mixing) {
            return Err(Error::InvalidConfig(format!("mixing {} not in [0, 0.5]", self.mixing)));
        }
        if !(0.0..0.9).contains(&self.calibration_fraction) {
            return Err(Error::InvalidConfig(format!(
                "calibration_fraction {} not in [0, 0.9)",
                self.calibration_fraction
            )));
        }
        if !(self.aux_fraction > 0.0 && self.aux_fraction < 1.0) {
            return Err(Error::InvalidConfig(format!("aux_fraction {} not in (0,1)", self.aux_fraction)));
        }
        Ok(())
    }

    /// Resolves the layer selection against a model.
    pub fn resolve_layers(&self, model: &Model) -> Result<Vec<usize>> {
        match &self.layers {
            None => Ok((0..model.num_param_layers()).collect()),
            Some(ls) => {
                for &l in ls {
                    if l >= model.num_param_layers() {
                        return Err(Error::NotParameterizedLayer(l));
                    }
                }
                Ok(ls.clone())
            }
        }
    }
}

/// Labeled gradient samples, one set per attacked layer.
#[derive(Debug, Clone)]
pub struct GradientSamples {
    pub layers: Vec<usize>,
    pub samples: Vec<Vec<PropertySample>>,
}

impl GradientSamples {
    pub fn for_layer(&self, ordinal: usize) -> Option<&[PropertySample]> {
        self.layers
            .iter()
            .position(|&l| l == ordinal)
            .map(|i| self.samples[i].as_slice())
    }
}

struct PlannedBatch {
    snapshot: usize,
    batch_id: usize,
    property: u8,
    indices: Vec<usize>,
}

fn draw(pool: &[usize], n: usize, r: &mut rng::Rng) -> Vec<usize> {
    if n <= pool.len() {
        pool.choose_multiple(r, n).copied().collect()
    } else {
        (0..n).map(|_| *pool.choose(r).expect("non-empty pool")).collect()
    }
}

/// Computes, for each retained snapshot and each property-pure batch drawn
/// from `data`, the loss-seeded gradient of every selected layer.
///
/// Batches alternate between property values, so the output is balanced.
pub fn collect_gradient_samples(
    snapshots: &SnapshotLog,
    data: &LabeledDataset,
    config: &AttackConfig,
) -> Result<GradientSamples> {
    config.validate()?;
    let first = snapshots
        .snapshots
        .first()
        .ok_or(Error::EmptyInput("snapshot log"))?;
    let layers = config.resolve_layers(&first.model)?;
    let mut props = data.property(&config.property)?.to_vec();
    let mut r = rng::rng(rng::derive_str(config.seed, "attack-batches"));
    if config.shuffle_labels {
        props.shuffle(&mut r);
    }
    let pools: Vec<Vec<usize>> = (0..2u8)
        .map(|v| (0..props.len()).filter(|&i| props[i] == v).collect())
        .collect();
    for (v, pool) in pools.iter().enumerate() {
        if pool.is_empty() {
            return Err(Error::MissingPropertyValue(format!("{}={v}", config.property)));
        }
    }
    let n_other = (config.mixing * config.batch_size as f64).round() as usize;
    let mut plan = Vec::new();
    for (s, _) in snapshots.snapshots.iter().enumerate().step_by(config.snapshot_stride) {
        for b in 0..config.batches_per_snapshot {
            let p = (b % 2) as u8;
            let mut indices = draw(&pools[p as usize], config.batch_size - n_other, &mut r);
            indices.extend(draw(&pools[1 - p as usize], n_other, &mut r));
            plan.push(PlannedBatch {
                snapshot: s,
                batch_id: b,
                property: p,
                indices,
            });
        }
    }
    let per_batch = par::try_map_slice(&plan, |pb| -> Result<Vec<PropertySample>> {
        let snap = &snapshots.snapshots[pb.snapshot];
        let (x, y) = data.batch(&pb.indices);
        let (_, grads) = nn::loss_gradient(&snap.model, &x, &y)?;
        Ok(layers
            .iter()
            .map(|&l| {
                let g = &grads.layers[l];
                let mut features = g.weights.data().to_vec();
                if config.include_biases {
                    features.extend_from_slice(g.biases.data());
                }
                PropertySample {
                    features,
                    property: pb.property,
                    layer: l,
                    round: Some(snap.round),
                    batch_id: pb.batch_id,
                }
            })
            .collect())
    })?;
    let mut samples = vec![Vec::with_capacity(plan.len()); layers.len()];
    for batch in per_batch {
        for (i, s) in batch.into_iter().enumerate() {
            samples[i].push(s);
        }
    }
    Ok(GradientSamples { layers, samples })
}

/// Outcome of attacking one layer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackOutcome {
    pub auc: f64,
    pub train_ce_nats: f64,
    pub n_train: usize,
    pub n_eval: usize,
    /// Usable information of the calibrated attack model on the eval set.
    pub v_info: Option<VInfo>,
}

/// Fits the attack model on `train` and scores `eval` by AUC.
pub fn run_attack(
    train: &[PropertySample],
    eval: &[PropertySample],
    family: &PredictiveFamily,
) -> Result<AttackOutcome> {
    if train.is_empty() || eval.is_empty() {
        return Err(Error::EmptyInput("attack samples"));
    }
    run_attack_calibrated(train, None, eval, family)
}

/// [`run_attack`] that also estimates usable information: the fitted model
/// is Platt-scaled on `calibration` and its eval cross-entropy compared with
/// the null entropy of the eval labels.
pub fn run_attack_calibrated(
    train: &[PropertySample],
    calibration: Option<&[PropertySample]>,
    eval: &[PropertySample],
    family: &PredictiveFamily,
) -> Result<AttackOutcome> {
    if train.is_empty() || eval.is_empty() {
        return Err(Error::EmptyInput("attack samples"));
    }
    let mut predictor = train_predictor(train, family)?;
    let rows: Vec<Vec<f64>> = eval.iter().map(|s| s.features.clone()).collect();
    let scores = predictor.predict_many(&rows)?;
    let labels: Vec<u8> = eval.iter().map(|s| s.property).collect();
    let train_ce = predictor.mean_cross_entropy(train)?;
    let v_info = match calibration {
        Some(cal) if !cal.is_empty() => {
            predictor.calibrate(cal)?;
            let null_nats = null_entropy(&labels)?;
            let conditional_nats = predictor.mean_cross_entropy(eval)?;
            Some(VInfo {
                v_info_nats: null_nats - conditional_nats,
                null_nats,
                conditional_nats,
                n_train: train.len(),
                n_eval: eval.len(),
            })
        }
        _ => None,
    };
    Ok(AttackOutcome {
        auc: auc(&scores, &labels)?,
        train_ce_nats: train_ce,
        n_train: train.len(),
        n_eval: eval.len(),
        v_info,
    })
}

/// Like [`run_attack`] but with one attack model per snapshot round; eval
/// samples are scored by the model of their own round and pooled for AUC.
pub fn run_attack_per_round(
    train: &[PropertySample],
    eval: &[PropertySample],
    family: &PredictiveFamily,
) -> Result<AttackOutcome> {
    if train.is_empty() || eval.is_empty() {
        return Err(Error::EmptyInput("attack samples"));
    }
    let mut rounds: Vec<Option<usize>> = train.iter().map(|s| s.round).collect();
    rounds.sort_unstable();
    rounds.dedup();
    let mut scores = Vec::with_capacity(eval.len());
    let mut labels = Vec::with_capacity(eval.len());
    let mut ce_sum = 0.0;
    for round in rounds {
        let tr: Vec<PropertySample> = train.iter().filter(|s| s.round == round).cloned().collect();
        let ev: Vec<&PropertySample> = eval.iter().filter(|s| s.round == round).collect();
        let predictor = train_predictor(&tr, family)?;
        ce_sum += predictor.mean_cross_entropy(&tr)? * tr.len() as f64;
        let rows: Vec<Vec<f64>> = ev.iter().map(|s| s.features.clone()).collect();
        scores.extend(predictor.predict_many(&rows)?);
        labels.extend(ev.iter().map(|s| s.property));
    }
    if scores.len() != eval.len() {
        return Err(Error::InvalidConfig("eval samples come from rounds without training samples".into()));
    }
    Ok(AttackOutcome {
        auc: auc(&scores, &labels)?,
        train_ce_nats: ce_sum / train.len() as f64,
        n_train: train.len(),
        n_eval: eval.len(),
        v_info: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackRow {
    pub layer_index: usize,
    pub property: String,
    pub auc: f64,
    pub train_ce_nats: f64,
    pub n_train: usize,
    pub n_eval: usize,
    pub family: String,
    pub seed: u64,
}

/// Per-layer attack results with the configuration that produced them.
#[derive(Debug, Clone)]
pub struct AttackResult {
    pub config: AttackConfig,
    pub layers: Vec<usize>,
    pub outcomes: Vec<AttackOutcome>,
}

impl AttackResult {
    pub fn rows(&self) -> Vec<AttackRow> {
        self.layers
            .iter()
            .zip(&self.outcomes)
            .map(|(&l, o)| AttackRow {
                layer_index: l,
                property: self.config.property.clone(),
                auc: o.auc,
                train_ce_nats: o.train_ce_nats,
                n_train: o.n_train,
                n_eval: o.n_eval,
                family: self.config.family.label(),
                seed: self.config.seed,
            })
            .collect()
    }

    pub fn auc_for(&self, ordinal: usize) -> Option<f64> {
        self.layers.iter().position(|&l| l == ordinal).map(|i| self.outcomes[i].auc)
    }
}

/// Gradient samples for one attack: fitted on auxiliary data, optionally
/// calibrated on a disjoint slice of it, scored on victim data.
#[derive(Debug, Clone)]
pub struct AttackSets {
    pub train: GradientSamples,
    pub calibration: Option<GradientSamples>,
    pub eval: GradientSamples,
}

/// Collects [`AttackSets`] for the same snapshots. The auxiliary data is
/// split by sample (not by batch) so calibration never sees a training
/// sample; every set uses its own derived batch seed.
pub fn collect_attack_sets(
    snapshots: &SnapshotLog,
    aux: &LabeledDataset,
    victim: &LabeledDataset,
    config: &AttackConfig,
) -> Result<AttackSets> {
    config.validate()?;
    let with_seed = |label: &str| AttackConfig {
        seed: rng::derive_str(config.seed, label),
        ..config.clone()
    };
    let (train, calibration) = if config.calibration_fraction > 0.0 {
        let f = config.calibration_fraction;
        let parts = split_indices(
            aux,
            &[1.0 - f, f],
            rng::derive_str(config.seed, "aux-calibration"),
            Some(&config.property),
        )?;
        let fit = collect_gradient_samples(snapshots, &aux.subset(&parts[0]), config)?;
        let cal = collect_gradient_samples(snapshots, &aux.subset(&parts[1]), &with_seed("calibration"))?;
        (fit, Some(cal))
    } else {
        (collect_gradient_samples(snapshots, aux, config)?, None)
    };
    let eval = collect_gradient_samples(snapshots, victim, &with_seed("victim"))?;
    Ok(AttackSets {
        train,
        calibration,
        eval,
    })
}

/// Runs one attack per layer on pre-collected sample sets.
pub fn attack_from_sets(sets: &AttackSets, config: &AttackConfig) -> Result<AttackResult> {
    let (train, eval) = (&sets.train, &sets.eval);
    if train.layers != eval.layers {
        return Err(Error::InvalidConfig("train and eval samples cover different layers".into()));
    }
    let outcomes = par::try_map_range(train.layers.len(), |i| {
        let family = PredictiveFamily {
            seed: rng::derive(
                rng::derive_str(config.seed ^ config.family.seed, "attack-model"),
                train.layers[i] as u64,
            ),
            ..config.family.clone()
        };
        if config.per_snapshot {
            run_attack_per_round(&train.samples[i], &eval.samples[i], &family)
        } else {
            let cal = sets.calibration.as_ref().map(|c| c.samples[i].as_slice());
            run_attack_calibrated(&train.samples[i], cal, &eval.samples[i], &family)
        }
    })?;
    Ok(AttackResult {
        config: config.clone(),
        layers: train.layers.clone(),
        outcomes,
    })
}

/// Full adversary: trains on gradients of auxiliary batches and is scored
/// on gradients of victim batches against the same snapshots.
pub fn attack_layers(
    snapshots: &SnapshotLog,
    aux: &LabeledDataset,
    victim: &LabeledDataset,
    config: &AttackConfig,
) -> Result<AttackResult> {
    let sets = collect_attack_sets(snapshots, aux, victim, config)?;
    attack_from_sets(&sets, config)
}

pub fn write_attack_csv<W: std::io::Write>(rows: &[AttackRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io("attack csv", e))?;
    Ok(())
}
