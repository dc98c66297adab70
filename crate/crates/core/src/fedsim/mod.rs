//! Local simulation of federated training (FedSGD and FedAvg) with a
//! snapshot of the global model recorded as the adversary would see it.

mod client;
mod log;

use serde::{Deserialize, Serialize};

use crate::datagen::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::{loss_gradient, sgd_step, GradientRecord, Model};
use crate::par;

pub use client::{partition, BatchSchedule, ClientState};
pub use log::{load_log, save_log, Snapshot, SnapshotLog, TrainManifest};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    FedSgd,
    FedAvg,
}

fn default_clients() -> usize {
    2
}
fn default_rounds() -> usize {
    100
}
fn default_lr() -> f64 {
    0.01
}
fn default_batch() -> usize {
    32
}
fn default_one() -> usize {
    1
}
fn default_algorithm() -> Algorithm {
    Algorithm::FedSgd
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FLConfig {
    #[serde(default = "default_clients")]
    pub num_clients: usize,
    #[serde(default = "default_rounds")]
    pub rounds: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_algorithm")]
    pub algorithm: Algorithm,
    /// Local SGD steps per round under FedAvg.
    #[serde(default = "default_one")]
    pub local_batches_per_round: usize,
    #[serde(default = "default_one")]
    pub snapshot_every: usize,
    /// Weight client contributions by partition size instead of a plain mean.
    #[serde(default)]
    pub weighted: bool,
    #[serde(default)]
    pub seed: u64,
}

impl Default for FLConfig {
    fn default() -> Self {
        FLConfig {
            num_clients: default_clients(),
            rounds: default_rounds(),
            lr: default_lr(),
            batch_size: default_batch(),
            algorithm: Algorithm::FedSgd,
            local_batches_per_round: 1,
            snapshot_every: 1,
            weighted: false,
            seed: 0,
        }
    }
}

impl FLConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.num_clients == 0 {
            return bad("num_clients must be >= 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return bad("lr must be > 0");
        }
        if self.snapshot_every == 0 {
            return bad("snapshot_every must be >= 1");
        }
        if self.algorithm == Algorithm::FedAvg && self.local_batches_per_round == 0 {
            return bad("local_batches_per_round must be >= 1");
        }
        Ok(())
    }
}

/// Element-wise sum of gradient records, in the given order.
pub fn aggregate_gradients(records: &[GradientRecord]) -> Result<GradientRecord> {
    let (first, rest) = records
        .split_first()
        .ok_or(Error::EmptyInput("no gradient records to aggregate"))?;
    let mut sum = first.clone();
    for r in rest {
        sum.axpy(1.0, r)?;
    }
    sum.meta.batch_size = records.iter().map(|r| r.meta.batch_size).sum();
    Ok(sum)
}

fn client_weights(config: &FLConfig, clients: &[ClientState]) -> Vec<f64> {
    let c = clients.len() as f64;
    if config.weighted {
        let total: usize = clients.iter().map(ClientState::len).sum();
        clients.iter().map(|cl| cl.len() as f64 / total as f64).collect()
    } else {
        vec![1.0 / c; clients.len()]
    }
}

/// Runs one communication round. Returns the new global model and the
/// server-side aggregate gradient (for FedAvg, the averaged update divided
/// by `-lr`).
pub fn run_round(
    config: &FLConfig,
    model: &Model,
    clients: &mut [ClientState],
) -> Result<(Model, GradientRecord)> {
    if clients.is_empty() {
        return Err(Error::EmptyInput("no clients"));
    }
    let weights = client_weights(config, clients);
    let steps = match config.algorithm {
        Algorithm::FedSgd => 1,
        Algorithm::FedAvg => config.local_batches_per_round,
    };
    // Batch draws mutate the schedules; do them up front in client order.
    let batches: Vec<Vec<Vec<usize>>> = clients
        .iter_mut()
        .map(|c| (0..steps).map(|_| c.schedule.next_batch(config.batch_size)).collect())
        .collect();
    let clients_ro: &[ClientState] = clients;
    match config.algorithm {
        Algorithm::FedSgd => {
            let grads = par::try_map_range(clients_ro.len(), |i| {
                let (x, y) = clients_ro[i].data.batch(&batches[i][0]);
                loss_gradient(model, &x, &y).map(|(_, mut g)| {
                    g.scale(weights[i]);
                    g
                })
            })?;
            let mut avg = aggregate_gradients(&grads)?;
            avg.meta.seed_kind = crate::nn::SeedKind::Loss;
            let next = sgd_step(model, &avg, config.lr)?;
            Ok((next, avg))
        }
        Algorithm::FedAvg => {
            let deltas = par::try_map_range(clients_ro.len(), |i| -> Result<GradientRecord> {
                let mut local = model.clone();
                for batch in &batches[i] {
                    let (x, y) = clients_ro[i].data.batch(batch);
                    let (_, g) = loss_gradient(&local, &x, &y)?;
                    local = sgd_step(&local, &g, config.lr)?;
                }
                // (local - global) * weight, expressed as a gradient record
                let mut delta = params_as_record(&local);
                delta.axpy(-1.0, &params_as_record(model))?;
                delta.scale(weights[i]);
                Ok(delta)
            })?;
            let mean_delta = aggregate_gradients(&deltas)?;
            let mut next_params = params_as_record(model);
            next_params.axpy(1.0, &mean_delta)?;
            let next = model.with_params(
                next_params
                    .layers
                    .into_iter()
                    .map(|l| crate::nn::LayerParams {
                        weights: l.weights,
                        biases: l.biases,
                    })
                    .collect(),
            )?;
            let mut pseudo = mean_delta;
            pseudo.scale(-1.0 / config.lr);
            pseudo.meta.batch_size = batches.iter().flatten().map(Vec::len).sum();
            Ok((next, pseudo))
        }
    }
}

fn params_as_record(model: &Model) -> GradientRecord {
    GradientRecord::new(
        model
            .params()
            .iter()
            .map(|p| crate::nn::LayerGrad {
                weights: p.weights.clone(),
                biases: p.biases.clone(),
            })
            .collect(),
    )
}

/// Trains from `model` for `config.rounds` rounds over an IID partition of
/// `dataset`, snapshotting every `snapshot_every` rounds (round 0 and the
/// final round are always kept).
pub fn train(config: &FLConfig, model: &Model, dataset: &LabeledDataset) -> Result<SnapshotLog> {
    config.validate()?;
    let mut clients = partition(dataset, config.num_clients, config.seed)?;
    train_clients(config, model, &mut clients)
}

pub fn train_clients(
    config: &FLConfig,
    model: &Model,
    clients: &mut [ClientState],
) -> Result<SnapshotLog> {
    config.validate()?;
    let mut log = SnapshotLog::new(clients.iter().map(|c| c.indices.clone()).collect());
    log.push_snapshot(0, model.clone())?;
    let mut current = model.clone();
    for round in 1..=config.rounds {
        let (next, mut agg) = run_round(config, &current, clients)?;
        agg.meta.round = Some(round);
        log.push_aggregate(agg);
        current = next;
        if round % config.snapshot_every == 0 || round == config.rounds {
            log.push_snapshot(round, current.clone())?;
        }
    }
    Ok(log)
}

/// Fraction of samples whose arg-max prediction equals the label.
pub fn accuracy(model: &Model, dataset: &LabeledDataset) -> Result<f64> {
    let trace = crate::nn::forward(model, &dataset.inputs)?;
    let probs = trace.probs();
    let correct = (0..dataset.len())
        .filter(|&k| {
            let row = probs.row(k);
            let arg = row
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                .0;
            arg == dataset.labels[k]
        })
        .count();
    Ok(correct as f64 / dataset.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{build_model, LayerGrad, LayerSpec, ModelSpec};
    use crate::tensor::Tensor;

    fn rec(v: &[f64]) -> GradientRecord {
        GradientRecord::new(vec![LayerGrad {
            weights: Tensor::new(vec![1, v.len()], v.to_vec()).unwrap(),
            biases: Tensor::zeros(&[1]),
        }])
    }

    #[test]
    fn aggregate_sums_elementwise() {
        let s = aggregate_gradients(&[rec(&[1.0, 2.0]), rec(&[3.0, 4.0])]).unwrap();
        assert_eq!(s.layers[0].weights.data(), &[4.0, 6.0]);
        let one = aggregate_gradients(&[rec(&[1.5, -2.0])]).unwrap();
        assert_eq!(one.layers[0].weights.data(), &[1.5, -2.0]);
    }

    #[test]
    fn aggregate_k_copies_is_k_times() {
        let g = rec(&[0.1, -0.37, 1e-3]);
        let s = aggregate_gradients(&vec![g.clone(); 7]).unwrap();
        for (a, b) in s.layers[0].weights.data().iter().zip(g.layers[0].weights.data()) {
            assert!((a - 7.0 * b).abs() < 1e-12);
        }
    }

    #[test]
    fn aggregate_errors() {
        assert!(matches!(aggregate_gradients(&[]), Err(Error::EmptyInput(_))));
        assert!(matches!(
            aggregate_gradients(&[rec(&[1.0]), rec(&[1.0, 2.0])]),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn fedsgd_server_step_arithmetic() {
        // theta = 1.0, client gradients 2 and 4, lr 0.01 -> 0.97
        let spec = ModelSpec::new(vec![1], vec![LayerSpec::dense(1, 1)]);
        let m = build_model(&spec, 0).unwrap().with_flat_params(&[1.0, 0.0]).unwrap();
        let mut avg = aggregate_gradients(&[rec(&[2.0]), rec(&[4.0])]).unwrap();
        avg.scale(0.5);
        let next = sgd_step(&m, &avg, 0.01).unwrap();
        assert!((next.flat_params()[0] - 0.97).abs() < 1e-15);
    }

    #[test]
    fn invalid_configs() {
        let d = FLConfig::default;
        assert!(FLConfig { lr: 0.0, ..d() }.validate().is_err());
        assert!(FLConfig { batch_size: 0, ..d() }.validate().is_err());
        assert!(FLConfig { num_clients: 0, ..d() }.validate().is_err());
        assert!(FLConfig::default().validate().is_ok());
    }

    #[test]
    fn config_defaults_from_json() {
        let c: FLConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(c, FLConfig::default());
        assert_eq!((c.num_clients, c.rounds, c.batch_size), (2, 100, 32));
        assert_eq!(c.lr, 0.01);
        assert!(serde_json::from_str::<FLConfig>(r#"{"momentum": 0.9}"#).is_err());
    }
}
