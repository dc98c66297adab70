//! Empirical usable information from layer gradients to a property.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::family::PredictiveFamily;
use super::predictor::{train_predictor, Predictor, PropertySample};
use crate::error::{Error, Result};
use crate::rng;

/// Entropy in nats of the empirical Bernoulli marginal of `labels`.
pub fn null_entropy(labels: &[u8]) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::EmptyInput("labels"));
    }
    let q = labels.iter().filter(|&&p| p == 1).count() as f64 / labels.len() as f64;
    if q == 0.0 || q == 1.0 {
        return Ok(0.0);
    }
    Ok(-q * q.ln() - (1.0 - q) * (1.0 - q).ln())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum EvalMode {
    /// Fit on a stratified train part, evaluate on the rest.
    HeldOut { eval_fraction: f64 },
    /// Fit and evaluate on the whole set.
    InSample,
}

impl Default for EvalMode {
    fn default() -> Self {
        EvalMode::HeldOut { eval_fraction: 0.3 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VInfo {
    pub v_info_nats: f64,
    pub null_nats: f64,
    pub conditional_nats: f64,
    pub n_train: usize,
    pub n_eval: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VInfoOptions {
    pub mode: EvalMode,
    /// Report `max(v, 0)` instead of the raw difference.
    pub clamp_zero: bool,
    /// Hold out part of the training data to Platt-scale the fitted
    /// predictor's logit before evaluation (held-out mode only).
    pub calibrate: bool,
}

impl Default for VInfoOptions {
    fn default() -> Self {
        VInfoOptions {
            mode: EvalMode::default(),
            clamp_zero: false,
            calibrate: true,
        }
    }
}

/// Share of the training part used for calibration.
const CALIBRATION_FRACTION: f64 = 0.25;

/// Stratified split of sample indices into (train, eval).
fn stratified_split(samples: &[PropertySample], eval_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut r = rng::rng(rng::derive_str(seed, "vinfo-split"));
    let mut train = Vec::new();
    let mut eval = Vec::new();
    for class in [0u8, 1] {
        let mut idx: Vec<usize> = (0..samples.len()).filter(|&i| samples[i].property == class).collect();
        idx.shuffle(&mut r);
        let n_eval = (idx.len() as f64 * eval_fraction).round() as usize;
        eval.extend_from_slice(&idx[..n_eval]);
        train.extend_from_slice(&idx[n_eval..]);
    }
    train.sort_unstable();
    eval.sort_unstable();
    (train, eval)
}

fn gather(samples: &[PropertySample], idx: &[usize]) -> Vec<PropertySample> {
    idx.iter().map(|&i| samples[i].clone()).collect()
}

fn fit(train: &[PropertySample], family: &PredictiveFamily) -> Result<Predictor> {
    match train_predictor(train, family) {
        Err(Error::SingleClass) => Predictor::constant(train),
        other => other,
    }
}

fn fit_calibrated(
    train: &[PropertySample],
    family: &PredictiveFamily,
    calibrate: bool,
    seed: u64,
) -> Result<Predictor> {
    if !calibrate {
        return fit(train, family);
    }
    let (fit_idx, cal_idx) = stratified_split(train, CALIBRATION_FRACTION, rng::derive_str(seed, "calibration"));
    if fit_idx.len() < 2 || cal_idx.is_empty() {
        return fit(train, family);
    }
    let mut predictor = fit(&gather(train, &fit_idx), family)?;
    predictor.calibrate(&gather(train, &cal_idx))?;
    Ok(predictor)
}

fn check_len(samples: &[PropertySample], min: usize, what: &str) -> Result<()> {
    if samples.len() < min {
        return Err(Error::InvalidConfig(format!(
            "{what} needs at least {min} samples, got {}",
            samples.len()
        )));
    }
    Ok(())
}

fn finish(null_nats: f64, conditional_nats: f64, n_train: usize, n_eval: usize, clamp_zero: bool) -> VInfo {
    let mut v = null_nats - conditional_nats;
    if clamp_zero {
        v = v.max(0.0);
    }
    VInfo {
        v_info_nats: v,
        null_nats,
        conditional_nats,
        n_train,
        n_eval,
    }
}

/// Like [`v_information`] with a caller-supplied split, e.g. auxiliary
/// gradients for fitting and victim gradients for evaluation.
pub fn v_information_split(
    train: &[PropertySample],
    eval: &[PropertySample],
    family: &PredictiveFamily,
    options: VInfoOptions,
    seed: u64,
) -> Result<VInfo> {
    check_len(train, 2, "v_information train split")?;
    check_len(eval, 1, "v_information eval split")?;
    let family = PredictiveFamily {
        seed: rng::derive_str(seed ^ family.seed, "vinfo-family"),
        ..family.clone()
    };
    let predictor = fit_calibrated(train, &family, options.calibrate, seed)?;
    let labels: Vec<u8> = eval.iter().map(|s| s.property).collect();
    Ok(finish(
        null_entropy(&labels)?,
        predictor.mean_cross_entropy(eval)?,
        train.len(),
        eval.len(),
        options.clamp_zero,
    ))
}

/// Estimates `V(G -> p)` as the null entropy of the evaluation labels minus
/// the evaluation cross-entropy of the best-fitted family member.
pub fn v_information(
    samples: &[PropertySample],
    family: &PredictiveFamily,
    options: VInfoOptions,
    seed: u64,
) -> Result<VInfo> {
    check_len(samples, 20, "v_information")?;
    let labels: Vec<u8> = samples.iter().map(|s| s.property).collect();
    if null_entropy(&labels)? == 0.0 {
        return Ok(VInfo {
            v_info_nats: 0.0,
            null_nats: 0.0,
            conditional_nats: 0.0,
            n_train: samples.len(),
            n_eval: samples.len(),
        });
    }
    match options.mode {
        EvalMode::HeldOut { eval_fraction } => {
            if !(eval_fraction > 0.0 && eval_fraction < 1.0) {
                return Err(Error::InvalidConfig(format!("eval fraction {eval_fraction} not in (0,1)")));
            }
            let (tr, ev) = stratified_split(samples, eval_fraction, seed);
            v_information_split(&gather(samples, &tr), &gather(samples, &ev), family, options, seed)
        }
        EvalMode::InSample => {
            let family = PredictiveFamily {
                seed: rng::derive_str(seed ^ family.seed, "vinfo-family"),
                ..family.clone()
            };
            let predictor = fit(samples, &family)?;
            let null = null_entropy(&labels)?;
            // The family contains the constant predictor, so its in-sample
            // infimum is never worse than the null term.
            let ce = predictor.mean_cross_entropy(samples)?.min(null);
            Ok(finish(null, ce, samples.len(), samples.len(), options.clamp_zero))
        }
    }
}
