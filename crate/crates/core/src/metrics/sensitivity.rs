//! Jacobians of layer gradients with respect to the model output.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{self, Model};
use crate::par;
use crate::tensor::Tensor;

/// Samples whose gradient range is at or below this are skipped.
pub const RANGE_EPSILON: f64 = 1e-12;

/// Which output the gradient is differentiated against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputSide {
    /// The backward seed at the last pre-activation.
    #[default]
    Logits,
    /// Post-softmax probabilities (composes with the softmax Jacobian).
    Probabilities,
}

/// Per-sample Jacobian of a layer's flattened weight gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct JacobianResult {
    /// Row-major `[n_weights, d_y]`.
    pub matrix: Vec<f64>,
    pub rows: usize,
    pub cols: usize,
    /// `max - min` over the weight gradient under the true loss seed.
    pub range: f64,
    pub layer: usize,
}

impl JacobianResult {
    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.matrix[i * self.cols + j]).collect()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix[i * self.cols + j]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Norm {
    #[serde(rename = "F")]
    Frobenius,
    #[serde(rename = "1")]
    One,
    #[serde(rename = "inf")]
    Inf,
}

impl Norm {
    pub const ALL: [Norm; 3] = [Norm::Frobenius, Norm::One, Norm::Inf];

    /// Size normalization for a layer with `n_weights` weight parameters.
    pub fn psi(self, n_weights: usize) -> f64 {
        match self {
            Norm::Frobenius => (n_weights as f64).sqrt(),
            Norm::One => n_weights as f64,
            Norm::Inf => 1.0,
        }
    }

    /// Entry-wise norm of a flat matrix.
    pub fn apply(self, values: &[f64]) -> f64 {
        match self {
            Norm::Frobenius => values.iter().map(|v| v * v).sum::<f64>().sqrt(),
            Norm::One => values.iter().map(|v| v.abs()).sum(),
            Norm::Inf => values.iter().fold(0.0, |m, v| m.max(v.abs())),
        }
    }
}

impl fmt::Display for Norm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Norm::Frobenius => "F",
            Norm::One => "1",
            Norm::Inf => "inf",
        })
    }
}

impl FromStr for Norm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "F" | "f" | "fro" => Ok(Norm::Frobenius),
            "1" => Ok(Norm::One),
            "inf" | "Inf" | "∞" => Ok(Norm::Inf),
            other => Err(Error::InvalidConfig(format!("unknown norm `{other}`"))),
        }
    }
}

fn single(sample: &Tensor) -> Result<()> {
    if sample.batch() != 1 {
        return Err(Error::InvalidConfig(format!(
            "jacobian needs a single-input batch, got {}",
            sample.batch()
        )));
    }
    Ok(())
}

/// Builds the Jacobian of layer `ordinal`'s weight gradient column by column,
/// one unit-seed backward pass per output coordinate.
pub fn jacobian_of_gradients(
    model: &Model,
    sample: &Tensor,
    label: usize,
    ordinal: usize,
    side: OutputSide,
) -> Result<JacobianResult> {
    single(sample)?;
    model
        .param_layer_index(ordinal)
        .ok_or(Error::NotParameterizedLayer(ordinal))?;
    let trace = nn::forward(model, sample)?;
    let d_y = model.num_classes();
    let (_, loss_seed) = nn::loss_softmax_ce(&trace, &[label])?;
    let g = nn::layer_gradient(model, &trace, &loss_seed, ordinal)?;
    let gw = g.weights.data();
    let (lo, hi) = gw
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let rows = gw.len();
    let mut matrix = vec![0.0; rows * d_y];
    for j in 0..d_y {
        let mut seed = Tensor::zeros(&[1, d_y]);
        seed.data_mut()[j] = 1.0;
        let col = nn::layer_gradient(model, &trace, &seed, ordinal)?;
        for (i, v) in col.weights.data().iter().enumerate() {
            matrix[i * d_y + j] = *v;
        }
    }
    if side == OutputSide::Probabilities {
        let y = trace.probs().row(0);
        let mut composed = vec![0.0; rows * d_y];
        for i in 0..rows {
            let row = &matrix[i * d_y..(i + 1) * d_y];
            for k in 0..d_y {
                // (J S)_{ik} with S = diag(y) - y y^T
                let dot: f64 = row.iter().zip(y).map(|(a, b)| a * b).sum();
                composed[i * d_y + k] = y[k] * (row[k] - dot);
            }
        }
        matrix = composed;
    }
    Ok(JacobianResult {
        matrix,
        rows,
        cols: d_y,
        range: hi - lo,
        layer: ordinal,
    })
}

/// Sensitivity of one layer under several norms at once.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityResult {
    pub layer: usize,
    /// Aligned with the requested norms.
    pub values: Vec<(Norm, f64)>,
    pub num_samples: usize,
    pub skipped_degenerate: usize,
}

impl SensitivityResult {
    pub fn value(&self, norm: Norm) -> Option<f64> {
        self.values.iter().find(|(n, _)| *n == norm).map(|(_, v)| *v)
    }
}

/// Range-normalized, size-normalized Jacobian norm averaged over samples.
///
/// `inputs` is a batch whose rows are treated as separate single-input
/// samples. Samples with a degenerate gradient range are skipped and counted.
pub fn sensitivity_norms(
    model: &Model,
    inputs: &Tensor,
    labels: &[usize],
    ordinal: usize,
    norms: &[Norm],
    side: OutputSide,
) -> Result<SensitivityResult> {
    if inputs.batch() == 0 || labels.is_empty() {
        return Err(Error::EmptyInput("sensitivity samples"));
    }
    if labels.len() != inputs.batch() {
        return Err(Error::LengthMismatch(inputs.batch(), labels.len()));
    }
    let index = model
        .param_layer_index(ordinal)
        .ok_or(Error::NotParameterizedLayer(ordinal))?;
    let n_weights = model.params()[ordinal].weights.len();
    debug_assert!(model.layers()[index].is_parameterized());
    let mut shape = inputs.shape().to_vec();
    shape[0] = 1;
    let per_sample = par::try_map_range(inputs.batch(), |k| -> Result<Option<Vec<f64>>> {
        let x = Tensor::new(shape.clone(), inputs.row(k).to_vec())?;
        let jac = jacobian_of_gradients(model, &x, labels[k], ordinal, side)?;
        if jac.range <= RANGE_EPSILON {
            return Ok(None);
        }
        let scaled: Vec<f64> = jac.matrix.iter().map(|v| v / jac.range).collect();
        Ok(Some(norms.iter().map(|n| n.apply(&scaled)).collect()))
    })?;
    let kept: Vec<&Vec<f64>> = per_sample.iter().flatten().collect();
    let skipped = per_sample.len() - kept.len();
    if kept.is_empty() {
        return Err(Error::AllSamplesDegenerate(ordinal));
    }
    if skipped > 0 {
        log::warn!("layer {ordinal}: skipped {skipped} samples with degenerate gradient range");
    }
    let values = norms
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            let total: f64 = kept.iter().map(|v| v[i]).sum();
            (n, total / (kept.len() as f64 * n.psi(n_weights)))
        })
        .collect();
    Ok(SensitivityResult {
        layer: ordinal,
        values,
        num_samples: kept.len(),
        skipped_degenerate: skipped,
    })
}

/// Single-norm convenience over [`sensitivity_norms`] on the logit side.
pub fn sensitivity(model: &Model, inputs: &Tensor, labels: &[usize], ordinal: usize, norm: Norm) -> Result<f64> {
    let r = sensitivity_norms(model, inputs, labels, ordinal, &[norm], OutputSide::Logits)?;
    Ok(r.values[0].1)
}

/// Min-max normalization of a per-layer profile to `[0, 1]`.
pub fn normalized_sensitivity_profile(values: &[f64]) -> Result<Vec<f64>> {
    if values.len() < 2 {
        return Err(Error::DegenerateProfile);
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return Err(Error::DegenerateProfile);
    }
    Ok(values.iter().map(|v| (v - lo) / (hi - lo)).collect())
}
