use serde::{Deserialize, Serialize};

use super::model::Model;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// How the backward pass was seeded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedKind {
    /// Softmax cross-entropy seed `(Y_hat - Y) / K`.
    Loss,
    /// Unit vector `e_j` at the output pre-activation.
    Unit(usize),
    /// Any other caller-provided seed.
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradMeta {
    pub batch_size: usize,
    pub round: Option<usize>,
    pub seed_kind: SeedKind,
}

/// Gradient of one parameterized layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerGrad {
    pub weights: Tensor,
    pub biases: Tensor,
}

impl LayerGrad {
    /// Weights then biases, flattened.
    pub fn flat_all(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.weights.len() + self.biases.len());
        v.extend_from_slice(self.weights.data());
        v.extend_from_slice(self.biases.data());
        v
    }
}

/// Per-layer gradients for every parameterized layer of a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientRecord {
    pub layers: Vec<LayerGrad>,
    pub meta: GradMeta,
}

impl GradientRecord {
    pub fn new(layers: Vec<LayerGrad>) -> Self {
        GradientRecord {
            layers,
            meta: GradMeta {
                batch_size: 0,
                round: None,
                seed_kind: SeedKind::Custom,
            },
        }
    }

    pub fn zeros_like(model: &Model) -> Self {
        GradientRecord::new(
            model
                .params()
                .iter()
                .map(|p| LayerGrad {
                    weights: Tensor::zeros(p.weights.shape()),
                    biases: Tensor::zeros(p.biases.shape()),
                })
                .collect(),
        )
    }

    pub fn check_matches(&self, model: &Model) -> Result<()> {
        if self.layers.len() != model.num_param_layers() {
            return Err(Error::ShapeMismatch {
                expected: vec![model.num_param_layers()],
                actual: vec![self.layers.len()],
            });
        }
        for (g, p) in self.layers.iter().zip(model.params()) {
            g.weights.check_same_shape(&p.weights)?;
            g.biases.check_same_shape(&p.biases)?;
        }
        Ok(())
    }

    pub fn check_same_shapes(&self, other: &GradientRecord) -> Result<()> {
        if self.layers.len() != other.layers.len() {
            return Err(Error::ShapeMismatch {
                expected: vec![self.layers.len()],
                actual: vec![other.layers.len()],
            });
        }
        for (a, b) in self.layers.iter().zip(&other.layers) {
            a.weights.check_same_shape(&b.weights)?;
            a.biases.check_same_shape(&b.biases)?;
        }
        Ok(())
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &GradientRecord) -> Result<()> {
        self.check_same_shapes(other)?;
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights.axpy(alpha, &b.weights)?;
            a.biases.axpy(alpha, &b.biases)?;
        }
        Ok(())
    }

    pub fn scale(&mut self, alpha: f64) {
        for l in &mut self.layers {
            l.weights.scale(alpha);
            l.biases.scale(alpha);
        }
    }

    /// All gradients flattened in layer order, weights before biases.
    pub fn flat(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|l| l.flat_all()).collect()
    }
}
