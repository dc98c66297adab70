use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::gradient::GradientRecord;
use super::layer::{LayerSpec, ModelSpec};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

/// Weights and biases of one parameterized layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub weights: Tensor,
    pub biases: Tensor,
}

/// An immutable sequential network. Updates produce new models.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    spec: ModelSpec,
    shapes: Vec<Vec<usize>>,
    param_layers: Vec<usize>,
    params: Vec<LayerParams>,
    seed: u64,
    fingerprint: u64,
}

/// Builds a model with Glorot-uniform weights and zero biases.
pub fn build_model(spec: &ModelSpec, seed: u64) -> Result<Model> {
    let shapes = spec.infer_shapes()?;
    let mut rng = rng::rng(seed);
    let params = spec
        .layers
        .iter()
        .filter_map(|layer| {
            let (w_shape, b_shape) = layer.param_shapes()?;
            let (fan_in, fan_out) = layer.fans()?;
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let n: usize = w_shape.iter().product();
            let w: Vec<f64> = (0..n).map(|_| rng.random_range(-limit..=limit)).collect();
            Some(LayerParams {
                weights: Tensor::new(w_shape, w).expect("shape product matches"),
                biases: Tensor::zeros(&b_shape),
            })
        })
        .collect();
    Model::assemble(spec.clone(), shapes, params, seed)
}

impl Model {
    fn assemble(
        spec: ModelSpec,
        shapes: Vec<Vec<usize>>,
        params: Vec<LayerParams>,
        seed: u64,
    ) -> Result<Self> {
        let param_layers = spec.parameterized();
        if params.len() != param_layers.len() {
            return Err(Error::ShapeMismatch {
                expected: vec![param_layers.len()],
                actual: vec![params.len()],
            });
        }
        for (p, &li) in params.iter().zip(&param_layers) {
            let (w, b) = spec.layers[li].param_shapes().expect("parameterized");
            if p.weights.shape() != w.as_slice() {
                return Err(Error::ShapeMismatch {
                    expected: w,
                    actual: p.weights.shape().to_vec(),
                });
            }
            if p.biases.shape() != b.as_slice() {
                return Err(Error::ShapeMismatch {
                    expected: b,
                    actual: p.biases.shape().to_vec(),
                });
            }
        }
        let fingerprint = fingerprint(&params);
        Ok(Model {
            spec,
            shapes,
            param_layers,
            params,
            seed,
            fingerprint,
        })
    }

    /// Rebuilds a model from explicit parameters (used by snapshot loading).
    pub fn from_params(spec: ModelSpec, params: Vec<LayerParams>, seed: u64) -> Result<Self> {
        let shapes = spec.infer_shapes()?;
        Model::assemble(spec, shapes, params, seed)
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.spec.layers
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.spec.input_shape
    }

    /// Per-sample activation shapes; index 0 is the input.
    pub fn shapes(&self) -> &[Vec<usize>] {
        &self.shapes
    }

    pub fn num_classes(&self) -> usize {
        self.shapes.last().expect("non-empty")[0]
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &[LayerParams] {
        &self.params
    }

    /// Number of parameterized layers.
    pub fn num_param_layers(&self) -> usize {
        self.params.len()
    }

    /// Index into `layers()` of the `ordinal`-th parameterized layer.
    pub fn param_layer_index(&self, ordinal: usize) -> Option<usize> {
        self.param_layers.get(ordinal).copied()
    }

    /// Ordinal of layer `index` among parameterized layers.
    pub(crate) fn param_ordinal(&self, index: usize) -> Option<usize> {
        self.param_layers.iter().position(|&i| i == index)
    }

    pub fn param_layer_spec(&self, ordinal: usize) -> Option<&LayerSpec> {
        self.param_layer_index(ordinal).map(|i| &self.spec.layers[i])
    }

    pub fn num_parameters(&self) -> usize {
        self.params
            .iter()
            .map(|p| p.weights.len() + p.biases.len())
            .sum()
    }

    /// Hash of the parameter bits; traces remember it to detect mixing models.
    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    /// Returns a copy with `params` replaced, keeping the seed.
    pub fn with_params(&self, params: Vec<LayerParams>) -> Result<Self> {
        Model::assemble(self.spec.clone(), self.shapes.clone(), params, self.seed)
    }

    /// Parameters flattened in layer order, weights before biases.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_parameters());
        for p in &self.params {
            out.extend_from_slice(p.weights.data());
            out.extend_from_slice(p.biases.data());
        }
        out
    }

    /// Inverse of [`Model::flat_params`].
    pub fn with_flat_params(&self, flat: &[f64]) -> Result<Self> {
        if flat.len() != self.num_parameters() {
            return Err(Error::ShapeMismatch {
                expected: vec![self.num_parameters()],
                actual: vec![flat.len()],
            });
        }
        let mut offset = 0;
        let mut params = Vec::with_capacity(self.params.len());
        for p in &self.params {
            let mut take = |t: &Tensor| {
                let n = t.len();
                let out = Tensor::new(t.shape().to_vec(), flat[offset..offset + n].to_vec());
                offset += n;
                out
            };
            params.push(LayerParams {
                weights: take(&p.weights)?,
                biases: take(&p.biases)?,
            });
        }
        self.with_params(params)
    }
}

/// Plain SGD without momentum: `theta' = theta - lr * g`.
pub fn sgd_step(model: &Model, grads: &GradientRecord, lr: f64) -> Result<Model> {
    grads.check_matches(model)?;
    let params = model
        .params
        .iter()
        .zip(&grads.layers)
        .map(|(p, g)| {
            let mut next = p.clone();
            next.weights.axpy(-lr, &g.weights)?;
            next.biases.axpy(-lr, &g.biases)?;
            Ok(next)
        })
        .collect::<Result<Vec<_>>>()?;
    model.with_params(params)
}

fn fingerprint(params: &[LayerParams]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for p in params {
        for v in p.weights.data().iter().chain(p.biases.data()) {
            h ^= v.to_bits();
            h = h.wrapping_mul(0x0000_0100_0000_01b3).rotate_left(17);
        }
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradient::LayerGrad;

    fn single_dense() -> ModelSpec {
        ModelSpec::new(vec![2], vec![LayerSpec::dense(2, 2)])
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let a = build_model(&single_dense(), 42).unwrap();
        let b = build_model(&single_dense(), 42).unwrap();
        let bits = |m: &Model| m.flat_params().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        let c = build_model(&single_dense(), 43).unwrap();
        assert_ne!(bits(&a), bits(&c));
    }

    #[test]
    fn incompatible_chain_rejected() {
        let spec = ModelSpec::new(vec![3], vec![LayerSpec::dense(3, 2), LayerSpec::dense(4, 1)]);
        assert!(matches!(
            build_model(&spec, 0),
            Err(Error::IncompatibleShapes { .. })
        ));
    }

    #[test]
    fn init_within_glorot_bounds() {
        let spec = ModelSpec::new(vec![10], vec![LayerSpec::dense(10, 6)]);
        let m = build_model(&spec, 1).unwrap();
        let limit = (6.0f64 / 16.0).sqrt();
        assert!(m.params()[0].weights.data().iter().all(|w| w.abs() <= limit));
        assert!(m.params()[0].biases.data().iter().all(|&b| b == 0.0));
    }

    fn scalar_model(theta: f64) -> Model {
        let spec = ModelSpec::new(vec![1], vec![LayerSpec::dense(1, 1)]);
        let m = build_model(&spec, 0).unwrap();
        m.with_flat_params(&[theta, 0.0]).unwrap()
    }

    fn scalar_grad(g: f64) -> GradientRecord {
        GradientRecord::new(vec![LayerGrad {
            weights: Tensor::new(vec![1, 1], vec![g]).unwrap(),
            biases: Tensor::zeros(&[1]),
        }])
    }

    #[test]
    fn sgd_step_arithmetic() {
        let m = scalar_model(1.0);
        let next = sgd_step(&m, &scalar_grad(3.0), 0.01).unwrap();
        assert!((next.flat_params()[0] - 0.97).abs() < 1e-15);
        let same = sgd_step(&m, &scalar_grad(0.0), 0.01).unwrap();
        assert_eq!(same.flat_params(), m.flat_params());
    }

    #[test]
    fn two_steps_equal_one_summed_step() {
        let m = scalar_model(0.3);
        let two = sgd_step(&sgd_step(&m, &scalar_grad(1.5), 0.1).unwrap(), &scalar_grad(-0.7), 0.1)
            .unwrap();
        let one = sgd_step(&m, &scalar_grad(0.8), 0.1).unwrap();
        assert!((two.flat_params()[0] - one.flat_params()[0]).abs() < 1e-15);
    }

    #[test]
    fn sgd_rejects_mismatched_grads() {
        let m = build_model(&single_dense(), 0).unwrap();
        assert!(sgd_step(&m, &scalar_grad(1.0), 0.1).is_err());
    }
}
