//! Forward pass, softmax cross-entropy and the backward pass.
//!
//! Batches are row-major with the sample index leading: `[K, features]` for
//! dense inputs and `[K, C, H, W]` for images. All reductions run in a fixed
//! ascending order so identical inputs give bit-identical outputs.

use super::gradient::{GradMeta, GradientRecord, LayerGrad, SeedKind};
use super::layer::LayerSpec;
use super::model::Model;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
enum LayerCache {
    None,
    ReluMask(Vec<bool>),
    PoolArgmax(Vec<usize>),
}

/// Everything the backward pass needs from one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    activations: Vec<Tensor>,
    caches: Vec<LayerCache>,
    probs: Tensor,
    fingerprint: u64,
}

impl ForwardTrace {
    pub fn batch_size(&self) -> usize {
        self.activations[0].batch()
    }

    /// The input batch.
    pub fn input(&self) -> &Tensor {
        &self.activations[0]
    }

    /// Output of layer `index` (for dense/conv layers this is the pre-activation).
    pub fn layer_output(&self, index: usize) -> &Tensor {
        &self.activations[index + 1]
    }

    /// Input of layer `index`.
    pub fn layer_input(&self, index: usize) -> &Tensor {
        &self.activations[index]
    }

    /// Final pre-activation `A_L`.
    pub fn logits(&self) -> &Tensor {
        self.activations.last().expect("non-empty")
    }

    /// Softmax of the logits, one probability row per sample.
    pub fn probs(&self) -> &Tensor {
        &self.probs
    }

    /// ReLU mask of layer `index`, if it is a ReLU layer.
    pub fn relu_mask(&self, index: usize) -> Option<&[bool]> {
        match &self.caches[index] {
            LayerCache::ReluMask(m) => Some(m),
            _ => None,
        }
    }
}

pub fn forward(model: &Model, batch: &Tensor) -> Result<ForwardTrace> {
    let shape = batch.shape();
    if shape.len() != model.input_shape().len() + 1 || &shape[1..] != model.input_shape() {
        let mut expected = vec![shape.first().copied().unwrap_or(1)];
        expected.extend_from_slice(model.input_shape());
        return Err(Error::ShapeMismatch {
            expected,
            actual: shape.to_vec(),
        });
    }
    let k = batch.batch();
    let shapes = model.shapes();
    let mut activations = Vec::with_capacity(model.layers().len() + 1);
    let mut caches = Vec::with_capacity(model.layers().len());
    activations.push(batch.clone());
    let mut ordinal = 0;
    for (i, layer) in model.layers().iter().enumerate() {
        let input = &activations[i];
        let mut out_shape = vec![k];
        out_shape.extend_from_slice(&shapes[i + 1]);
        let (out, cache) = match *layer {
            LayerSpec::Dense { in_size, out_size } => {
                let p = &model.params()[ordinal];
                ordinal += 1;
                let out = dense_forward(input.data(), p.weights.data(), p.biases.data(), k, in_size, out_size);
                (out, LayerCache::None)
            }
            LayerSpec::Conv2d { stride, .. } => {
                let p = &model.params()[ordinal];
                ordinal += 1;
                let geom = ConvGeom::new(&shapes[i], &shapes[i + 1], p.weights.shape(), stride);
                let out = conv_forward(input.data(), p.weights.data(), p.biases.data(), k, &geom);
                (out, LayerCache::None)
            }
            LayerSpec::MaxPool2d { window, stride } => {
                let (out, arg) = pool_forward(input.data(), k, &shapes[i], &shapes[i + 1], window, stride);
                (out, LayerCache::PoolArgmax(arg))
            }
            LayerSpec::Relu => {
                let mask: Vec<bool> = input.data().iter().map(|&v| v > 0.0).collect();
                let out = input.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
                (out, LayerCache::ReluMask(mask))
            }
            LayerSpec::Flatten => (input.data().to_vec(), LayerCache::None),
        };
        activations.push(Tensor::new(out_shape, out)?);
        caches.push(cache);
    }
    let probs = softmax_rows(activations.last().expect("non-empty"));
    Ok(ForwardTrace {
        activations,
        caches,
        probs,
        fingerprint: model.fingerprint(),
    })
}

fn softmax_rows(logits: &Tensor) -> Tensor {
    let d = logits.row_len();
    let mut out = Vec::with_capacity(logits.len());
    for k in 0..logits.batch() {
        let row = logits.row(k);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|&a| (a - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        out.extend(exps.iter().map(|e| e / sum));
    }
    Tensor::new(vec![logits.batch(), d], out).expect("same shape as logits")
}

/// Mean softmax cross-entropy (nats) and the seed `dl/dA_L = (Y_hat - Y) / K`.
pub fn loss_softmax_ce(trace: &ForwardTrace, labels: &[usize]) -> Result<(f64, Tensor)> {
    let logits = trace.logits();
    let k = logits.batch();
    let d = logits.row_len();
    if labels.len() != k {
        return Err(Error::LengthMismatch(labels.len(), k));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= d) {
        return Err(Error::LabelOutOfRange {
            label: bad,
            num_classes: d,
        });
    }
    let mut loss = 0.0;
    let mut seed = trace.probs().clone();
    for (row, &y) in labels.iter().enumerate() {
        let a = logits.row(row);
        let max = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + a.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - a[y];
        seed.data_mut()[row * d + y] -= 1.0;
    }
    seed.scale(1.0 / k as f64);
    Ok((loss / k as f64, seed))
}

/// Converts one-hot rows to class indices.
pub fn one_hot_to_indices(one_hot: &Tensor) -> Result<Vec<usize>> {
    (0..one_hot.batch())
        .map(|k| {
            let row = one_hot.row(k);
            let ones: Vec<usize> = row.iter().enumerate().filter(|(_, &v)| v == 1.0).map(|(i, _)| i).collect();
            if ones.len() == 1 && row.iter().all(|&v| v == 0.0 || v == 1.0) {
                Ok(ones[0])
            } else {
                Err(Error::InvalidConfig(format!("row {k} is not one-hot")))
            }
        })
        .collect()
}

/// Backpropagates `seed` (taken as `dl/dA_L`) through the frozen trace.
pub fn backward(model: &Model, trace: &ForwardTrace, seed: &Tensor) -> Result<GradientRecord> {
    backward_with_kind(model, trace, seed, SeedKind::Custom)
}

pub fn backward_with_kind(
    model: &Model,
    trace: &ForwardTrace,
    seed: &Tensor,
    seed_kind: SeedKind,
) -> Result<GradientRecord> {
    let grads = backprop(model, trace, seed, 0)?;
    Ok(GradientRecord {
        layers: grads.into_iter().map(|g| g.expect("all layers visited")).collect(),
        meta: GradMeta {
            batch_size: trace.batch_size(),
            round: None,
            seed_kind,
        },
    })
}

/// Gradient of a single parameterized layer; stops the recursion at that layer.
pub fn layer_gradient(model: &Model, trace: &ForwardTrace, seed: &Tensor, ordinal: usize) -> Result<LayerGrad> {
    let index = model
        .param_layer_index(ordinal)
        .ok_or(Error::NotParameterizedLayer(ordinal))?;
    let mut grads = backprop(model, trace, seed, index)?;
    Ok(grads[ordinal].take().expect("layer visited"))
}

/// Convenience: forward, softmax-CE loss and full backward on one batch.
pub fn loss_gradient(model: &Model, batch: &Tensor, labels: &[usize]) -> Result<(f64, GradientRecord)> {
    let trace = forward(model, batch)?;
    let (loss, seed) = loss_softmax_ce(&trace, labels)?;
    let grads = backward_with_kind(model, &trace, &seed, SeedKind::Loss)?;
    Ok((loss, grads))
}

fn check_trace(model: &Model, trace: &ForwardTrace, seed: &Tensor) -> Result<()> {
    if trace.fingerprint != model.fingerprint() || trace.activations.len() != model.layers().len() + 1 {
        return Err(Error::TraceMismatch("trace was produced by a different model".into()));
    }
    for (t, s) in trace.activations.iter().zip(model.shapes()) {
        if &t.shape()[1..] != s.as_slice() {
            return Err(Error::TraceMismatch(format!("activation shape {:?} vs {s:?}", t.shape())));
        }
    }
    if seed.shape() != trace.logits().shape() {
        return Err(Error::TraceMismatch(format!(
            "seed shape {:?} differs from output shape {:?}",
            seed.shape(),
            trace.logits().shape()
        )));
    }
    Ok(())
}

fn backprop(model: &Model, trace: &ForwardTrace, seed: &Tensor, stop: usize) -> Result<Vec<Option<LayerGrad>>> {
    check_trace(model, trace, seed)?;
    let k = trace.batch_size();
    let shapes = model.shapes();
    let mut grads: Vec<Option<LayerGrad>> = vec![None; model.num_param_layers()];
    let mut delta = seed.data().to_vec();
    for i in (stop..model.layers().len()).rev() {
        let need_input_delta = i > stop;
        let input = trace.activations[i].data();
        match model.layers()[i] {
            LayerSpec::Dense { in_size, out_size } => {
                let ord = model.param_ordinal(i).expect("dense is parameterized");
                let p = &model.params()[ord];
                let (gw, gb) = dense_param_grads(&delta, input, k, in_size, out_size);
                grads[ord] = Some(LayerGrad {
                    weights: Tensor::new(p.weights.shape().to_vec(), gw)?,
                    biases: Tensor::new(p.biases.shape().to_vec(), gb)?,
                });
                if need_input_delta {
                    delta = dense_input_delta(&delta, p.weights.data(), k, in_size, out_size);
                }
            }
            LayerSpec::Conv2d { stride, .. } => {
                let ord = model.param_ordinal(i).expect("conv is parameterized");
                let p = &model.params()[ord];
                let geom = ConvGeom::new(&shapes[i], &shapes[i + 1], p.weights.shape(), stride);
                let (gw, gb) = conv_param_grads(&delta, input, k, &geom);
                grads[ord] = Some(LayerGrad {
                    weights: Tensor::new(p.weights.shape().to_vec(), gw)?,
                    biases: Tensor::new(p.biases.shape().to_vec(), gb)?,
                });
                if need_input_delta {
                    delta = conv_input_delta(&delta, p.weights.data(), k, &geom);
                }
            }
            LayerSpec::MaxPool2d { .. } => {
                if need_input_delta {
                    let LayerCache::PoolArgmax(arg) = &trace.caches[i] else {
                        return Err(Error::TraceMismatch("missing pool indices".into()));
                    };
                    let mut next = vec![0.0; input.len()];
                    for (d, &src) in delta.iter().zip(arg) {
                        next[src] += d;
                    }
                    delta = next;
                }
            }
            LayerSpec::Relu => {
                let LayerCache::ReluMask(mask) = &trace.caches[i] else {
                    return Err(Error::TraceMismatch("missing relu mask".into()));
                };
                for (d, &on) in delta.iter_mut().zip(mask) {
                    if !on {
                        *d = 0.0;
                    }
                }
            }
            LayerSpec::Flatten => {}
        }
    }
    Ok(grads)
}

fn dense_forward(x: &[f64], w: &[f64], b: &[f64], k: usize, n_in: usize, n_out: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(k * n_out);
    for s in 0..k {
        let xs = &x[s * n_in..(s + 1) * n_in];
        for o in 0..n_out {
            let wo = &w[o * n_in..(o + 1) * n_in];
            let mut acc = b[o];
            for (wi, xi) in wo.iter().zip(xs) {
                acc += wi * xi;
            }
            out.push(acc);
        }
    }
    out
}

fn dense_param_grads(delta: &[f64], x: &[f64], k: usize, n_in: usize, n_out: usize) -> (Vec<f64>, Vec<f64>) {
    let mut gw = vec![0.0; n_out * n_in];
    let mut gb = vec![0.0; n_out];
    for s in 0..k {
        let xs = &x[s * n_in..(s + 1) * n_in];
        for o in 0..n_out {
            let d = delta[s * n_out + o];
            gb[o] += d;
            if d != 0.0 {
                for (g, xi) in gw[o * n_in..(o + 1) * n_in].iter_mut().zip(xs) {
                    *g += d * xi;
                }
            }
        }
    }
    (gw, gb)
}

fn dense_input_delta(delta: &[f64], w: &[f64], k: usize, n_in: usize, n_out: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * n_in];
    for s in 0..k {
        let dst = &mut out[s * n_in..(s + 1) * n_in];
        for o in 0..n_out {
            let d = delta[s * n_out + o];
            if d != 0.0 {
                for (t, wi) in dst.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                    *t += wi * d;
                }
            }
        }
    }
    out
}

struct ConvGeom {
    in_c: usize,
    in_h: usize,
    in_w: usize,
    out_c: usize,
    out_h: usize,
    out_w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
}

impl ConvGeom {
    fn new(input: &[usize], output: &[usize], weight: &[usize], stride: usize) -> Self {
        ConvGeom {
            in_c: input[0],
            in_h: input[1],
            in_w: input[2],
            out_c: output[0],
            out_h: output[1],
            out_w: output[2],
            kh: weight[2],
            kw: weight[3],
            stride,
        }
    }

    fn in_len(&self) -> usize {
        self.in_c * self.in_h * self.in_w
    }

    fn out_len(&self) -> usize {
        self.out_c * self.out_h * self.out_w
    }
}

fn conv_forward(x: &[f64], w: &[f64], b: &[f64], k: usize, g: &ConvGeom) -> Vec<f64> {
    let mut out = vec![0.0; k * g.out_len()];
    let plane = g.out_h * g.out_w;
    for s in 0..k {
        let xs = &x[s * g.in_len()..(s + 1) * g.in_len()];
        let os = &mut out[s * g.out_len()..(s + 1) * g.out_len()];
        for oc in 0..g.out_c {
            let dst = &mut os[oc * plane..(oc + 1) * plane];
            dst.iter_mut().for_each(|v| *v = b[oc]);
            for ic in 0..g.in_c {
                for ky in 0..g.kh {
                    for kx in 0..g.kw {
                        let wv = w[((oc * g.in_c + ic) * g.kh + ky) * g.kw + kx];
                        for oy in 0..g.out_h {
                            let row = (ic * g.in_h + oy * g.stride + ky) * g.in_w + kx;
                            for ox in 0..g.out_w {
                                dst[oy * g.out_w + ox] += wv * xs[row + ox * g.stride];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

fn conv_param_grads(delta: &[f64], x: &[f64], k: usize, g: &ConvGeom) -> (Vec<f64>, Vec<f64>) {
    let mut gw = vec![0.0; g.out_c * g.in_c * g.kh * g.kw];
    let mut gb = vec![0.0; g.out_c];
    let plane = g.out_h * g.out_w;
    for s in 0..k {
        let xs = &x[s * g.in_len()..(s + 1) * g.in_len()];
        let ds = &delta[s * g.out_len()..(s + 1) * g.out_len()];
        for oc in 0..g.out_c {
            let d = &ds[oc * plane..(oc + 1) * plane];
            gb[oc] += d.iter().sum::<f64>();
            for ic in 0..g.in_c {
                for ky in 0..g.kh {
                    for kx in 0..g.kw {
                        let mut acc = 0.0;
                        for oy in 0..g.out_h {
                            let row = (ic * g.in_h + oy * g.stride + ky) * g.in_w + kx;
                            for ox in 0..g.out_w {
                                acc += d[oy * g.out_w + ox] * xs[row + ox * g.stride];
                            }
                        }
                        gw[((oc * g.in_c + ic) * g.kh + ky) * g.kw + kx] += acc;
                    }
                }
            }
        }
    }
    (gw, gb)
}

fn conv_input_delta(delta: &[f64], w: &[f64], k: usize, g: &ConvGeom) -> Vec<f64> {
    let mut out = vec![0.0; k * g.in_len()];
    let plane = g.out_h * g.out_w;
    for s in 0..k {
        let ds = &delta[s * g.out_len()..(s + 1) * g.out_len()];
        let dst = &mut out[s * g.in_len()..(s + 1) * g.in_len()];
        for oc in 0..g.out_c {
            let d = &ds[oc * plane..(oc + 1) * plane];
            for ic in 0..g.in_c {
                for ky in 0..g.kh {
                    for kx in 0..g.kw {
                        let wv = w[((oc * g.in_c + ic) * g.kh + ky) * g.kw + kx];
                        for oy in 0..g.out_h {
                            let row = (ic * g.in_h + oy * g.stride + ky) * g.in_w + kx;
                            for ox in 0..g.out_w {
                                dst[row + ox * g.stride] += wv * d[oy * g.out_w + ox];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

fn pool_forward(
    x: &[f64],
    k: usize,
    input: &[usize],
    output: &[usize],
    window: usize,
    stride: usize,
) -> (Vec<f64>, Vec<usize>) {
    let (c, h, w) = (input[0], input[1], input[2]);
    let (oh, ow) = (output[1], output[2]);
    let mut out = Vec::with_capacity(k * c * oh * ow);
    let mut arg = Vec::with_capacity(out.capacity());
    for s in 0..k {
        for ch in 0..c {
            let base = (s * c + ch) * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = base;
                    for dy in 0..window {
                        for dx in 0..window {
                            let idx = base + (oy * stride + dy) * w + ox * stride + dx;
                            if x[idx] > best {
                                best = x[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    out.push(best);
                    arg.push(best_idx);
                }
            }
        }
    }
    (out, arg)
}
