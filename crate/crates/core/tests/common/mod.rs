//! Independent oracles shared by the integration tests and the acceptance suite.
#![allow(dead_code)]

use gradleak_core::metrics::{jacobian_of_gradients, OutputSide};
use gradleak_core::nn::{backward, build_model, forward, layer_gradient, loss_gradient, loss_softmax_ce, LayerSpec, Model, ModelSpec};
use gradleak_core::{rng, Tensor};
use rand::Rng;

pub const FD_STEP: f64 = 1e-5;
pub const SEED_STEP: f64 = 1e-6;

/// One small model per layer-kind path exercised by the gradient oracles.
pub fn layer_kind_specs() -> Vec<(&'static str, ModelSpec)> {
    vec![
        (
            "dense",
            ModelSpec::new(
                vec![6],
                vec![LayerSpec::dense(6, 5), LayerSpec::Relu, LayerSpec::dense(5, 3)],
            ),
        ),
        (
            "conv2d",
            ModelSpec::new(
                vec![2, 6, 6],
                vec![
                    LayerSpec::conv(2, 3, 3),
                    LayerSpec::Relu,
                    LayerSpec::Flatten,
                    LayerSpec::dense(48, 3),
                ],
            ),
        ),
        (
            "maxpool",
            ModelSpec::new(
                vec![1, 6, 6],
                vec![
                    LayerSpec::conv(1, 2, 3),
                    LayerSpec::pool(2),
                    LayerSpec::Relu,
                    LayerSpec::Flatten,
                    LayerSpec::dense(8, 3),
                ],
            ),
        ),
    ]
}

pub fn random_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut r = rng::rng(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap()
}

pub fn random_labels(k: usize, classes: usize, seed: u64) -> Vec<usize> {
    let mut r = rng::rng(seed);
    (0..k).map(|_| r.random_range(0..classes)).collect()
}

fn rel(diff: f64, scale: f64) -> f64 {
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn batch_for(model: &Model, k: usize, seed: u64) -> (Tensor, Vec<usize>) {
    let mut shape = vec![k];
    shape.extend_from_slice(model.input_shape());
    (
        random_tensor(&shape, rng::derive_str(seed, "x")),
        random_labels(k, model.num_classes(), rng::derive_str(seed, "y")),
    )
}

fn loss(model: &Model, x: &Tensor, y: &[usize]) -> f64 {
    loss_softmax_ce(&forward(model, x).unwrap(), y).unwrap().0
}

/// Worst per-layer relative error between the analytic gradient and
/// central finite differences of the mean loss.
pub fn gradcheck_rel_error(spec: &ModelSpec, seed: u64) -> f64 {
    let model = build_model(spec, seed).unwrap();
    let (x, y) = batch_for(&model, 3, seed);
    let analytic = loss_gradient(&model, &x, &y).unwrap().1;
    let flat = model.flat_params();
    let mut offset = 0;
    let mut worst: f64 = 0.0;
    for layer in &analytic.layers {
        let a = layer.flat_all();
        let numeric: Vec<f64> = (0..a.len())
            .map(|i| {
                let mut p = flat.clone();
                p[offset + i] += FD_STEP;
                let up = loss(&model.with_flat_params(&p).unwrap(), &x, &y);
                p[offset + i] -= 2.0 * FD_STEP;
                let down = loss(&model.with_flat_params(&p).unwrap(), &x, &y);
                (up - down) / (2.0 * FD_STEP)
            })
            .collect();
        let diff: Vec<f64> = a.iter().zip(&numeric).map(|(p, q)| p - q).collect();
        worst = worst.max(rel(norm(&diff), norm(&a).max(norm(&numeric))));
        offset += a.len();
    }
    worst
}

/// Worst relative error between Jacobian columns and seed-side finite
/// differences around the loss seed, over every parameterized layer.
pub fn jacobian_fd_rel_error(spec: &ModelSpec, seed: u64) -> f64 {
    let model = build_model(spec, seed).unwrap();
    let (x, y) = batch_for(&model, 1, seed);
    let trace = forward(&model, &x).unwrap();
    let (_, loss_seed) = loss_softmax_ce(&trace, &y).unwrap();
    let mut worst: f64 = 0.0;
    for l in 0..model.num_param_layers() {
        let j = jacobian_of_gradients(&model, &x, y[0], l, OutputSide::Logits).unwrap();
        for c in 0..j.cols {
            let at = |h: f64| {
                let mut s = loss_seed.clone();
                s.data_mut()[c] += h;
                layer_gradient(&model, &trace, &s, l).unwrap().weights.into_data()
            };
            let (up, down) = (at(SEED_STEP), at(-SEED_STEP));
            let col = j.column(c);
            let diff: Vec<f64> = (0..j.rows)
                .map(|r| (up[r] - down[r]) / (2.0 * SEED_STEP) - col[r])
                .collect();
            worst = worst.max(rel(norm(&diff), norm(&col)));
        }
    }
    worst
}

/// Largest absolute deviation of `backward(a s1 + b s2)` from
/// `a backward(s1) + b backward(s2)`.
pub fn linearity_abs_error(spec: &ModelSpec, seed: u64) -> f64 {
    let model = build_model(spec, seed).unwrap();
    let (x, _) = batch_for(&model, 2, seed);
    let trace = forward(&model, &x).unwrap();
    let shape = trace.logits().shape().to_vec();
    let s1 = random_tensor(&shape, rng::derive_str(seed, "s1"));
    let s2 = random_tensor(&shape, rng::derive_str(seed, "s2"));
    let mut r = rng::rng(rng::derive_str(seed, "ab"));
    let (a, b): (f64, f64) = (r.random_range(-2.0..2.0), r.random_range(-2.0..2.0));
    let mut combo = s1.clone();
    combo.scale(a);
    combo.axpy(b, &s2).unwrap();
    let g = backward(&model, &trace, &combo).unwrap().flat();
    let g1 = backward(&model, &trace, &s1).unwrap().flat();
    let g2 = backward(&model, &trace, &s2).unwrap().flat();
    g.iter()
        .zip(g1.iter().zip(&g2))
        .map(|(g, (p, q))| (g - (a * p + b * q)).abs())
        .fold(0.0, f64::max)
}

/// Brute-force O(n^2) Mann-Whitney AUC with ties counted as one half.
pub fn pairwise_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let (mut wins, mut ties, mut pairs) = (0u64, 0u64, 0u64);
    for (i, &si) in scores.iter().enumerate() {
        if labels[i] != 1 {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] != 0 {
                continue;
            }
            pairs += 1;
            if si > sj {
                wins += 1;
            } else if si == sj {
                ties += 1;
            }
        }
    }
    (wins as f64 + 0.5 * ties as f64) / pairs as f64
}

/// The single-dense-layer worked example: zero weights, input `[1, 0]`,
/// label 0.
pub fn hand_case_model() -> (Model, Tensor) {
    let spec = ModelSpec::new(vec![2], vec![LayerSpec::dense(2, 2)]);
    let m = build_model(&spec, 0).unwrap();
    let zero = m.flat_params().iter().map(|_| 0.0).collect::<Vec<_>>();
    (m.with_flat_params(&zero).unwrap(), Tensor::new(vec![1, 2], vec![1.0, 0.0]).unwrap())
}
