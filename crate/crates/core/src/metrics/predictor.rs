//! Fitting members of a predictive family by empirical-risk minimization.

use rand_distr::{Distribution, StandardNormal};

use super::family::{FamilyKind, PredictiveFamily, Reducer};
use crate::error::{Error, Result};
use crate::nn::{self, build_model, LayerSpec, Model, ModelSpec, SeedKind};
use crate::rng;
use crate::tensor::Tensor;

/// Probabilities are clamped to `[PROB_FLOOR, 1 - PROB_FLOOR]` before logs.
pub const PROB_FLOOR: f64 = 1e-12;

/// A flattened layer gradient labelled with a binary property.
#[derive(Debug, Clone, PartialEq)]
pub struct PropertySample {
    pub features: Vec<f64>,
    pub property: u8,
    pub layer: usize,
    pub round: Option<usize>,
    pub batch_id: usize,
}

impl PropertySample {
    pub fn new(features: Vec<f64>, property: u8) -> Self {
        PropertySample {
            features,
            property,
            layer: 0,
            round: None,
            batch_id: 0,
        }
    }
}

#[derive(Debug, Clone)]
enum Head {
    Constant(f64),
    Logistic { weights: Vec<f64>, bias: f64 },
    Mlp(Model),
}

/// A fitted predictor mapping a feature vector to `P(p = 1)`.
#[derive(Debug, Clone)]
pub struct Predictor {
    reducer: Reducer,
    projection: Option<Vec<f64>>,
    input_dim: usize,
    mean: Vec<f64>,
    inv_std: Vec<f64>,
    head: Head,
    /// Affine map `(a, b)` applied to the output logit.
    calibration: (f64, f64),
}

pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)
}

/// `-log f[g](p)` for a predicted positive probability `q`.
pub fn cross_entropy(q: f64, label: u8) -> f64 {
    let q = clamp_prob(q);
    if label == 1 {
        -q.ln()
    } else {
        -(1.0 - q).ln()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn logit(q: f64) -> f64 {
    let q = clamp_prob(q);
    (q / (1.0 - q)).ln()
}

/// Newton's method for the two-parameter logistic fit `sigmoid(a z + b)`.
fn platt(z: &[f64], y: &[f64]) -> (f64, f64) {
    let n = z.len() as f64;
    let rate = (y.iter().sum::<f64>() / n).clamp(1e-6, 1.0 - 1e-6);
    let (mut a, mut b) = (0.0, (rate / (1.0 - rate)).ln());
    let ridge = 1e-9;
    for _ in 0..100 {
        let (mut ga, mut gb, mut haa, mut hab, mut hbb) = (0.0, 0.0, ridge, 0.0, ridge);
        for (&zi, &yi) in z.iter().zip(y) {
            let p = sigmoid(a * zi + b);
            let w = p * (1.0 - p);
            ga += (p - yi) * zi;
            gb += p - yi;
            haa += w * zi * zi;
            hab += w * zi;
            hbb += w;
        }
        let det = haa * hbb - hab * hab;
        if !(det.abs() > 1e-300) {
            break;
        }
        let da = (hbb * ga - hab * gb) / det;
        let db = (haa * gb - hab * ga) / det;
        // Damped step keeps the iteration stable on separable data.
        let scale = 1.0_f64.min(5.0 / (da.abs() + db.abs()).max(1e-300));
        a -= scale * da;
        b -= scale * db;
        if (da.abs() + db.abs()) * scale < 1e-12 {
            break;
        }
    }
    (a, b)
}

fn positive_rate(samples: &[PropertySample]) -> f64 {
    samples.iter().filter(|s| s.property == 1).count() as f64 / samples.len() as f64
}

fn check_samples(samples: &[PropertySample]) -> Result<usize> {
    let first = samples.first().ok_or(Error::EmptyInput("property samples"))?;
    let dim = first.features.len();
    for s in samples {
        if s.features.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: s.features.len(),
            });
        }
        if s.property > 1 {
            return Err(Error::InvalidConfig(format!("property label {} is not binary", s.property)));
        }
    }
    Ok(dim)
}

fn reduce(reducer: Reducer, projection: Option<&[f64]>, x: &[f64]) -> Vec<f64> {
    match reducer {
        Reducer::None => x.to_vec(),
        Reducer::PoolMean { window } => x
            .chunks(window)
            .map(|c| c.iter().sum::<f64>() / c.len() as f64)
            .collect(),
        Reducer::PoolMax { window } => x
            .chunks(window)
            .map(|c| c.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect(),
        Reducer::RandomProjection { dim, .. } => {
            let p = projection.expect("projection drawn at fit time");
            p.chunks(x.len())
                .take(dim)
                .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
                .collect()
        }
    }
}

impl Predictor {
    fn transform(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                actual: x.len(),
            });
        }
        let mut z = reduce(self.reducer, self.projection.as_deref(), x);
        for ((v, m), s) in z.iter_mut().zip(&self.mean).zip(&self.inv_std) {
            *v = (*v - m) * s;
        }
        Ok(z)
    }

    /// Probability that the property equals 1.
    pub fn predict(&self, features: &[f64]) -> Result<f64> {
        Ok(self.predict_many(std::slice::from_ref(&features.to_vec()))?[0])
    }

    pub fn predict_many(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
        let raw = self.raw_predict(rows)?;
        let (a, b) = self.calibration;
        if (a, b) == (1.0, 0.0) {
            return Ok(raw);
        }
        Ok(raw.into_iter().map(|q| sigmoid(a * logit(q) + b)).collect())
    }

    fn raw_predict(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
        let z = rows.iter().map(|r| self.transform(r)).collect::<Result<Vec<_>>>()?;
        Ok(match &self.head {
            Head::Constant(q) => vec![*q; z.len()],
            Head::Logistic { weights, bias } => z
                .iter()
                .map(|x| sigmoid(bias + weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()))
                .collect(),
            Head::Mlp(model) => {
                if z.is_empty() {
                    return Ok(Vec::new());
                }
                let batch = Tensor::new(vec![z.len(), z[0].len()], z.concat())?;
                let trace = nn::forward(model, &batch)?;
                (0..z.len()).map(|k| trace.probs().row(k)[1]).collect()
            }
        })
    }

    /// Mean `-log f[g](p)` in nats over `samples`.
    pub fn mean_cross_entropy(&self, samples: &[PropertySample]) -> Result<f64> {
        if samples.is_empty() {
            return Err(Error::EmptyInput("property samples"));
        }
        let rows: Vec<Vec<f64>> = samples.iter().map(|s| s.features.clone()).collect();
        let q = self.predict_many(&rows)?;
        Ok(q.iter().zip(samples).map(|(&q, s)| cross_entropy(q, s.property)).sum::<f64>() / samples.len() as f64)
    }

    /// Refits an affine map of the output logit on `samples` (Platt scaling).
    ///
    /// The composed predictor stays in the same family: for logistic and
    /// MLP heads it amounts to rescaling the last layer.
    pub fn calibrate(&mut self, samples: &[PropertySample]) -> Result<()> {
        if self.is_constant() {
            return Ok(());
        }
        let rows: Vec<Vec<f64>> = samples.iter().map(|s| s.features.clone()).collect();
        let z: Vec<f64> = self.raw_predict(&rows)?.into_iter().map(logit).collect();
        let y: Vec<f64> = samples.iter().map(|s| f64::from(s.property)).collect();
        self.calibration = platt(&z, &y);
        Ok(())
    }

    pub fn is_constant(&self) -> bool {
        matches!(self.head, Head::Constant(_))
    }

    /// The best constant predictor: the empirical positive rate.
    pub fn constant(samples: &[PropertySample]) -> Result<Predictor> {
        let dim = check_samples(samples)?;
        Ok(Predictor {
            reducer: Reducer::None,
            projection: None,
            input_dim: dim,
            mean: Vec::new(),
            inv_std: Vec::new(),
            head: Head::Constant(positive_rate(samples)),
            calibration: (1.0, 0.0),
        })
    }
}

/// Fits a member of `family` to `samples` by full-batch gradient descent on
/// the mean cross-entropy (plus the family's L2 penalty).
pub fn train_predictor(samples: &[PropertySample], family: &PredictiveFamily) -> Result<Predictor> {
    family.validate()?;
    let dim = check_samples(samples)?;
    if samples.len() < 2 {
        return Err(Error::InvalidConfig("need at least two samples".into()));
    }
    if family.kind == FamilyKind::Constant {
        return Predictor::constant(samples);
    }
    let q = positive_rate(samples);
    if q == 0.0 || q == 1.0 {
        return Err(Error::SingleClass);
    }
    let projection = match family.reducer {
        Reducer::RandomProjection { dim: out, seed } => {
            let mut r = rng::rng(seed);
            let scale = 1.0 / (out as f64).sqrt();
            Some(
                (0..out * dim)
                    .map(|_| scale * Distribution::<f64>::sample(&StandardNormal, &mut r))
                    .collect::<Vec<f64>>(),
            )
        }
        _ => None,
    };
    let reduced: Vec<Vec<f64>> = samples
        .iter()
        .map(|s| reduce(family.reducer, projection.as_deref(), &s.features))
        .collect();
    let d = reduced[0].len();
    let n = reduced.len() as f64;
    let mut mean = vec![0.0; d];
    for r in &reduced {
        mean.iter_mut().zip(r).for_each(|(m, v)| *m += v / n);
    }
    let mut var = vec![0.0; d];
    for r in &reduced {
        var.iter_mut().zip(r).zip(&mean).for_each(|((s, v), m)| *s += (v - m).powi(2) / n);
    }
    // Constant features carry no information; zero them instead of dividing by ~0.
    let inv_std: Vec<f64> = var
        .iter()
        .map(|&v| if v > 1e-24 { 1.0 / v.sqrt() } else { 0.0 })
        .collect();
    let z: Vec<Vec<f64>> = reduced
        .iter()
        .map(|r| r.iter().zip(&mean).zip(&inv_std).map(|((v, m), s)| (v - m) * s).collect())
        .collect();
    let labels: Vec<u8> = samples.iter().map(|s| s.property).collect();
    let head = match family.kind {
        FamilyKind::Logistic => fit_logistic(&z, &labels, q, family),
        FamilyKind::Mlp { hidden_width, depth } => fit_mlp(&z, &labels, hidden_width, depth, family)?,
        FamilyKind::Constant => unreachable!("handled above"),
    };
    Ok(Predictor {
        reducer: family.reducer,
        projection,
        input_dim: dim,
        mean,
        inv_std,
        head,
        calibration: (1.0, 0.0),
    })
}

/// Largest eigenvalue of `Z^T Z / n` by power iteration.
fn top_eigenvalue(z: &[Vec<f64>]) -> f64 {
    let d = z[0].len();
    let n = z.len() as f64;
    let mut v = vec![1.0 / (d as f64).sqrt(); d];
    let mut lambda = 0.0;
    for _ in 0..50 {
        let mut next = vec![0.0; d];
        for row in z {
            let dot: f64 = row.iter().zip(&v).map(|(a, b)| a * b).sum();
            next.iter_mut().zip(row).for_each(|(t, a)| *t += dot * a / n);
        }
        let norm = next.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        lambda = norm;
        v = next.into_iter().map(|x| x / norm).collect();
    }
    lambda
}

fn fit_logistic(z: &[Vec<f64>], labels: &[u8], q: f64, family: &PredictiveFamily) -> Head {
    let d = z[0].len();
    let n = z.len() as f64;
    // Start at the best constant predictor so descent can only improve on it.
    let mut bias = (q / (1.0 - q)).ln();
    let mut weights = vec![0.0; d];
    let curvature = 0.25 * (top_eigenvalue(z) * 1.1 + 1.0) + family.l2;
    let step = family.lr.min(1.0 / curvature);
    for _ in 0..family.epochs {
        let mut gw = vec![0.0; d];
        let mut gb = 0.0;
        for (x, &y) in z.iter().zip(labels) {
            let p = sigmoid(bias + weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>());
            let err = (p - f64::from(y)) / n;
            gb += err;
            gw.iter_mut().zip(x).for_each(|(g, v)| *g += err * v);
        }
        for (w, g) in weights.iter_mut().zip(&gw) {
            *w -= step * (g + family.l2 * *w);
        }
        bias -= step * gb;
    }
    Head::Logistic { weights, bias }
}

fn fit_mlp(
    z: &[Vec<f64>],
    labels: &[u8],
    hidden: usize,
    depth: usize,
    family: &PredictiveFamily,
) -> Result<Head> {
    let d = z[0].len();
    let mut layers = Vec::new();
    let mut width = d;
    for _ in 0..depth {
        layers.push(LayerSpec::dense(width, hidden));
        layers.push(LayerSpec::Relu);
        width = hidden;
    }
    layers.push(LayerSpec::dense(width, 2));
    let mut model = build_model(&ModelSpec::new(vec![d], layers), family.seed)?;
    let batch = Tensor::new(vec![z.len(), d], z.concat())?;
    let targets: Vec<usize> = labels.iter().map(|&p| usize::from(p)).collect();
    let step = family.lr;
    for _ in 0..family.epochs {
        let trace = nn::forward(&model, &batch)?;
        let (_, seed) = nn::loss_softmax_ce(&trace, &targets)?;
        let mut grads = nn::backward_with_kind(&model, &trace, &seed, SeedKind::Loss)?;
        for (g, p) in grads.layers.iter_mut().zip(model.params()) {
            g.weights.axpy(family.l2, &p.weights)?;
        }
        model = nn::sgd_step(&model, &grads, step)?;
    }
    Ok(Head::Mlp(model))
}
