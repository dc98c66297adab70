use std::collections::BTreeMap;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::tensor::Tensor;

fn one() -> f64 {
    1.0
}

/// A planted binary property.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PropertySpec {
    pub name: String,
    /// Size of the mean shift along the property direction; 0 makes the
    /// property independent of the inputs.
    pub signal_strength: f64,
    /// Correlation between the property and the parity of the main label.
    #[serde(default)]
    pub correlation_with_main: f64,
}

/// Gaussian mean-shift mixture with orthogonal class and property directions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub num_samples: usize,
    /// `[d]` for vectors or `[C, H, W]` for images.
    pub shape: Vec<usize>,
    pub num_classes: usize,
    /// Length of the class mean vectors.
    #[serde(default = "one")]
    pub class_strength: f64,
    #[serde(default)]
    pub properties: Vec<PropertySpec>,
    pub noise_std: f64,
    pub seed: u64,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let dim: usize = self.shape.iter().product();
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.num_samples == 0 {
            return bad("num_samples must be positive".into());
        }
        if !(self.shape.len() == 1 || self.shape.len() == 3) || dim == 0 {
            return bad(format!("shape must be [d] or [C,H,W], got {:?}", self.shape));
        }
        if self.num_classes < 2 {
            return bad("num_classes must be at least 2".into());
        }
        if dim < self.num_classes + self.properties.len() {
            return bad(format!(
                "{dim} features cannot hold {} orthogonal directions",
                self.num_classes + self.properties.len()
            ));
        }
        if !(self.noise_std >= 0.0) || !self.class_strength.is_finite() {
            return bad("noise_std must be non-negative".into());
        }
        let mut names = std::collections::BTreeSet::new();
        for p in &self.properties {
            if !(p.signal_strength >= 0.0) || !p.signal_strength.is_finite() {
                return bad(format!("property {}: signal_strength must be >= 0", p.name));
            }
            if !(-1.0..=1.0).contains(&p.correlation_with_main) {
                return bad(format!("property {}: correlation must lie in [-1, 1]", p.name));
            }
            if !names.insert(p.name.as_str()) {
                return bad(format!("duplicate property {}", p.name));
            }
        }
        Ok(())
    }
}

/// Draws a dataset: `x = class_strength * mu(y) + sum_p s_p * nu_p * (2p - 1) + noise`.
pub fn generate(config: &SynthConfig) -> Result<LabeledDataset> {
    generate_with_directions(config).map(|(d, _)| d)
}

/// Like [`generate`], also returning the unit directions (classes first, then properties).
pub fn generate_with_directions(config: &SynthConfig) -> Result<(LabeledDataset, Vec<Vec<f64>>)> {
    config.validate()?;
    let dim: usize = config.shape.iter().product();
    let mut dir_rng = rng::rng(rng::derive_str(config.seed, "directions"));
    let n_dirs = config.num_classes + config.properties.len();
    let raw: Vec<Vec<f64>> = (0..n_dirs)
        .map(|_| match config.shape.as_slice() {
            &[c, h, w] => spatial_pattern(&mut dir_rng, c, h, w, n_dirs),
            _ => gaussian(&mut dir_rng, dim),
        })
        .collect();
    let dirs = orthonormalize(raw)?;
    let (class_dirs, prop_dirs) = dirs.split_at(config.num_classes);

    let mut rng = rng::rng(rng::derive_str(config.seed, "samples"));
    let k = config.num_samples;
    let mut data = Vec::with_capacity(k * dim);
    let mut labels = Vec::with_capacity(k);
    let mut props: Vec<Vec<u8>> = vec![Vec::with_capacity(k); config.properties.len()];
    for _ in 0..k {
        let y = rng.random_range(0..config.num_classes);
        let parity = (y % 2) as u8;
        let mut x: Vec<f64> = class_dirs[y].iter().map(|v| config.class_strength * v).collect();
        for (j, spec) in config.properties.iter().enumerate() {
            let keep = rng.random_bool((1.0 + spec.correlation_with_main) / 2.0);
            let p = if keep { parity } else { 1 - parity };
            let sign = if p == 1 { 1.0 } else { -1.0 };
            for (xi, d) in x.iter_mut().zip(&prop_dirs[j]) {
                *xi += spec.signal_strength * sign * d;
            }
            props[j].push(p);
        }
        for xi in &mut x {
            let z: f64 = StandardNormal.sample(&mut rng);
            *xi += config.noise_std * z;
        }
        data.extend_from_slice(&x);
        labels.push(y);
    }
    let mut shape = vec![k];
    shape.extend_from_slice(&config.shape);
    let properties = config
        .properties
        .iter()
        .map(|p| p.name.clone())
        .zip(props)
        .collect::<BTreeMap<_, _>>();
    let ds = LabeledDataset::new(Tensor::new(shape, data)?, labels, config.num_classes, properties)?;
    Ok((ds, dirs))
}

fn gaussian(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Smooth pattern: a coarse Gaussian grid upsampled bilinearly to `h x w`.
/// The grid is refined until it has room for `n_dirs` independent patterns.
fn spatial_pattern(rng: &mut Rng, c: usize, h: usize, w: usize, n_dirs: usize) -> Vec<f64> {
    let mut gh = h.div_ceil(4).clamp(2.min(h), h);
    let mut gw = w.div_ceil(4).clamp(2.min(w), w);
    while c * gh * gw < 2 * n_dirs && (gh < h || gw < w) {
        gh = (gh + 1).min(h);
        gw = (gw + 1).min(w);
    }
    let mut out = Vec::with_capacity(c * h * w);
    for _ in 0..c {
        let grid = gaussian(rng, gh * gw);
        for y in 0..h {
            let fy = if h > 1 { y as f64 * (gh - 1) as f64 / (h - 1) as f64 } else { 0.0 };
            let (y0, ty) = (fy.floor() as usize, fy.fract());
            let y1 = (y0 + 1).min(gh - 1);
            for x in 0..w {
                let fx = if w > 1 { x as f64 * (gw - 1) as f64 / (w - 1) as f64 } else { 0.0 };
                let (x0, tx) = (fx.floor() as usize, fx.fract());
                let x1 = (x0 + 1).min(gw - 1);
                let top = grid[y0 * gw + x0] * (1.0 - tx) + grid[y0 * gw + x1] * tx;
                let bottom = grid[y1 * gw + x0] * (1.0 - tx) + grid[y1 * gw + x1] * tx;
                out.push(top * (1.0 - ty) + bottom * ty);
            }
        }
    }
    out
}

/// Gram-Schmidt with a second re-orthogonalization pass.
fn orthonormalize(vectors: Vec<Vec<f64>>) -> Result<Vec<Vec<f64>>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(vectors.len());
    for mut v in vectors {
        for _ in 0..2 {
            for b in &basis {
                let proj: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= proj * y);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-8 {
            return Err(Error::InvalidConfig("could not draw independent directions".into()));
        }
        v.iter_mut().for_each(|x| *x /= norm);
        basis.push(v);
    }
    Ok(basis)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(signal: f64, rho: f64, n: usize) -> SynthConfig {
        SynthConfig {
            num_samples: n,
            shape: vec![16],
            num_classes: 2,
            class_strength: 1.0,
            properties: vec![PropertySpec {
                name: "p".into(),
                signal_strength: signal,
                correlation_with_main: rho,
            }],
            noise_std: 1.0,
            seed: 17,
        }
    }

    fn corr(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    fn probe(ds: &LabeledDataset, dir: &[f64]) -> Vec<f64> {
        (0..ds.len())
            .map(|i| ds.inputs.row(i).iter().zip(dir).map(|(x, d)| x * d).sum())
            .collect()
    }

    #[test]
    fn same_seed_same_dataset() {
        let a = generate(&config(1.0, 0.0, 50)).unwrap();
        let b = generate(&config(1.0, 0.0, 50)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_signal_property_is_independent_of_inputs() {
        let (ds, dirs) = generate_with_directions(&config(0.0, 0.0, 10_000)).unwrap();
        let p: Vec<f64> = ds.property("p").unwrap().iter().map(|&v| f64::from(v)).collect();
        let mut probes = dirs.clone();
        let mut r = rng::rng(99);
        probes.push(gaussian(&mut r, 16));
        probes.push(vec![1.0; 16]);
        for d in &probes {
            let c = corr(&p, &probe(&ds, d));
            assert!(c.abs() <= 0.05, "probe correlation {c}");
        }
    }

    #[test]
    fn zero_correlation_property_is_independent_of_label() {
        let ds = generate(&config(2.0, 0.0, 10_000)).unwrap();
        let p: Vec<f64> = ds.property("p").unwrap().iter().map(|&v| f64::from(v)).collect();
        let y: Vec<f64> = ds.labels.iter().map(|&v| v as f64).collect();
        assert!(corr(&p, &y).abs() <= 0.05);
        let rho = generate(&config(2.0, 0.6, 10_000)).unwrap();
        let p: Vec<f64> = rho.property("p").unwrap().iter().map(|&v| f64::from(v)).collect();
        let y: Vec<f64> = rho.labels.iter().map(|&v| v as f64).collect();
        assert!((corr(&p, &y) - 0.6).abs() <= 0.05);
    }

    #[test]
    fn directions_are_orthonormal() {
        for shape in [vec![16], vec![2, 9, 9]] {
            let mut cfg = config(1.0, 0.0, 10);
            cfg.shape = shape;
            cfg.num_classes = 4;
            let (_, dirs) = generate_with_directions(&cfg).unwrap();
            for (i, a) in dirs.iter().enumerate() {
                for (j, b) in dirs.iter().enumerate() {
                    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                    let target = if i == j { 1.0 } else { 0.0 };
                    assert!((dot - target).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn strong_signal_is_linearly_separable() {
        let (ds, dirs) = generate_with_directions(&config(3.0, 0.0, 2000)).unwrap();
        let proj = probe(&ds, &dirs[2]);
        let p = ds.property("p").unwrap();
        let correct = proj.iter().zip(p).filter(|(v, &l)| (**v > 0.0) == (l == 1)).count();
        assert!(correct as f64 / 2000.0 >= 0.95);
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut c = config(1.0, 0.0, 10);
        c.shape = vec![2];
        assert!(generate(&c).is_err());
        let mut c = config(-1.0, 0.0, 10);
        c.noise_std = 1.0;
        assert!(generate(&c).is_err());
        assert!(generate(&config(1.0, 1.5, 10)).is_err());
    }
}
