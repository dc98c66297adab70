//! Datasets with a main-task label and named binary property labels.

mod container;
mod synth;
mod tabular;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

pub use container::{decode_dataset, encode_dataset, read_dataset, write_dataset, DATA_MAGIC};
pub use synth::{generate, generate_with_directions, PropertySpec, SynthConfig};
pub use tabular::{load_csv, load_csv_reader};

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    /// `[K, ...feature_shape]`.
    pub inputs: Tensor,
    /// Main-task class index per sample.
    pub labels: Vec<usize>,
    pub num_classes: usize,
    /// Property name to one {0,1} label per sample.
    pub properties: BTreeMap<String, Vec<u8>>,
}

/// Header-level description of a dataset, without the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub num_samples: usize,
    pub feature_shape: Vec<usize>,
    pub num_classes: usize,
    pub property_names: Vec<String>,
}

impl LabeledDataset {
    pub fn new(
        inputs: Tensor,
        labels: Vec<usize>,
        num_classes: usize,
        properties: BTreeMap<String, Vec<u8>>,
    ) -> Result<Self> {
        let k = inputs.batch();
        if labels.len() != k {
            return Err(Error::LengthMismatch(labels.len(), k));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::LabelOutOfRange {
                label: bad,
                num_classes,
            });
        }
        for (name, p) in &properties {
            if p.len() != k {
                return Err(Error::LengthMismatch(p.len(), k));
            }
            if p.iter().any(|&v| v > 1) {
                return Err(Error::NonBinaryProperty {
                    column: name.clone(),
                    distinct: 3,
                });
            }
        }
        Ok(LabeledDataset {
            inputs,
            labels,
            num_classes,
            properties,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_shape(&self) -> &[usize] {
        &self.inputs.shape()[1..]
    }

    pub fn info(&self) -> DatasetInfo {
        DatasetInfo {
            num_samples: self.len(),
            feature_shape: self.feature_shape().to_vec(),
            num_classes: self.num_classes,
            property_names: self.properties.keys().cloned().collect(),
        }
    }

    pub fn property(&self, name: &str) -> Result<&[u8]> {
        self.properties
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    }

    /// Samples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> LabeledDataset {
        LabeledDataset {
            inputs: self.inputs.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            properties: self
                .properties
                .iter()
                .map(|(k, v)| (k.clone(), indices.iter().map(|&i| v[i]).collect()))
                .collect(),
        }
    }

    /// Inputs and labels for the samples at `indices`.
    pub fn batch(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        (
            self.inputs.select_rows(indices),
            indices.iter().map(|&i| self.labels[i]).collect(),
        )
    }
}

/// Index boundaries for slicing `n` items by cumulative `fractions`.
fn boundaries(n: usize, fractions: &[f64]) -> Vec<usize> {
    let mut acc = 0.0;
    let mut out = Vec::with_capacity(fractions.len() + 1);
    out.push(0);
    for (i, f) in fractions.iter().enumerate() {
        acc += f;
        let b = if i + 1 == fractions.len() {
            n
        } else {
            ((acc * n as f64).round() as usize).min(n)
        };
        out.push(b.max(*out.last().expect("non-empty")));
    }
    out
}

pub(crate) fn check_fractions(fractions: &[f64]) -> Result<()> {
    let sum: f64 = fractions.iter().sum();
    if fractions.is_empty() || fractions.iter().any(|&f| !(f > 0.0)) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::BadFractions(fractions.to_vec()));
    }
    Ok(())
}

/// Index sets of a seeded split; see [`split`].
pub fn split_indices(
    dataset: &LabeledDataset,
    fractions: &[f64],
    seed: u64,
    stratify_by: Option<&str>,
) -> Result<Vec<Vec<usize>>> {
    check_fractions(fractions)?;
    let mut rng = rng::rng(seed);
    let groups: Vec<Vec<usize>> = match stratify_by {
        None => vec![(0..dataset.len()).collect()],
        Some(name) => {
            let p = dataset.property(name)?;
            (0..2u8)
                .map(|v| (0..dataset.len()).filter(|&i| p[i] == v).collect())
                .collect()
        }
    };
    let mut parts = vec![Vec::new(); fractions.len()];
    for mut group in groups {
        group.shuffle(&mut rng);
        let b = boundaries(group.len(), fractions);
        for (j, part) in parts.iter_mut().enumerate() {
            part.extend_from_slice(&group[b[j]..b[j + 1]]);
        }
    }
    if stratify_by.is_some() {
        for part in &mut parts {
            part.shuffle(&mut rng);
        }
    }
    Ok(parts)
}

/// Seeded shuffle followed by contiguous slicing into `fractions`.
/// With `stratify_by`, each property value is sliced separately so every
/// part keeps the global property rate.
pub fn split(
    dataset: &LabeledDataset,
    fractions: &[f64],
    seed: u64,
    stratify_by: Option<&str>,
) -> Result<Vec<LabeledDataset>> {
    Ok(split_indices(dataset, fractions, seed, stratify_by)?
        .iter()
        .map(|idx| dataset.subset(idx))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(n: usize) -> LabeledDataset {
        let inputs = Tensor::new(vec![n, 1], (0..n).map(|i| i as f64).collect()).unwrap();
        let p: Vec<u8> = (0..n).map(|i| u8::from(i % 5 == 0)).collect();
        LabeledDataset::new(inputs, vec![0; n], 2, BTreeMap::from([("p".to_string(), p)])).unwrap()
    }

    #[test]
    fn even_split_sizes() {
        let parts = split(&toy(100), &[0.5, 0.5], 3, None).unwrap();
        assert_eq!(parts[0].len(), 50);
        assert_eq!(parts[1].len(), 50);
    }

    #[test]
    fn single_fraction_is_a_permutation() {
        let parts = split_indices(&toy(40), &[1.0], 3, None).unwrap();
        let mut idx = parts[0].clone();
        idx.sort_unstable();
        assert_eq!(idx, (0..40).collect::<Vec<_>>());
    }

    #[test]
    fn split_is_disjoint_and_exhaustive() {
        let parts = split_indices(&toy(97), &[0.2, 0.3, 0.5], 11, Some("p")).unwrap();
        let mut all: Vec<usize> = parts.concat();
        all.sort_unstable();
        assert_eq!(all, (0..97).collect::<Vec<_>>());
    }

    #[test]
    fn bad_fractions_rejected() {
        for f in [vec![0.5, 0.6], vec![], vec![1.5, -0.5], vec![0.0, 1.0]] {
            assert!(matches!(split(&toy(10), &f, 0, None), Err(Error::BadFractions(_))));
        }
    }

    #[test]
    fn stratified_split_keeps_property_rate() {
        let n = 1000;
        let inputs = Tensor::new(vec![n, 1], vec![0.0; n]).unwrap();
        let mut r = rng::rng(5);
        let p: Vec<u8> = (0..n).map(|_| u8::from(rand::Rng::random_bool(&mut r, 0.3))).collect();
        let global = p.iter().map(|&v| f64::from(v)).sum::<f64>() / n as f64;
        let ds = LabeledDataset::new(inputs, vec![0; n], 1, BTreeMap::from([("p".into(), p)])).unwrap();
        for part in split(&ds, &[0.1, 0.3, 0.6], 9, Some("p")).unwrap() {
            let rate = part.property("p").unwrap().iter().map(|&v| f64::from(v)).sum::<f64>()
                / part.len() as f64;
            assert!((rate - global).abs() <= 0.1, "{rate} vs {global}");
        }
    }
}
