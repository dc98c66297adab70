//! `FLDATA1\0` container: magic, little-endian u64 header length, JSON
//! header, then little-endian f64 values: all inputs row-major, the main
//! labels, and each property (in header order).

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DatasetInfo, LabeledDataset};
use crate::error::{Error, Result};
use crate::nn::snapshot::{f64s, split_container};
use crate::tensor::Tensor;

pub const DATA_MAGIC: &[u8; 8] = b"FLDATA1\0";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DataHeader {
    #[serde(flatten)]
    info: DatasetInfo,
    layout: String,
}

const LAYOUT: &str = "inputs,labels,properties";

pub fn encode_dataset(ds: &LabeledDataset) -> Result<Vec<u8>> {
    let header = DataHeader {
        info: ds.info(),
        layout: LAYOUT.into(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(16 + json.len() + 8 * (ds.inputs.len() + ds.len() * (1 + ds.properties.len())));
    out.extend_from_slice(DATA_MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    let values = ds
        .inputs
        .data()
        .iter()
        .copied()
        .chain(ds.labels.iter().map(|&y| y as f64))
        .chain(ds.properties.values().flat_map(|p| p.iter().map(|&v| f64::from(v))));
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_dataset(bytes: &[u8], origin: &Path) -> Result<LabeledDataset> {
    let (json, body) = split_container(bytes, DATA_MAGIC, origin)?;
    let header: DataHeader = serde_json::from_slice(json)?;
    if header.layout != LAYOUT {
        return Err(Error::format(origin, format!("unsupported layout {}", header.layout)));
    }
    let info = header.info;
    let values = f64s(body, origin)?;
    let k = info.num_samples;
    let f: usize = info.feature_shape.iter().product();
    if values.len() != k * (f + 1 + info.property_names.len()) {
        return Err(Error::format(origin, "data length does not match header"));
    }
    let (inputs, rest) = values.split_at(k * f);
    let (labels, props) = rest.split_at(k);
    let as_index = |v: f64| -> Result<usize> {
        if v >= 0.0 && v.fract() == 0.0 {
            Ok(v as usize)
        } else {
            Err(Error::format(origin, format!("invalid label value {v}")))
        }
    };
    let labels = labels.iter().map(|&v| as_index(v)).collect::<Result<Vec<_>>>()?;
    let properties = info
        .property_names
        .iter()
        .zip(props.chunks(k.max(1)))
        .map(|(name, chunk)| {
            let codes = chunk
                .iter()
                .map(|&v| as_index(v).map(|c| c as u8))
                .collect::<Result<Vec<_>>>()?;
            Ok((name.clone(), codes))
        })
        .collect::<Result<_>>()?;
    let mut shape = vec![k];
    shape.extend_from_slice(&info.feature_shape);
    LabeledDataset::new(Tensor::new(shape, inputs.to_vec())?, labels, info.num_classes, properties)
}

pub fn write_dataset(path: &Path, ds: &LabeledDataset) -> Result<()> {
    std::fs::write(path, encode_dataset(ds)?).map_err(|e| Error::io(path, e))
}

pub fn read_dataset(path: &Path) -> Result<LabeledDataset> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_dataset(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate, PropertySpec, SynthConfig};

    #[test]
    fn dataset_roundtrip_is_exact() {
        let ds = generate(&SynthConfig {
            num_samples: 20,
            shape: vec![1, 4, 4],
            num_classes: 3,
            class_strength: 1.0,
            properties: vec![
                PropertySpec { name: "a".into(), signal_strength: 1.0, correlation_with_main: 0.0 },
                PropertySpec { name: "b".into(), signal_strength: 0.0, correlation_with_main: 0.2 },
            ],
            noise_std: 0.5,
            seed: 4,
        })
        .unwrap();
        let bytes = encode_dataset(&ds).unwrap();
        assert_eq!(&bytes[..8], DATA_MAGIC);
        assert_eq!(decode_dataset(&bytes, Path::new("m")).unwrap(), ds);
        assert!(decode_dataset(&bytes[..bytes.len() - 8], Path::new("m")).is_err());
    }
}
