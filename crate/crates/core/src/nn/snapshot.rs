//! Binary model snapshots: `FLSNAP1\0`, a little-endian u64 header length,
//! a JSON header, then every parameter as a little-endian f64 in layer
//! order with weights before biases.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::layer::ModelSpec;
use super::model::{LayerParams, Model};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const SNAPSHOT_MAGIC: &[u8; 8] = b"FLSNAP1\0";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SnapshotHeader {
    spec: ModelSpec,
    param_shapes: Vec<[Vec<usize>; 2]>,
    round: usize,
    seed: u64,
}

pub fn encode_snapshot(model: &Model, round: usize) -> Result<Vec<u8>> {
    let header = SnapshotHeader {
        spec: model.spec().clone(),
        param_shapes: model
            .params()
            .iter()
            .map(|p| [p.weights.shape().to_vec(), p.biases.shape().to_vec()])
            .collect(),
        round,
        seed: model.seed(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(16 + json.len() + 8 * model.num_parameters());
    out.extend_from_slice(SNAPSHOT_MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for v in model.flat_params() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Decodes a snapshot, returning the model and its round index.
pub fn decode_snapshot(bytes: &[u8], origin: &Path) -> Result<(Model, usize)> {
    let (json, body) = split_container(bytes, SNAPSHOT_MAGIC, origin)?;
    let header: SnapshotHeader = serde_json::from_slice(json)?;
    let values = f64s(body, origin)?;
    let mut offset = 0;
    let mut params = Vec::with_capacity(header.param_shapes.len());
    for [w, b] in header.param_shapes {
        let mut take = |shape: Vec<usize>| -> Result<Tensor> {
            let n: usize = shape.iter().product();
            let slice = values
                .get(offset..offset + n)
                .ok_or_else(|| Error::format(origin, "parameter data truncated"))?;
            offset += n;
            Tensor::new(shape, slice.to_vec())
        };
        params.push(LayerParams {
            weights: take(w)?,
            biases: take(b)?,
        });
    }
    if offset != values.len() {
        return Err(Error::format(origin, "trailing parameter data"));
    }
    let model = Model::from_params(header.spec, params, header.seed)?;
    Ok((model, header.round))
}

pub fn write_snapshot(path: &Path, model: &Model, round: usize) -> Result<()> {
    let bytes = encode_snapshot(model, round)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_snapshot(path: &Path) -> Result<(Model, usize)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_snapshot(&bytes, path)
}

/// Splits a `magic | u64 len | json | body` container.
pub(crate) fn split_container<'a>(
    bytes: &'a [u8],
    magic: &[u8; 8],
    origin: &Path,
) -> Result<(&'a [u8], &'a [u8])> {
    if bytes.len() < 16 || &bytes[..8] != magic {
        return Err(Error::format(origin, "bad magic bytes"));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let end = 16usize
        .checked_add(len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::format(origin, "header length exceeds file size"))?;
    Ok((&bytes[16..end], &bytes[end..]))
}

pub(crate) fn f64s(body: &[u8], origin: &Path) -> Result<Vec<f64>> {
    if !body.len().is_multiple_of(8) {
        return Err(Error::format(origin, "data section is not a whole number of f64 values"));
    }
    Ok(body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect())
}
