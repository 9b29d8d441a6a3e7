//! Parameter checkpoints: one JSON header line, then `values`, `m` and `v`
//! as little-endian `f64`.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::{AdamState, NetworkParams, ParamView};
use super::NeuralError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub n_params: usize,
    pub step: u64,
    pub views: Vec<ParamView>,
    /// Architecture and any caller metadata (augmentation, world config, ...).
    pub spec: serde_json::Value,
}

const FORMAT: &str = "entangle-params-v1";

pub fn save_checkpoint(
    path: &Path,
    params: &NetworkParams,
    spec: serde_json::Value,
) -> Result<(), NeuralError> {
    let header = CheckpointHeader {
        format: FORMAT.into(),
        n_params: params.len(),
        step: params.adam.step,
        views: params.views.clone(),
        spec,
    };
    let mut buf = serde_json::to_vec(&header).map_err(|e| NeuralError::Checkpoint(e.to_string()))?;
    buf.push(b'\n');
    for vec in [&params.values, &params.adam.m, &params.adam.v] {
        for x in vec.iter() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(CheckpointHeader, NetworkParams), NeuralError> {
    let bytes = fs::read(path)?;
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| NeuralError::Checkpoint("missing header line".into()))?;
    let header: CheckpointHeader =
        serde_json::from_slice(&bytes[..nl]).map_err(|e| NeuralError::Checkpoint(e.to_string()))?;
    if header.format != FORMAT {
        return Err(NeuralError::Checkpoint(format!("unknown format `{}`", header.format)));
    }
    let n = header.n_params;
    let body = &bytes[nl + 1..];
    if body.len() != 3 * n * 8 {
        return Err(NeuralError::Checkpoint(format!(
            "expected {} payload bytes, found {}",
            3 * n * 8,
            body.len()
        )));
    }
    let read = |k: usize| -> Vec<f64> {
        body[k * n * 8..(k + 1) * n * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect()
    };
    let params = NetworkParams {
        values: read(0),
        adam: AdamState {
            m: read(1),
            v: read(2),
            step: header.step,
        },
        views: header.views.clone(),
    };
    Ok((header, params))
}
