//! Parameter checkpoints: an 8-byte little-endian header length, a JSON
//! header, then every tensor as little-endian `f32` in canonical order.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use tblind_core::model::{ModelConfig, Parameters, TrainSettings};

use crate::error::CliError;

pub const FORMAT: &str = "tb-ckpt-1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

/// How the parameters were produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingInfo {
    pub settings: TrainSettings,
    pub accuracy: f64,
    pub epochs: usize,
    pub loss_curve: Vec<f64>,
    pub corpus_sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub format: String,
    pub config: ModelConfig,
    pub tensors: Vec<TensorEntry>,
    #[serde(default)]
    pub training: Option<TrainingInfo>,
}

pub fn encode(params: &Parameters, training: Option<TrainingInfo>) -> Vec<u8> {
    let ids = Parameters::tensor_ids(&params.config);
    let tensors = ids
        .iter()
        .map(|&id| {
            let (rows, cols) = params.shape(id).expect("canonical id");
            TensorEntry { name: id.to_string(), rows, cols }
        })
        .collect();
    let header = Header { format: FORMAT.into(), config: params.config.clone(), tensors, training };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(8 + json.len() + 4 * params.num_parameters());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for id in ids {
        for &x in params.tensor(id).expect("canonical id") {
            out.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    out
}

fn bad(reason: impl Into<String>) -> CliError {
    CliError::Data(format!("checkpoint: {}", reason.into()))
}

pub fn decode(bytes: &[u8]) -> Result<(Parameters, Header), CliError> {
    let len_bytes: [u8; 8] = bytes.get(..8).ok_or_else(|| bad("truncated header length"))?.try_into().expect("8 bytes");
    let len = usize::try_from(u64::from_le_bytes(len_bytes)).map_err(|_| bad("header length overflows"))?;
    let json = bytes.get(8..8 + len).ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(json).map_err(|e| bad(e.to_string()))?;
    if header.format != FORMAT {
        return Err(bad(format!("unsupported format {:?}", header.format)));
    }
    header.config.validate()?;
    let mut params = Parameters::zeros(&header.config);
    let ids = Parameters::tensor_ids(&header.config);
    if ids.len() != header.tensors.len() {
        return Err(bad("tensor manifest does not match the config"));
    }
    let mut data = &bytes[8 + len..];
    for (id, entry) in ids.into_iter().zip(&header.tensors) {
        if entry.name != id.to_string() || params.shape(id) != Some((entry.rows, entry.cols)) {
            return Err(bad(format!("unexpected tensor {} ({}x{})", entry.name, entry.rows, entry.cols)));
        }
        let dst = params.tensor_mut(id).expect("canonical id");
        let need = 4 * dst.len();
        if data.len() < need {
            return Err(bad(format!("tensor {} is truncated", entry.name)));
        }
        for (x, chunk) in dst.iter_mut().zip(data[..need].chunks_exact(4)) {
            *x = f64::from(f32::from_le_bytes(chunk.try_into().expect("4 bytes")));
        }
        data = &data[need..];
    }
    if !data.is_empty() {
        return Err(bad("trailing bytes after the last tensor"));
    }
    if !params.is_finite() {
        return Err(CliError::Numeric("checkpoint holds non-finite values".into()));
    }
    Ok((params, header))
}

pub fn save(path: &Path, params: &Parameters, training: Option<TrainingInfo>) -> Result<(), CliError> {
    let bytes = encode(params, training);
    let mut f = std::fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    f.write_all(&bytes).map_err(|e| CliError::io(path, e))
}

pub fn load(path: &Path) -> Result<(Parameters, Header), CliError> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    decode(&bytes)
}
