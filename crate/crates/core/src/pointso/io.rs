//! `header.json` + `weights.bin` model directories.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::params::{Layout, ModelParams};
use super::ModelConfig;

pub const FORMAT_TAG: &str = "pointso-v1";

#[derive(Debug, Serialize, Deserialize)]
struct HeaderTensor {
    name: String,
    shape: Vec<usize>,
    /// Byte offset into `weights.bin`.
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    model_config: ModelConfig,
    tensors: Vec<HeaderTensor>,
}

/// Writes `dir/header.json` and `dir/weights.bin` (little-endian f32).
pub fn save_params(params: &ModelParams, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let header = Header {
        format: FORMAT_TAG.to_string(),
        model_config: params.config().clone(),
        tensors: params
            .tensors()
            .iter()
            .map(|t| HeaderTensor {
                name: t.name.clone(),
                shape: t.shape.clone(),
                offset: t.offset * 4,
            })
            .collect(),
    };
    let json = serde_json::to_string_pretty(&header).expect("header serializes");
    let hp = dir.join("header.json");
    fs::write(&hp, json + "\n").map_err(|e| Error::io(&hp, e))?;
    let mut bytes = Vec::with_capacity(params.len() * 4);
    for &v in params.values() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    let wp = dir.join("weights.bin");
    fs::write(&wp, bytes).map_err(|e| Error::io(&wp, e))
}

/// Reads a model directory. With `expected`, the stored config must match it.
pub fn load_params(dir: &Path, expected: Option<&ModelConfig>) -> Result<ModelParams> {
    let hp = dir.join("header.json");
    let text = fs::read_to_string(&hp).map_err(|e| Error::io(&hp, e))?;
    let header: Header =
        serde_json::from_str(&text).map_err(|e| Error::format(hp.display().to_string(), format!("bad header: {e}")))?;
    if header.format != FORMAT_TAG {
        return Err(Error::format(
            hp.display().to_string(),
            format!("format is {:?}, expected {FORMAT_TAG:?}", header.format),
        ));
    }
    let config = header.model_config;
    config
        .validate()
        .map_err(|e| Error::format(hp.display().to_string(), format!("stored model config: {e}")))?;
    if let Some(exp) = expected {
        if *exp != config {
            return Err(Error::ConfigMismatch(describe_mismatch(&config, exp)));
        }
    }
    let layout = Layout::new(&config);
    if header.tensors.len() != layout.tensors.len() {
        return Err(Error::format(
            hp.display().to_string(),
            format!(
                "header lists {} tensors, config implies {}",
                header.tensors.len(),
                layout.tensors.len()
            ),
        ));
    }
    for (h, t) in header.tensors.iter().zip(&layout.tensors) {
        if h.name != t.name || h.shape != t.shape || h.offset != t.offset * 4 {
            return Err(Error::format(
                hp.display().to_string(),
                format!(
                    "tensor {}: header has name {:?}, shape {:?}, offset {}; expected shape {:?} at offset {}",
                    t.name, h.name, h.shape, h.offset, t.shape, t.offset * 4
                ),
            ));
        }
    }
    let wp = dir.join("weights.bin");
    let bytes = fs::read(&wp).map_err(|e| Error::io(&wp, e))?;
    if bytes.len() != layout.total * 4 {
        let short = layout
            .tensors
            .iter()
            .find(|t| (t.offset + t.len()) * 4 > bytes.len())
            .map(|t| format!("; tensor {} is incomplete", t.name))
            .unwrap_or_default();
        return Err(Error::format(
            wp.display().to_string(),
            format!("expected {} bytes, found {}{short}", layout.total * 4, bytes.len()),
        ));
    }
    let mut data = Vec::with_capacity(layout.total);
    for c in bytes.chunks_exact(4) {
        data.push(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64);
    }
    if let Some(t) = layout.tensors.iter().find(|t| data[t.range()].iter().any(|v| !v.is_finite())) {
        return Err(Error::format(wp.display().to_string(), format!("tensor {} contains non-finite values", t.name)));
    }
    Ok(ModelParams::from_parts(config, data))
}

fn describe_mismatch(stored: &ModelConfig, expected: &ModelConfig) -> String {
    let s = serde_json::to_value(stored).expect("config serializes");
    let e = serde_json::to_value(expected).expect("config serializes");
    let diffs: Vec<String> = s
        .as_object()
        .into_iter()
        .flatten()
        .filter(|(k, v)| e.get(k.as_str()) != Some(*v))
        .map(|(k, v)| format!("{k}: file has {v}, expected {}", e[k.as_str()]))
        .collect();
    format!("model file does not match the requested config ({})", diffs.join(", "))
}
