//! Checkpoint persistence: a JSON manifest plus a raw little-endian f32 blob.
//!
//! Blob order is the layer order of the manifest, weights before bias, conv
//! weights in (out_ch, in_ch, kh, kw, kd) row-major.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig, LAYER_NAMES};
use crate::data_io::{paired_raw_path, read_f32_le, write_f32_le, BandNormalizer};
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerShape {
    pub name: String,
    pub weight_shape: Vec<usize>,
    pub bias_len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub config: ModelConfig,
    pub layer_order: Vec<String>,
    pub layers: Vec<LayerShape>,
    pub rng_seed: u64,
    /// Band statistics the model was trained under, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalization: Option<BandNormalizer>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model<f32>,
    pub normalizer: Option<BandNormalizer>,
}

fn manifest_for(model: &Model<f32>, normalizer: Option<&BandNormalizer>) -> CheckpointManifest {
    let layers = model
        .params()
        .iter()
        .zip(model.weight_shapes())
        .map(|(p, shape)| LayerShape {
            name: p.name.to_string(),
            weight_shape: shape,
            bias_len: p.bias.len(),
        })
        .collect();
    CheckpointManifest {
        format_version: CHECKPOINT_VERSION,
        config: model.config,
        layer_order: LAYER_NAMES.iter().map(|s| s.to_string()).collect(),
        layers,
        rng_seed: model.rng_seed,
        normalization: normalizer.cloned(),
    }
}

/// Writes `<path>` (manifest) and its paired `.raw` blob.
pub fn save_checkpoint(path: &Path, model: &Model<f32>, normalizer: Option<&BandNormalizer>) -> Result<()> {
    let manifest = manifest_for(model, normalizer);
    let mut blob = Vec::new();
    for p in model.params() {
        blob.extend_from_slice(p.weights);
        blob.extend_from_slice(p.bias);
    }
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::json(path, e))?;
    fs::write(path, json + "\n").map_err(|e| Error::io(path, e))?;
    write_f32_le(&paired_raw_path(path), &blob)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest: CheckpointManifest = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
    if manifest.format_version != CHECKPOINT_VERSION {
        return Err(Error::format(
            path,
            format!("unknown format_version {}", manifest.format_version),
        ));
    }
    let mut model = Model::<f32>::zeroed(manifest.config, manifest.rng_seed)?;
    if manifest != manifest_for(&model, manifest.normalization.as_ref()) {
        return Err(Error::format(path, "layer order or shapes do not match the architecture"));
    }
    let raw_path = paired_raw_path(path);
    let blob = read_f32_le(&raw_path)?;
    let expected: usize = model.params().iter().map(|p| p.weights.len() + p.bias.len()).sum();
    if blob.len() != expected {
        return Err(Error::SizeMismatch {
            path: raw_path,
            expected,
            actual: blob.len(),
        });
    }
    if let Some(index) = blob.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { path: raw_path, index });
    }
    let mut rest = blob.as_slice();
    for p in model.params_mut() {
        let (w, tail) = rest.split_at(p.weights.len());
        p.weights.copy_from_slice(w);
        let (b, tail) = tail.split_at(p.bias.len());
        p.bias.copy_from_slice(b);
        rest = tail;
    }
    Ok(Checkpoint {
        model,
        normalizer: manifest.normalization,
    })
}
