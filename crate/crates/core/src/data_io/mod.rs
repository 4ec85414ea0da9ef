//! Hyperspectral cubes, label grids, split manifests and patch extraction.
//!
//! On disk every container is a small JSON header next to a raw
//! little-endian payload with the same stem (`x.hsc.json` / `x.hsc.raw`).

mod cube;
mod labels;
mod split;

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub use cube::{
    extract_batch, extract_patch, load_cube, normalize, save_cube, BandNormalizer, CubeHeader, HsiCube, CUBE_VERSION,
};
pub use labels::{load_labels, save_labels, LabelGrid, LabelHeader, LABEL_VERSION};
pub use split::{
    load_split, save_split, split_with_rule, stratified_split, stratified_split_percent, LabeledPixel, SplitManifest, SplitRule,
    SPLIT_VERSION,
};

/// `foo.hsc.json` -> `foo.hsc.raw`; any other name gets `.raw` appended.
pub fn paired_raw_path(header: &Path) -> PathBuf {
    let name = header.to_string_lossy();
    match name.strip_suffix(".json") {
        Some(stem) => PathBuf::from(format!("{stem}.raw")),
        None => PathBuf::from(format!("{name}.raw")),
    }
}

pub(crate) fn write_f32_le(path: &Path, values: &[f32]) -> Result<()> {
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_f32_le(path: &Path) -> Result<Vec<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::format(path, format!("{} bytes is not a whole number of f32", bytes.len())));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

pub(crate) fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}
