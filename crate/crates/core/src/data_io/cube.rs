use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use super::{paired_raw_path, read_f32_le, read_json, write_f32_le, write_json, SplitManifest};
use crate::error::{Error, Result};
use crate::tensor::Tensor5;

pub const CUBE_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CubeHeader {
    pub format_version: u32,
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub dtype: String,
    pub order: String,
}

impl CubeHeader {
    pub fn new(height: usize, width: usize, bands: usize) -> Self {
        CubeHeader {
            format_version: CUBE_VERSION,
            height,
            width,
            bands,
            dtype: "f32le".into(),
            order: "bsq".into(),
        }
    }

    pub fn payload_len(&self) -> usize {
        self.height * self.width * self.bands
    }
}

/// A P x Q x S hyperspectral raster.
///
/// Held in memory pixel-interleaved (each pixel's spectrum contiguous); the
/// on-disk payload is band-sequential.
#[derive(Clone, Debug)]
pub struct HsiCube {
    height: usize,
    width: usize,
    bands: usize,
    values: Vec<f32>,
    band_stats: OnceLock<Vec<(f32, f32)>>,
}

impl PartialEq for HsiCube {
    fn eq(&self, other: &Self) -> bool {
        self.dims() == other.dims() && self.values == other.values
    }
}

impl HsiCube {
    /// `values` is pixel-interleaved: index `(row * width + col) * bands + band`.
    pub fn from_pixels(height: usize, width: usize, bands: usize, values: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || bands == 0 || values.len() != height * width * bands {
            return Err(Error::DimMismatch {
                context: "cube construction",
                expected: vec![height, width, bands],
                actual: vec![values.len()],
            });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                path: "<memory>".into(),
                index,
            });
        }
        Ok(HsiCube {
            height,
            width,
            bands,
            values,
            band_stats: OnceLock::new(),
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.height, self.width, self.bands]
    }

    pub fn spectrum(&self, row: usize, col: usize) -> &[f32] {
        let start = (row * self.width + col) * self.bands;
        &self.values[start..start + self.bands]
    }

    pub fn pixels(&self) -> &[f32] {
        &self.values
    }

    /// Per-band (min, max) over the whole scene, computed on first use.
    pub fn band_stats(&self) -> &[(f32, f32)] {
        self.band_stats.get_or_init(|| {
            let mut stats = vec![(f32::INFINITY, f32::NEG_INFINITY); self.bands];
            for px in self.values.chunks_exact(self.bands) {
                for (s, &v) in stats.iter_mut().zip(px) {
                    s.0 = s.0.min(v);
                    s.1 = s.1.max(v);
                }
            }
            stats
        })
    }

    fn check_pixel(&self, row: usize, col: usize) -> Result<()> {
        if row >= self.height || col >= self.width {
            return Err(Error::OutOfImage {
                row,
                col,
                height: self.height,
                width: self.width,
            });
        }
        Ok(())
    }
}

pub fn save_cube(cube: &HsiCube, header_path: &Path) -> Result<()> {
    let header = CubeHeader::new(cube.height, cube.width, cube.bands);
    let plane = cube.height * cube.width;
    let mut bsq = vec![0.0f32; cube.values.len()];
    for (p, px) in cube.values.chunks_exact(cube.bands).enumerate() {
        for (b, &v) in px.iter().enumerate() {
            bsq[b * plane + p] = v;
        }
    }
    write_json(header_path, &header)?;
    write_f32_le(&paired_raw_path(header_path), &bsq)
}

pub fn load_cube(header_path: &Path) -> Result<HsiCube> {
    let header: CubeHeader = read_json(header_path)?;
    if header.format_version != CUBE_VERSION {
        return Err(Error::format(
            header_path,
            format!("unknown format_version {}", header.format_version),
        ));
    }
    if header.dtype != "f32le" || header.order != "bsq" {
        return Err(Error::format(
            header_path,
            format!("unsupported dtype/order {}/{}", header.dtype, header.order),
        ));
    }
    if header.height == 0 || header.width == 0 || header.bands == 0 {
        return Err(Error::format(header_path, "cube dimensions must be positive"));
    }
    let raw_path = paired_raw_path(header_path);
    let bsq = read_f32_le(&raw_path)?;
    if bsq.len() != header.payload_len() {
        return Err(Error::SizeMismatch {
            path: raw_path,
            expected: header.payload_len(),
            actual: bsq.len(),
        });
    }
    if let Some(index) = bsq.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { path: raw_path, index });
    }
    let plane = header.height * header.width;
    let mut values = vec![0.0f32; bsq.len()];
    for (b, band) in bsq.chunks_exact(plane).enumerate() {
        for (p, &v) in band.iter().enumerate() {
            values[p * header.bands + b] = v;
        }
    }
    HsiCube::from_pixels(header.height, header.width, header.bands, values)
}

/// Per-band min-max scaling with statistics taken from training pixels only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandNormalizer {
    pub band_min: Vec<f32>,
    pub band_max: Vec<f32>,
}

impl BandNormalizer {
    pub fn fit(cube: &HsiCube, split: &SplitManifest) -> Result<Self> {
        if split.train.is_empty() {
            return Err(Error::EmptyTrainSet);
        }
        let mut band_min = vec![f32::INFINITY; cube.bands];
        let mut band_max = vec![f32::NEG_INFINITY; cube.bands];
        for px in &split.train {
            cube.check_pixel(px.row, px.col)?;
            for (b, &v) in cube.spectrum(px.row, px.col).iter().enumerate() {
                band_min[b] = band_min[b].min(v);
                band_max[b] = band_max[b].max(v);
            }
        }
        Ok(BandNormalizer { band_min, band_max })
    }

    /// Unclamped affine map; constant bands map to zero.
    pub fn apply(&self, cube: &HsiCube) -> Result<HsiCube> {
        if self.band_min.len() != cube.bands || self.band_max.len() != cube.bands {
            return Err(Error::DimMismatch {
                context: "normalizer bands",
                expected: vec![cube.bands],
                actual: vec![self.band_min.len()],
            });
        }
        let values = cube
            .values
            .chunks_exact(cube.bands)
            .flat_map(|px| {
                px.iter().enumerate().map(|(b, &v)| {
                    let (lo, hi) = (self.band_min[b], self.band_max[b]);
                    if hi > lo {
                        (v - lo) / (hi - lo)
                    } else {
                        0.0
                    }
                })
            })
            .collect();
        HsiCube::from_pixels(cube.height, cube.width, cube.bands, values)
    }
}

pub fn normalize(cube: &HsiCube, stats_source: &SplitManifest) -> Result<HsiCube> {
    BandNormalizer::fit(cube, stats_source)?.apply(cube)
}

/// The `window x window x S` neighborhood of `(row, col)` as a
/// `(1, 1, window, window, S)` tensor, zero-filled outside the image.
pub fn extract_patch(cube: &HsiCube, row: usize, col: usize, window: usize) -> Result<Tensor5<f32>> {
    extract_batch(cube, &[(row, col)], window)
}

pub fn extract_batch(cube: &HsiCube, centers: &[(usize, usize)], window: usize) -> Result<Tensor5<f32>> {
    if window % 2 == 0 {
        return Err(Error::InvalidConfig {
            stage: "patch extraction".into(),
            reason: format!("window {window} must be odd"),
        });
    }
    if centers.is_empty() {
        return Err(Error::DimMismatch {
            context: "patch batch",
            expected: vec![1],
            actual: vec![0],
        });
    }
    let s = cube.bands;
    let half = (window / 2) as isize;
    let mut out = Tensor5::zeros([centers.len(), 1, window, window, s]);
    let sample_len = window * window * s;
    for (n, &(row, col)) in centers.iter().enumerate() {
        cube.check_pixel(row, col)?;
        let dst = &mut out.data_mut()[n * sample_len..(n + 1) * sample_len];
        for i in 0..window {
            let r = row as isize + i as isize - half;
            if r < 0 || r >= cube.height as isize {
                continue;
            }
            for j in 0..window {
                let c = col as isize + j as isize - half;
                if c < 0 || c >= cube.width as isize {
                    continue;
                }
                let o = (i * window + j) * s;
                dst[o..o + s].copy_from_slice(cube.spectrum(r as usize, c as usize));
            }
        }
    }
    Ok(out)
}
