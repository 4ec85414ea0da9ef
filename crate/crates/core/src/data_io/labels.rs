use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{paired_raw_path, read_json, write_json};
use crate::error::{Error, Result};

pub const LABEL_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelHeader {
    pub format_version: u32,
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    pub dtype: String,
    pub order: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_names: Option<Vec<String>>,
}

/// Per-pixel ground truth: 0 is unlabeled, 1..=classes are classes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelGrid {
    height: usize,
    width: usize,
    classes: usize,
    labels: Vec<u8>,
    class_names: Option<Vec<String>>,
}

impl LabelGrid {
    pub fn new(height: usize, width: usize, classes: usize, labels: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 || labels.len() != height * width {
            return Err(Error::DimMismatch {
                context: "label grid",
                expected: vec![height, width],
                actual: vec![labels.len()],
            });
        }
        if classes == 0 || classes > u8::MAX as usize {
            return Err(Error::InvalidConfig {
                stage: "labels".into(),
                reason: format!("class count {classes} outside 1..=255"),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l as usize > classes) {
            return Err(Error::InvalidConfig {
                stage: "labels".into(),
                reason: format!("label {bad} exceeds class count {classes}"),
            });
        }
        Ok(LabelGrid {
            height,
            width,
            classes,
            labels,
            class_names: None,
        })
    }

    pub fn with_class_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.classes {
            return Err(Error::DimMismatch {
                context: "class names",
                expected: vec![self.classes],
                actual: vec![names.len()],
            });
        }
        self.class_names = Some(names);
        Ok(self)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.labels[row * self.width + col]
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn class_names(&self) -> Option<&[String]> {
        self.class_names.as_deref()
    }

    /// Display name of a 1-based class.
    pub fn class_name(&self, class: usize) -> String {
        match &self.class_names {
            Some(names) => names[class - 1].clone(),
            None => format!("class {class}"),
        }
    }

    /// Labeled pixels per class, index 0 = class 1.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &l in &self.labels {
            if l > 0 {
                counts[l as usize - 1] += 1;
            }
        }
        counts
    }
}

pub fn save_labels(grid: &LabelGrid, header_path: &Path) -> Result<()> {
    let header = LabelHeader {
        format_version: LABEL_VERSION,
        height: grid.height,
        width: grid.width,
        classes: grid.classes,
        dtype: "u8".into(),
        order: "row-major".into(),
        class_names: grid.class_names.clone(),
    };
    write_json(header_path, &header)?;
    let raw = paired_raw_path(header_path);
    fs::write(&raw, &grid.labels).map_err(|e| Error::io(raw, e))
}

pub fn load_labels(header_path: &Path) -> Result<LabelGrid> {
    let header: LabelHeader = read_json(header_path)?;
    if header.format_version != LABEL_VERSION {
        return Err(Error::format(
            header_path,
            format!("unknown format_version {}", header.format_version),
        ));
    }
    if header.dtype != "u8" || header.order != "row-major" {
        return Err(Error::format(
            header_path,
            format!("unsupported dtype/order {}/{}", header.dtype, header.order),
        ));
    }
    let raw = paired_raw_path(header_path);
    let labels = fs::read(&raw).map_err(|e| Error::io(&raw, e))?;
    if labels.len() != header.height * header.width {
        return Err(Error::SizeMismatch {
            path: raw,
            expected: header.height * header.width,
            actual: labels.len(),
        });
    }
    let grid = LabelGrid::new(header.height, header.width, header.classes, labels)
        .map_err(|e| Error::format(header_path, e.to_string()))?;
    match header.class_names {
        Some(names) => grid.with_class_names(names),
        None => Ok(grid),
    }
}
