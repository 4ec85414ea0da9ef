use std::collections::HashSet;
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{read_json, write_json, LabelGrid};
use crate::error::{Error, Result};

pub const SPLIT_VERSION: u32 = 1;

/// A labeled pixel, serialized as `[row, col, class]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "[usize; 3]", into = "[usize; 3]")]
pub struct LabeledPixel {
    pub row: usize,
    pub col: usize,
    pub class: usize,
}

impl From<[usize; 3]> for LabeledPixel {
    fn from([row, col, class]: [usize; 3]) -> Self {
        LabeledPixel { row, col, class }
    }
}

impl From<LabeledPixel> for [usize; 3] {
    fn from(p: LabeledPixel) -> Self {
        [p.row, p.col, p.class]
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SplitRule {
    /// Fixed number of training pixels per class.
    PerClass(usize),
    /// Percentage of each class, floored, at least one pixel.
    Percent(f64),
}

impl SplitRule {
    pub fn train_count(&self, class_size: usize) -> usize {
        match *self {
            SplitRule::PerClass(n) => n,
            SplitRule::Percent(p) => (((p * class_size as f64) / 100.0).floor() as usize).max(1),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub format_version: u32,
    pub seed: u64,
    /// Set in per-class mode; every class then has exactly this many
    /// training pixels.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_class_train: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub percent: Option<f64>,
    pub train: Vec<LabeledPixel>,
    pub test: Vec<LabeledPixel>,
}

impl SplitManifest {
    pub fn empty(seed: u64) -> Self {
        SplitManifest {
            format_version: SPLIT_VERSION,
            seed,
            per_class_train: None,
            percent: None,
            train: Vec::new(),
            test: Vec::new(),
        }
    }

    /// Per-class (train, test) counts, index 0 = class 1.
    pub fn class_counts(&self, classes: usize) -> Vec<(usize, usize)> {
        let mut counts = vec![(0, 0); classes];
        for p in &self.train {
            if (1..=classes).contains(&p.class) {
                counts[p.class - 1].0 += 1;
            }
        }
        for p in &self.test {
            if (1..=classes).contains(&p.class) {
                counts[p.class - 1].1 += 1;
            }
        }
        counts
    }

    /// Checks that every listed pixel is in-bounds and carries its grid
    /// label, that train and test are disjoint, and per-class counts.
    pub fn validate(&self, labels: &LabelGrid) -> Result<()> {
        let mut seen = HashSet::new();
        for p in self.train.iter().chain(&self.test) {
            if p.row >= labels.height() || p.col >= labels.width() {
                return Err(Error::InconsistentSplit(format!(
                    "pixel ({}, {}) outside {}x{} labels",
                    p.row,
                    p.col,
                    labels.height(),
                    labels.width()
                )));
            }
            let actual = labels.get(p.row, p.col) as usize;
            if actual == 0 || actual != p.class {
                return Err(Error::InconsistentSplit(format!(
                    "pixel ({}, {}) listed as class {} but labeled {}",
                    p.row, p.col, p.class, actual
                )));
            }
            if !seen.insert((p.row, p.col)) {
                return Err(Error::InconsistentSplit(format!(
                    "pixel ({}, {}) listed twice",
                    p.row, p.col
                )));
            }
        }
        if let Some(n) = self.per_class_train {
            for (i, (train, _)) in self.class_counts(labels.classes()).into_iter().enumerate() {
                if train != n {
                    return Err(Error::InconsistentSplit(format!(
                        "{} has {} training pixels, manifest declares {}",
                        labels.class_name(i + 1),
                        train,
                        n
                    )));
                }
            }
        }
        Ok(())
    }
}

pub fn stratified_split(labels: &LabelGrid, per_class_train: usize, seed: u64) -> Result<SplitManifest> {
    split_with_rule(labels, SplitRule::PerClass(per_class_train), seed)
}

pub fn stratified_split_percent(labels: &LabelGrid, percent: f64, seed: u64) -> Result<SplitManifest> {
    if !(percent > 0.0 && percent <= 100.0) {
        return Err(Error::InvalidConfig {
            stage: "split".into(),
            reason: format!("percent {percent} outside (0, 100]"),
        });
    }
    split_with_rule(labels, SplitRule::Percent(percent), seed)
}

/// Uniform per-class sampling without replacement. Classes are visited in
/// index order from a single seeded stream; both lists come out row-major
/// within each class.
pub fn split_with_rule(labels: &LabelGrid, rule: SplitRule, seed: u64) -> Result<SplitManifest> {
    let mut by_class: Vec<Vec<LabeledPixel>> = vec![Vec::new(); labels.classes()];
    for row in 0..labels.height() {
        for col in 0..labels.width() {
            let class = labels.get(row, col) as usize;
            if class > 0 {
                by_class[class - 1].push(LabeledPixel { row, col, class });
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut manifest = SplitManifest::empty(seed);
    match rule {
        SplitRule::PerClass(n) => manifest.per_class_train = Some(n),
        SplitRule::Percent(p) => manifest.percent = Some(p),
    }
    for (i, pixels) in by_class.iter().enumerate() {
        let want = rule.train_count(pixels.len());
        if want > pixels.len() {
            return Err(Error::ClassTooSmall {
                class: labels.class_name(i + 1),
                available: pixels.len(),
                requested: want,
            });
        }
        let mut chosen = vec![false; pixels.len()];
        for idx in sample(&mut rng, pixels.len(), want) {
            chosen[idx] = true;
        }
        for (p, picked) in pixels.iter().zip(chosen) {
            if picked {
                manifest.train.push(*p);
            } else {
                manifest.test.push(*p);
            }
        }
    }
    Ok(manifest)
}

pub fn save_split(split: &SplitManifest, path: &Path) -> Result<()> {
    write_json(path, split)
}

pub fn load_split(path: &Path) -> Result<SplitManifest> {
    let split: SplitManifest = read_json(path)?;
    if split.format_version != SPLIT_VERSION {
        return Err(Error::format(
            path,
            format!("unknown format_version {}", split.format_version),
        ));
    }
    Ok(split)
}
