//! Confusion-matrix statistics, JSON reports and classification-map images.
//!
//! All statistics are computed in f64.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data_io::{read_json, write_json};
use crate::error::{Error, Result};
use crate::training::EpochRecord;

/// `counts[i][j]` = pixels of true class `i + 1` predicted as class `j + 1`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
    class_names: Option<Vec<String>>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            classes,
            counts: vec![0; classes * classes],
            class_names: None,
        }
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let classes = rows.len();
        if rows.iter().any(|r| r.len() != classes) {
            return Err(Error::DimMismatch {
                context: "confusion matrix rows",
                expected: vec![classes, classes],
                actual: rows.iter().map(Vec::len).collect(),
            });
        }
        Ok(ConfusionMatrix {
            classes,
            counts: rows.concat(),
            class_names: None,
        })
    }

    pub fn with_class_names(mut self, names: Option<Vec<String>>) -> Self {
        self.class_names = names.filter(|n| n.len() == self.classes);
        self
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn class_names(&self) -> Option<&[String]> {
        self.class_names.as_deref()
    }

    /// Both classes are 1-based.
    pub fn record(&mut self, truth: usize, predicted: usize) -> Result<()> {
        for c in [truth, predicted] {
            if c == 0 || c > self.classes {
                return Err(Error::TargetOutOfRange {
                    target: c,
                    classes: self.classes,
                });
            }
        }
        self.counts[(truth - 1) * self.classes + predicted - 1] += 1;
        Ok(())
    }

    /// Entry for 0-based (truth, predicted) indices.
    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.classes + predicted]
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts.chunks(self.classes.max(1)).map(<[u64]>::to_vec).collect()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|i| self.get(i, i)).sum()
    }

    pub fn row_sum(&self, i: usize) -> u64 {
        (0..self.classes).map(|j| self.get(i, j)).sum()
    }

    pub fn col_sum(&self, j: usize) -> u64 {
        (0..self.classes).map(|i| self.get(i, j)).sum()
    }

    pub fn scaled(&self, factor: u64) -> Self {
        ConfusionMatrix {
            classes: self.classes,
            counts: self.counts.iter().map(|&c| c * factor).collect(),
            class_names: self.class_names.clone(),
        }
    }

    fn nonempty_total(&self) -> Result<f64> {
        match self.total() {
            0 => Err(Error::EmptyMatrix),
            n => Ok(n as f64),
        }
    }
}

pub fn overall_accuracy(m: &ConfusionMatrix) -> Result<f64> {
    Ok(m.trace() as f64 / m.nonempty_total()?)
}

/// Diagonal over row sum; `None` for classes absent from the evaluated set.
pub fn per_class_accuracy(m: &ConfusionMatrix) -> Vec<Option<f64>> {
    (0..m.classes)
        .map(|i| match m.row_sum(i) {
            0 => None,
            r => Some(m.get(i, i) as f64 / r as f64),
        })
        .collect()
}

/// Cohen's kappa: `(p_o - p_e) / (1 - p_e)`.
pub fn kappa(m: &ConfusionMatrix) -> Result<f64> {
    let n = m.nonempty_total()?;
    let p_o = m.trace() as f64 / n;
    let p_e = (0..m.classes)
        .map(|i| m.row_sum(i) as f64 * m.col_sum(i) as f64)
        .sum::<f64>()
        / (n * n);
    if p_e >= 1.0 {
        return Err(Error::DegenerateKappa);
    }
    Ok((p_o - p_e) / (1.0 - p_e))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub classes: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_names: Option<Vec<String>>,
    pub matrix: Vec<Vec<u64>>,
    pub overall_accuracy: f64,
    pub per_class_accuracy: Vec<Option<f64>>,
    /// `null` when chance agreement is 1.
    pub kappa: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub history: Option<Vec<EpochRecord>>,
}

impl Report {
    pub fn from_matrix(m: &ConfusionMatrix, history: Option<&[EpochRecord]>) -> Result<Self> {
        let kappa = match kappa(m) {
            Ok(k) => Some(k),
            Err(Error::DegenerateKappa) => None,
            Err(e) => return Err(e),
        };
        Ok(Report {
            classes: m.classes,
            class_names: m.class_names.clone(),
            matrix: m.rows(),
            overall_accuracy: overall_accuracy(m)?,
            per_class_accuracy: per_class_accuracy(m),
            kappa,
            history: history.map(<[EpochRecord]>::to_vec),
        })
    }

    pub fn matrix(&self) -> Result<ConfusionMatrix> {
        Ok(ConfusionMatrix::from_rows(&self.matrix)?.with_class_names(self.class_names.clone()))
    }
}

pub fn write_report(m: &ConfusionMatrix, history: Option<&[EpochRecord]>, out_path: &Path) -> Result<Report> {
    let report = Report::from_matrix(m, history)?;
    write_json(out_path, &report)?;
    Ok(report)
}

pub fn read_report(path: &Path) -> Result<Report> {
    read_json(path)
}

/// Per-pixel class grid; 0 marks "no class".
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassMap {
    pub height: usize,
    pub width: usize,
    pub classes: Vec<u8>,
}

impl ClassMap {
    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.classes[row * self.width + col]
    }
}

/// Colors for classes 1..=9; higher classes reuse the table cyclically.
pub const PALETTE: [[u8; 3]; 9] = [
    [230, 25, 75],
    [60, 180, 75],
    [255, 225, 25],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
    [128, 128, 128],
];

pub fn class_color(class: u8) -> [u8; 3] {
    match class {
        0 => [0, 0, 0],
        c => PALETTE[(c as usize - 1) % PALETTE.len()],
    }
}

pub fn encode_ppm(map: &ClassMap) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", map.width, map.height).into_bytes();
    out.reserve(map.classes.len() * 3);
    for &c in &map.classes {
        out.extend_from_slice(&class_color(c));
    }
    out
}

pub fn render_map(map: &ClassMap, out_path: &Path) -> Result<()> {
    let mut f = fs::File::create(out_path).map_err(|e| Error::io(out_path, e))?;
    f.write_all(&encode_ppm(map)).map_err(|e| Error::io(out_path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_matrix_is_perfect() {
        let m = ConfusionMatrix::from_rows(&[vec![3, 0, 0], vec![0, 5, 0], vec![0, 0, 1]]).unwrap();
        assert_eq!(overall_accuracy(&m).unwrap(), 1.0);
        assert_eq!(kappa(&m).unwrap(), 1.0);
        assert!(per_class_accuracy(&m).iter().all(|a| *a == Some(1.0)));
    }

    #[test]
    fn chance_level_matrix() {
        let m = ConfusionMatrix::from_rows(&[vec![25, 25], vec![25, 25]]).unwrap();
        assert_eq!(overall_accuracy(&m).unwrap(), 0.5);
        assert_eq!(kappa(&m).unwrap(), 0.0);
    }

    #[test]
    fn degenerate_and_empty() {
        let single = ConfusionMatrix::from_rows(&[vec![4]]).unwrap();
        assert!(matches!(kappa(&single), Err(Error::DegenerateKappa)));
        let empty = ConfusionMatrix::new(3);
        assert!(matches!(overall_accuracy(&empty), Err(Error::EmptyMatrix)));
        assert!(matches!(kappa(&empty), Err(Error::EmptyMatrix)));
        assert_eq!(per_class_accuracy(&empty), vec![None; 3]);
    }

    #[test]
    fn record_rejects_class_zero() {
        let mut m = ConfusionMatrix::new(2);
        m.record(1, 2).unwrap();
        assert_eq!(m.get(0, 1), 1);
        assert!(m.record(0, 1).is_err());
        assert!(m.record(1, 3).is_err());
    }

    #[test]
    fn report_round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.json");
        let m = ConfusionMatrix::from_rows(&[vec![7, 2, 1], vec![3, 11, 0], vec![1, 1, 13]]).unwrap();
        let history = [EpochRecord {
            epoch: 1,
            mean_loss: 0.123456789,
            test_overall_accuracy: Some(2.0 / 3.0),
        }];
        let written = write_report(&m, Some(&history), &path).unwrap();
        let back = read_report(&path).unwrap();
        assert_eq!(back, written);
        assert_eq!(back.kappa.unwrap().to_bits(), kappa(&m).unwrap().to_bits());
        assert_eq!(back.matrix().unwrap(), m);
    }

    #[test]
    fn two_by_two_map_image() {
        let map = ClassMap {
            height: 2,
            width: 2,
            classes: vec![1, 2, 3, 4],
        };
        let bytes = encode_ppm(&map);
        let header = b"P6\n2 2\n255\n";
        assert_eq!(&bytes[..header.len()], header);
        let pixels = &bytes[header.len()..];
        assert_eq!(pixels.len(), 12);
        assert_eq!(&pixels[..3], &PALETTE[0]);
        assert_eq!(&pixels[9..], &PALETTE[3]);
        assert_eq!(class_color(0), [0, 0, 0]);
        assert_eq!(class_color(10), PALETTE[0]);
    }
}
