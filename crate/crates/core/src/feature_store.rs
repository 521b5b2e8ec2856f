//! Feature matrices, their on-disk formats, sub-sampling and standardization.
//!
//! Binary layout (`.ddim`), all integers little-endian:
//!
//! | offset | size  | field                          |
//! |--------|-------|--------------------------------|
//! | 0      | 4     | magic `b"DDIM"`                |
//! | 4      | 2     | version, `u16` = 1             |
//! | 6      | 4     | rows `n`, `u32`                |
//! | 10     | 4     | columns `d`, `u32`             |
//! | 14     | 4·n·d | `f32` values, row-major        |
//!
//! Labels live in an optional sibling file (same stem, `.labels` extension)
//! holding `n` little-endian `u32` class ids and nothing else.

use std::fs;
use std::path::{Path, PathBuf};

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::uniform_below;

pub const MAGIC: &[u8; 4] = b"DDIM";
pub const VERSION: u16 = 1;
const HEADER_LEN: usize = 14;

/// Dense row-major matrix of finite features, one row per observation.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    name: String,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(name: impl Into<String>, rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::EmptyDataset);
        }
        if data.len() != rows * cols {
            return Err(Error::Format(format!(
                "expected {} values for a {rows}x{cols} matrix, got {}",
                rows * cols,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: pos / cols,
                col: pos % cols,
            });
        }
        Ok(Self {
            name: name.into(),
            rows,
            cols,
            data,
        })
    }

    pub fn from_rows(name: impl Into<String>, rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map(Vec::len).ok_or(Error::EmptyDataset)?;
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != cols {
                return Err(Error::Format(format!(
                    "row {i} has {} columns, expected {cols}",
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        Self::new(name, rows.len(), cols, data)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// Sample count.
    pub fn n(&self) -> usize {
        self.rows
    }

    /// Feature dimensionality.
    pub fn d(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols)
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = f64> + '_ {
        self.data.iter().skip(j).step_by(self.cols).copied()
    }

    /// Matrix made of the listed rows, in the listed order.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            if i >= self.rows {
                return Err(Error::InvalidParameter(format!(
                    "row index {i} out of range for {} rows",
                    self.rows
                )));
            }
            data.extend_from_slice(self.row(i));
        }
        Self::new(self.name.clone(), indices.len(), self.cols, data)
    }

    /// Row-wise concatenation; both matrices must share `d`.
    pub fn concat(&self, other: &Self) -> Result<Self> {
        if self.cols != other.cols {
            return Err(Error::DimensionMismatch {
                left: self.cols,
                right: other.cols,
            });
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Self::new(self.name.clone(), self.rows + other.rows, self.cols, data)
    }
}

/// Features with one class id per row.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledFeatureSet {
    pub features: FeatureMatrix,
    pub labels: Vec<u32>,
    pub num_classes: usize,
}

impl LabeledFeatureSet {
    pub fn new(features: FeatureMatrix, labels: Vec<u32>, num_classes: usize) -> Result<Self> {
        if labels.len() != features.n() {
            return Err(Error::Format(format!(
                "{} labels for {} rows",
                labels.len(),
                features.n()
            )));
        }
        if let Some((i, &l)) = labels
            .iter()
            .enumerate()
            .find(|(_, &l)| l as usize >= num_classes)
        {
            return Err(Error::Format(format!(
                "label {l} at row {i} is outside 0..{num_classes}"
            )));
        }
        Ok(Self {
            features,
            labels,
            num_classes,
        })
    }

    /// Infers the class count as `max(label) + 1`.
    pub fn from_labels(features: FeatureMatrix, labels: Vec<u32>) -> Result<Self> {
        let num_classes = labels.iter().copied().max().map_or(0, |m| m as usize + 1);
        Self::new(features, labels, num_classes)
    }

    pub fn n(&self) -> usize {
        self.features.n()
    }

    pub fn select_rows(&self, indices: &[usize]) -> Result<Self> {
        let features = self.features.select_rows(indices)?;
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Self::new(features, labels, self.num_classes)
    }
}

/// Sub-sampling protocol: `draws` independent draws of `tau` rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsampleSpec {
    pub tau: usize,
    pub draws: usize,
    pub seed: u64,
}

impl SubsampleSpec {
    pub const DEFAULT_TAU: usize = 100;
    pub const DEFAULT_DRAWS: usize = 20;

    pub fn new(tau: usize, draws: usize, seed: u64) -> Result<Self> {
        let spec = Self { tau, draws, seed };
        spec.check()?;
        Ok(spec)
    }

    pub fn check(&self) -> Result<()> {
        if self.tau == 0 {
            return Err(Error::InvalidParameter("tau must be at least 1".into()));
        }
        if self.draws == 0 {
            return Err(Error::InvalidParameter("draw count must be at least 1".into()));
        }
        Ok(())
    }
}

impl Default for SubsampleSpec {
    fn default() -> Self {
        Self {
            tau: Self::DEFAULT_TAU,
            draws: Self::DEFAULT_DRAWS,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FileFormat {
    Binary,
    Csv,
}

impl FileFormat {
    /// `.csv` maps to CSV, everything else to the binary format.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => FileFormat::Csv,
            _ => FileFormat::Binary,
        }
    }
}

fn dataset_name(path: &Path) -> String {
    path.file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("dataset")
        .to_string()
}

pub fn load_features(path: impl AsRef<Path>, format: FileFormat) -> Result<FeatureMatrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let name = dataset_name(path);
    match format {
        FileFormat::Binary => decode_binary(&bytes, name),
        FileFormat::Csv => {
            let text = String::from_utf8(bytes)
                .map_err(|_| Error::Format(format!("{} is not UTF-8", path.display())))?;
            parse_csv(&text, name)
        }
    }
}

pub fn save_features(features: &FeatureMatrix, path: impl AsRef<Path>, format: FileFormat) -> Result<()> {
    let path = path.as_ref();
    let bytes = match format {
        FileFormat::Binary => encode_binary(features),
        FileFormat::Csv => to_csv(features).into_bytes(),
    };
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn encode_binary(features: &FeatureMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * features.data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(features.rows as u32).to_le_bytes());
    out.extend_from_slice(&(features.cols as u32).to_le_bytes());
    for &v in &features.data {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_binary(bytes: &[u8], name: impl Into<String>) -> Result<FeatureMatrix> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!(
            "header needs {HEADER_LEN} bytes, file has {}",
            bytes.len()
        )));
    }
    if &bytes[0..4] != MAGIC {
        return Err(Error::Format("bad magic, expected DDIM".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let rows = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[10..14].try_into().unwrap()) as usize;
    if rows == 0 || cols == 0 {
        return Err(Error::EmptyDataset);
    }
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != rows * cols * 4 {
        return Err(Error::Format(format!(
            "header declares {rows}x{cols} values ({} bytes), payload has {} bytes",
            rows * cols * 4,
            payload.len()
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    FeatureMatrix::new(name, rows, cols, data)
}

pub fn parse_csv(text: &str, name: impl Into<String>) -> Result<FeatureMatrix> {
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (row, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut width = 0;
        for (col, field) in line.split(',').enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::Format(format!("row {row}, column {col}: cannot parse {field:?}"))
            })?;
            if !v.is_finite() {
                return Err(Error::NonFinite { row, col });
            }
            data.push(v);
            width += 1;
        }
        match cols {
            None => cols = Some(width),
            Some(c) if c != width => {
                return Err(Error::Format(format!(
                    "row {row} has {width} columns, expected {c}"
                )))
            }
            _ => {}
        }
        rows += 1;
    }
    let cols = cols.ok_or(Error::EmptyDataset)?;
    FeatureMatrix::new(name, rows, cols, data)
}

/// Shortest round-trip decimal rendering, one row per line.
pub fn to_csv(features: &FeatureMatrix) -> String {
    let mut out = String::new();
    for row in features.rows() {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

/// Sibling labels path: same stem, `.labels` extension.
pub fn labels_path(features_path: &Path) -> PathBuf {
    features_path.with_extension("labels")
}

pub fn load_labels(path: impl AsRef<Path>) -> Result<Vec<u32>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::Format(format!(
            "labels file {} has {} bytes, not a multiple of 4",
            path.display(),
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

pub fn save_labels(labels: &[u32], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes: Vec<u8> = labels.iter().flat_map(|l| l.to_le_bytes()).collect();
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Loads features plus the sibling labels file.
pub fn load_labeled(path: impl AsRef<Path>, format: FileFormat) -> Result<LabeledFeatureSet> {
    let path = path.as_ref();
    let features = load_features(path, format)?;
    let labels = load_labels(labels_path(path))?;
    LabeledFeatureSet::from_labels(features, labels)
}

pub fn save_labeled(set: &LabeledFeatureSet, path: impl AsRef<Path>, format: FileFormat) -> Result<()> {
    let path = path.as_ref();
    save_features(&set.features, path, format)?;
    save_labels(&set.labels, labels_path(path))
}

/// `tau` distinct indices from `0..n`, uniformly without replacement
/// (partial Fisher-Yates, front-to-back).
pub fn sample_indices<R: RngCore + ?Sized>(n: usize, tau: usize, rng: &mut R) -> Result<Vec<usize>> {
    if tau > n {
        return Err(Error::SubsampleTooLarge { tau, available: n });
    }
    let mut pool: Vec<usize> = (0..n).collect();
    for i in 0..tau {
        let j = i + uniform_below(rng, n - i);
        pool.swap(i, j);
    }
    pool.truncate(tau);
    Ok(pool)
}

pub fn subsample<R: RngCore + ?Sized>(features: &FeatureMatrix, tau: usize, rng: &mut R) -> Result<FeatureMatrix> {
    let idx = sample_indices(features.n(), tau, rng)?;
    features.select_rows(&idx)
}

/// Per-column statistics from one standardization pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardization {
    /// Population mean and standard deviation of every column.
    pub fn fit(features: &FeatureMatrix) -> Self {
        let n = features.n() as f64;
        let d = features.d();
        let mut mean = vec![0.0; d];
        for row in features.rows() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for row in features.rows() {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .iter()
            .zip(&mean)
            .map(|(s, m)| {
                let sd = (s / n).sqrt();
                // rounding noise on a constant column
                if sd <= 4.0 * f64::EPSILON * m.abs().max(1.0) {
                    0.0
                } else {
                    sd
                }
            })
            .collect();
        Self { mean, std }
    }

    /// Applies these statistics; zero-variance columns map to zero.
    pub fn apply(&self, features: &FeatureMatrix) -> Result<FeatureMatrix> {
        if features.d() != self.mean.len() {
            return Err(Error::DimensionMismatch {
                left: features.d(),
                right: self.mean.len(),
            });
        }
        let data = features
            .rows()
            .flat_map(|row| {
                row.iter()
                    .zip(&self.mean)
                    .zip(&self.std)
                    .map(|((v, m), s)| if *s == 0.0 { 0.0 } else { (v - m) / s })
            })
            .collect();
        FeatureMatrix::new(features.name(), features.n(), features.d(), data)
    }
}

/// Standardizes with statistics computed from `features` alone.
pub fn standardize(features: &FeatureMatrix) -> (FeatureMatrix, Standardization) {
    let stats = Standardization::fit(features);
    let out = stats
        .apply(features)
        .expect("statistics fitted on the same matrix");
    (out, stats)
}
