//! Dataset container, MNIST-style IDX parsing, CSV ingestion and the
//! synthetic Gaussian-blob generator used for desk-scale experiments.

use ndarray::{Array2, ArrayView1};
use std::path::Path;

use crate::csvutil;
use crate::error::{Error, Result};
use crate::rng::CounterRng;

/// Label convention of a dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Labels {
    /// Binary ±1 labels.
    Binary(Vec<i8>),
    /// 0-based class indices with a fixed class count.
    Multiclass { classes: usize, y: Vec<u32> },
}

impl Labels {
    pub fn len(&self) -> usize {
        match self {
            Labels::Binary(v) => v.len(),
            Labels::Multiclass { y, .. } => y.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Which split a dataset belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Split {
    #[default]
    Train,
    Test,
}

/// Feature matrix plus labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub features: Array2<f64>,
    pub labels: Labels,
    pub split: Split,
}

impl LabeledDataset {
    pub fn new(features: Array2<f64>, labels: Labels, split: Split) -> Result<Self> {
        let m = features.nrows();
        if m == 0 {
            return Err(Error::domain("dataset has no samples".to_string()));
        }
        if labels.len() != m {
            return Err(Error::domain(format!(
                "{} labels for {m} samples",
                labels.len()
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("non-finite feature values".to_string()));
        }
        match &labels {
            Labels::Binary(v) => {
                if let Some(bad) = v.iter().find(|&&y| y != 1 && y != -1) {
                    return Err(Error::domain(format!("binary label {bad} is not ±1")));
                }
            }
            Labels::Multiclass { classes, y } => {
                if *classes < 2 {
                    return Err(Error::domain(format!("need >= 2 classes, got {classes}")));
                }
                if let Some(bad) = y.iter().find(|&&c| c as usize >= *classes) {
                    return Err(Error::domain(format!(
                        "label {bad} out of range for {classes} classes"
                    )));
                }
            }
        }
        Ok(LabeledDataset {
            features,
            labels,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn sample(&self, i: usize) -> ArrayView1<'_, f64> {
        self.features.row(i)
    }

    /// Largest sample L2 norm (the data bound `R` for L2 certificates).
    pub fn max_l2_norm(&self) -> f64 {
        (0..self.len())
            .map(|i| self.sample(i).iter().map(|x| x * x).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    /// Largest absolute feature value (the bound `R` for the L1 certificate).
    pub fn max_linf_norm(&self) -> f64 {
        self.features.iter().map(|x| x.abs()).fold(0.0, f64::max)
    }

    /// Dataset restricted to the first `n` samples.
    pub fn head(&self, n: usize) -> Result<Self> {
        if n == 0 || n > self.len() {
            return Err(Error::domain(format!(
                "cannot take {n} samples from a dataset of {}",
                self.len()
            )));
        }
        let features = self.features.slice(ndarray::s![..n, ..]).to_owned();
        let labels = match &self.labels {
            Labels::Binary(v) => Labels::Binary(v[..n].to_vec()),
            Labels::Multiclass { classes, y } => Labels::Multiclass {
                classes: *classes,
                y: y[..n].to_vec(),
            },
        };
        LabeledDataset::new(features, labels, self.split)
    }
}

const IDX_MAGIC_IMAGES: u32 = 0x0000_0803;
const IDX_MAGIC_LABELS: u32 = 0x0000_0801;

/// One half of an IDX dataset: image matrix (pixels scaled to [0,1]) or
/// raw label bytes.
#[derive(Debug, Clone, PartialEq)]
pub enum IdxData {
    Images(Array2<f64>),
    Labels(Vec<u8>),
}

fn read_be_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    let end = offset + 4;
    if end > bytes.len() {
        return Err(Error::parse(
            offset as u64,
            format!("truncated while reading {what}"),
        ));
    }
    Ok(u32::from_be_bytes([
        bytes[offset],
        bytes[offset + 1],
        bytes[offset + 2],
        bytes[offset + 3],
    ]))
}

/// Parses IDX bytes: magic `0x00000803` (u8 images, dims `[n, rows, cols]`)
/// or `0x00000801` (u8 labels, dims `[n]`), all integers big-endian.
pub fn parse_idx(bytes: &[u8]) -> Result<IdxData> {
    let magic = read_be_u32(bytes, 0, "magic number")?;
    match magic {
        IDX_MAGIC_IMAGES => {
            let n = read_be_u32(bytes, 4, "image count")? as usize;
            let rows = read_be_u32(bytes, 8, "row count")? as usize;
            let cols = read_be_u32(bytes, 12, "column count")? as usize;
            let expected = n
                .checked_mul(rows)
                .and_then(|v| v.checked_mul(cols))
                .ok_or_else(|| Error::parse(4, "image dimensions overflow".to_string()))?;
            let payload = &bytes[16.min(bytes.len())..];
            if payload.len() != expected {
                return Err(Error::parse(
                    (16 + payload.len()) as u64,
                    format!(
                        "payload holds {} bytes, header promises {expected}",
                        payload.len()
                    ),
                ));
            }
            let data: Vec<f64> = payload.iter().map(|&b| f64::from(b) / 255.0).collect();
            let features = Array2::from_shape_vec((n, rows * cols), data)
                .map_err(|e| Error::parse(16, format!("bad image shape: {e}")))?;
            Ok(IdxData::Images(features))
        }
        IDX_MAGIC_LABELS => {
            let n = read_be_u32(bytes, 4, "label count")? as usize;
            let payload = &bytes[8.min(bytes.len())..];
            if payload.len() != n {
                return Err(Error::parse(
                    (8 + payload.len()) as u64,
                    format!("payload holds {} labels, header promises {n}", payload.len()),
                ));
            }
            Ok(IdxData::Labels(payload.to_vec()))
        }
        other => Err(Error::parse(
            0,
            format!("unrecognised IDX magic 0x{other:08x}"),
        )),
    }
}

/// Reads one IDX file (images or labels) from disk.
pub fn read_idx(path: &Path) -> Result<IdxData> {
    let bytes = std::fs::read(path)?;
    parse_idx(&bytes)
}

/// Combines an image half and a label half into a dataset with `classes`
/// classes, range-checking every label.
pub fn idx_dataset(
    images: IdxData,
    labels: IdxData,
    classes: usize,
    split: Split,
) -> Result<LabeledDataset> {
    let features = match images {
        IdxData::Images(f) => f,
        IdxData::Labels(_) => {
            return Err(Error::domain("expected an image half, got labels".to_string()))
        }
    };
    let raw = match labels {
        IdxData::Labels(l) => l,
        IdxData::Images(_) => {
            return Err(Error::domain("expected a label half, got images".to_string()))
        }
    };
    if features.nrows() != raw.len() {
        return Err(Error::domain(format!(
            "{} images but {} labels",
            features.nrows(),
            raw.len()
        )));
    }
    let mut y = Vec::with_capacity(raw.len());
    for (i, &b) in raw.iter().enumerate() {
        if b as usize >= classes {
            return Err(Error::domain(format!(
                "label {b} at sample {i} out of range for {classes} classes"
            )));
        }
        y.push(u32::from(b));
    }
    LabeledDataset::new(features, Labels::Multiclass { classes, y }, split)
}

/// Isotropic Gaussian blobs: `classes` clusters in `d` dimensions whose
/// means are pairwise `separation` apart (needs `d >= classes`). Samples
/// are interleaved class-by-class so any prefix stays balanced.
pub fn synth_blobs(
    classes: usize,
    per_class: usize,
    d: usize,
    separation: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    if classes < 2 || per_class == 0 || d == 0 {
        return Err(Error::domain(format!(
            "blob parameters must be positive with >= 2 classes (classes={classes}, \
             per_class={per_class}, d={d})"
        )));
    }
    if classes > d {
        return Err(Error::domain(format!(
            "orthogonal blob means need d >= classes ({d} < {classes})"
        )));
    }
    if !(separation >= 0.0) {
        return Err(Error::domain(format!("separation {separation} must be >= 0")));
    }
    let mut rng = CounterRng::from_seed_tag(seed, "synth-blobs");
    let m = classes * per_class;
    let offset = separation / std::f64::consts::SQRT_2;
    let mut features = Array2::<f64>::zeros((m, d));
    let mut y = Vec::with_capacity(m);
    for i in 0..m {
        let class = i % classes;
        let mut row = features.row_mut(i);
        for v in row.iter_mut() {
            *v = rng.next_normal();
        }
        row[class] += offset;
        y.push(class as u32);
    }
    LabeledDataset::new(
        features,
        Labels::Multiclass { classes, y },
        Split::Train,
    )
}

/// Reads a dataset from CSV: header row mandatory, a `label` column, every
/// other column a feature (in file order). Labels that are exactly the set
/// {-1, 1} load as binary; otherwise as 0-based classes.
pub fn read_csv_dataset(path: &Path, split: Split) -> Result<LabeledDataset> {
    let text = std::fs::read_to_string(path)?;
    parse_csv_dataset(&text, split)
}

pub fn parse_csv_dataset(text: &str, split: Split) -> Result<LabeledDataset> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| Error::parse(0, "empty CSV".to_string()))?;
    let cols = csvutil::parse_row(header);
    let label_idx = cols
        .iter()
        .position(|c| c == "label")
        .ok_or_else(|| Error::parse(0, "CSV header has no 'label' column".to_string()))?;
    let d = cols.len() - 1;
    if d == 0 {
        return Err(Error::parse(0, "CSV has no feature columns".to_string()));
    }
    let mut rows: Vec<f64> = Vec::new();
    let mut raw_labels: Vec<i64> = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let fields = csvutil::parse_row(line);
        if fields.len() != cols.len() {
            return Err(Error::parse(
                0,
                format!(
                    "row {} has {} fields, header has {}",
                    lineno + 2,
                    fields.len(),
                    cols.len()
                ),
            ));
        }
        for (i, f) in fields.iter().enumerate() {
            if i == label_idx {
                let v: i64 = f.parse().map_err(|_| {
                    Error::parse(0, format!("row {}: bad label {f:?}", lineno + 2))
                })?;
                raw_labels.push(v);
            } else {
                let v = csvutil::parse_f64(f).ok_or_else(|| {
                    Error::parse(0, format!("row {}: bad number {f:?}", lineno + 2))
                })?;
                rows.push(v);
            }
        }
    }
    let m = raw_labels.len();
    let features = Array2::from_shape_vec((m, d), rows)
        .map_err(|e| Error::parse(0, format!("bad CSV shape: {e}")))?;
    let distinct: std::collections::BTreeSet<i64> = raw_labels.iter().copied().collect();
    let labels = if distinct == [-1i64, 1].into_iter().collect() {
        Labels::Binary(raw_labels.iter().map(|&v| v as i8).collect())
    } else {
        let max = *distinct.iter().max().unwrap_or(&0);
        let min = *distinct.iter().min().unwrap_or(&0);
        if min < 0 {
            return Err(Error::domain(format!(
                "class labels must be 0-based, found {min}"
            )));
        }
        Labels::Multiclass {
            classes: (max + 1) as usize,
            y: raw_labels.iter().map(|&v| v as u32).collect(),
        }
    };
    LabeledDataset::new(features, labels, split)
}
