//! Flat binary model container.
//!
//! Layout: a 16-byte header — magic `"PACM"`, version `u32`, model-kind
//! `u32`, reserved `u32` (zero) — followed by shape metadata (`u32` dims)
//! and `f64` weight blocks in declaration order, priors stored directly
//! after the weights they belong to. All integers and floats are
//! little-endian; matrices are row-major.
//!
//! Kinds: 1 = linear, 2 = SHEL, 3 = partial SHEL, 4 = ReLU.

use ndarray::{Array1, Array2};
use std::path::Path;

use super::{DenseLayer, LinearModel, NormKind, PartialShelModel, ReluModel, ShelModel};
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"PACM";
pub const VERSION: u32 = 1;

const KIND_LINEAR: u32 = 1;
const KIND_SHEL: u32 = 2;
const KIND_PARTIAL: u32 = 3;
const KIND_RELU: u32 = 4;

/// Any serialisable model.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Linear(LinearModel),
    Shel(ShelModel),
    Partial(PartialShelModel),
    Relu(ReluModel),
}

impl Model {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Model::Linear(_) => "linear",
            Model::Shel(_) => "shel",
            Model::Partial(_) => "partial-shel",
            Model::Relu(_) => "relu",
        }
    }
}

struct Writer {
    bytes: Vec<u8>,
}

impl Writer {
    fn new(kind: u32) -> Self {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&MAGIC);
        bytes.extend_from_slice(&VERSION.to_le_bytes());
        bytes.extend_from_slice(&kind.to_le_bytes());
        bytes.extend_from_slice(&0u32.to_le_bytes());
        Writer { bytes }
    }

    fn u32(&mut self, v: u32) {
        self.bytes.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.bytes.extend_from_slice(&v.to_le_bytes());
    }

    fn matrix(&mut self, m: &Array2<f64>) {
        for v in m.iter() {
            self.f64(*v);
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn u32(&mut self, what: &str) -> Result<u32> {
        if self.pos + 4 > self.bytes.len() {
            return Err(Error::parse(
                self.pos as u64,
                format!("truncated while reading {what}"),
            ));
        }
        let v = u32::from_le_bytes(self.bytes[self.pos..self.pos + 4].try_into().unwrap());
        self.pos += 4;
        Ok(v)
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        if self.pos + 8 > self.bytes.len() {
            return Err(Error::parse(
                self.pos as u64,
                format!("truncated while reading {what}"),
            ));
        }
        let v = f64::from_le_bytes(self.bytes[self.pos..self.pos + 8].try_into().unwrap());
        self.pos += 8;
        Ok(v)
    }

    fn matrix(&mut self, rows: usize, cols: usize, what: &str) -> Result<Array2<f64>> {
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            data.push(self.f64(what)?);
        }
        Array2::from_shape_vec((rows, cols), data)
            .map_err(|e| Error::parse(self.pos as u64, format!("bad {what} shape: {e}")))
    }
}

pub fn write_model(model: &Model) -> Vec<u8> {
    match model {
        Model::Linear(m) => {
            let mut w = Writer::new(KIND_LINEAR);
            w.u32(match m.norm_kind {
                NormKind::L2 => 0,
                NormKind::L1 => 1,
            });
            w.u32(m.w.len() as u32);
            for v in m.w.iter() {
                w.f64(*v);
            }
            w.bytes
        }
        Model::Shel(m) => {
            let mut w = Writer::new(KIND_SHEL);
            w.u32(m.classes() as u32);
            w.u32(m.width() as u32);
            w.u32(m.input_dim() as u32);
            w.matrix(m.u());
            w.matrix(m.u0());
            w.matrix(m.v());
            w.bytes
        }
        Model::Partial(m) => {
            let mut w = Writer::new(KIND_PARTIAL);
            w.u32(m.feature_layers.len() as u32);
            for layer in &m.feature_layers {
                w.u32(layer.w.nrows() as u32);
                w.u32(layer.w.ncols() as u32);
            }
            w.u32(m.head.classes() as u32);
            w.u32(m.head.width() as u32);
            w.u32(m.head.input_dim() as u32);
            for layer in &m.feature_layers {
                w.matrix(&layer.w);
                w.matrix(layer.prior());
            }
            w.matrix(m.head.u());
            w.matrix(m.head.u0());
            w.matrix(m.head.v());
            // sigma: 0.0 encodes "uncalibrated"
            w.f64(m.sigma().unwrap_or(0.0));
            w.bytes
        }
        Model::Relu(m) => {
            let mut w = Writer::new(KIND_RELU);
            w.u32(m.depth() as u32);
            for layer in m.layers() {
                w.u32(layer.nrows() as u32);
                w.u32(layer.ncols() as u32);
            }
            w.f64(m.input_bound());
            for (layer, prior) in m.layers().iter().zip(m.priors()) {
                w.matrix(layer);
                w.matrix(prior);
            }
            w.bytes
        }
    }
}

pub fn read_model(bytes: &[u8]) -> Result<Model> {
    if bytes.len() < 16 {
        return Err(Error::parse(0, "file shorter than the 16-byte header".to_string()));
    }
    if bytes[0..4] != MAGIC {
        return Err(Error::parse(0, "bad magic (expected \"PACM\")".to_string()));
    }
    let mut r = Reader { bytes, pos: 4 };
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::parse(4, format!("unsupported version {version}")));
    }
    let kind = r.u32("model kind")?;
    let _reserved = r.u32("reserved")?;
    match kind {
        KIND_LINEAR => {
            let norm_kind = match r.u32("norm kind")? {
                0 => NormKind::L2,
                1 => NormKind::L1,
                other => {
                    return Err(Error::parse(
                        (r.pos - 4) as u64,
                        format!("unknown norm kind {other}"),
                    ))
                }
            };
            let d = r.u32("dimension")? as usize;
            let mut w = Vec::with_capacity(d);
            for _ in 0..d {
                w.push(r.f64("weight")?);
            }
            expect_end(&r)?;
            Ok(Model::Linear(LinearModel::new(Array1::from_vec(w), norm_kind)))
        }
        KIND_SHEL => {
            let c = r.u32("classes")? as usize;
            let k = r.u32("width")? as usize;
            let d = r.u32("input dim")? as usize;
            let u = r.matrix(k, d, "U")?;
            let u0 = r.matrix(k, d, "U0")?;
            let v = r.matrix(c, k, "V")?;
            expect_end(&r)?;
            Ok(Model::Shel(ShelModel::from_parts(u, u0, v)?))
        }
        KIND_PARTIAL => {
            let n_layers = r.u32("layer count")? as usize;
            let mut shapes = Vec::with_capacity(n_layers);
            for i in 0..n_layers {
                let rows = r.u32(&format!("layer {i} rows"))? as usize;
                let cols = r.u32(&format!("layer {i} cols"))? as usize;
                shapes.push((rows, cols));
            }
            let c = r.u32("head classes")? as usize;
            let k = r.u32("head width")? as usize;
            let d = r.u32("head input dim")? as usize;
            let mut layers = Vec::with_capacity(n_layers);
            for (i, (rows, cols)) in shapes.iter().enumerate() {
                let w = r.matrix(*rows, *cols, &format!("layer {i}"))?;
                let w0 = r.matrix(*rows, *cols, &format!("layer {i} prior"))?;
                layers.push(DenseLayer::from_parts(w, w0)?);
            }
            let u = r.matrix(k, d, "head U")?;
            let u0 = r.matrix(k, d, "head U0")?;
            let v = r.matrix(c, k, "head V")?;
            let sigma = r.f64("sigma")?;
            expect_end(&r)?;
            let head = ShelModel::from_parts(u, u0, v)?;
            let mut model = PartialShelModel::new(layers, head)?;
            if sigma > 0.0 {
                model.set_sigma(sigma)?;
            }
            Ok(Model::Partial(model))
        }
        KIND_RELU => {
            let depth = r.u32("depth")? as usize;
            let mut shapes = Vec::with_capacity(depth);
            for i in 0..depth {
                let rows = r.u32(&format!("layer {i} rows"))? as usize;
                let cols = r.u32(&format!("layer {i} cols"))? as usize;
                shapes.push((rows, cols));
            }
            let input_bound = r.f64("input bound")?;
            let mut layers = Vec::with_capacity(depth);
            let mut priors = Vec::with_capacity(depth);
            for (i, (rows, cols)) in shapes.iter().enumerate() {
                layers.push(r.matrix(*rows, *cols, &format!("layer {i}"))?);
                priors.push(r.matrix(*rows, *cols, &format!("layer {i} prior"))?);
            }
            expect_end(&r)?;
            Ok(Model::Relu(ReluModel::new(layers, priors, input_bound)?))
        }
        other => Err(Error::parse(8, format!("unknown model kind {other}"))),
    }
}

fn expect_end(r: &Reader<'_>) -> Result<()> {
    if r.pos != r.bytes.len() {
        return Err(Error::parse(
            r.pos as u64,
            format!("{} trailing bytes", r.bytes.len() - r.pos),
        ));
    }
    Ok(())
}

pub fn save_model(model: &Model, path: &Path) -> Result<()> {
    std::fs::write(path, write_model(model))?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<Model> {
    let bytes = std::fs::read(path)?;
    read_model(&bytes)
}
