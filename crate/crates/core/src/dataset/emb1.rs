//! EMB1 tensor container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      4 bytes  "EMB1"
//! version    u16      currently 1
//! dtype      u8       0 = f32, 1 = f64
//! rank       u8       1..=4
//! dims       rank x u64
//! label_flag u8       1 when a label array follows the payload
//! payload    product(dims) values of dtype, row-major
//! labels     dims[0] x u8 (only when label_flag == 1)
//! ```

use std::fs;
use std::path::Path;

use super::{DatasetError, FeatureMatrix, Result};

pub const MAGIC: &[u8; 4] = b"EMB1";
pub const VERSION: u16 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dtype {
    F32 = 0,
    F64 = 1,
}

impl Dtype {
    fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Dtype::F32),
            1 => Ok(Dtype::F64),
            other => Err(DatasetError::DtypeUnsupported(other)),
        }
    }

    fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Emb1Header {
    pub version: u16,
    pub dtype: Dtype,
    pub dims: Vec<u64>,
    pub has_labels: bool,
}

impl Emb1Header {
    fn encoded_len(&self) -> usize {
        4 + 2 + 1 + 1 + 8 * self.dims.len() + 1
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_f64(&self) -> Vec<f64> {
        match self {
            TensorData::F32(v) => v.iter().map(|&x| x as f64).collect(),
            TensorData::F64(v) => v.clone(),
        }
    }
}

/// An in-memory EMB1 tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub dims: Vec<u64>,
    pub data: TensorData,
    pub labels: Option<Vec<u8>>,
}

impl Tensor {
    pub fn header(&self) -> Emb1Header {
        Emb1Header {
            version: VERSION,
            dtype: match self.data {
                TensorData::F32(_) => Dtype::F32,
                TensorData::F64(_) => Dtype::F64,
            },
            dims: self.dims.clone(),
            has_labels: self.labels.is_some(),
        }
    }

    fn check_shape(&self) -> Result<()> {
        if self.dims.is_empty() || self.dims.len() > 4 {
            return Err(DatasetError::ShapeMismatch(format!(
                "rank {} outside 1..=4",
                self.dims.len()
            )));
        }
        let count = element_count(&self.dims)?;
        if count != self.data.len() {
            return Err(DatasetError::ShapeMismatch(format!(
                "dims {:?} need {} values, have {}",
                self.dims,
                count,
                self.data.len()
            )));
        }
        if let Some(l) = &self.labels {
            if l.len() as u64 != self.dims[0] {
                return Err(DatasetError::ShapeMismatch(format!(
                    "{} labels for leading dim {}",
                    l.len(),
                    self.dims[0]
                )));
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.check_shape()?;
        let header = self.header();
        let mut out =
            Vec::with_capacity(header.encoded_len() + self.data.len() * header.dtype.width());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&header.version.to_le_bytes());
        out.push(header.dtype as u8);
        out.push(self.dims.len() as u8);
        for d in &self.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        out.push(u8::from(header.has_labels));
        match &self.data {
            TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
        if let Some(l) = &self.labels {
            out.extend_from_slice(l);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let truncated = |expected: usize| DatasetError::TruncatedPayload {
            expected: expected as u64,
            found: bytes.len() as u64,
        };
        if bytes.len() < 8 {
            return Err(truncated(8));
        }
        if &bytes[..4] != MAGIC {
            return Err(DatasetError::BadMagic(u32::from_be_bytes([
                bytes[0], bytes[1], bytes[2], bytes[3],
            ])));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(DatasetError::ShapeMismatch(format!(
                "unsupported EMB1 version {version}"
            )));
        }
        let dtype = Dtype::from_code(bytes[6])?;
        let rank = bytes[7] as usize;
        if !(1..=4).contains(&rank) {
            return Err(DatasetError::ShapeMismatch(format!("rank {rank} outside 1..=4")));
        }
        let header_len = 8 + 8 * rank + 1;
        if bytes.len() < header_len {
            return Err(truncated(header_len));
        }
        let dims: Vec<u64> = (0..rank)
            .map(|r| {
                let at = 8 + 8 * r;
                u64::from_le_bytes(bytes[at..at + 8].try_into().unwrap())
            })
            .collect();
        let has_labels = match bytes[header_len - 1] {
            0 => false,
            1 => true,
            other => {
                return Err(DatasetError::ShapeMismatch(format!("label flag {other}")));
            }
        };
        let count = element_count(&dims)?;
        let payload_len = count
            .checked_mul(dtype.width())
            .ok_or(DatasetError::DimensionOverflow)?;
        let label_len = if has_labels {
            usize::try_from(dims[0]).map_err(|_| DatasetError::DimensionOverflow)?
        } else {
            0
        };
        let body = &bytes[header_len..];
        if payload_len.checked_add(label_len) != Some(body.len()) {
            return Err(DatasetError::ShapeMismatch(format!(
                "dims {:?} imply {} payload bytes, file has {}",
                dims,
                payload_len + label_len,
                body.len()
            )));
        }
        let payload = &body[..payload_len];
        let data = match dtype {
            Dtype::F32 => TensorData::F32(
                payload
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            Dtype::F64 => TensorData::F64(
                payload
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
        };
        let labels = has_labels.then(|| body[payload_len..].to_vec());
        Ok(Tensor { dims, data, labels })
    }

    /// Interprets the tensor as a matrix: leading dim is rows, the rest flatten into columns.
    pub fn matrix_shape(&self) -> (usize, usize) {
        let rows = self.dims[0] as usize;
        let cols = self.dims[1..].iter().product::<u64>() as usize;
        (rows, cols)
    }
}

fn element_count(dims: &[u64]) -> Result<usize> {
    dims.iter()
        .try_fold(1u64, |acc, &d| acc.checked_mul(d))
        .and_then(|c| usize::try_from(c).ok())
        .ok_or(DatasetError::DimensionOverflow)
}

pub fn write_tensor(tensor: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, tensor.to_bytes()?)?;
    Ok(())
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    Tensor::from_bytes(&fs::read(path)?)
}

/// Writes a feature matrix as a rank-2 `f32` EMB1 file.
pub fn write_emb1(m: &FeatureMatrix, path: impl AsRef<Path>) -> Result<()> {
    write_tensor(&feature_tensor(m), path)
}

pub(crate) fn feature_tensor(m: &FeatureMatrix) -> Tensor {
    Tensor {
        dims: vec![m.rows() as u64, m.cols() as u64],
        data: TensorData::F32(m.data().to_vec()),
        labels: m.labels().map(<[u8]>::to_vec),
    }
}

/// Reads an EMB1 file as a feature matrix. `f64` payloads are narrowed to `f32`.
pub fn read_emb1(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    let t = read_tensor(path)?;
    let (rows, cols) = t.matrix_shape();
    let data = match t.data {
        TensorData::F32(v) => v,
        TensorData::F64(v) => v.into_iter().map(|x| x as f32).collect(),
    };
    FeatureMatrix::new(rows, cols, data, t.labels)
}
