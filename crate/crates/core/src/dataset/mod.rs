//! Dataset containers and on-disk formats.
//!
//! Two formats are understood: the big-endian IDX files that MNIST and
//! Fashion-MNIST ship in, and EMB1, a small little-endian tensor container
//! used to hand feature matrices, Gram matrices and model parameters between
//! pipeline stages (and from external embedding extractors).

mod emb1;
mod idx;

pub use emb1::{read_emb1, read_tensor, write_emb1, write_tensor, Dtype, Emb1Header, Tensor, TensorData};
pub use idx::{parse_idx, IdxData};

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic number {0:#010x}")]
    BadMagic(u32),
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: u64, found: u64 },
    #[error("dimension product overflows addressable size")]
    DimensionOverflow,
    #[error("trailing bytes after payload: {0}")]
    TrailingBytes(u64),
    #[error("unsupported dtype code {0}")]
    DtypeUnsupported(u8),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value at position {0}")]
    NonFinite(usize),
}

pub type Result<T, E = DatasetError> = std::result::Result<T, E>;

/// A labelled stack of equally sized grayscale images.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageSet {
    pub height: usize,
    pub width: usize,
    /// Row-major pixels, one `height * width` slab per image.
    pub pixels: Vec<u8>,
    pub labels: Vec<u8>,
    pub source: String,
}

impl ImageSet {
    pub fn new(
        height: usize,
        width: usize,
        pixels: Vec<u8>,
        labels: Vec<u8>,
        source: impl Into<String>,
    ) -> Result<Self> {
        let area = height * width;
        if area == 0 || pixels.len() % area != 0 {
            return Err(DatasetError::ShapeMismatch(format!(
                "{} pixels do not tile {}x{} images",
                pixels.len(),
                height,
                width
            )));
        }
        if pixels.len() / area != labels.len() {
            return Err(DatasetError::ShapeMismatch(format!(
                "{} images but {} labels",
                pixels.len() / area,
                labels.len()
            )));
        }
        Ok(Self {
            height,
            width,
            pixels,
            labels,
            source: source.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let area = self.height * self.width;
        &self.pixels[i * area..(i + 1) * area]
    }

    /// Number of classes, taken as one past the largest label.
    pub fn num_classes(&self) -> usize {
        self.labels.iter().map(|&l| l as usize + 1).max().unwrap_or(0)
    }

    /// Appends `other`, which must have the same image size.
    pub fn concat(mut self, other: ImageSet) -> Result<Self> {
        if (self.height, self.width) != (other.height, other.width) {
            return Err(DatasetError::ShapeMismatch(format!(
                "cannot append {}x{} images to {}x{}",
                other.height, other.width, self.height, self.width
            )));
        }
        self.pixels.extend(other.pixels);
        self.labels.extend(other.labels);
        Ok(self)
    }
}

/// Reads an IDX image file and its IDX label file.
pub fn load_idx_pair(images: impl AsRef<Path>, labels: impl AsRef<Path>, source: &str) -> Result<ImageSet> {
    let imgs = parse_idx(&fs::read(images)?)?;
    let labels = parse_idx(&fs::read(labels)?)?;
    imgs.into_image_set(labels, source)
}

/// Dense row-major `f32` sample matrix with optional class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
    labels: Option<Vec<u8>>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>, labels: Option<Vec<u8>>) -> Result<Self> {
        if rows.checked_mul(cols) != Some(data.len()) {
            return Err(DatasetError::ShapeMismatch(format!(
                "{} values for a {}x{} matrix",
                data.len(),
                rows,
                cols
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(DatasetError::NonFinite(pos));
        }
        if let Some(l) = &labels {
            if l.len() != rows {
                return Err(DatasetError::ShapeMismatch(format!(
                    "{} labels for {} rows",
                    l.len(),
                    rows
                )));
            }
        }
        Ok(Self {
            rows,
            cols,
            data,
            labels,
        })
    }

    /// Builds a matrix from `f64` rows, narrowing to `f32`.
    pub fn from_rows_f64(rows: &[Vec<f64>], labels: Option<Vec<u8>>) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(DatasetError::ShapeMismatch("ragged rows".into()));
        }
        let data = rows.iter().flatten().map(|&v| v as f32).collect();
        Self::new(rows.len(), cols, data, labels)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_f64(&self, i: usize) -> Vec<f64> {
        self.row(i).iter().map(|&v| v as f64).collect()
    }

    pub fn labels(&self) -> Option<&[u8]> {
        self.labels.as_deref()
    }

    pub fn with_labels(mut self, labels: Option<Vec<u8>>) -> Result<Self> {
        if let Some(l) = &labels {
            if l.len() != self.rows {
                return Err(DatasetError::ShapeMismatch(format!(
                    "{} labels for {} rows",
                    l.len(),
                    self.rows
                )));
            }
        }
        self.labels = labels;
        Ok(self)
    }

    /// Gathers the given rows (and their labels) into a new matrix.
    pub fn select_rows(&self, indices: &[usize]) -> FeatureMatrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        let labels = self
            .labels
            .as_ref()
            .map(|l| indices.iter().map(|&i| l[i]).collect());
        FeatureMatrix {
            rows: indices.len(),
            cols: self.cols,
            data,
            labels,
        }
    }

    /// Stacks `other` below `self`. Labels survive only when both sides carry them.
    pub fn vstack(&self, other: &FeatureMatrix) -> Result<FeatureMatrix> {
        if self.cols != other.cols {
            return Err(DatasetError::ShapeMismatch(format!(
                "cannot stack {} columns on {}",
                other.cols, self.cols
            )));
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        let labels = match (&self.labels, &other.labels) {
            (Some(a), Some(b)) => Some(a.iter().chain(b).copied().collect()),
            _ => None,
        };
        Ok(FeatureMatrix {
            rows: self.rows + other.rows,
            cols: self.cols,
            data,
            labels,
        })
    }

    /// Hex SHA-256 over shape, values and labels; used to tie artifacts together.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.rows as u64).to_le_bytes());
        h.update((self.cols as u64).to_le_bytes());
        for v in &self.data {
            h.update(v.to_le_bytes());
        }
        if let Some(l) = &self.labels {
            h.update([1u8]);
            h.update(l);
        }
        hex::encode(h.finalize())
    }
}

/// Flattens each image to a row and scales pixels to `[0, 1]` by dividing by 255.
pub fn flatten_pixels(set: &ImageSet) -> FeatureMatrix {
    let data = set.pixels.iter().map(|&p| p as f32 / 255.0).collect();
    FeatureMatrix {
        rows: set.len(),
        cols: set.height * set.width,
        data,
        labels: Some(set.labels.clone()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image_set(n: usize, fill: u8) -> ImageSet {
        ImageSet::new(28, 28, vec![fill; n * 784], (0..n as u8).collect(), "test").unwrap()
    }

    #[test]
    fn flatten_all_zero_and_all_255() {
        let z = flatten_pixels(&image_set(1, 0));
        assert_eq!(z.cols(), 784);
        assert!(z.row(0).iter().all(|&v| v == 0.0));
        let o = flatten_pixels(&image_set(1, 255));
        assert!(o.row(0).iter().all(|&v| v == 1.0));
    }

    #[test]
    fn flatten_single_pixel() {
        let mut s = image_set(1, 0);
        s.pixels[0] = 128;
        let m = flatten_pixels(&s);
        assert_eq!(m.row(0)[0], 128.0f32 / 255.0);
        assert!(m.row(0)[1..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn flatten_preserves_order_and_labels() {
        let mut s = image_set(3, 0);
        for i in 0..3 {
            s.pixels[i * 784] = 10 * (i as u8 + 1);
        }
        s.labels = vec![7, 2, 9];
        let m = flatten_pixels(&s);
        assert_eq!(m.labels(), Some(&[7u8, 2, 9][..]));
        for i in 0..3 {
            assert_eq!(m.row(i)[0], (10 * (i + 1)) as f32 / 255.0);
        }
    }

    #[test]
    fn feature_matrix_rejects_bad_shapes() {
        assert!(matches!(
            FeatureMatrix::new(2, 2, vec![0.0; 3], None),
            Err(DatasetError::ShapeMismatch(_))
        ));
        assert!(matches!(
            FeatureMatrix::new(1, 2, vec![0.0, f32::NAN], None),
            Err(DatasetError::NonFinite(1))
        ));
        assert!(FeatureMatrix::new(2, 1, vec![0.0; 2], Some(vec![1])).is_err());
    }

    #[test]
    fn select_and_stack() {
        let m = FeatureMatrix::new(3, 1, vec![1.0, 2.0, 3.0], Some(vec![0, 1, 2])).unwrap();
        let s = m.select_rows(&[2, 0]);
        assert_eq!(s.data(), &[3.0, 1.0]);
        assert_eq!(s.labels(), Some(&[2u8, 0][..]));
        let st = s.vstack(&m).unwrap();
        assert_eq!(st.rows(), 5);
        assert_eq!(st.labels().unwrap().len(), 5);
        assert_ne!(m.content_hash(), s.content_hash());
    }
}
