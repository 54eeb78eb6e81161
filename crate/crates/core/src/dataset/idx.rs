use super::{DatasetError, ImageSet, Result};

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

/// Contents of a parsed IDX stream.
#[derive(Clone, Debug, PartialEq)]
pub enum IdxData {
    /// A rank-3 `u8` stream of `count` images.
    Images {
        count: usize,
        height: usize,
        width: usize,
        pixels: Vec<u8>,
    },
    Labels(Vec<u8>),
}

impl IdxData {
    /// Pairs an image stream with a label stream.
    pub fn into_image_set(self, labels: IdxData, source: &str) -> Result<ImageSet> {
        match (self, labels) {
            (
                IdxData::Images {
                    height,
                    width,
                    pixels,
                    ..
                },
                IdxData::Labels(labels),
            ) => ImageSet::new(height, width, pixels, labels, source),
            _ => Err(DatasetError::ShapeMismatch(
                "expected an image stream and a label stream".into(),
            )),
        }
    }
}

fn read_u32_be(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(DatasetError::TruncatedPayload {
            expected: (at + 4) as u64,
            found: bytes.len() as u64,
        })
}

/// Parses an unsigned-byte IDX stream (rank 1 labels or rank 3 images).
pub fn parse_idx(bytes: &[u8]) -> Result<IdxData> {
    let magic = read_u32_be(bytes, 0)?;
    let rank = match magic {
        IMAGES_MAGIC => 3,
        LABELS_MAGIC => 1,
        other => return Err(DatasetError::BadMagic(other)),
    };
    let mut dims = Vec::with_capacity(rank);
    for r in 0..rank {
        dims.push(read_u32_be(bytes, 4 + 4 * r)? as u64);
    }
    let header = 4 + 4 * rank;
    let payload = dims
        .iter()
        .try_fold(1u64, |acc, &d| acc.checked_mul(d))
        .filter(|&p| usize::try_from(p).is_ok() && (p as usize).checked_add(header).is_some())
        .ok_or(DatasetError::DimensionOverflow)?;
    let available = (bytes.len() - header) as u64;
    if available < payload {
        return Err(DatasetError::TruncatedPayload {
            expected: payload,
            found: available,
        });
    }
    if available > payload {
        return Err(DatasetError::TrailingBytes(available - payload));
    }
    let body = bytes[header..].to_vec();
    Ok(match rank {
        3 => IdxData::Images {
            count: dims[0] as usize,
            height: dims[1] as usize,
            width: dims[2] as usize,
            pixels: body,
        },
        _ => IdxData::Labels(body),
    })
}
