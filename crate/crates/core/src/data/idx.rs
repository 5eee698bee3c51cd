//! IDX binary arrays (the MNIST distribution format).
//!
//! Layout: two zero bytes, a type byte, a rank byte, `rank` big-endian u32
//! extents, then the row-major payload. Only unsigned-byte payloads (type
//! `0x08`) are supported.

use std::io::Read;
use std::path::Path;

use thiserror::Error;

use super::{one_hot, Dataset, DatasetKind, Geometry};
use crate::error::{invalid, Result};
use crate::tensor::Tensor;

pub const TYPE_U8: u8 = 0x08;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum IdxError {
    #[error("IDX input of {0} bytes is shorter than the 4-byte magic")]
    TooShort(usize),
    #[error("bad IDX magic {0:02x?}: expected 00 00 <type> <rank>")]
    BadMagic([u8; 4]),
    #[error("unsupported IDX element type 0x{0:02x} (only 0x08 unsigned byte)")]
    UnsupportedType(u8),
    #[error("IDX rank must be at least 1")]
    ZeroRank,
    #[error("IDX extents overflow the address space")]
    Overflow,
    #[error("truncated IDX input: need {expected} bytes, have {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("IDX input has {0} trailing bytes after the payload")]
    TrailingBytes(usize),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

pub fn parse_idx(bytes: &[u8]) -> Result<IdxArray, IdxError> {
    if bytes.len() < 4 {
        return Err(IdxError::TooShort(bytes.len()));
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if magic[0] != 0 || magic[1] != 0 {
        return Err(IdxError::BadMagic(magic));
    }
    if magic[2] != TYPE_U8 {
        return Err(IdxError::UnsupportedType(magic[2]));
    }
    let rank = magic[3] as usize;
    if rank == 0 {
        return Err(IdxError::ZeroRank);
    }
    let header = 4 + 4 * rank;
    if bytes.len() < header {
        return Err(IdxError::Truncated {
            expected: header,
            actual: bytes.len(),
        });
    }
    let dims: Vec<usize> = bytes[4..header]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes(c.try_into().unwrap()) as usize)
        .collect();
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or(IdxError::Overflow)?;
    let expected = header.checked_add(count).ok_or(IdxError::Overflow)?;
    if bytes.len() < expected {
        return Err(IdxError::Truncated {
            expected,
            actual: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(IdxError::TrailingBytes(bytes.len() - expected));
    }
    Ok(IdxArray {
        dims,
        data: bytes[header..].to_vec(),
    })
}

pub fn encode_idx(arr: &IdxArray) -> Vec<u8> {
    let mut out = vec![0, 0, TYPE_U8, arr.dims.len() as u8];
    for &d in &arr.dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(&arr.data);
    out
}

impl IdxArray {
    /// Images scaled to `[0, 1]`: one row per leading index.
    pub fn to_images(&self) -> Result<(Tensor, Geometry)> {
        if self.dims.len() != 3 || self.dims.contains(&0) {
            return Err(invalid(format!("image IDX needs rank 3 with positive extents, got {:?}", self.dims)));
        }
        let (n, h, w) = (self.dims[0], self.dims[1], self.dims[2]);
        let data = self.data.iter().map(|&b| b as f64 / 255.0).collect();
        Ok((Tensor::from_parts(vec![n, h * w], data), Geometry::new(h, w, 1)))
    }

    pub fn to_labels(&self) -> Result<Vec<usize>> {
        if self.dims.len() != 1 {
            return Err(invalid(format!("label IDX needs rank 1, got {:?}", self.dims)));
        }
        Ok(self.data.iter().map(|&b| b as usize).collect())
    }
}

/// Reads an IDX file, transparently gunzipping when it starts with the gzip magic.
pub fn read_idx_file(path: &Path) -> Result<IdxArray> {
    let raw = std::fs::read(path)?;
    let bytes = if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        flate2::read::GzDecoder::new(&raw[..]).read_to_end(&mut out)?;
        out
    } else {
        raw
    };
    Ok(parse_idx(&bytes)?)
}

/// Digit dataset (10 classes) from an image file and a label file.
pub fn load_digits(images: &Path, labels: &Path) -> Result<Dataset> {
    let (x, geometry) = read_idx_file(images)?.to_images()?;
    let labels = read_idx_file(labels)?.to_labels()?;
    if labels.len() != x.rows() {
        return Err(invalid(format!("{} labels for {} images", labels.len(), x.rows())));
    }
    Dataset::new(DatasetKind::Digits, x, one_hot(&labels, 10)?, Some(geometry))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn labels_example() {
        let arr = parse_idx(&[0, 0, 8, 1, 0, 0, 0, 3, 5, 0, 4]).unwrap();
        assert_eq!(arr.dims, vec![3]);
        assert_eq!(arr.to_labels().unwrap(), vec![5, 0, 4]);
    }

    #[test]
    fn images_example() {
        let bytes = [0, 0, 8, 3, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0, 2, 0, 255, 128, 64];
        let (x, g) = parse_idx(&bytes).unwrap().to_images().unwrap();
        assert_eq!(g, Geometry::new(2, 2, 1));
        assert_eq!(x.shape(), &[1, 4]);
        assert_eq!(x.data(), &[0.0, 1.0, 128.0 / 255.0, 64.0 / 255.0]);
    }

    #[test]
    fn distinct_errors() {
        assert_eq!(parse_idx(&[0, 0, 8]), Err(IdxError::TooShort(3)));
        assert_eq!(parse_idx(&[1, 0, 8, 1, 0, 0, 0, 0]), Err(IdxError::BadMagic([1, 0, 8, 1])));
        assert_eq!(parse_idx(&[0, 0, 0x0d, 1, 0, 0, 0, 0]), Err(IdxError::UnsupportedType(0x0d)));
        assert_eq!(parse_idx(&[0, 0, 8, 0]), Err(IdxError::ZeroRank));
        assert_eq!(
            parse_idx(&[0, 0, 8, 1, 0, 0, 0, 3, 5, 0]),
            Err(IdxError::Truncated { expected: 11, actual: 10 })
        );
        assert_eq!(parse_idx(&[0, 0, 8, 1, 0, 0]), Err(IdxError::Truncated { expected: 8, actual: 6 }));
        assert_eq!(parse_idx(&[0, 0, 8, 1, 0, 0, 0, 1, 5, 9]), Err(IdxError::TrailingBytes(1)));
    }

    #[test]
    fn huge_extents_do_not_allocate() {
        let bytes = [0, 0, 8, 3, 255, 255, 255, 255, 255, 255, 255, 255, 255, 255, 255, 255];
        assert!(matches!(
            parse_idx(&bytes),
            Err(IdxError::Overflow) | Err(IdxError::Truncated { .. })
        ));
    }

    proptest! {
        #[test]
        fn roundtrip(dims in prop::collection::vec(1usize..5, 1..4), seed in any::<u8>()) {
            let n: usize = dims.iter().product();
            let data: Vec<u8> = (0..n).map(|i| (i as u8).wrapping_mul(31).wrapping_add(seed)).collect();
            let arr = IdxArray { dims, data };
            prop_assert_eq!(parse_idx(&encode_idx(&arr)).unwrap(), arr);
        }
    }
}
