//! IDX (MNIST) image and label files.
//!
//! Layout: a 4-byte big-endian magic whose low byte is the number of
//! dimensions, one big-endian `u32` per dimension, then an unsigned-byte
//! payload. Files starting with the gzip magic are decompressed first.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use nib_core::dataset::{Dataset, Split};
use nib_core::Tensor2;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, thiserror::Error)]
pub enum IdxError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: bad magic at byte 0: expected {expected:#010x}, found {found:#010x}")]
    BadMagic { path: PathBuf, expected: u32, found: u32 },
    #[error("{path}: truncated at byte {offset}: need {needed} more bytes, {available} available")]
    Truncated { path: PathBuf, offset: usize, needed: usize, available: usize },
    #[error("{path}: trailing data at byte {offset}")]
    Trailing { path: PathBuf, offset: usize },
    #[error("count mismatch: {images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error(transparent)]
    Dataset(#[from] nib_core::Error),
}

/// Raw contents of one IDX file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>, IdxError> {
    let io = |source| IdxError::Io { path: path.to_path_buf(), source };
    let raw = fs::read(path).map_err(io)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice()).read_to_end(&mut out).map_err(io)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

/// Parses an in-memory IDX file, checking the magic and exact payload length.
pub fn parse_idx(bytes: &[u8], expected_magic: u32, path: &Path) -> Result<IdxArray, IdxError> {
    let truncated = |offset: usize, needed: usize| IdxError::Truncated {
        path: path.to_path_buf(),
        offset,
        needed,
        available: bytes.len().saturating_sub(offset),
    };
    let word = |offset: usize| -> Result<u32, IdxError> {
        bytes
            .get(offset..offset + 4)
            .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
            .ok_or_else(|| truncated(offset, 4))
    };
    let magic = word(0)?;
    if magic != expected_magic {
        return Err(IdxError::BadMagic { path: path.to_path_buf(), expected: expected_magic, found: magic });
    }
    let ndims = (magic & 0xff) as usize;
    let dims = (0..ndims).map(|k| word(4 + 4 * k).map(|v| v as usize)).collect::<Result<Vec<_>, _>>()?;
    let start = 4 + 4 * ndims;
    let len: usize = dims.iter().product();
    let data = bytes.get(start..start + len).ok_or_else(|| truncated(start, len))?.to_vec();
    if bytes.len() > start + len {
        return Err(IdxError::Trailing { path: path.to_path_buf(), offset: start + len });
    }
    Ok(IdxArray { dims, data })
}

pub fn read_idx(path: &Path, expected_magic: u32) -> Result<IdxArray, IdxError> {
    parse_idx(&read_maybe_gz(path)?, expected_magic, path)
}

/// Loads an image/label file pair. Pixels are scaled to `[0, 1]` by `/255`;
/// the label alphabet is `0..=max_label`, and at least ten classes.
pub fn load_idx(images_path: &Path, labels_path: &Path, split: Split) -> Result<Dataset, IdxError> {
    let images = read_idx(images_path, IMAGES_MAGIC)?;
    let labels = read_idx(labels_path, LABELS_MAGIC)?;
    let n = images.dims[0];
    if labels.dims[0] != n {
        return Err(IdxError::CountMismatch { images: n, labels: labels.dims[0] });
    }
    let width = images.dims[1] * images.dims[2];
    let pixels = images.data.iter().map(|&b| f64::from(b) / 255.0).collect();
    let labels: Vec<usize> = labels.data.iter().map(|&b| usize::from(b)).collect();
    let class_count = labels.iter().max().map_or(0, |m| m + 1).max(10);
    Ok(Dataset::new(Tensor2::from_vec(n, width, pixels)?, labels, split, class_count)?)
}

fn encode(magic: u32, dims: &[usize], payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 4 * dims.len() + payload.len());
    out.extend_from_slice(&magic.to_be_bytes());
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(payload);
    out
}

/// Writes `dataset` as an uncompressed IDX pair of `rows × cols` images.
/// Inputs are clamped to `[0, 1]` and quantised to `round(255 x)`.
pub fn write_idx(
    dataset: &Dataset,
    rows: usize,
    cols: usize,
    images_path: &Path,
    labels_path: &Path,
) -> anyhow::Result<()> {
    anyhow::ensure!(
        rows * cols == dataset.input_dim(),
        "{rows}x{cols} images do not match input width {}",
        dataset.input_dim()
    );
    anyhow::ensure!(dataset.class_count() <= 256, "labels do not fit in a byte");
    let pixels: Vec<u8> = dataset.inputs().data().iter().map(|&x| (x.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    let labels: Vec<u8> = dataset.labels().iter().map(|&y| y as u8).collect();
    fs::write(images_path, encode(IMAGES_MAGIC, &[dataset.len(), rows, cols], &pixels))?;
    fs::write(labels_path, encode(LABELS_MAGIC, &[dataset.len()], &labels))?;
    Ok(())
}

/// Standard file stems inside an MNIST directory.
pub fn mnist_paths(dir: &Path, split: Split) -> (PathBuf, PathBuf) {
    let prefix = match split {
        Split::Train => "train",
        Split::Test => "t10k",
    };
    let pick = |stem: String| {
        let plain = dir.join(&stem);
        let gz = dir.join(format!("{stem}.gz"));
        if !plain.exists() && gz.exists() {
            gz
        } else {
            plain
        }
    };
    (pick(format!("{prefix}-images-idx3-ubyte")), pick(format!("{prefix}-labels-idx1-ubyte")))
}

pub fn load_mnist_split(dir: &Path, split: Split) -> Result<Dataset, IdxError> {
    let (images, labels) = mnist_paths(dir, split);
    load_idx(&images, &labels, split)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_magic_with_offset() {
        let bytes = encode(0x0000_0802, &[1], &[0]);
        let err = parse_idx(&bytes, LABELS_MAGIC, Path::new("x")).unwrap_err();
        assert!(err.to_string().contains("byte 0"), "{err}");
    }

    #[test]
    fn reports_truncation_offset() {
        let mut bytes = encode(IMAGES_MAGIC, &[2, 2, 2], &[0; 8]);
        bytes.truncate(18);
        match parse_idx(&bytes, IMAGES_MAGIC, Path::new("x")).unwrap_err() {
            IdxError::Truncated { offset, needed, available, .. } => {
                assert_eq!((offset, needed, available), (16, 8, 2))
            }
            e => panic!("{e}"),
        }
        match parse_idx(&bytes[..6], IMAGES_MAGIC, Path::new("x")).unwrap_err() {
            IdxError::Truncated { offset, .. } => assert_eq!(offset, 4),
            e => panic!("{e}"),
        }
    }
}
