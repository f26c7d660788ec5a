//! IDX tensor files (the MNIST distribution format).
//!
//! Layout: a big-endian `u32` magic (`0x00000803` for a 3-d unsigned-byte
//! image tensor, `0x00000801` for a 1-d label vector), one big-endian `u32`
//! per dimension, then the raw bytes in row-major order.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::{Error, Result};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq)]
pub enum IdxData {
    /// `count` images of `rows x cols` pixels scaled to `[0, 1]`, row-major.
    Images {
        count: usize,
        rows: usize,
        cols: usize,
        pixels: Vec<f64>,
    },
    Labels(Vec<u8>),
}

impl IdxData {
    pub fn image(&self, i: usize) -> Option<&[f64]> {
        match self {
            IdxData::Images {
                count, rows, cols, pixels,
            } if i < *count => Some(&pixels[i * rows * cols..(i + 1) * rows * cols]),
            _ => None,
        }
    }
}

pub fn load_idx(path: impl AsRef<Path>) -> Result<IdxData> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_idx(&bytes, path)
}

/// Parses an in-memory IDX file; `origin` only labels errors.
pub fn parse_idx(bytes: &[u8], origin: &Path) -> Result<IdxData> {
    let fail = |offset: usize, message: String| Error::Format {
        path: origin.to_path_buf(),
        offset: offset as u64,
        message,
    };
    let read_u32 = |offset: usize| -> Result<u32> {
        bytes
            .get(offset..offset + 4)
            .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
            .ok_or_else(|| fail(offset, "truncated header".into()))
    };

    let magic = read_u32(0)?;
    let ndims = match magic {
        IDX_IMAGES_MAGIC => 3,
        IDX_LABELS_MAGIC => 1,
        other => return Err(fail(0, format!("unsupported magic number {other:#010x}"))),
    };
    let mut dims = Vec::with_capacity(ndims);
    for d in 0..ndims {
        dims.push(read_u32(4 + 4 * d)? as usize);
    }
    let header = 4 + 4 * ndims;
    let payload = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| fail(4, format!("dimensions {dims:?} overflow")))?;
    let available = bytes.len() - header;
    if available < payload {
        return Err(fail(
            bytes.len(),
            format!("payload truncated: expected {payload} bytes, found {available}"),
        ));
    }
    if available > payload {
        return Err(fail(
            header + payload,
            format!("{} trailing bytes after payload", available - payload),
        ));
    }
    let data = &bytes[header..];
    Ok(if ndims == 3 {
        IdxData::Images {
            count: dims[0],
            rows: dims[1],
            cols: dims[2],
            pixels: data.iter().map(|&b| f64::from(b) / 255.0).collect(),
        }
    } else {
        IdxData::Labels(data.to_vec())
    })
}

fn write_file(path: &Path, header: &[u32], payload: &[u8]) -> Result<()> {
    let mut buf = Vec::with_capacity(4 * header.len() + payload.len());
    for v in header {
        buf.extend_from_slice(&v.to_be_bytes());
    }
    buf.extend_from_slice(payload);
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

pub fn write_idx_images(path: impl AsRef<Path>, count: usize, rows: usize, cols: usize, pixels: &[u8]) -> Result<()> {
    if pixels.len() != count * rows * cols {
        return Err(Error::Shape(format!(
            "{} bytes for {count} images of {rows}x{cols}",
            pixels.len()
        )));
    }
    let dim = |v: usize| u32::try_from(v).map_err(|_| Error::Domain(format!("dimension {v} exceeds u32")));
    write_file(
        path.as_ref(),
        &[IDX_IMAGES_MAGIC, dim(count)?, dim(rows)?, dim(cols)?],
        pixels,
    )
}

pub fn write_idx_labels(path: impl AsRef<Path>, labels: &[u8]) -> Result<()> {
    let n = u32::try_from(labels.len()).map_err(|_| Error::Domain("too many labels".into()))?;
    write_file(path.as_ref(), &[IDX_LABELS_MAGIC, n], labels)
}
