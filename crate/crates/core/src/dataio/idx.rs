//! IDX binary files (the MNIST family).
//!
//! ```text
//! bytes 0-1   0x00 0x00
//! byte  2     element type, 0x08 = unsigned byte
//! byte  3     number of dimensions D
//! 4*D bytes   dimension sizes, big-endian u32
//! rest        row-major payload
//! ```

use std::fs;
use std::path::Path;

use ndarray::Array2;

use super::Dataset;
use crate::{Error, Result};

const UBYTE: u8 = 0x08;

struct IdxHeader {
    dims: Vec<usize>,
    payload_offset: usize,
}

fn parse_header(bytes: &[u8], what: &str) -> Result<IdxHeader> {
    if bytes.len() < 4 {
        return Err(Error::Format(format!("{what}: file shorter than the IDX magic")));
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(Error::Format(format!(
            "{what}: bad IDX magic {:02x} {:02x}",
            bytes[0], bytes[1]
        )));
    }
    if bytes[2] != UBYTE {
        return Err(Error::Format(format!(
            "{what}: unsupported IDX element type 0x{:02x}",
            bytes[2]
        )));
    }
    let ndims = bytes[3] as usize;
    if ndims == 0 {
        return Err(Error::Format(format!("{what}: IDX file declares zero dimensions")));
    }
    let payload_offset = 4 + 4 * ndims;
    if bytes.len() < payload_offset {
        return Err(Error::Format(format!("{what}: truncated IDX header")));
    }
    let dims = (0..ndims)
        .map(|k| {
            let o = 4 + 4 * k;
            u32::from_be_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]) as usize
        })
        .collect::<Vec<_>>();
    let expected: usize = dims.iter().product();
    if bytes.len() - payload_offset != expected {
        return Err(Error::Format(format!(
            "{what}: payload has {} bytes, header declares {expected}",
            bytes.len() - payload_offset
        )));
    }
    Ok(IdxHeader { dims, payload_offset })
}

/// Image tensor → `n × (product of remaining dims)` matrix scaled to `[0, 1]`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<Array2<f64>> {
    let h = parse_header(bytes, "images")?;
    if h.dims.len() < 2 {
        return Err(Error::Format(format!(
            "images: expected at least 2 dimensions, got {}",
            h.dims.len()
        )));
    }
    let n = h.dims[0];
    let d: usize = h.dims[1..].iter().product();
    let data = bytes[h.payload_offset..]
        .iter()
        .map(|&b| f64::from(b) / 255.0)
        .collect();
    Array2::from_shape_vec((n, d), data).map_err(|e| Error::Format(e.to_string()))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    let h = parse_header(bytes, "labels")?;
    if h.dims.len() != 1 {
        return Err(Error::Format(format!(
            "labels: expected 1 dimension, got {}",
            h.dims.len()
        )));
    }
    Ok(bytes[h.payload_offset..].iter().map(|&b| b as usize).collect())
}

pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let ip = images_path.as_ref();
    let lp = labels_path.as_ref();
    let images = fs::read(ip).map_err(|e| Error::io(ip, e))?;
    let labels = fs::read(lp).map_err(|e| Error::io(lp, e))?;
    let x = parse_idx_images(&images)?;
    let y = parse_idx_labels(&labels)?;
    if x.nrows() != y.len() {
        return Err(Error::Format(format!("{} images but {} labels", x.nrows(), y.len())));
    }
    let c = y.iter().max().map_or(2, |m| (m + 1).max(2));
    Dataset::new(x, c)?.with_clean_labels(y)
}

fn header(dims: &[usize]) -> Vec<u8> {
    let mut out = vec![0, 0, UBYTE, dims.len() as u8];
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out
}

/// Encodes `n` images of `rows × cols` bytes.
pub fn write_idx_images(pixels: &[u8], n: usize, rows: usize, cols: usize) -> Vec<u8> {
    assert_eq!(pixels.len(), n * rows * cols, "pixel count must match n*rows*cols");
    let mut out = header(&[n, rows, cols]);
    out.extend_from_slice(pixels);
    out
}

pub fn write_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = header(&[labels.len()]);
    out.extend_from_slice(labels);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ten_images_of_28_by_28() {
        let mut px = vec![0u8; 10 * 28 * 28];
        px[784] = 255;
        let x = parse_idx_images(&write_idx_images(&px, 10, 28, 28)).unwrap();
        assert_eq!(x.dim(), (10, 784));
        assert!(x.row(0).iter().all(|&v| v == 0.0));
        assert_eq!(x[[1, 0]], 1.0);
    }

    #[test]
    fn bad_magic() {
        let mut b = write_idx_labels(&[1, 2]);
        b[1] = 3;
        assert!(matches!(parse_idx_labels(&b), Err(Error::Format(_))));
    }

    #[test]
    fn truncated_payload() {
        let mut b = write_idx_images(&[1, 2, 3, 4], 1, 2, 2);
        b.pop();
        assert!(parse_idx_images(&b).is_err());
    }
}
