//! The IDX container used by the MNIST distribution.
//!
//! A file is a 4-byte magic `00 00 08 R` (unsigned-byte data, rank R),
//! R big-endian `u32` extents, then the payload bytes in row-major order.
//! Parse errors carry the byte offset where the problem was detected; for a
//! short payload that is the offset of the first missing byte.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const UBYTE: u8 = 0x08;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxHeader {
    pub magic: [u8; 4],
    pub dims: Vec<usize>,
}

impl IdxHeader {
    pub fn len(&self) -> usize {
        4 + 4 * self.dims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dims.is_empty()
    }
}

fn parse_err(offset: usize, detail: impl Into<String>) -> Error {
    Error::Parse {
        offset,
        detail: detail.into(),
    }
}

/// Parses the header, checks the payload length and returns the payload.
pub fn parse_idx(bytes: &[u8], rank: usize) -> Result<(IdxHeader, &[u8])> {
    if bytes.len() < 4 {
        return Err(parse_err(bytes.len(), "file shorter than the 4-byte magic"));
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if magic[0] != 0 || magic[1] != 0 {
        return Err(parse_err(0, format!("bad magic {magic:02x?}")));
    }
    if magic[2] != UBYTE {
        return Err(parse_err(2, format!("unsupported data type 0x{:02x}", magic[2])));
    }
    if magic[3] as usize != rank {
        return Err(parse_err(3, format!("expected rank {rank}, found {}", magic[3])));
    }
    let mut dims = Vec::with_capacity(rank);
    for i in 0..rank {
        let at = 4 + 4 * i;
        let word = bytes
            .get(at..at + 4)
            .ok_or_else(|| parse_err(bytes.len(), "header truncated"))?;
        let extent = u32::from_be_bytes(word.try_into().unwrap()) as usize;
        if extent == 0 {
            return Err(parse_err(at, "zero extent"));
        }
        dims.push(extent);
    }
    let header = IdxHeader { magic, dims };
    let start = header.len();
    let payload_len = header
        .dims
        .iter()
        .try_fold(1usize, |acc, &e| acc.checked_mul(e))
        .ok_or_else(|| parse_err(4, "extents overflow"))?;
    let end = start
        .checked_add(payload_len)
        .ok_or_else(|| parse_err(4, "extents overflow"))?;
    if bytes.len() < end {
        return Err(parse_err(
            bytes.len(),
            format!("payload truncated: header declares {payload_len} bytes, found {}", bytes.len() - start),
        ));
    }
    if bytes.len() > end {
        return Err(parse_err(end, "trailing bytes after payload"));
    }
    Ok((header, &bytes[start..end]))
}

/// Rank-3 image file → `[n × rows·cols]` with bytes scaled by 1/255.
pub fn parse_idx_images(bytes: &[u8]) -> Result<Tensor> {
    let (header, payload) = parse_idx(bytes, 3)?;
    let n = header.dims[0];
    let pixels = header.dims[1] * header.dims[2];
    let data = payload.iter().map(|&b| b as f64 / 255.0).collect();
    Tensor::new(vec![n, pixels], data)
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    let (_, payload) = parse_idx(bytes, 1)?;
    Ok(payload.iter().map(|&b| b as usize).collect())
}

pub fn load_idx_images(path: &Path) -> Result<Tensor> {
    parse_idx_images(&std::fs::read(path)?)
}

pub fn load_idx_labels(path: &Path) -> Result<Vec<usize>> {
    parse_idx_labels(&std::fs::read(path)?)
}

/// Serialises unsigned bytes with the given extents.
pub fn encode_idx(dims: &[usize], payload: &[u8]) -> Vec<u8> {
    let mut out = vec![0, 0, UBYTE, dims.len() as u8];
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(payload);
    out
}
