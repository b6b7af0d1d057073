//! Dense tensor container: a 16-byte header (`TFMT`, version, dtype, rank,
//! reserved), `rank` little-endian `u64` dims, then little-endian `f64` data.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const MAGIC: [u8; 4] = *b"TFMT";
pub const VERSION: u16 = 1;
pub const DTYPE_F64: u16 = 1;
pub const HEADER_LEN: usize = 16;

/// Encoded size of a tensor with the given shape.
pub fn encoded_len(shape: &[usize]) -> usize {
    HEADER_LEN + 8 * shape.len() + 8 * shape.iter().product::<usize>()
}

pub fn encode_tensor(t: &Tensor, out: &mut Vec<u8>) {
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&DTYPE_F64.to_le_bytes());
    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &x in t.data() {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

fn take<'a>(bytes: &'a [u8], at: usize, n: usize, what: &str) -> Result<&'a [u8]> {
    bytes
        .get(at..at + n)
        .ok_or_else(|| Error::Truncated(format!("{what}: need {} bytes, have {}", at + n, bytes.len())))
}

/// Decodes one tensor from the front of `bytes`, returning it and the
/// number of bytes consumed.
pub fn decode_tensor(bytes: &[u8], what: &str) -> Result<(Tensor, usize)> {
    if bytes.len() < HEADER_LEN {
        if bytes.len() >= 4 && bytes[..4] != MAGIC {
            return Err(Error::Header(format!("{what}: bad magic {:?}", &bytes[..4])));
        }
        return Err(Error::Truncated(format!("{what}: header is {} bytes", bytes.len())));
    }
    if bytes[..4] != MAGIC {
        return Err(Error::Header(format!("{what}: bad magic {:?}", &bytes[..4])));
    }
    let u16_at = |i: usize| u16::from_le_bytes([bytes[i], bytes[i + 1]]);
    let version = u16_at(4);
    if version != VERSION {
        return Err(Error::Header(format!("{what}: unsupported version {version}")));
    }
    let dtype = u16_at(6);
    if dtype != DTYPE_F64 {
        return Err(Error::Header(format!("{what}: unsupported dtype code {dtype}")));
    }
    let rank = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    if rank > 8 {
        return Err(Error::Header(format!("{what}: implausible rank {rank}")));
    }
    let dims = take(bytes, HEADER_LEN, 8 * rank, what)?;
    let shape: Vec<usize> = dims
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().expect("8 bytes")) as usize)
        .collect();
    let n = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Header(format!("{what}: shape {shape:?} overflows")))?;
    let start = HEADER_LEN + 8 * rank;
    let payload = take(bytes, start, 8 * n, what)?;
    let data = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok((Tensor::new(shape, data)?, start + 8 * n))
}

pub fn write_tensor(path: &Path, t: &Tensor) -> Result<()> {
    let mut buf = Vec::with_capacity(encoded_len(t.shape()));
    encode_tensor(t, &mut buf);
    fs::write(path, buf)?;
    Ok(())
}

pub fn read_tensor(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path)?;
    let what = path.display().to_string();
    let (t, used) = decode_tensor(&bytes, &what)?;
    if used != bytes.len() {
        return Err(Error::PayloadShape(format!(
            "{what}: {} trailing bytes after shape {:?}",
            bytes.len() - used,
            t.shape()
        )));
    }
    Ok(t)
}
