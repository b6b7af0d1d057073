//! Named-parameter checkpoints.
//!
//! Layout: `TFCK`, `u16` version, `u16` reserved, `u32` record count,
//! `u32` reserved; then per record a `u32` name length, the UTF-8 name and
//! one encoded tensor.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::data::io::{decode_tensor, encode_tensor, encoded_len, HEADER_LEN};
use crate::error::{Error, Result};
use crate::numerics::ParamStore;

pub const MAGIC: [u8; 4] = *b"TFCK";
pub const VERSION: u16 = 1;

/// Exact file size for a store: headers plus eight bytes per scalar.
pub fn checkpoint_size(store: &ParamStore) -> usize {
    HEADER_LEN
        + store
            .iter()
            .map(|(_, p)| 4 + p.name.len() + encoded_len(p.value.shape()))
            .sum::<usize>()
}

/// Bytes in a checkpoint that are not parameter values.
pub fn checkpoint_overhead(store: &ParamStore) -> usize {
    checkpoint_size(store) - 8 * store.num_scalars()
}

pub fn encode_checkpoint(store: &ParamStore) -> Vec<u8> {
    let mut out = Vec::with_capacity(checkpoint_size(store));
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&0u16.to_le_bytes());
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    for (_, p) in store.iter() {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        encode_tensor(&p.value, &mut out);
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ParamStore> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated(format!("checkpoint header is {} bytes", bytes.len())));
    }
    if bytes[..4] != MAGIC {
        return Err(Error::Header(format!("checkpoint: bad magic {:?}", &bytes[..4])));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(Error::Header(format!("checkpoint: unsupported version {version}")));
    }
    let count = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let mut at = HEADER_LEN;
    let mut store = ParamStore::new();
    for i in 0..count {
        let len_bytes = bytes
            .get(at..at + 4)
            .ok_or_else(|| Error::Truncated(format!("checkpoint record {i}")))?;
        let len = u32::from_le_bytes(len_bytes.try_into().expect("4 bytes")) as usize;
        at += 4;
        let name = bytes
            .get(at..at + len)
            .ok_or_else(|| Error::Truncated(format!("checkpoint record {i} name")))?;
        let name = std::str::from_utf8(name)
            .map_err(|_| Error::Header(format!("checkpoint record {i}: name is not UTF-8")))?
            .to_string();
        at += len;
        let (t, used) = decode_tensor(&bytes[at..], &name)?;
        at += used;
        store.add(name, t);
    }
    if at != bytes.len() {
        return Err(Error::PayloadShape(format!(
            "checkpoint: {} trailing bytes after {count} records",
            bytes.len() - at
        )));
    }
    Ok(store)
}

pub fn save_checkpoint(path: &Path, store: &ParamStore) -> Result<()> {
    fs::write(path, encode_checkpoint(store))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ParamStore> {
    decode_checkpoint(&fs::read(path)?)
}

/// Overwrites `store` values from the checkpoint at `path`; names and shapes
/// must match exactly.
pub fn restore(path: &Path, store: &mut ParamStore) -> Result<()> {
    let loaded = load_checkpoint(path)?;
    store.load_values(&loaded)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn file_sha256(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}
