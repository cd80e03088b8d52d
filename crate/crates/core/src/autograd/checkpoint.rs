//! Single-file tensor container.
//!
//! Layout: the 5-byte magic `MRPH1`, a little-endian `u64` header length,
//! a UTF-8 JSON header `{"meta": <any>, "tensors": [{name, shape, offset}]}`
//! and finally the concatenated little-endian f32 payloads. `offset` counts
//! bytes from the start of the payload section.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::NdArray;

pub const MAGIC: &[u8; 5] = b"MRPH1";

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    meta: serde_json::Value,
    tensors: Vec<Entry>,
}

pub fn encode(meta: serde_json::Value, tensors: &[(String, &NdArray<f32>)]) -> Result<Vec<u8>> {
    let mut entries = Vec::with_capacity(tensors.len());
    let mut payload = Vec::new();
    for (name, t) in tensors {
        entries.push(Entry {
            name: name.clone(),
            shape: t.shape().to_vec(),
            offset: payload.len(),
        });
        for v in t.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    let header = serde_json::to_vec(&Header { meta, tensors: entries })?;
    let mut out = Vec::with_capacity(MAGIC.len() + 8 + header.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&payload);
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<(serde_json::Value, Vec<(String, NdArray<f32>)>)> {
    if bytes.len() < MAGIC.len() + 8 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Checkpoint("missing MRPH1 magic".into()));
    }
    let mut len_bytes = [0u8; 8];
    len_bytes.copy_from_slice(&bytes[5..13]);
    let hlen = u64::from_le_bytes(len_bytes) as usize;
    let body = &bytes[13..];
    if body.len() < hlen {
        return Err(Error::Checkpoint("truncated header".into()));
    }
    let header: Header = serde_json::from_slice(&body[..hlen])?;
    let payload = &body[hlen..];
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for e in header.tensors {
        let n: usize = e.shape.iter().product();
        let end = e.offset + 4 * n;
        if end > payload.len() {
            return Err(Error::Checkpoint(format!("tensor '{}' exceeds payload", e.name)));
        }
        let data = payload[e.offset..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        tensors.push((e.name, NdArray::from_vec(&e.shape, data)?));
    }
    Ok((header.meta, tensors))
}

pub fn write(path: &Path, meta: serde_json::Value, tensors: &[(String, &NdArray<f32>)]) -> Result<()> {
    let bytes = encode(meta, tensors)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<(serde_json::Value, Vec<(String, NdArray<f32>)>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encode_decode_preserves_bits_and_meta() {
        let a = NdArray::from_vec(&[2, 3], vec![1.0f32, -0.0, f32::MIN_POSITIVE, 3.5, 1e-30, 7.0]).unwrap();
        let b = NdArray::from_vec(&[1], vec![42.0f32]).unwrap();
        let meta = serde_json::json!({"levels": 4});
        let bytes = encode(meta.clone(), &[("a".into(), &a), ("b".into(), &b)]).unwrap();
        assert_eq!(&bytes[..5], b"MRPH1");
        let (m, t) = decode(&bytes).unwrap();
        assert_eq!(m, meta);
        assert_eq!(t[0].0, "a");
        let bits = |x: &NdArray<f32>| x.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&t[0].1), bits(&a));
        assert_eq!(t[1].1, b);
    }

    #[test]
    fn rejects_wrong_magic() {
        assert!(decode(b"NOPE1\0\0\0\0\0\0\0\0").is_err());
    }
}
