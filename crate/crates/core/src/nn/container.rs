//! Binary tensor container: magic, format version, JSON header, then raw
//! little-endian f64 blobs in header order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"TRYONCKP";
pub const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    meta: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

/// Write `meta` and the named tensors to `path`, via a temporary file renamed into place.
pub fn write(path: &Path, meta: serde_json::Value, tensors: &[(String, &Tensor)]) -> Result<()> {
    let header = Header {
        meta,
        tensors: tensors
            .iter()
            .map(|(n, t)| TensorEntry {
                name: n.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::json("container header", e))?;
    let tmp = path.with_extension("partial");
    let file = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(&tmp, e);
    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&(json.len() as u64).to_le_bytes()).map_err(io)?;
    w.write_all(&json).map_err(io)?;
    for (_, t) in tensors {
        for v in t.data() {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)?;
    drop(w);
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Read a container back as `(meta, named tensors)`.
pub fn read(path: &Path) -> Result<(serde_json::Value, Vec<(String, Tensor)>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let bad = |m: &str| Error::codec(path, m.to_string());
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
    if &magic != MAGIC {
        return Err(bad("not a tryon tensor container"));
    }
    let mut u32b = [0u8; 4];
    r.read_exact(&mut u32b).map_err(|_| bad("truncated header"))?;
    let version = u32::from_le_bytes(u32b);
    if version != VERSION {
        return Err(bad(&format!("unsupported container version {version}")));
    }
    let mut u64b = [0u8; 8];
    r.read_exact(&mut u64b).map_err(|_| bad("truncated header"))?;
    let len = u64::from_le_bytes(u64b) as usize;
    if len > 64 << 20 {
        return Err(bad("header too large"));
    }
    let mut json = vec![0u8; len];
    r.read_exact(&mut json).map_err(|_| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(&json).map_err(|e| Error::json(path.display().to_string(), e))?;
    let mut out = Vec::with_capacity(header.tensors.len());
    for entry in header.tensors {
        let n: usize = entry.shape.iter().product();
        let mut bytes = vec![0u8; n * 8];
        r.read_exact(&mut bytes)
            .map_err(|_| bad(&format!("truncated data for tensor {}", entry.name)))?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        out.push((entry.name, Tensor::from_vec(&entry.shape, data)?));
    }
    if r.read(&mut [0u8; 1]).map_err(|e| Error::io(path, e))? != 0 {
        return Err(bad("trailing bytes after last tensor"));
    }
    Ok((header.meta, out))
}
