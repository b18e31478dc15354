//! Single-file parameter archive:
//!
//! ```text
//! <header line>\n
//! u64 LE  length of the JSON index
//! JSON    {"meta": ..., "tensors": [{"name", "shape", "offset"}]}
//! f32 LE  concatenated tensor payloads (offsets in elements)
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use candle_core::{DType, Var};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Index {
    meta: Value,
    tensors: Vec<Entry>,
}

/// Decoded archive contents.
#[derive(Debug, Clone)]
pub struct Archive {
    pub header: String,
    pub meta: Value,
    pub tensors: BTreeMap<String, (Vec<usize>, Vec<f32>)>,
}

pub fn write_archive<'a>(
    path: &Path,
    header: &str,
    meta: Value,
    vars: impl IntoIterator<Item = (&'a String, &'a Var)>,
) -> Result<()> {
    let mut entries = Vec::new();
    let mut payload: Vec<u8> = Vec::new();
    let mut offset = 0usize;
    for (name, var) in vars {
        let values: Vec<f32> = var.as_tensor().to_dtype(DType::F32)?.flatten_all()?.to_vec1()?;
        entries.push(Entry {
            name: name.clone(),
            shape: var.dims().to_vec(),
            offset,
        });
        offset += values.len();
        payload.extend(values.iter().flat_map(|v| v.to_le_bytes()));
    }
    let index = serde_json::to_vec(&Index {
        meta,
        tensors: entries,
    })?;
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let tmp = path.with_extension("tmp");
    let mut file = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    let write = |file: &mut fs::File| -> std::io::Result<()> {
        file.write_all(header.as_bytes())?;
        file.write_all(b"\n")?;
        file.write_all(&(index.len() as u64).to_le_bytes())?;
        file.write_all(&index)?;
        file.write_all(&payload)?;
        file.sync_all()
    };
    write(&mut file).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_archive(path: &Path, expected_header: &str) -> Result<Archive> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |msg: &str| Error::Checkpoint(format!("{}: {msg}", path.display()));
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .filter(|&p| p <= 64)
        .ok_or_else(|| bad("missing header line"))?;
    let header = String::from_utf8_lossy(&bytes[..newline]).to_string();
    if header != expected_header {
        return Err(bad(&format!(
            "header {header:?} does not match {expected_header:?}"
        )));
    }
    let mut pos = newline + 1;
    let len_bytes: [u8; 8] = bytes
        .get(pos..pos + 8)
        .and_then(|s| s.try_into().ok())
        .ok_or_else(|| bad("truncated index length"))?;
    let index_len = u64::from_le_bytes(len_bytes) as usize;
    pos += 8;
    let index: Index = serde_json::from_slice(
        bytes
            .get(pos..pos + index_len)
            .ok_or_else(|| bad("truncated index"))?,
    )?;
    pos += index_len;
    let payload = &bytes[pos..];
    let mut tensors = BTreeMap::new();
    for e in index.tensors {
        let n: usize = e.shape.iter().product();
        let raw = payload
            .get(e.offset * 4..(e.offset + n) * 4)
            .ok_or_else(|| bad(&format!("tensor {} out of bounds", e.name)))?;
        let values = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        tensors.insert(e.name, (e.shape, values));
    }
    Ok(Archive {
        header,
        meta: index.meta,
        tensors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Linear, ParamStore};

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.ckpt");
        let mut store = ParamStore::new(DType::F32, 9);
        Linear::new(&mut store.root().pp("x"), 3, 2).unwrap();
        write_archive(&path, "test-v1", serde_json::json!({"k": 1}), store.named()).unwrap();
        let a = read_archive(&path, "test-v1").unwrap();
        assert_eq!(a.meta["k"], 1);
        let (shape, w) = &a.tensors["x.weight"];
        assert_eq!(shape, &vec![2, 3]);
        let orig: Vec<f32> = store.named()["x.weight"]
            .as_tensor()
            .flatten_all()
            .unwrap()
            .to_vec1()
            .unwrap();
        assert_eq!(w, &orig);
        assert!(read_archive(&path, "other-v1").is_err());
    }
}
