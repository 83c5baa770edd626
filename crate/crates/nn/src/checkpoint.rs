//! Binary checkpoint container:
//!
//! ```text
//! <tag>\n                      ascii format tag, e.g. "gen_v1"
//! u64 LE                       byte length of the JSON header
//! JSON header                  {"scalar": "f32", "meta": {...}, "params": [{"name", "shape"}]}
//! f64 LE * sum(numel)          parameter values in header order
//! ```

use std::io::{Read, Write};
use std::path::Path;

use serde_json::{json, Value};
use thiserror::Error;

use crate::{Array, ParamStore, Scalar};

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint header is {found:?}, expected {expected:?}")]
    BadHeader { expected: String, found: String },
    #[error("malformed checkpoint: {0}")]
    Format(String),
    #[error("checkpoint json: {0}")]
    Json(#[from] serde_json::Error),
}

pub fn write_checkpoint<T: Scalar>(
    mut w: impl Write,
    tag: &str,
    meta: &Value,
    store: &ParamStore<T>,
) -> Result<(), CheckpointError> {
    let params: Vec<Value> = store.iter().map(|p| json!({"name": p.name, "shape": p.value.shape()})).collect();
    let header = serde_json::to_vec(&json!({"scalar": T::NAME, "meta": meta, "params": params}))?;
    w.write_all(tag.as_bytes())?;
    w.write_all(b"\n")?;
    w.write_all(&(header.len() as u64).to_le_bytes())?;
    w.write_all(&header)?;
    for p in store.iter() {
        let mut buf = Vec::with_capacity(p.value.len() * 8);
        for v in p.value.data() {
            buf.extend_from_slice(&v.as_f64().to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

/// Reads a checkpoint, checking its tag. Returns the free-form metadata and parameters.
pub fn read_checkpoint<T: Scalar>(mut r: impl Read, tag: &str) -> Result<(Value, ParamStore<T>), CheckpointError> {
    let mut tag_buf = vec![0u8; tag.len() + 1];
    r.read_exact(&mut tag_buf).map_err(|_| CheckpointError::BadHeader {
        expected: tag.to_string(),
        found: "<truncated>".into(),
    })?;
    if &tag_buf[..tag.len()] != tag.as_bytes() || tag_buf[tag.len()] != b'\n' {
        return Err(CheckpointError::BadHeader {
            expected: tag.to_string(),
            found: String::from_utf8_lossy(&tag_buf).trim_end().to_string(),
        });
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let len = u64::from_le_bytes(len) as usize;
    if len > 1 << 28 {
        return Err(CheckpointError::Format(format!("header length {len} too large")));
    }
    let mut header = vec![0u8; len];
    r.read_exact(&mut header)?;
    let header: Value = serde_json::from_slice(&header)?;
    let params = header["params"]
        .as_array()
        .ok_or_else(|| CheckpointError::Format("missing params list".into()))?;
    let mut store = ParamStore::new();
    for p in params {
        let name = p["name"].as_str().ok_or_else(|| CheckpointError::Format("param without name".into()))?;
        let shape: Vec<usize> = serde_json::from_value(p["shape"].clone())?;
        let n: usize = shape.iter().product();
        let mut raw = vec![0u8; n * 8];
        r.read_exact(&mut raw)
            .map_err(|_| CheckpointError::Format(format!("truncated data for {name}")))?;
        let data = raw
            .chunks_exact(8)
            .map(|c| T::lit(f64::from_le_bytes(c.try_into().expect("8-byte chunk"))))
            .collect();
        store.add(name, Array::new(&shape, data));
    }
    Ok((header["meta"].clone(), store))
}

pub fn save<T: Scalar>(path: &Path, tag: &str, meta: &Value, store: &ParamStore<T>) -> Result<(), CheckpointError> {
    let f = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(f);
    write_checkpoint(&mut w, tag, meta, store)?;
    w.flush()?;
    Ok(())
}

pub fn load<T: Scalar>(path: &Path, tag: &str) -> Result<(Value, ParamStore<T>), CheckpointError> {
    let f = std::fs::File::open(path)?;
    read_checkpoint(std::io::BufReader::new(f), tag)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_tag_check() {
        let mut store = ParamStore::<f32>::new();
        store.add("a.weight", Array::from_f64(&[2, 3], &[1., 2., 3., 4., 5., 6.5]));
        store.add("a.bias", Array::from_f64(&[3], &[-1., 0., 1e-3]));
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, "gen_v1", &json!({"n_blocks": 2}), &store).unwrap();
        assert!(buf.starts_with(b"gen_v1\n"));
        let (meta, back) = read_checkpoint::<f32>(&buf[..], "gen_v1").unwrap();
        assert_eq!(meta["n_blocks"], 2);
        assert_eq!(back, store);
        let err = read_checkpoint::<f32>(&buf[..], "dis_v1").unwrap_err();
        assert!(matches!(err, CheckpointError::BadHeader { .. }));
    }
}
