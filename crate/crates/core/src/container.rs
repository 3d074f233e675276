//! JSON-lines container shared by dataset and hypothesis files.
//!
//! Line one is a header object carrying the magic string, the record kind and
//! the array dimensions; every further line is one record. Numeric arrays are
//! base64-encoded little-endian f32 blobs so payloads are exact.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const MAGIC: &str = "DIFFPOSE-DS/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub magic: String,
    pub kind: String,
    pub dims: BTreeMap<String, usize>,
    pub records: usize,
    #[serde(default)]
    pub meta: serde_json::Value,
}

impl Header {
    pub fn new(kind: &str, dims: &[(&str, usize)], records: usize, meta: serde_json::Value) -> Self {
        Header {
            magic: MAGIC.into(),
            kind: kind.into(),
            dims: dims.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            records,
            meta,
        }
    }

    pub fn dim(&self, name: &str) -> Result<usize> {
        self.dims
            .get(name)
            .copied()
            .ok_or_else(|| Error::format(format!("dims.{name}"), "missing"))
    }
}

/// Encodes values as little-endian f32.
pub fn encode_f32(values: &[f64]) -> String {
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for v in values {
        bytes.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    STANDARD.encode(bytes)
}

/// Decodes a blob and checks its length.
pub fn decode_f32(field: &str, blob: &str, expected: usize) -> Result<Vec<f64>> {
    let bytes = STANDARD
        .decode(blob)
        .map_err(|e| Error::format(field, format!("bad base64: {e}")))?;
    if bytes.len() != expected * 4 {
        return Err(Error::format(
            field,
            format!("expected {expected} values, found {} bytes", bytes.len()),
        ));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

pub fn write<R: Serialize>(path: &Path, header: &Header, records: &[R]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    serde_json::to_writer(&mut w, header).map_err(|e| Error::io(path, e.into()))?;
    w.write_all(b"\n").map_err(io)?;
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|e| Error::io(path, e.into()))?;
        w.write_all(b"\n").map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Reads a container, checking magic, kind and record count.
pub fn read<R: DeserializeOwned>(path: &Path, kind: &str) -> Result<(Header, Vec<R>)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let first = lines
        .next()
        .ok_or_else(|| Error::format("header", "empty file"))?
        .map_err(|e| Error::io(path, e))?;
    let header: Header =
        serde_json::from_str(&first).map_err(|e| Error::format("header", e.to_string()))?;
    if header.magic != MAGIC {
        return Err(Error::format("magic", format!("expected {MAGIC}, found {}", header.magic)));
    }
    if header.kind != kind {
        return Err(Error::format("kind", format!("expected {kind}, found {}", header.kind)));
    }
    let mut records = Vec::with_capacity(header.records);
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.is_empty() {
            continue;
        }
        let r = serde_json::from_str(&line)
            .map_err(|e| Error::format(format!("record {i}"), e.to_string()))?;
        records.push(r);
    }
    if records.len() != header.records {
        return Err(Error::format(
            "records",
            format!("header declares {}, file holds {}", header.records, records.len()),
        ));
    }
    Ok((header, records))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blob_roundtrip_is_f32_exact() {
        let v = vec![0.1f32 as f64, -3.5, 1e-7f32 as f64];
        assert_eq!(decode_f32("x", &encode_f32(&v), 3).unwrap(), v);
        assert!(matches!(
            decode_f32("x", &encode_f32(&v), 4),
            Err(Error::Format { field, .. }) if field == "x"
        ));
    }
}
