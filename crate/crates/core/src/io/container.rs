//! Named-tensor container.
//!
//! Layout:
//!
//! ```text
//! [u64 LE header length N][N bytes UTF-8 JSON header][data region]
//! ```
//!
//! The header maps each tensor name to
//! `{"dtype": "F32"|"F16"|"BF16", "shape": [..], "data_offsets": [start, end]}`
//! with offsets relative to the start of the data region. An optional
//! `"__metadata__"` object of strings is accepted and ignored. Ranges must
//! not overlap and must tile the data region exactly.
//!
//! Writers emit tensors in lexicographic name order and pad the header with
//! spaces so the data region starts on an 8-byte boundary, which makes the
//! encoding a pure function of the tensor map.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::error::{Error, Result};
use crate::tensor::{DType, Tensor, TensorMap};

const METADATA_KEY: &str = "__metadata__";
const LENGTH_PREFIX: usize = 8;

pub const DIGEST_ALGORITHM: &str = "sha256";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ContainerError {
    #[error("truncated header: {declared} header bytes declared, {available} available")]
    TruncatedHeader { declared: u64, available: usize },
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("unknown dtype {dtype:?} for tensor {name:?}")]
    UnknownDtype { name: String, dtype: String },
    #[error("invalid shape {shape:?} for tensor {name:?}")]
    InvalidShape { name: String, shape: Vec<u64> },
    #[error("size mismatch for tensor {name:?}: shape and dtype need {expected} bytes, range holds {actual}")]
    SizeMismatch {
        name: String,
        expected: u64,
        actual: u64,
    },
    #[error("tensor {name:?} range {start}..{end} exceeds the {data_len}-byte data region")]
    OutOfBounds {
        name: String,
        start: u64,
        end: u64,
        data_len: usize,
    },
    #[error("tensors {first:?} and {second:?} have overlapping ranges")]
    OverlappingRanges { first: String, second: String },
    #[error("data region bytes {start}..{end} are not covered by any tensor")]
    UncoveredData { start: u64, end: u64 },
    #[error("empty tensor name")]
    EmptyName,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEntry {
    dtype: String,
    shape: Vec<u64>,
    data_offsets: [u64; 2],
}

#[derive(Serialize)]
struct EntryOut<'a> {
    dtype: &'a str,
    shape: &'a [usize],
    data_offsets: [usize; 2],
}

/// Hex SHA-256 of a container's bytes.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ContentDigest {
    pub algorithm: String,
    pub hex: String,
}

impl ContentDigest {
    pub fn of(bytes: &[u8]) -> Self {
        Self {
            algorithm: DIGEST_ALGORITHM.to_owned(),
            hex: hex::encode(Sha256::digest(bytes)),
        }
    }
}

impl std::fmt::Display for ContentDigest {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}", self.algorithm, self.hex)
    }
}

/// Serializes a tensor map. Identical maps give identical bytes.
pub fn encode_container(map: &TensorMap) -> Vec<u8> {
    let mut offset = 0usize;
    let mut header = BTreeMap::new();
    for (name, tensor) in map.iter() {
        let len = tensor.bytes().len();
        header.insert(
            name,
            EntryOut {
                dtype: tensor.dtype().as_str(),
                shape: tensor.shape(),
                data_offsets: [offset, offset + len],
            },
        );
        offset += len;
    }
    let mut header_bytes = serde_json::to_vec(&header).expect("header serializes");
    while !(LENGTH_PREFIX + header_bytes.len()).is_multiple_of(8) {
        header_bytes.push(b' ');
    }

    let mut out = Vec::with_capacity(LENGTH_PREFIX + header_bytes.len() + offset);
    out.extend_from_slice(&(header_bytes.len() as u64).to_le_bytes());
    out.extend_from_slice(&header_bytes);
    for (_, tensor) in map.iter() {
        out.extend_from_slice(tensor.bytes());
    }
    out
}

/// Parses and validates a container held in memory.
pub fn decode_container(bytes: &[u8]) -> Result<TensorMap, ContainerError> {
    if bytes.len() < LENGTH_PREFIX {
        return Err(ContainerError::TruncatedHeader {
            declared: LENGTH_PREFIX as u64,
            available: bytes.len(),
        });
    }
    let declared = u64::from_le_bytes(bytes[..LENGTH_PREFIX].try_into().expect("8 bytes"));
    let available = bytes.len() - LENGTH_PREFIX;
    if declared > available as u64 {
        return Err(ContainerError::TruncatedHeader {
            declared,
            available,
        });
    }
    let header_end = LENGTH_PREFIX + declared as usize;
    let header = std::str::from_utf8(&bytes[LENGTH_PREFIX..header_end])
        .map_err(|e| ContainerError::MalformedHeader(format!("header is not UTF-8: {e}")))?;
    let raw: BTreeMap<String, serde_json::Value> = serde_json::from_str(header)
        .map_err(|e| ContainerError::MalformedHeader(e.to_string()))?;
    let data = &bytes[header_end..];

    let mut entries = Vec::with_capacity(raw.len());
    for (name, value) in raw {
        if name == METADATA_KEY {
            serde_json::from_value::<BTreeMap<String, String>>(value).map_err(|e| {
                ContainerError::MalformedHeader(format!("{METADATA_KEY}: {e}"))
            })?;
            continue;
        }
        if name.is_empty() {
            return Err(ContainerError::EmptyName);
        }
        let entry: RawEntry = serde_json::from_value(value)
            .map_err(|e| ContainerError::MalformedHeader(format!("tensor {name:?}: {e}")))?;
        entries.push((name, entry));
    }

    let mut ranges: Vec<(u64, u64, &str)> = Vec::with_capacity(entries.len());
    for (name, entry) in &entries {
        let dtype = DType::parse(&entry.dtype).ok_or_else(|| ContainerError::UnknownDtype {
            name: name.clone(),
            dtype: entry.dtype.clone(),
        })?;
        let [start, end] = entry.data_offsets;
        if end < start {
            return Err(ContainerError::MalformedHeader(format!(
                "tensor {name:?} has reversed range {start}..{end}"
            )));
        }
        if end > data.len() as u64 {
            return Err(ContainerError::OutOfBounds {
                name: name.clone(),
                start,
                end,
                data_len: data.len(),
            });
        }
        let invalid_shape = || ContainerError::InvalidShape {
            name: name.clone(),
            shape: entry.shape.clone(),
        };
        if entry.shape.contains(&0) {
            return Err(invalid_shape());
        }
        let expected = entry
            .shape
            .iter()
            .try_fold(dtype.size() as u64, |acc, &d| acc.checked_mul(d))
            .ok_or_else(invalid_shape)?;
        if expected != end - start {
            return Err(ContainerError::SizeMismatch {
                name: name.clone(),
                expected,
                actual: end - start,
            });
        }
        ranges.push((start, end, name));
    }

    ranges.sort();
    let mut cursor = 0u64;
    let mut previous: Option<&str> = None;
    for &(start, end, name) in &ranges {
        if start < cursor {
            return Err(ContainerError::OverlappingRanges {
                first: previous.unwrap_or_default().to_owned(),
                second: name.to_owned(),
            });
        }
        if start > cursor {
            return Err(ContainerError::UncoveredData { start: cursor, end: start });
        }
        cursor = end;
        previous = Some(name);
    }
    if cursor != data.len() as u64 {
        return Err(ContainerError::UncoveredData {
            start: cursor,
            end: data.len() as u64,
        });
    }

    let mut map = TensorMap::new();
    for (name, entry) in entries {
        let dtype = DType::parse(&entry.dtype).expect("checked above");
        let [start, end] = entry.data_offsets;
        let shape = entry.shape.iter().map(|&d| d as usize).collect();
        let tensor = Tensor::from_bytes(dtype, shape, data[start as usize..end as usize].to_vec())
            .map_err(|e| ContainerError::MalformedHeader(e.to_string()))?;
        map.insert(name, tensor)
            .map_err(|_| ContainerError::EmptyName)?;
    }
    Ok(map)
}

pub fn read_container(path: impl AsRef<Path>) -> Result<TensorMap> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(decode_container(&bytes)?)
}

/// Writes the container and returns the digest of the bytes written.
pub fn write_container(map: &TensorMap, path: impl AsRef<Path>) -> Result<ContentDigest> {
    let path = path.as_ref();
    let bytes = encode_container(map);
    std::fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
    Ok(ContentDigest::of(&bytes))
}
