//! Named dense tensors stored as little-endian byte buffers.

use std::collections::BTreeMap;

use half::{bf16, f16};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DType {
    #[serde(rename = "F32")]
    F32,
    #[serde(rename = "F16")]
    F16,
    #[serde(rename = "BF16")]
    BF16,
}

impl DType {
    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F16 | DType::BF16 => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DType::F32 => "F32",
            DType::F16 => "F16",
            DType::BF16 => "BF16",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "F32" => Some(DType::F32),
            "F16" => Some(DType::F16),
            "BF16" => Some(DType::BF16),
            _ => None,
        }
    }
}

impl std::fmt::Display for DType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One dense tensor. `data` holds `numel * dtype.size()` little-endian bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tensor {
    dtype: DType,
    shape: Vec<usize>,
    data: Vec<u8>,
}

fn numel_of(shape: &[usize]) -> Option<usize> {
    shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d))
}

impl Tensor {
    /// Builds a tensor from raw bytes, checking that every dimension is
    /// positive and that the byte length matches the shape.
    pub fn from_bytes(dtype: DType, shape: Vec<usize>, data: Vec<u8>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::InvalidTensor {
                name: String::new(),
                reason: format!("shape {shape:?} has a zero dimension"),
            });
        }
        let expected = numel_of(&shape)
            .and_then(|n| n.checked_mul(dtype.size()))
            .ok_or_else(|| Error::InvalidTensor {
                name: String::new(),
                reason: format!("shape {shape:?} overflows"),
            })?;
        if expected != data.len() {
            return Err(Error::InvalidTensor {
                name: String::new(),
                reason: format!("{} bytes for {dtype} {shape:?}, expected {expected}", data.len()),
            });
        }
        Ok(Self { dtype, shape, data })
    }

    pub fn from_f32(shape: Vec<usize>, values: &[f32]) -> Result<Self> {
        let data = values.iter().flat_map(|v| v.to_le_bytes()).collect();
        Self::from_bytes(DType::F32, shape, data)
    }

    /// Rounds each value once to `dtype` (round-to-nearest-even).
    pub fn from_f64(dtype: DType, shape: Vec<usize>, values: &[f64]) -> Result<Self> {
        let mut data = Vec::with_capacity(values.len() * dtype.size());
        match dtype {
            DType::F32 => values
                .iter()
                .for_each(|&v| data.extend_from_slice(&(v as f32).to_le_bytes())),
            DType::F16 => values
                .iter()
                .for_each(|&v| data.extend_from_slice(&f16::from_f64(v).to_le_bytes())),
            DType::BF16 => values
                .iter()
                .for_each(|&v| data.extend_from_slice(&bf16::from_f64(v).to_le_bytes())),
        }
        Self::from_bytes(dtype, shape, data)
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn bytes(&self) -> &[u8] {
        &self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len() / self.dtype.size()
    }

    /// Widens every element to `f64` (exact for all supported dtypes).
    pub fn to_f64(&self) -> Vec<f64> {
        match self.dtype {
            DType::F32 => self
                .data
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect(),
            DType::F16 => self
                .data
                .chunks_exact(2)
                .map(|c| f16::from_le_bytes([c[0], c[1]]).to_f64())
                .collect(),
            DType::BF16 => self
                .data
                .chunks_exact(2)
                .map(|c| bf16::from_le_bytes([c[0], c[1]]).to_f64())
                .collect(),
        }
    }

    /// Same dtype and shape, new values.
    pub fn with_values(&self, values: &[f64]) -> Result<Self> {
        Self::from_f64(self.dtype, self.shape.clone(), values)
    }
}

/// Tensors keyed by non-empty name, iterated in lexicographic order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TensorMap {
    tensors: BTreeMap<String, Tensor>,
}

impl TensorMap {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a tensor, replacing any previous one under `name`.
    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<Option<Tensor>> {
        let name = name.into();
        if name.is_empty() {
            return Err(Error::InvalidTensor {
                name,
                reason: "tensor names must be non-empty".into(),
            });
        }
        Ok(self.tensors.insert(name, tensor))
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }
}

impl FromIterator<(String, Tensor)> for TensorMap {
    /// Entries with empty names are dropped.
    fn from_iter<I: IntoIterator<Item = (String, Tensor)>>(iter: I) -> Self {
        Self {
            tensors: iter.into_iter().filter(|(k, _)| !k.is_empty()).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn byte_length_must_match_shape() {
        assert!(Tensor::from_bytes(DType::F32, vec![2, 2], vec![0; 16]).is_ok());
        assert!(Tensor::from_bytes(DType::F32, vec![2, 2], vec![0; 12]).is_err());
        assert!(Tensor::from_bytes(DType::BF16, vec![3], vec![0; 6]).is_ok());
        assert!(Tensor::from_bytes(DType::F16, vec![0, 3], vec![]).is_err());
    }

    #[test]
    fn scalar_shape_holds_one_element() {
        let t = Tensor::from_f32(vec![], &[1.5]).unwrap();
        assert_eq!(t.numel(), 1);
        assert_eq!(t.to_f64(), vec![1.5]);
    }

    #[test]
    fn half_precision_rounds_once() {
        let t = Tensor::from_f64(DType::F16, vec![3], &[1.0, 0.1, -2.5]).unwrap();
        let back = t.to_f64();
        assert_eq!(back[0], 1.0);
        assert_eq!(back[2], -2.5);
        assert_eq!(back[1], f16::from_f64(0.1).to_f64());
        let t = Tensor::from_f64(DType::BF16, vec![1], &[3.0]).unwrap();
        assert_eq!(t.to_f64(), vec![3.0]);
    }

    #[test]
    fn empty_names_rejected() {
        let mut map = TensorMap::new();
        let t = Tensor::from_f32(vec![1], &[0.0]).unwrap();
        assert!(map.insert("", t.clone()).is_err());
        assert!(map.insert("a", t).unwrap().is_none());
        assert_eq!(map.names().collect::<Vec<_>>(), vec!["a"]);
    }
}
