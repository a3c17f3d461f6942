//! Named, versioned storage for trainable arrays.
//!
//! On disk a store is one JSON document:
//! `{"version":1,"params":{"face.mu.weight":{"shape":[32,64],"data":[...]}}}`
//! with every float written to 17 significant digits so reloading is bit-exact.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::Deserialize;

use crate::error::{Result, UalError};
use crate::numerics::{DenseMatrix, DenseVector, Linear};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ParamArray {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParameterStore {
    params: BTreeMap<String, ParamArray>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawStore {
    version: u32,
    params: BTreeMap<String, RawArray>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawArray {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn get(&self, name: &str) -> Option<&ParamArray> {
        self.params.get(name)
    }

    pub fn insert(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> Result<()> {
        let expected: usize = shape.iter().product();
        let name = name.into();
        if expected != data.len() {
            return Err(UalError::dim(format!("parameter {name}"), expected, data.len()));
        }
        self.params.insert(name, ParamArray { shape, data });
        Ok(())
    }

    pub fn insert_linear(&mut self, prefix: &str, layer: &Linear) -> Result<()> {
        let (rows, cols) = layer.weight.shape();
        self.insert(
            format!("{prefix}.weight"),
            vec![rows, cols],
            layer.weight.as_slice().to_vec(),
        )?;
        self.insert(format!("{prefix}.bias"), vec![rows], layer.bias.to_vec())
    }

    /// Remove and return an array, checking its shape.
    pub fn take(&mut self, name: &str, shape: &[usize]) -> Result<Vec<f64>> {
        let arr = self
            .params
            .remove(name)
            .ok_or_else(|| UalError::ParameterStore(format!("missing parameter `{name}`")))?;
        if arr.shape != shape {
            return Err(UalError::ParameterStore(format!(
                "parameter `{name}` has shape {:?}, expected {:?}",
                arr.shape, shape
            )));
        }
        Ok(arr.data)
    }

    pub fn take_linear(&mut self, prefix: &str, in_dim: usize, out_dim: usize) -> Result<Linear> {
        let w = self.take(&format!("{prefix}.weight"), &[out_dim, in_dim])?;
        let b = self.take(&format!("{prefix}.bias"), &[out_dim])?;
        Linear::new(DenseMatrix::from_vec(out_dim, in_dim, w)?, DenseVector::new(b))
    }

    /// Shape of a stored linear layer as `(in_dim, out_dim)`.
    pub fn linear_dims(&self, prefix: &str) -> Result<(usize, usize)> {
        let arr = self
            .get(&format!("{prefix}.weight"))
            .ok_or_else(|| UalError::ParameterStore(format!("missing parameter `{prefix}.weight`")))?;
        match arr.shape.as_slice() {
            [rows, cols] => Ok((*cols, *rows)),
            other => Err(UalError::ParameterStore(format!(
                "`{prefix}.weight` must be 2-D, found shape {other:?}"
            ))),
        }
    }

    /// Error if anything is left after a model consumed the arrays it knows.
    pub fn ensure_consumed(&self) -> Result<()> {
        if let Some(name) = self.params.keys().next() {
            return Err(UalError::ParameterStore(format!("unknown parameter `{name}`")));
        }
        Ok(())
    }

    pub fn merge(&mut self, other: ParameterStore) {
        self.params.extend(other.params);
    }

    pub fn to_json_string(&self) -> Result<String> {
        let mut out = String::new();
        write!(out, "{{\"version\":{FORMAT_VERSION},\"params\":{{").unwrap();
        for (i, (name, arr)) in self.params.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            out.push_str(&serde_json::to_string(name)?);
            out.push_str(":{\"shape\":[");
            for (j, d) in arr.shape.iter().enumerate() {
                if j > 0 {
                    out.push(',');
                }
                write!(out, "{d}").unwrap();
            }
            out.push_str("],\"data\":[");
            for (j, v) in arr.data.iter().enumerate() {
                if !v.is_finite() {
                    return Err(UalError::NonFinite {
                        context: format!("parameter `{name}`[{j}]"),
                    });
                }
                if j > 0 {
                    out.push(',');
                }
                write!(out, "{v:.16e}").unwrap();
            }
            out.push_str("]}");
        }
        out.push_str("}}\n");
        Ok(out)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let raw: RawStore = serde_json::from_str(text)?;
        if raw.version != FORMAT_VERSION {
            return Err(UalError::ParameterStore(format!(
                "unsupported format version {} (expected {FORMAT_VERSION})",
                raw.version
            )));
        }
        let mut store = ParameterStore::new();
        for (name, arr) in raw.params {
            store.insert(name, arr.shape, arr.data)?;
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json_string()?).map_err(|e| UalError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| UalError::io(path, e))?;
        Self::from_json_str(&text)
    }
}
