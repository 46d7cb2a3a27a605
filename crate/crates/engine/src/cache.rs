// SPDX-License-Identifier: MIT OR Apache-2.0

//! Activation cache file format.
//!
//! A safetensors-compatible file holding two `F32` tensors, `good` and
//! `bad`, each `n × U` row-major. The header's `__metadata__` has a single
//! key, `synloc`, whose value is the JSON-encoded [`ActivationCacheHeader`]
//! (model hash, unit space, and the cache key digest). Column order is the
//! [`UnitSpace`] order recorded in the header.

use std::collections::HashMap;
use std::path::Path;

use ndarray::Array2;
use safetensors::{Dtype, SafeTensors};
use serde::{Deserialize, Serialize};

use crate::error::{EngineError, Result};
use crate::units::UnitSpace;
use crate::weights::{f32_to_le_bytes, le_bytes_to_f32};

pub const CACHE_FORMAT: &str = "synloc-activations-v1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActivationCacheHeader {
    pub format: String,
    pub model_hash: String,
    pub space: UnitSpace,
    /// Digest of the full cache key the matrices were computed for.
    pub key_digest: String,
}

/// Grammatical / ungrammatical activation matrices with their header.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationPair {
    pub header: ActivationCacheHeader,
    pub good: Array2<f32>,
    pub bad: Array2<f32>,
}

impl ActivationPair {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let u = self.header.space.len();
        for (name, m) in [("good", &self.good), ("bad", &self.bad)] {
            if m.ncols() != u {
                return Err(EngineError::Cache(format!(
                    "`{name}` has {} columns, unit space has {u}",
                    m.ncols()
                )));
            }
        }
        let good = f32_to_le_bytes(&self.good.iter().copied().collect::<Vec<_>>());
        let bad = f32_to_le_bytes(&self.bad.iter().copied().collect::<Vec<_>>());
        let views = vec![
            (
                "bad".to_string(),
                safetensors::tensor::TensorView::new(Dtype::F32, vec![self.bad.nrows(), u], &bad)
                    .map_err(|e| EngineError::Cache(e.to_string()))?,
            ),
            (
                "good".to_string(),
                safetensors::tensor::TensorView::new(Dtype::F32, vec![self.good.nrows(), u], &good)
                    .map_err(|e| EngineError::Cache(e.to_string()))?,
            ),
        ];
        let header = serde_json::to_string(&self.header).expect("header serializes");
        let meta = HashMap::from([("synloc".to_string(), header)]);
        safetensors::serialize(views, Some(meta)).map_err(|e| EngineError::Cache(e.to_string()))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (_, meta) = SafeTensors::read_metadata(bytes).map_err(|e| EngineError::Cache(e.to_string()))?;
        let header_json = meta
            .metadata()
            .as_ref()
            .and_then(|m| m.get("synloc"))
            .ok_or_else(|| EngineError::Cache("missing `synloc` header".into()))?;
        let header: ActivationCacheHeader =
            serde_json::from_str(header_json).map_err(|e| EngineError::Cache(format!("bad header JSON: {e}")))?;
        if header.format != CACHE_FORMAT {
            return Err(EngineError::Cache(format!("unsupported format `{}`", header.format)));
        }
        let st = SafeTensors::deserialize(bytes).map_err(|e| EngineError::Cache(e.to_string()))?;
        let read = |name: &str| -> Result<Array2<f32>> {
            let view = st.tensor(name).map_err(|e| EngineError::Cache(e.to_string()))?;
            let shape = view.shape();
            if view.dtype() != Dtype::F32 || shape.len() != 2 || shape[1] != header.space.len() {
                return Err(EngineError::Cache(format!("tensor `{name}` has wrong dtype/shape")));
            }
            Array2::from_shape_vec((shape[0], shape[1]), le_bytes_to_f32(view.data()))
                .map_err(|e| EngineError::Cache(e.to_string()))
        };
        Ok(Self {
            good: read("good")?,
            bad: read("bad")?,
            header,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()?).map_err(|e| EngineError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| EngineError::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::Site;

    #[test]
    fn round_trip_is_bit_exact() {
        let space = UnitSpace::new(&[Site::Residual], 2, 3).unwrap();
        let good = Array2::from_shape_fn((2, 6), |(i, j)| (i as f32 - 0.3) * (j as f32 + 1e-7));
        let bad = Array2::from_shape_fn((3, 6), |(i, j)| f32::from_bits(0x3f80_0001 + (i * 7 + j) as u32));
        let pair = ActivationPair {
            header: ActivationCacheHeader {
                format: CACHE_FORMAT.into(),
                model_hash: "abc".into(),
                space,
                key_digest: "k".into(),
            },
            good,
            bad,
        };
        let back = ActivationPair::from_bytes(&pair.to_bytes().unwrap()).unwrap();
        assert_eq!(back, pair);
    }

    #[test]
    fn garbage_rejected() {
        assert!(ActivationPair::from_bytes(b"not a cache").is_err());
    }
}
