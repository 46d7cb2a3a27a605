// SPDX-License-Identifier: MIT OR Apache-2.0

//! Canonical weight container.
//!
//! The file is safetensors-compatible: an 8-byte little-endian header length,
//! a JSON header mapping tensor names to `{dtype, shape, data_offsets}`, then
//! raw little-endian `F32` data. The header's `__metadata__` object carries
//! `"format": "synloc-weights-v1"` and `"config"`, a JSON-encoded
//! [`ModelConfig`].
//!
//! Tensor names (all matrices are `[out, in]`, row-major):
//!
//! | name                              | shape                  | present when        |
//! |-----------------------------------|------------------------|---------------------|
//! | `embed.tokens`                    | `[vocab, hidden]`      | always              |
//! | `embed.positions`                 | `[max_pos, hidden]`    | learned positions   |
//! | `layers.{i}.norm1.weight`         | `[hidden]`             | always              |
//! | `layers.{i}.norm1.bias`           | `[hidden]`             | layernorm           |
//! | `layers.{i}.attn.{q,k,v,o}.weight`| `[hidden, hidden]`     | always              |
//! | `layers.{i}.attn.{q,k,v,o}.bias`  | `[hidden]`             | `attn_bias`         |
//! | `layers.{i}.norm2.{weight,bias}`  | `[hidden]`             | as norm1            |
//! | `layers.{i}.mlp.up.weight`        | `[inter, hidden]`      | always              |
//! | `layers.{i}.mlp.gate.weight`      | `[inter, hidden]`      | silu-gated          |
//! | `layers.{i}.mlp.down.weight`      | `[hidden, inter]`      | always              |
//! | `layers.{i}.mlp.{up,gate,down}.bias` | `[out]`             | `mlp_bias`          |
//! | `final_norm.{weight,bias}`        | `[hidden]`             | as norm1            |
//! | `unembed.weight`                  | `[vocab, hidden]`      | always              |

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use safetensors::{Dtype, SafeTensors};
use sha2::{Digest, Sha256};

use crate::config::{Activation, ModelConfig, NormKind, PositionScheme};
use crate::error::{EngineError, Result};

pub const FORMAT_TAG: &str = "synloc-weights-v1";

#[derive(Debug, Clone)]
pub struct Linear {
    pub(crate) weight: Vec<f32>,
    pub(crate) bias: Option<Vec<f32>>,
    pub(crate) in_dim: usize,
    pub(crate) out_dim: usize,
}

#[derive(Debug, Clone)]
pub struct Norm {
    pub(crate) weight: Vec<f32>,
    pub(crate) bias: Option<Vec<f32>>,
}

#[derive(Debug, Clone)]
pub struct Block {
    pub(crate) norm1: Norm,
    pub(crate) q: Linear,
    pub(crate) k: Linear,
    pub(crate) v: Linear,
    pub(crate) o: Linear,
    pub(crate) norm2: Norm,
    pub(crate) up: Linear,
    pub(crate) gate: Option<Linear>,
    pub(crate) down: Linear,
}

/// Validated model parameters.
#[derive(Debug, Clone)]
pub struct ModelWeights {
    pub(crate) config: ModelConfig,
    pub(crate) tok_embed: Vec<f32>,
    pub(crate) pos_embed: Option<Vec<f32>>,
    pub(crate) blocks: Vec<Block>,
    pub(crate) final_norm: Norm,
    pub(crate) unembed: Linear,
    hash: String,
}

/// A raw named tensor: shape plus row-major data.
pub type RawTensor = (Vec<usize>, Vec<f32>);

impl ModelWeights {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Content hash over the config and every tensor (name, shape, data).
    ///
    /// Independent of container byte layout, so a model built in memory and
    /// the same model loaded from disk share a hash.
    pub fn content_hash(&self) -> &str {
        &self.hash
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| EngineError::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (_, meta) = SafeTensors::read_metadata(bytes).map_err(|e| EngineError::Format(e.to_string()))?;
        let header = meta
            .metadata()
            .as_ref()
            .ok_or_else(|| EngineError::Format("missing __metadata__".into()))?;
        if let Some(tag) = header.get("format") {
            if tag != FORMAT_TAG {
                return Err(EngineError::Format(format!("unsupported format tag `{tag}`")));
            }
        }
        let config_json = header
            .get("config")
            .ok_or_else(|| EngineError::Format("missing `config` in __metadata__".into()))?;
        let config: ModelConfig =
            serde_json::from_str(config_json).map_err(|e| EngineError::Format(format!("bad config JSON: {e}")))?;

        let st = SafeTensors::deserialize(bytes).map_err(|e| EngineError::Format(e.to_string()))?;
        let mut tensors = HashMap::new();
        for (name, view) in st.tensors() {
            if view.dtype() != Dtype::F32 {
                return Err(EngineError::Format(format!(
                    "tensor `{name}` has dtype {:?}, expected F32",
                    view.dtype()
                )));
            }
            let data = le_bytes_to_f32(view.data());
            tensors.insert(name, (view.shape().to_vec(), data));
        }
        Self::from_tensors(config, tensors)
    }

    pub fn from_tensors(config: ModelConfig, tensors: HashMap<String, RawTensor>) -> Result<Self> {
        config.validate()?;
        let hash = content_hash(&config, &tensors);
        let mut take = Taker { tensors };
        let h = config.hidden;
        let inter = config.intermediate;
        let tok_embed = take.get("embed.tokens", &[config.vocab_size, h])?;
        let pos_embed = match config.position_scheme {
            PositionScheme::LearnedAbsolute => Some(take.get("embed.positions", &[config.max_positions, h])?),
            PositionScheme::Rotary => None,
        };
        let mut blocks = Vec::with_capacity(config.n_layers);
        for i in 0..config.n_layers {
            let p = format!("layers.{i}.");
            let gate = match config.activation {
                Activation::SiluGated => Some(take.linear(&format!("{p}mlp.gate"), inter, h, config.mlp_bias)?),
                Activation::Gelu => None,
            };
            blocks.push(Block {
                norm1: take.norm(&format!("{p}norm1"), h, config.norm)?,
                q: take.linear(&format!("{p}attn.q"), h, h, config.attn_bias)?,
                k: take.linear(&format!("{p}attn.k"), h, h, config.attn_bias)?,
                v: take.linear(&format!("{p}attn.v"), h, h, config.attn_bias)?,
                o: take.linear(&format!("{p}attn.o"), h, h, config.attn_bias)?,
                norm2: take.norm(&format!("{p}norm2"), h, config.norm)?,
                up: take.linear(&format!("{p}mlp.up"), inter, h, config.mlp_bias)?,
                gate,
                down: take.linear(&format!("{p}mlp.down"), h, inter, config.mlp_bias)?,
            });
        }
        let final_norm = take.norm("final_norm", h, config.norm)?;
        let unembed = take.linear("unembed", config.vocab_size, h, false)?;
        if let Some(extra) = take.tensors.keys().min() {
            return Err(EngineError::UnexpectedTensor(extra.clone()));
        }
        Ok(Self {
            config,
            tok_embed,
            pos_embed,
            blocks,
            final_norm,
            unembed,
            hash,
        })
    }

    /// Every tensor by canonical name.
    pub fn to_tensors(&self) -> BTreeMap<String, RawTensor> {
        let cfg = &self.config;
        let h = cfg.hidden;
        let mut out = BTreeMap::new();
        out.insert("embed.tokens".into(), (vec![cfg.vocab_size, h], self.tok_embed.clone()));
        if let Some(pos) = &self.pos_embed {
            out.insert("embed.positions".into(), (vec![cfg.max_positions, h], pos.clone()));
        }
        let put_norm = |out: &mut BTreeMap<String, RawTensor>, name: &str, n: &Norm| {
            out.insert(format!("{name}.weight"), (vec![n.weight.len()], n.weight.clone()));
            if let Some(b) = &n.bias {
                out.insert(format!("{name}.bias"), (vec![b.len()], b.clone()));
            }
        };
        let put_lin = |out: &mut BTreeMap<String, RawTensor>, name: &str, l: &Linear| {
            out.insert(format!("{name}.weight"), (vec![l.out_dim, l.in_dim], l.weight.clone()));
            if let Some(b) = &l.bias {
                out.insert(format!("{name}.bias"), (vec![l.out_dim], b.clone()));
            }
        };
        for (i, b) in self.blocks.iter().enumerate() {
            let p = format!("layers.{i}.");
            put_norm(&mut out, &format!("{p}norm1"), &b.norm1);
            put_norm(&mut out, &format!("{p}norm2"), &b.norm2);
            put_lin(&mut out, &format!("{p}attn.q"), &b.q);
            put_lin(&mut out, &format!("{p}attn.k"), &b.k);
            put_lin(&mut out, &format!("{p}attn.v"), &b.v);
            put_lin(&mut out, &format!("{p}attn.o"), &b.o);
            put_lin(&mut out, &format!("{p}mlp.up"), &b.up);
            if let Some(g) = &b.gate {
                put_lin(&mut out, &format!("{p}mlp.gate"), g);
            }
            put_lin(&mut out, &format!("{p}mlp.down"), &b.down);
        }
        put_norm(&mut out, "final_norm", &self.final_norm);
        put_lin(&mut out, "unembed", &self.unembed);
        out
    }

    /// Serializes to the canonical container.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let tensors = self.to_tensors();
        let encoded: Vec<(String, Vec<u8>, Vec<usize>)> = tensors
            .into_iter()
            .map(|(name, (shape, data))| (name, f32_to_le_bytes(&data), shape))
            .collect();
        let views = encoded
            .iter()
            .map(|(name, bytes, shape)| {
                safetensors::tensor::TensorView::new(Dtype::F32, shape.clone(), bytes)
                    .map(|v| (name.clone(), v))
                    .map_err(|e| EngineError::Format(e.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        let config = serde_json::to_string(&self.config).expect("config serializes");
        let meta = HashMap::from([
            ("format".to_string(), FORMAT_TAG.to_string()),
            ("config".to_string(), config),
        ]);
        safetensors::serialize(views, Some(meta)).map_err(|e| EngineError::Format(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.to_bytes()?;
        std::fs::write(path, bytes).map_err(|e| EngineError::io(path, e))
    }
}

struct Taker {
    tensors: HashMap<String, RawTensor>,
}

impl Taker {
    fn get(&mut self, name: &str, shape: &[usize]) -> Result<Vec<f32>> {
        let (actual, data) = self
            .tensors
            .remove(name)
            .ok_or_else(|| EngineError::MissingTensor(name.to_string()))?;
        if actual != shape {
            return Err(EngineError::Shape {
                name: name.to_string(),
                expected: shape.to_vec(),
                actual,
            });
        }
        if data.len() != shape.iter().product::<usize>() {
            return Err(EngineError::Format(format!("tensor `{name}` data length mismatch")));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(EngineError::NonFinite(name.to_string()));
        }
        Ok(data)
    }

    fn linear(&mut self, name: &str, out_dim: usize, in_dim: usize, bias: bool) -> Result<Linear> {
        let weight = self.get(&format!("{name}.weight"), &[out_dim, in_dim])?;
        let bias = if bias {
            Some(self.get(&format!("{name}.bias"), &[out_dim])?)
        } else {
            None
        };
        Ok(Linear {
            weight,
            bias,
            in_dim,
            out_dim,
        })
    }

    fn norm(&mut self, name: &str, hidden: usize, kind: NormKind) -> Result<Norm> {
        let weight = self.get(&format!("{name}.weight"), &[hidden])?;
        let bias = match kind {
            NormKind::LayerNorm => Some(self.get(&format!("{name}.bias"), &[hidden])?),
            NormKind::RmsNorm => None,
        };
        Ok(Norm { weight, bias })
    }
}

fn content_hash(config: &ModelConfig, tensors: &HashMap<String, RawTensor>) -> String {
    let mut hasher = Sha256::new();
    hasher.update(serde_json::to_string(config).expect("config serializes").as_bytes());
    let mut names: Vec<&String> = tensors.keys().collect();
    names.sort();
    for name in names {
        let (shape, data) = &tensors[name];
        hasher.update((name.len() as u64).to_le_bytes());
        hasher.update(name.as_bytes());
        hasher.update((shape.len() as u64).to_le_bytes());
        for d in shape {
            hasher.update((*d as u64).to_le_bytes());
        }
        for v in data {
            hasher.update(v.to_le_bytes());
        }
    }
    hex(&hasher.finalize())
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Decodes little-endian `f32` data (trailing partial words are ignored).
pub fn le_bytes_to_f32(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect()
}

pub(crate) fn f32_to_le_bytes(data: &[f32]) -> Vec<u8> {
    data.iter().flat_map(|v| v.to_le_bytes()).collect()
}
