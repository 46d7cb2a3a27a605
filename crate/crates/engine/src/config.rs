// SPDX-License-Identifier: MIT OR Apache-2.0

//! Model hyper-parameters, stored as JSON in the weight container header.

use serde::{Deserialize, Serialize};

use crate::error::{EngineError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    /// Tanh-approximated GELU (GPT-2's `gelu_new`).
    Gelu,
    /// `down(silu(gate(x)) * up(x))`.
    SiluGated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PositionScheme {
    LearnedAbsolute,
    Rotary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    LayerNorm,
    RmsNorm,
}

/// Architecture description of a pre-norm decoder-only transformer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Free-form family label (`gpt2`, `llama`, ...). Informational only.
    #[serde(default)]
    pub architecture: String,
    pub n_layers: usize,
    pub hidden: usize,
    pub n_heads: usize,
    pub intermediate: usize,
    pub vocab_size: usize,
    pub max_positions: usize,
    pub layernorm_epsilon: f64,
    pub activation: Activation,
    pub position_scheme: PositionScheme,
    pub norm: NormKind,
    #[serde(default)]
    pub attn_bias: bool,
    #[serde(default)]
    pub mlp_bias: bool,
    #[serde(default)]
    pub rope_theta: Option<f64>,
    #[serde(default)]
    pub bos_token_id: Option<u32>,
}

impl ModelConfig {
    pub fn head_dim(&self) -> usize {
        self.hidden / self.n_heads
    }

    /// Number of units per site: `n_layers × hidden`.
    pub fn units_per_site(&self) -> usize {
        self.n_layers * self.hidden
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_layers", self.n_layers),
            ("hidden", self.hidden),
            ("n_heads", self.n_heads),
            ("intermediate", self.intermediate),
            ("vocab_size", self.vocab_size),
            ("max_positions", self.max_positions),
        ];
        for (name, value) in counts {
            if value == 0 {
                return Err(EngineError::Config(format!("{name} must be at least 1")));
            }
        }
        if !self.hidden.is_multiple_of(self.n_heads) {
            return Err(EngineError::Config(format!(
                "hidden {} not divisible by n_heads {}",
                self.hidden, self.n_heads
            )));
        }
        if !(self.layernorm_epsilon.is_finite() && self.layernorm_epsilon > 0.0) {
            return Err(EngineError::Config("layernorm_epsilon must be positive".into()));
        }
        if self.position_scheme == PositionScheme::Rotary {
            if !self.head_dim().is_multiple_of(2) {
                return Err(EngineError::Config("rotary positions need an even head_dim".into()));
            }
            match self.rope_theta {
                Some(theta) if theta.is_finite() && theta > 0.0 => {}
                _ => return Err(EngineError::Config("rotary positions need rope_theta > 0".into())),
            }
        }
        if let Some(bos) = self.bos_token_id {
            if bos as usize >= self.vocab_size {
                return Err(EngineError::Config(format!(
                    "bos_token_id {bos} outside vocabulary of {}",
                    self.vocab_size
                )));
            }
        }
        Ok(())
    }
}
