// SPDX-License-Identifier: MIT OR Apache-2.0

//! Deterministic CPU inference for small decoder-only transformers.
//!
//! The engine hosts GPT-2-style pre-norm decoders (learned absolute
//! positions, GELU MLP, LayerNorm) and rotary / SiLU-gated variants
//! (RMSNorm, LLaMA-style without grouped-query attention). Besides logits it
//! exposes two hooks used by the localization toolkit:
//!
//! - **capture**: last-token values of every unit at the requested sites
//!   (`residual`, `attn_out`, `mlp_out`), in [`UnitId`] order;
//! - **ablation**: overwrite a set of units with zero or a scalar while the
//!   forward pass runs.
//!
//! Weights are immutable after load and can be shared across threads; every
//! forward pass owns its scratch buffers.

pub mod ablation;
pub mod cache;
pub mod config;
pub mod error;
pub mod model;
pub mod scoring;
pub mod tokenizer;
pub mod units;
pub mod weights;

pub use ablation::{AblationMode, AblationSpec, Application};
pub use cache::{ActivationCacheHeader, ActivationPair};
pub use config::{Activation, ModelConfig, NormKind, PositionScheme};
pub use error::{EngineError, Result};
pub use model::{ForwardOutput, Model};
pub use scoring::LanguageModel;
pub use tokenizer::Tokenizer;
pub use units::{Site, UnitId, UnitSpace};
pub use weights::ModelWeights;
