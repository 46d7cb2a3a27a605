// SPDX-License-Identifier: MIT OR Apache-2.0

#![allow(dead_code)]

use std::collections::HashMap;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use synloc_engine::weights::RawTensor;
use synloc_engine::{Activation, ModelConfig, ModelWeights, NormKind, PositionScheme};

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn gpt2_config(n_layers: usize, hidden: usize, vocab: usize) -> ModelConfig {
    ModelConfig {
        architecture: "gpt2".into(),
        n_layers,
        hidden,
        n_heads: 2,
        intermediate: 4 * hidden,
        vocab_size: vocab,
        max_positions: 16,
        layernorm_epsilon: 1e-5,
        activation: Activation::Gelu,
        position_scheme: PositionScheme::LearnedAbsolute,
        norm: NormKind::LayerNorm,
        attn_bias: true,
        mlp_bias: true,
        rope_theta: None,
        bos_token_id: Some(0),
    }
}

pub fn llama_config(n_layers: usize, hidden: usize, vocab: usize) -> ModelConfig {
    ModelConfig {
        architecture: "llama".into(),
        activation: Activation::SiluGated,
        position_scheme: PositionScheme::Rotary,
        norm: NormKind::RmsNorm,
        attn_bias: false,
        mlp_bias: false,
        rope_theta: Some(10_000.0),
        intermediate: 3 * hidden,
        ..gpt2_config(n_layers, hidden, vocab)
    }
}

/// Every tensor the config requires, filled by `fill(name, index)`.
pub fn tensors_with(cfg: &ModelConfig, mut fill: impl FnMut(&str, usize) -> f32) -> HashMap<String, RawTensor> {
    let h = cfg.hidden;
    let i = cfg.intermediate;
    let mut shapes: Vec<(String, Vec<usize>)> = vec![("embed.tokens".into(), vec![cfg.vocab_size, h])];
    if cfg.position_scheme == PositionScheme::LearnedAbsolute {
        shapes.push(("embed.positions".into(), vec![cfg.max_positions, h]));
    }
    let ln = cfg.norm == NormKind::LayerNorm;
    let norm = |shapes: &mut Vec<(String, Vec<usize>)>, p: &str| {
        shapes.push((format!("{p}.weight"), vec![h]));
        if ln {
            shapes.push((format!("{p}.bias"), vec![h]));
        }
    };
    for l in 0..cfg.n_layers {
        let p = format!("layers.{l}");
        norm(&mut shapes, &format!("{p}.norm1"));
        norm(&mut shapes, &format!("{p}.norm2"));
        for m in ["q", "k", "v", "o"] {
            shapes.push((format!("{p}.attn.{m}.weight"), vec![h, h]));
            if cfg.attn_bias {
                shapes.push((format!("{p}.attn.{m}.bias"), vec![h]));
            }
        }
        let mut mlp = vec![("up", vec![i, h]), ("down", vec![h, i])];
        if cfg.activation == Activation::SiluGated {
            mlp.push(("gate", vec![i, h]));
        }
        for (m, shape) in mlp {
            let out = shape[0];
            shapes.push((format!("{p}.mlp.{m}.weight"), shape));
            if cfg.mlp_bias {
                shapes.push((format!("{p}.mlp.{m}.bias"), vec![out]));
            }
        }
    }
    norm(&mut shapes, "final_norm");
    shapes.push(("unembed.weight".into(), vec![cfg.vocab_size, h]));

    shapes
        .into_iter()
        .map(|(name, shape)| {
            let n: usize = shape.iter().product();
            let data = (0..n).map(|j| fill(&name, j)).collect();
            (name, (shape, data))
        })
        .collect()
}

/// Random weights with norm gains near one.
pub fn random_weights(cfg: &ModelConfig, seed: u64, std: f32) -> ModelWeights {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t = tensors_with(cfg, |name, _| {
        let noise = rng.gen_range(-std..std);
        if name.ends_with("norm1.weight") || name.ends_with("norm2.weight") || name == "final_norm.weight" {
            1.0 + noise
        } else {
            noise
        }
    });
    ModelWeights::from_tensors(cfg.clone(), t).unwrap()
}
