// SPDX-License-Identifier: MIT OR Apache-2.0

//! Single-sequence forward pass with capture and ablation hooks.
//!
//! Per block (pre-norm):
//!
//! ```text
//! a = o(attn(norm1(x)))        <- attn_out  (ablate, then capture)
//! x = x + a
//! m = down(act(up(norm2(x))))  <- mlp_out   (ablate, then capture)
//! x = x + m                    <- residual  (ablate, then capture)
//! ```
//!
//! Accumulation is `f32` with a fixed summation order; LayerNorm/RMSNorm
//! statistics are accumulated in `f64`. Results depend only on the inputs,
//! never on thread count.

use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::Array2;

use crate::ablation::{AblationSpec, CompiledAblation};
use crate::config::{ModelConfig, NormKind, PositionScheme};
use crate::error::{EngineError, Result};
use crate::units::{Site, UnitSpace};
use crate::weights::{Linear, ModelWeights, Norm};

/// Result of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// `seq × vocab` logits, when requested.
    pub logits: Option<Array2<f32>>,
    /// Last-token unit values in the capture space's column order.
    pub captured: Option<Vec<f32>>,
}

/// An immutable, thread-shareable model.
#[derive(Debug)]
pub struct Model {
    weights: ModelWeights,
    rope: Option<RopeTable>,
    passes: AtomicU64,
}

#[derive(Debug)]
struct RopeTable {
    half: usize,
    cos: Vec<f32>,
    sin: Vec<f32>,
}

impl RopeTable {
    fn new(config: &ModelConfig, theta: f64) -> Self {
        let dim = config.head_dim();
        let half = dim / 2;
        let inv_freq: Vec<f32> = (0..half)
            .map(|i| (1.0 / theta.powf((2 * i) as f64 / dim as f64)) as f32)
            .collect();
        let mut cos = Vec::with_capacity(config.max_positions * half);
        let mut sin = Vec::with_capacity(config.max_positions * half);
        for p in 0..config.max_positions {
            for &f in &inv_freq {
                let angle = p as f32 * f;
                cos.push((angle as f64).cos() as f32);
                sin.push((angle as f64).sin() as f32);
            }
        }
        Self { half, cos, sin }
    }

    /// Rotate-half rotary embedding over every head of a `seq × hidden` buffer.
    fn apply(&self, buf: &mut [f32], seq: usize, n_heads: usize) {
        let dim = self.half * 2;
        let hidden = dim * n_heads;
        for t in 0..seq {
            let cos = &self.cos[t * self.half..(t + 1) * self.half];
            let sin = &self.sin[t * self.half..(t + 1) * self.half];
            for head in 0..n_heads {
                let base = t * hidden + head * dim;
                for i in 0..self.half {
                    let a = buf[base + i];
                    let b = buf[base + i + self.half];
                    buf[base + i] = a * cos[i] - b * sin[i];
                    buf[base + i + self.half] = b * cos[i] + a * sin[i];
                }
            }
        }
    }
}

impl Model {
    pub fn new(weights: ModelWeights) -> Self {
        let rope = match weights.config.position_scheme {
            PositionScheme::Rotary => Some(RopeTable::new(
                &weights.config,
                weights.config.rope_theta.expect("validated config has rope_theta"),
            )),
            PositionScheme::LearnedAbsolute => None,
        };
        Self {
            weights,
            rope,
            passes: AtomicU64::new(0),
        }
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Ok(Self::new(ModelWeights::load(path)?))
    }

    pub fn config(&self) -> &ModelConfig {
        &self.weights.config
    }

    pub fn weights(&self) -> &ModelWeights {
        &self.weights
    }

    pub fn hash(&self) -> &str {
        self.weights.content_hash()
    }

    /// Number of forward passes executed so far.
    pub fn forward_passes(&self) -> u64 {
        self.passes.load(Ordering::Relaxed)
    }

    pub fn unit_space(&self, sites: &[Site]) -> Result<UnitSpace> {
        UnitSpace::new(sites, self.config().n_layers, self.config().hidden)
    }

    /// Per-position logits.
    pub fn forward_logits(&self, ids: &[u32], ablation: &AblationSpec) -> Result<Array2<f32>> {
        let out = self.forward(ids, ablation, None, true)?;
        Ok(out.logits.expect("logits requested"))
    }

    /// Full forward pass.
    ///
    /// `capture` selects the unit space whose last-token values are
    /// returned; `want_logits = false` skips the unembedding.
    pub fn forward(
        &self,
        ids: &[u32],
        ablation: &AblationSpec,
        capture: Option<&UnitSpace>,
        want_logits: bool,
    ) -> Result<ForwardOutput> {
        let cfg = &self.weights.config;
        let seq = ids.len();
        if seq == 0 {
            return Err(EngineError::EmptySequence);
        }
        if seq > cfg.max_positions {
            return Err(EngineError::SequenceTooLong {
                len: seq,
                max: cfg.max_positions,
            });
        }
        if let Some(&id) = ids.iter().find(|&&id| id as usize >= cfg.vocab_size) {
            return Err(EngineError::TokenOutOfRange {
                id,
                vocab: cfg.vocab_size,
            });
        }
        if let Some(space) = capture {
            if space.n_layers() != cfg.n_layers || space.hidden() != cfg.hidden {
                return Err(EngineError::Sites(format!(
                    "capture space is {}×{}, model is {}×{}",
                    space.n_layers(),
                    space.hidden(),
                    cfg.n_layers,
                    cfg.hidden
                )));
            }
        }
        let ablation = CompiledAblation::compile(ablation, cfg)?;
        self.passes.fetch_add(1, Ordering::Relaxed);

        let h = cfg.hidden;
        let inter = cfg.intermediate;
        let eps = cfg.layernorm_epsilon;
        let w = &self.weights;

        let mut x = vec![0f32; seq * h];
        for (t, &id) in ids.iter().enumerate() {
            let row = &mut x[t * h..(t + 1) * h];
            row.copy_from_slice(&w.tok_embed[id as usize * h..(id as usize + 1) * h]);
            if let Some(pos) = &w.pos_embed {
                for (r, p) in row.iter_mut().zip(&pos[t * h..(t + 1) * h]) {
                    *r += p;
                }
            }
        }

        let mut captured = capture.map(|space| vec![0f32; space.len()]);
        let mut record = |site: Site, layer: usize, buf: &[f32]| {
            if let (Some(space), Some(out)) = (capture, captured.as_mut()) {
                if let Some(offset) = space.block_offset(site, layer) {
                    out[offset..offset + h].copy_from_slice(&buf[(seq - 1) * h..seq * h]);
                }
            }
        };

        let mut normed = vec![0f32; seq * h];
        let mut q = vec![0f32; seq * h];
        let mut k = vec![0f32; seq * h];
        let mut v = vec![0f32; seq * h];
        let mut mixed = vec![0f32; seq * h];
        let mut branch = vec![0f32; seq * h];
        let mut up = vec![0f32; seq * inter];
        let mut gate = vec![0f32; seq * inter];
        let mut scores = vec![0f32; seq];

        for (layer, block) in w.blocks.iter().enumerate() {
            norm(&x, &block.norm1, cfg.norm, eps, &mut normed, h);
            linear(&normed, &block.q, &mut q);
            linear(&normed, &block.k, &mut k);
            linear(&normed, &block.v, &mut v);
            if let Some(rope) = &self.rope {
                rope.apply(&mut q, seq, cfg.n_heads);
                rope.apply(&mut k, seq, cfg.n_heads);
            }
            causal_attention(&q, &k, &v, &mut mixed, &mut scores, seq, cfg.n_heads, cfg.head_dim());
            linear(&mixed, &block.o, &mut branch);
            if let Some(ab) = &ablation {
                ab.apply(Site::AttnOut, layer, &mut branch, seq, h);
            }
            record(Site::AttnOut, layer, &branch);
            add_assign(&mut x, &branch);

            norm(&x, &block.norm2, cfg.norm, eps, &mut normed, h);
            linear(&normed, &block.up, &mut up);
            match &block.gate {
                Some(g) => {
                    linear(&normed, g, &mut gate);
                    for (u, g) in up.iter_mut().zip(&gate) {
                        *u *= silu(*g);
                    }
                }
                None => up.iter_mut().for_each(|u| *u = gelu_tanh(*u)),
            }
            linear(&up, &block.down, &mut branch);
            if let Some(ab) = &ablation {
                ab.apply(Site::MlpOut, layer, &mut branch, seq, h);
            }
            record(Site::MlpOut, layer, &branch);
            add_assign(&mut x, &branch);

            if let Some(ab) = &ablation {
                ab.apply(Site::Residual, layer, &mut x, seq, h);
            }
            record(Site::Residual, layer, &x);
        }

        let logits = if want_logits {
            norm(&x, &w.final_norm, cfg.norm, eps, &mut normed, h);
            let mut logits = vec![0f32; seq * cfg.vocab_size];
            linear(&normed, &w.unembed, &mut logits);
            Some(Array2::from_shape_vec((seq, cfg.vocab_size), logits).expect("shape matches"))
        } else {
            None
        };
        Ok(ForwardOutput { logits, captured })
    }
}

#[inline]
fn dot(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = [0f32; 8];
    let chunks = a.len() / 8;
    for i in 0..chunks {
        let (x, y) = (&a[i * 8..i * 8 + 8], &b[i * 8..i * 8 + 8]);
        for j in 0..8 {
            acc[j] += x[j] * y[j];
        }
    }
    let mut tail = 0f32;
    for i in chunks * 8..a.len() {
        tail += a[i] * b[i];
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// `out[t] = W · x[t] + b` for every row of a row-major `seq × in` input.
fn linear(x: &[f32], lin: &Linear, out: &mut [f32]) {
    let seq = x.len() / lin.in_dim;
    debug_assert_eq!(out.len(), seq * lin.out_dim);
    for t in 0..seq {
        let row = &x[t * lin.in_dim..(t + 1) * lin.in_dim];
        let dst = &mut out[t * lin.out_dim..(t + 1) * lin.out_dim];
        for (o, d) in dst.iter_mut().enumerate() {
            *d = dot(row, &lin.weight[o * lin.in_dim..(o + 1) * lin.in_dim]);
        }
        if let Some(bias) = &lin.bias {
            for (d, b) in dst.iter_mut().zip(bias) {
                *d += b;
            }
        }
    }
}

fn norm(x: &[f32], n: &Norm, kind: NormKind, eps: f64, out: &mut [f32], h: usize) {
    for (src, dst) in x.chunks_exact(h).zip(out.chunks_exact_mut(h)) {
        match kind {
            NormKind::LayerNorm => {
                let mean = src.iter().map(|&v| v as f64).sum::<f64>() / h as f64;
                let var = src.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / h as f64;
                let inv = 1.0 / (var + eps).sqrt();
                let bias = n.bias.as_deref();
                for i in 0..h {
                    let y = ((src[i] as f64 - mean) * inv) as f32 * n.weight[i];
                    dst[i] = y + bias.map_or(0.0, |b| b[i]);
                }
            }
            NormKind::RmsNorm => {
                let ms = src.iter().map(|&v| (v as f64).powi(2)).sum::<f64>() / h as f64;
                let inv = 1.0 / (ms + eps).sqrt();
                for i in 0..h {
                    dst[i] = (src[i] as f64 * inv) as f32 * n.weight[i];
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn causal_attention(
    q: &[f32],
    k: &[f32],
    v: &[f32],
    out: &mut [f32],
    scores: &mut [f32],
    seq: usize,
    n_heads: usize,
    head_dim: usize,
) {
    let hidden = n_heads * head_dim;
    let scale = 1.0 / (head_dim as f32).sqrt();
    for head in 0..n_heads {
        let off = head * head_dim;
        for t in 0..seq {
            let qt = &q[t * hidden + off..t * hidden + off + head_dim];
            let mut max = f32::NEG_INFINITY;
            for s in 0..=t {
                let ks = &k[s * hidden + off..s * hidden + off + head_dim];
                let score = dot(qt, ks) * scale;
                scores[s] = score;
                max = max.max(score);
            }
            let mut total = 0f32;
            for score in scores.iter_mut().take(t + 1) {
                *score = (*score - max).exp();
                total += *score;
            }
            let dst = &mut out[t * hidden + off..t * hidden + off + head_dim];
            dst.fill(0.0);
            for s in 0..=t {
                let p = scores[s] / total;
                let vs = &v[s * hidden + off..s * hidden + off + head_dim];
                for (d, &val) in dst.iter_mut().zip(vs) {
                    *d += p * val;
                }
            }
        }
    }
}

fn add_assign(x: &mut [f32], y: &[f32]) {
    for (a, b) in x.iter_mut().zip(y) {
        *a += b;
    }
}

#[inline]
fn gelu_tanh(x: f32) -> f32 {
    const C: f32 = 0.797_884_6; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

#[inline]
fn silu(x: f32) -> f32 {
    x / (1.0 + (-x).exp())
}
