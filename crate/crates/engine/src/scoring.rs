// SPDX-License-Identifier: MIT OR Apache-2.0

//! Sentence-level scoring and last-token activation capture.

use std::path::Path;

use ndarray::Array2;
use rayon::prelude::*;

use crate::ablation::AblationSpec;
use crate::error::{EngineError, Result};
use crate::model::Model;
use crate::tokenizer::Tokenizer;
use crate::units::{Site, UnitSpace};

/// A model paired with its tokenizer.
#[derive(Debug)]
pub struct LanguageModel {
    model: Model,
    tokenizer: Tokenizer,
}

impl LanguageModel {
    pub fn new(model: Model, tokenizer: Tokenizer) -> Result<Self> {
        if tokenizer.vocab_size() > model.config().vocab_size {
            return Err(EngineError::Tokenizer(format!(
                "tokenizer has {} ids, model vocabulary {}",
                tokenizer.vocab_size(),
                model.config().vocab_size
            )));
        }
        Ok(Self { model, tokenizer })
    }

    /// Loads `model.safetensors` from `model_path` (file) and the tokenizer
    /// files from `tokenizer_dir`.
    pub fn load(model_path: impl AsRef<Path>, tokenizer_dir: impl AsRef<Path>) -> Result<Self> {
        Self::new(Model::load(model_path)?, Tokenizer::from_dir(tokenizer_dir)?)
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn tokenizer(&self) -> &Tokenizer {
        &self.tokenizer
    }

    pub fn hash(&self) -> &str {
        self.model.hash()
    }

    /// Token ids fed to the model: BOS (when the checkpoint defines one)
    /// followed by the encoded text.
    pub fn encode_sentence(&self, text: &str) -> Vec<u32> {
        let mut ids = Vec::new();
        if let Some(bos) = self.model.config().bos_token_id {
            ids.push(bos);
        }
        ids.extend(self.tokenizer.encode(text));
        ids
    }

    /// Total log probability (nats) of the sentence's tokens, each
    /// conditioned on its prefix.
    ///
    /// Without a BOS token the first token is unscored.
    pub fn sentence_logprob(&self, text: &str, ablation: &AblationSpec) -> Result<f64> {
        let ids = self.encode_sentence(text);
        if ids.len() < 2 && self.model.config().bos_token_id.is_some() {
            return Err(EngineError::EmptySequence);
        }
        if ids.is_empty() {
            return Err(EngineError::EmptySequence);
        }
        let logits = self.model.forward_logits(&ids, ablation)?;
        Ok(sum_next_token_logprob(&logits, &ids))
    }

    /// Scores many sentences in parallel; output order follows input order.
    pub fn sentence_logprobs(&self, texts: &[&str], ablation: &AblationSpec) -> Result<Vec<f64>> {
        texts.par_iter().map(|t| self.sentence_logprob(t, ablation)).collect()
    }

    /// Last-token unit values for each sentence: an `n × U` matrix with
    /// columns in [`UnitSpace`] order.
    pub fn capture(&self, texts: &[&str], space: &UnitSpace) -> Result<Array2<f32>> {
        self.capture_with(texts, space, &AblationSpec::none())
    }

    pub fn capture_with(&self, texts: &[&str], space: &UnitSpace, ablation: &AblationSpec) -> Result<Array2<f32>> {
        let rows: Vec<Vec<f32>> = texts
            .par_iter()
            .map(|t| {
                let ids = self.encode_sentence(t);
                let out = self.model.forward(&ids, ablation, Some(space), false)?;
                Ok(out.captured.expect("capture requested"))
            })
            .collect::<Result<_>>()?;
        let mut data = Vec::with_capacity(rows.len() * space.len());
        for row in &rows {
            data.extend_from_slice(row);
        }
        Ok(Array2::from_shape_vec((rows.len(), space.len()), data).expect("row lengths match"))
    }

    /// Captures grammatical and ungrammatical sentences of a list of pairs.
    pub fn capture_pairs(&self, pairs: &[(&str, &str)], sites: &[Site]) -> Result<(Array2<f32>, Array2<f32>)> {
        if pairs.is_empty() {
            return Err(EngineError::EmptySequence);
        }
        let space = self.model.unit_space(sites)?;
        let good: Vec<&str> = pairs.iter().map(|p| p.0).collect();
        let bad: Vec<&str> = pairs.iter().map(|p| p.1).collect();
        Ok((self.capture(&good, &space)?, self.capture(&bad, &space)?))
    }
}

/// `Σ_{t≥1} log softmax(logits[t-1])[ids[t]]`, accumulated in `f64`.
pub fn sum_next_token_logprob(logits: &Array2<f32>, ids: &[u32]) -> f64 {
    let mut total = 0.0f64;
    for t in 1..ids.len() {
        let row = logits.row(t - 1);
        let max = row.iter().fold(f32::NEG_INFINITY, |m, &v| m.max(v)) as f64;
        let lse = row.iter().map(|&v| (v as f64 - max).exp()).sum::<f64>().ln() + max;
        total += row[ids[t] as usize] as f64 - lse;
    }
    total
}
