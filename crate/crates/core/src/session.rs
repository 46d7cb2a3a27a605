// SPDX-License-Identifier: MIT OR Apache-2.0

//! A loaded model plus an optional on-disk activation cache.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use synloc_engine::{LanguageModel, Site, UnitSpace};

use crate::corpus::Phenomenon;
use crate::error::Result;
use crate::store::{ActivationCache, CacheKey};

/// Which slice of a phenomenon a set of activations came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FoldSpec {
    /// Zero-based fold index.
    pub index: usize,
    /// Number of folds; `1` means the whole phenomenon.
    pub count: usize,
    pub seed: Option<u64>,
}

impl FoldSpec {
    pub fn full() -> Self {
        Self {
            index: 0,
            count: 1,
            seed: None,
        }
    }

    pub fn new(index: usize, count: usize, seed: Option<u64>) -> Self {
        Self { index, count, seed }
    }

    pub fn label(&self) -> String {
        if self.count == 1 {
            return "full".into();
        }
        match self.seed {
            None => format!("fold{}of{}", self.index, self.count),
            Some(s) => format!("fold{}of{}-seed{}", self.index, self.count, s),
        }
    }
}

pub struct Session<'a> {
    lm: &'a LanguageModel,
    cache: Option<ActivationCache>,
}

impl<'a> Session<'a> {
    pub fn new(lm: &'a LanguageModel) -> Self {
        Self { lm, cache: None }
    }

    pub fn with_cache(lm: &'a LanguageModel, cache: ActivationCache) -> Self {
        Self { lm, cache: Some(cache) }
    }

    pub fn cache(&self) -> Option<&ActivationCache> {
        self.cache.as_ref()
    }

    pub fn lm(&self) -> &'a LanguageModel {
        self.lm
    }

    pub fn model_hash(&self) -> &str {
        self.lm.hash()
    }

    pub fn n_layers(&self) -> usize {
        self.lm.model().config().n_layers
    }

    pub fn unit_space(&self, sites: &[Site]) -> Result<UnitSpace> {
        Ok(self.lm.model().unit_space(sites)?)
    }

    /// Last-token activations of the grammatical and ungrammatical sentences
    /// of `p`, served from the cache when one is attached.
    pub fn activations(
        &self,
        benchmark_hash: &str,
        p: &Phenomenon,
        fold: FoldSpec,
        sites: &[Site],
    ) -> Result<(Array2<f32>, Array2<f32>)> {
        let space = self.unit_space(sites)?;
        let compute =
            || -> Result<(Array2<f32>, Array2<f32>)> { Ok(self.lm.capture_pairs(&p.sentence_pairs(), space.sites())?) };
        match &self.cache {
            None => compute(),
            Some(cache) => {
                let key = CacheKey {
                    model_hash: self.model_hash().to_string(),
                    benchmark_hash: benchmark_hash.to_string(),
                    phenomenon_uid: p.uid.clone(),
                    fold,
                    sites: space.sites_label(),
                    n_pairs: p.len(),
                };
                cache.get_or_compute(&key, &space, compute)
            }
        }
    }
}
