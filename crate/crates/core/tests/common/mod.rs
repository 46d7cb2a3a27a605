// SPDX-License-Identifier: MIT OR Apache-2.0

#![allow(dead_code)]

use std::path::PathBuf;

use synloc_core::corpus::{load_benchmark, Benchmark, LoadOptions, Phenomenon};
use synloc_engine::LanguageModel;

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn fixture_lm() -> LanguageModel {
    let dir = fixtures().join("gpt2-tiny");
    LanguageModel::load(dir.join("model.safetensors"), &dir).expect("fixture model loads")
}

pub fn fixture_benchmark() -> Benchmark {
    let options = LoadOptions {
        category_map: Some(fixtures().join("blimp-synth.categories.json")),
        ..LoadOptions::default()
    };
    load_benchmark(fixtures().join("blimp-synth"), &options).expect("fixture benchmark loads")
}

/// The first `n` pairs of a phenomenon.
pub fn head(p: &Phenomenon, n: usize) -> Phenomenon {
    Phenomenon {
        pairs: p.pairs[..n.min(p.len())].to_vec(),
        ..p.clone()
    }
}
