// SPDX-License-Identifier: MIT OR Apache-2.0

//! Localization of syntax-responsive units in decoder-only language models.
//!
//! Units whose last-token activation magnitudes best separate grammatical
//! from ungrammatical sentences of a minimal-pair phenomenon are found with
//! a per-unit Welch t statistic and a top-k cut. On top of that the crate
//! measures fold consistency and cross-phenomenon overlap, tests causal
//! involvement through zero/mean ablation, and relates cross-lingual unit
//! overlap to syntactic similarity between languages.
//!
//! Module map:
//!
//! - [`corpus`]: benchmark ingestion, fold splits, control datasets
//! - [`localizer`]: Welch t statistics and top-k unit selection
//! - [`analysis`]: overlap, consistency, random baselines, category summaries
//! - [`evaluator`]: minimal-pair accuracy and ablation experiments
//! - [`crosslingual`]: typological similarity vs unit overlap
//! - [`store`]: unit-set files, activation caches, run manifests
//! - [`session`]: ties a model to an optional activation cache

pub mod analysis;
pub mod corpus;
pub mod crosslingual;
pub mod error;
pub mod evaluator;
pub mod localizer;
pub mod session;
pub mod stats;
pub mod store;

pub use error::{Error, ErrorKind, Result};
pub use session::{FoldSpec, Session};

/// Toolkit version recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
