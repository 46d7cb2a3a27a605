// SPDX-License-Identifier: MIT OR Apache-2.0

//! Experiment configuration: defaults, then a TOML file, then flags.

use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};
use synloc_core::corpus::PartOfSpeech;
use synloc_core::evaluator::AblationKind;
use synloc_engine::units::parse_sites;
use synloc_engine::{Application, Site};

use crate::failure::Failure;

pub const CACHE_ENV: &str = "SYNLOC_CACHE_DIR";

/// Flags shared by every experiment command. Unset flags fall back to the
/// `--config` file, then to built-in defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// TOML file with any of the options below (flag names, `-` or `_`)
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Model weights: a `.safetensors` file or a directory holding `model.safetensors`
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Directory with `vocab.json` and `merges.txt` [default: the model's directory]
    #[arg(long)]
    pub tokenizer: Option<PathBuf>,
    /// Benchmark directory or JSONL file (repeatable)
    #[arg(long = "benchmark")]
    pub benchmarks: Vec<PathBuf>,
    /// `uid -> category` map (JSON or TOML) applied to every benchmark
    #[arg(long)]
    pub categories: Option<PathBuf>,
    /// Fraction of units kept, rounded down [default: 0.01]
    #[arg(long)]
    pub fraction: Option<f64>,
    /// Number of folds for cross-validation [default: 2]
    #[arg(long)]
    pub folds: Option<usize>,
    /// Seed for shuffling pairs before fold assignment [default: contiguous folds]
    #[arg(long)]
    pub fold_seed: Option<u64>,
    /// Comma-separated sites: residual, attn_out, mlp_out [default: residual]
    #[arg(long)]
    pub sites: Option<String>,
    /// Comma-separated seeds for random ablation arms [default: 0,1,2,3]
    #[arg(long)]
    pub seeds: Option<String>,
    /// Ablation mode: zero, mean or both [default: zero]
    #[arg(long)]
    pub mode: Option<String>,
    /// Sentence score: only `sum` (total log-probability) is supported
    #[arg(long)]
    pub score: Option<String>,
    /// Ablate at `all` positions or only the `last` [default: all]
    #[arg(long)]
    pub ablate_at: Option<String>,
    /// Seed for the label-shuffled control [default: 0]
    #[arg(long)]
    pub control_seed: Option<u64>,
    /// Lexicon TSV for the lexical-substitution control
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    /// First-noun/first-verb annotation sidecar for the lexical control
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    /// Sentences sampled per phenomenon for the lexical control [default: 100]
    #[arg(long)]
    pub lex_per_phenomenon: Option<usize>,
    /// Comma-separated agreement categories
    #[arg(long)]
    pub agreement: Option<String>,
    /// Reference benchmark for cross-language comparisons
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Category map for the reference benchmark
    #[arg(long)]
    pub reference_categories: Option<PathBuf>,
    /// Agreement categories of the reference benchmark [default: --agreement]
    #[arg(long)]
    pub reference_agreement: Option<String>,
    /// Syntactic feature table (`lang,f1..fn`, missing = `--`)
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Precomputed `lang_a,lang_b,distance` table overriding feature cosines
    #[arg(long)]
    pub distances: Option<PathBuf>,
    /// Phenomenon uid compared across languages
    #[arg(long)]
    pub phenomenon: Option<String>,
    /// Output root; runs land in `<out>/runs/<digest>/` [default: out]
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads [default: available parallelism]
    #[arg(long)]
    pub threads: Option<usize>,
    /// Activation cache directory [default: $SYNLOC_CACHE_DIR, else no cache]
    #[arg(long)]
    pub cache: Option<PathBuf>,
}

/// The config file mirrors the flags.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
struct FileConfig {
    model: Option<PathBuf>,
    tokenizer: Option<PathBuf>,
    #[serde(alias = "benchmark")]
    benchmarks: Option<Vec<PathBuf>>,
    categories: Option<PathBuf>,
    fraction: Option<f64>,
    folds: Option<usize>,
    fold_seed: Option<u64>,
    sites: Option<StrOrList>,
    seeds: Option<Vec<u64>>,
    mode: Option<String>,
    score: Option<String>,
    ablate_at: Option<String>,
    control_seed: Option<u64>,
    lexicon: Option<PathBuf>,
    annotations: Option<PathBuf>,
    lex_per_phenomenon: Option<usize>,
    agreement: Option<StrOrList>,
    reference: Option<PathBuf>,
    reference_categories: Option<PathBuf>,
    reference_agreement: Option<StrOrList>,
    features: Option<PathBuf>,
    distances: Option<PathBuf>,
    phenomenon: Option<String>,
    out: Option<PathBuf>,
    threads: Option<usize>,
    cache: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum StrOrList {
    Str(String),
    List(Vec<String>),
}

impl StrOrList {
    fn joined(self) -> String {
        match self {
            Self::Str(s) => s,
            Self::List(v) => v.join(","),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeSel {
    Zero,
    Mean,
    Both,
}

impl ModeSel {
    pub fn kinds(self) -> Vec<AblationKind> {
        match self {
            Self::Zero => vec![AblationKind::Zero],
            Self::Mean => vec![AblationKind::Mean],
            Self::Both => vec![AblationKind::Zero, AblationKind::Mean],
        }
    }
}

/// Fully resolved settings. Everything except `out`, `threads` and `cache`
/// is recorded in the run manifest.
#[derive(Debug, Clone, Serialize)]
pub struct ExperimentConfig {
    pub model: PathBuf,
    pub tokenizer: PathBuf,
    pub benchmarks: Vec<PathBuf>,
    pub categories: Option<PathBuf>,
    pub fraction: f64,
    pub folds: usize,
    pub fold_seed: Option<u64>,
    pub sites: Vec<Site>,
    pub seeds: Vec<u64>,
    pub mode: ModeSel,
    pub score: String,
    pub ablate_at: Application,
    pub control_seed: u64,
    pub lexicon: Option<PathBuf>,
    pub annotations: Option<PathBuf>,
    pub lex_per_phenomenon: usize,
    pub agreement: Vec<String>,
    pub reference: Option<PathBuf>,
    pub reference_categories: Option<PathBuf>,
    pub reference_agreement: Vec<String>,
    pub features: Option<PathBuf>,
    pub distances: Option<PathBuf>,
    pub phenomenon: Option<String>,
    #[serde(skip)]
    pub out: PathBuf,
    #[serde(skip)]
    pub threads: Option<usize>,
    #[serde(skip)]
    pub cache: Option<PathBuf>,
}

fn split_list(s: &str) -> Vec<String> {
    s.split(',')
        .map(str::trim)
        .filter(|x| !x.is_empty())
        .map(str::to_string)
        .collect()
}

fn parse_seeds(s: &str) -> Result<Vec<u64>, Failure> {
    split_list(s)
        .iter()
        .map(|x| {
            x.parse()
                .map_err(|_| Failure::config(format!("--seeds: `{x}` is not a non-negative integer")))
        })
        .collect()
}

fn must_exist(what: &str, p: &Path) -> Result<(), Failure> {
    if p.exists() {
        Ok(())
    } else {
        Err(Failure::config(format!("{what} `{}` does not exist", p.display())))
    }
}

impl ExperimentConfig {
    pub fn resolve(flags: &Flags) -> Result<Self, Failure> {
        Self::resolve_with_env(flags, std::env::var_os(CACHE_ENV).map(PathBuf::from))
    }

    pub fn resolve_with_env(flags: &Flags, env_cache: Option<PathBuf>) -> Result<Self, Failure> {
        let file = match &flags.config {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Failure::config(format!("cannot read config `{}`: {e}", p.display())))?;
                let parsed: FileConfig =
                    toml::from_str(&text).map_err(|e| Failure::config(format!("config `{}`: {e}", p.display())))?;
                parsed.rebase(p.parent().unwrap_or(Path::new(".")))
            }
            None => FileConfig::default(),
        };
        let f = flags.clone();

        let model = f
            .model
            .or(file.model)
            .ok_or_else(|| Failure::config("no model given (use --model or `model` in the config file)"))?;
        let model = if model.is_dir() {
            model.join("model.safetensors")
        } else {
            model
        };
        let tokenizer = f
            .tokenizer
            .or(file.tokenizer)
            .unwrap_or_else(|| model.parent().map(Path::to_path_buf).unwrap_or_default());
        let benchmarks = if f.benchmarks.is_empty() {
            file.benchmarks.unwrap_or_default()
        } else {
            f.benchmarks
        };

        let sites_spec = f
            .sites
            .or(file.sites.map(StrOrList::joined))
            .unwrap_or_else(|| "residual".into());
        let sites = parse_sites(&sites_spec).map_err(|e| Failure::config(format!("--sites: {e}")))?;
        let seeds = match f.seeds {
            Some(s) => parse_seeds(&s)?,
            None => file.seeds.unwrap_or_else(|| vec![0, 1, 2, 3]),
        };
        let mode = match f.mode.or(file.mode).as_deref().unwrap_or("zero") {
            "zero" => ModeSel::Zero,
            "mean" => ModeSel::Mean,
            "both" => ModeSel::Both,
            other => {
                return Err(Failure::config(format!(
                    "--mode: `{other}` (expected zero, mean or both)"
                )))
            }
        };
        let ablate_at: Application = f
            .ablate_at
            .or(file.ablate_at)
            .unwrap_or_else(|| "all".into())
            .parse()
            .map_err(|_| Failure::config("--ablate-at: expected `all` or `last`"))?;
        let agreement = split_list(
            &f.agreement
                .or(file.agreement.map(StrOrList::joined))
                .unwrap_or_default(),
        );
        let reference_agreement = match f
            .reference_agreement
            .or(file.reference_agreement.map(StrOrList::joined))
        {
            Some(s) => split_list(&s),
            None => agreement.clone(),
        };

        let cfg = Self {
            model,
            tokenizer,
            benchmarks,
            categories: f.categories.or(file.categories),
            fraction: f.fraction.or(file.fraction).unwrap_or(0.01),
            folds: f.folds.or(file.folds).unwrap_or(2),
            fold_seed: f.fold_seed.or(file.fold_seed),
            sites,
            seeds,
            mode,
            score: f.score.or(file.score).unwrap_or_else(|| "sum".into()),
            ablate_at,
            control_seed: f.control_seed.or(file.control_seed).unwrap_or(0),
            lexicon: f.lexicon.or(file.lexicon),
            annotations: f.annotations.or(file.annotations),
            lex_per_phenomenon: f.lex_per_phenomenon.or(file.lex_per_phenomenon).unwrap_or(100),
            agreement,
            reference: f.reference.or(file.reference),
            reference_categories: f.reference_categories.or(file.reference_categories),
            reference_agreement,
            features: f.features.or(file.features),
            distances: f.distances.or(file.distances),
            phenomenon: f.phenomenon.or(file.phenomenon),
            out: f.out.or(file.out).unwrap_or_else(|| PathBuf::from("out")),
            threads: f.threads.or(file.threads),
            cache: f.cache.or(file.cache).or(env_cache),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), Failure> {
        if !(0.0..=1.0).contains(&self.fraction) || self.fraction.is_nan() {
            return Err(Failure::config(format!(
                "--fraction must lie in [0, 1], got {}",
                self.fraction
            )));
        }
        if self.folds < 2 {
            return Err(Failure::config(format!(
                "--folds must be at least 2, got {}",
                self.folds
            )));
        }
        if self.score != "sum" {
            return Err(Failure::config(format!(
                "--score `{}` is not supported; sentences are scored by total log-probability (`sum`)",
                self.score
            )));
        }
        if self.threads == Some(0) {
            return Err(Failure::config("--threads must be at least 1"));
        }
        if self.benchmarks.is_empty() {
            return Err(Failure::config("no benchmark given (use --benchmark, repeatable)"));
        }
        must_exist("model", &self.model)?;
        must_exist("tokenizer directory", &self.tokenizer)?;
        for b in &self.benchmarks {
            must_exist("benchmark", b)?;
        }
        for (what, p) in [
            ("category map", &self.categories),
            ("lexicon", &self.lexicon),
            ("annotations", &self.annotations),
            ("reference benchmark", &self.reference),
            ("reference category map", &self.reference_categories),
            ("feature table", &self.features),
            ("distance table", &self.distances),
        ] {
            if let Some(p) = p {
                must_exist(what, p)?;
            }
        }
        Ok(())
    }

    pub fn sites_label(&self) -> Vec<String> {
        self.sites.iter().map(|s| s.as_str().to_string()).collect()
    }

    pub fn lex_parts(&self) -> Option<(&Path, &Path)> {
        Some((self.lexicon.as_deref()?, self.annotations.as_deref()?))
    }

    pub fn lex_pos() -> [PartOfSpeech; 2] {
        [PartOfSpeech::Noun, PartOfSpeech::Verb]
    }
}

impl FileConfig {
    /// Relative paths in a config file are relative to the file.
    fn rebase(mut self, base: &Path) -> Self {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(x) = p {
                if x.is_relative() {
                    *x = base.join(&*x);
                }
            }
        };
        for p in [
            &mut self.model,
            &mut self.tokenizer,
            &mut self.categories,
            &mut self.lexicon,
            &mut self.annotations,
            &mut self.reference,
            &mut self.reference_categories,
            &mut self.features,
            &mut self.distances,
            &mut self.out,
            &mut self.cache,
        ] {
            fix(p);
        }
        if let Some(bs) = &mut self.benchmarks {
            for b in bs.iter_mut() {
                if b.is_relative() {
                    *b = base.join(&*b);
                }
            }
        }
        self
    }
}
