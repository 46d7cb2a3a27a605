// SPDX-License-Identifier: MIT OR Apache-2.0

//! Minimal-pair benchmarks: loading, fold splits and control datasets.
//!
//! The input layout is BLiMP's: one JSONL file per phenomenon (or a single
//! file holding many), each line an object with `sentence_good`,
//! `sentence_bad` and `UID`. `pairID`, `linguistics_term` and `language`
//! are used when present. Categories come from a sidecar map (JSON or TOML,
//! `uid -> category`) and fall back to the record's `linguistics_term`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Schema identifier recorded on every loaded benchmark.
pub const BLIMP_SCHEMA: &str = "blimp-jsonl-v1";

/// Matching tolerances for lexical substitution.
pub const ZIPF_TOLERANCE: f64 = 1.0;
pub const LENGTH_TOLERANCE: usize = 3;

// absorbs representation error in decimal zipf values such as 5.2 - 4.2
const TOLERANCE_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MinimalPair {
    pub pair_id: String,
    pub sentence_good: String,
    pub sentence_bad: String,
}

impl MinimalPair {
    pub fn new(
        pair_id: impl Into<String>,
        sentence_good: impl Into<String>,
        sentence_bad: impl Into<String>,
    ) -> std::result::Result<Self, String> {
        let pair = Self {
            pair_id: pair_id.into(),
            sentence_good: sentence_good.into(),
            sentence_bad: sentence_bad.into(),
        };
        if pair.sentence_good.is_empty() || pair.sentence_bad.is_empty() {
            return Err("empty sentence".into());
        }
        if pair.sentence_good == pair.sentence_bad {
            return Err("grammatical and ungrammatical sentences are identical".into());
        }
        Ok(pair)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phenomenon {
    pub uid: String,
    pub category: String,
    pub language: String,
    pub pairs: Vec<MinimalPair>,
}

impl Phenomenon {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn sentence_pairs(&self) -> Vec<(&str, &str)> {
        self.pairs
            .iter()
            .map(|p| (p.sentence_good.as_str(), p.sentence_bad.as_str()))
            .collect()
    }

    fn with_pairs(&self, pairs: Vec<MinimalPair>) -> Self {
        Self {
            uid: self.uid.clone(),
            category: self.category.clone(),
            language: self.language.clone(),
            pairs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub sources: Vec<PathBuf>,
    /// Hex sha256 over the source bytes (and the category map, if any).
    pub content_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Benchmark {
    pub name: String,
    pub schema: String,
    pub phenomena: Vec<Phenomenon>,
    pub provenance: Provenance,
}

impl Benchmark {
    pub fn phenomenon(&self, uid: &str) -> Option<&Phenomenon> {
        self.phenomena.iter().find(|p| p.uid == uid)
    }

    pub fn content_hash(&self) -> &str {
        &self.provenance.content_hash
    }

    /// `uid -> category` for every phenomenon.
    pub fn categories(&self) -> BTreeMap<String, String> {
        self.phenomena
            .iter()
            .map(|p| (p.uid.clone(), p.category.clone()))
            .collect()
    }

    /// Distinct categories, sorted.
    pub fn category_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.phenomena.iter().map(|p| p.category.clone()).collect();
        names.sort();
        names.dedup();
        names
    }

    pub fn n_pairs(&self) -> usize {
        self.phenomena.iter().map(Phenomenon::len).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PartOfSpeech {
    Noun,
    Verb,
}

impl std::str::FromStr for PartOfSpeech {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "noun" | "n" => Ok(Self::Noun),
            "verb" | "v" => Ok(Self::Verb),
            other => Err(format!("unknown part of speech `{other}`")),
        }
    }
}

impl std::fmt::Display for PartOfSpeech {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Noun => "noun",
            Self::Verb => "verb",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LexiconEntry {
    pub lemma: String,
    pub pos: PartOfSpeech,
    pub zipf: f64,
    pub length: usize,
}

impl LexiconEntry {
    pub fn new(lemma: impl Into<String>, pos: PartOfSpeech, zipf: f64) -> std::result::Result<Self, String> {
        let lemma = lemma.into();
        let length = lemma.chars().count();
        let e = Self {
            lemma,
            pos,
            zipf,
            length,
        };
        e.validate()?;
        Ok(e)
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if !self.zipf.is_finite() {
            return Err(format!("`{}`: zipf not finite", self.lemma));
        }
        if self.length == 0 || self.length != self.lemma.chars().count() {
            return Err(format!(
                "`{}`: length {} does not match {} characters",
                self.lemma,
                self.length,
                self.lemma.chars().count()
            ));
        }
        Ok(())
    }
}

/// Span of the first noun or verb of a grammatical sentence, as UTF-8 byte
/// offsets `[span_start, span_end)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenAnnotation {
    pub pair_id: String,
    pub span_start: usize,
    pub span_end: usize,
    pub pos: PartOfSpeech,
    pub zipf: f64,
    pub length: usize,
}

/// Annotations keyed by `(pair_id, pos)`.
pub type Annotations = HashMap<(String, PartOfSpeech), TokenAnnotation>;

#[derive(Debug, Deserialize)]
struct RawRecord {
    sentence_good: Option<String>,
    sentence_bad: Option<String>,
    #[serde(rename = "UID")]
    uid: Option<String>,
    #[serde(rename = "pairID", default)]
    pair_id: Option<serde_json::Value>,
    #[serde(default)]
    linguistics_term: Option<String>,
    #[serde(default)]
    language: Option<String>,
}

#[derive(Debug, Clone)]
pub struct LoadOptions {
    pub schema: String,
    pub category_map: Option<PathBuf>,
    /// When set, every phenomenon needs an explicit entry in the category map.
    pub require_category_map: bool,
    pub default_language: String,
    pub name: Option<String>,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            schema: BLIMP_SCHEMA.to_string(),
            category_map: None,
            require_category_map: false,
            default_language: "en".to_string(),
            name: None,
        }
    }
}

fn read_to_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Reads a `uid -> category` map from JSON or TOML (picked by extension).
pub fn load_category_map(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = read_to_string(path)?;
    let is_toml = path.extension().is_some_and(|e| e == "toml");
    let parsed = if is_toml {
        toml::from_str::<BTreeMap<String, String>>(&text).map_err(|e| e.to_string())
    } else {
        serde_json::from_str::<BTreeMap<String, String>>(&text).map_err(|e| e.to_string())
    };
    parsed.map_err(|message| Error::MalformedRecord {
        path: path.to_path_buf(),
        line: 0,
        message,
    })
}

fn benchmark_files(path: &Path) -> Result<Vec<PathBuf>> {
    let meta = std::fs::metadata(path).map_err(|e| Error::io(path, e))?;
    if meta.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut files = Vec::new();
    for entry in std::fs::read_dir(path).map_err(|e| Error::io(path, e))? {
        let entry = entry.map_err(|e| Error::io(path, e))?;
        let p = entry.path();
        if p.is_file() && p.extension().is_some_and(|e| e == "jsonl") {
            files.push(p);
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(Error::NoRecords(path.to_path_buf()));
    }
    Ok(files)
}

/// Loads a BLiMP-format benchmark from a `.jsonl` file or a directory of
/// them (read in file-name order).
///
/// Phenomena appear in order of first occurrence; pairs keep file order.
/// A uid spread over two files is rejected as a duplicate.
pub fn load_benchmark(path: impl AsRef<Path>, options: &LoadOptions) -> Result<Benchmark> {
    let path = path.as_ref();
    if options.schema != BLIMP_SCHEMA && options.schema != "blimp" {
        return Err(Error::InvalidArgument(format!(
            "unknown benchmark schema `{}`",
            options.schema
        )));
    }
    let files = benchmark_files(path)?;
    let category_map = match &options.category_map {
        Some(p) => Some(load_category_map(p)?),
        None => None,
    };

    let mut hasher = Sha256::new();
    hasher.update(BLIMP_SCHEMA.as_bytes());
    let mut phenomena: Vec<Phenomenon> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut owner: HashMap<String, PathBuf> = HashMap::new();
    let mut fallback_category: HashMap<String, String> = HashMap::new();

    for file in &files {
        let text = read_to_string(file)?;
        let name = file
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        hasher.update((name.len() as u64).to_le_bytes());
        hasher.update(name.as_bytes());
        hasher.update((text.len() as u64).to_le_bytes());
        hasher.update(text.as_bytes());

        let mut seen_in_file = 0usize;
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let malformed = |message: String| Error::MalformedRecord {
                path: file.clone(),
                line: lineno + 1,
                message,
            };
            let rec: RawRecord = serde_json::from_str(line).map_err(|e| malformed(e.to_string()))?;
            let good = rec
                .sentence_good
                .ok_or_else(|| malformed("missing `sentence_good`".into()))?;
            let bad = rec
                .sentence_bad
                .ok_or_else(|| malformed("missing `sentence_bad`".into()))?;
            let uid = rec.uid.ok_or_else(|| malformed("missing `UID`".into()))?;
            if uid.is_empty() {
                return Err(malformed("empty `UID`".into()));
            }
            let local_id = match rec.pair_id {
                Some(serde_json::Value::String(s)) => s,
                Some(serde_json::Value::Number(n)) => n.to_string(),
                Some(other) => return Err(malformed(format!("bad `pairID` {other}"))),
                None => lineno.to_string(),
            };
            let pair = MinimalPair::new(format!("{uid}/{local_id}"), good, bad).map_err(malformed)?;

            match owner.get(&uid) {
                Some(f) if f != file => return Err(Error::DuplicatePhenomenon(uid)),
                _ => {}
            }
            let slot = match index.get(&uid) {
                Some(&i) => i,
                None => {
                    owner.insert(uid.clone(), file.clone());
                    index.insert(uid.clone(), phenomena.len());
                    phenomena.push(Phenomenon {
                        uid: uid.clone(),
                        category: String::new(),
                        language: rec.language.clone().unwrap_or_else(|| options.default_language.clone()),
                        pairs: Vec::new(),
                    });
                    phenomena.len() - 1
                }
            };
            if let Some(term) = rec.linguistics_term {
                fallback_category.entry(uid.clone()).or_insert(term);
            }
            phenomena[slot].pairs.push(pair);
            seen_in_file += 1;
        }
        if seen_in_file == 0 {
            return Err(Error::NoRecords(file.clone()));
        }
    }

    for p in &mut phenomena {
        let mapped = category_map.as_ref().and_then(|m| m.get(&p.uid)).cloned();
        p.category = match mapped {
            Some(c) => c,
            None if options.require_category_map => return Err(Error::UnknownCategory(p.uid.clone())),
            None => fallback_category
                .get(&p.uid)
                .cloned()
                .ok_or_else(|| Error::UnknownCategory(p.uid.clone()))?,
        };
    }
    if let Some(map_path) = &options.category_map {
        let bytes = std::fs::read(map_path).map_err(|e| Error::io(map_path, e))?;
        hasher.update(b"categories");
        hasher.update(&bytes);
    }

    let mut sources = files;
    if let Some(p) = &options.category_map {
        sources.push(p.clone());
    }
    let name = options.name.clone().unwrap_or_else(|| {
        path.file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "benchmark".into())
    });
    Ok(Benchmark {
        name,
        schema: BLIMP_SCHEMA.to_string(),
        phenomena,
        provenance: Provenance {
            sources,
            content_hash: hex(&hasher.finalize()),
        },
    })
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Folds of one phenomenon plus the number of trailing pairs dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldSplit {
    pub folds: Vec<Phenomenon>,
    pub dropped: usize,
}

/// Splits a phenomenon into `f` equal folds.
///
/// Without a seed the folds are contiguous blocks in file order; with one,
/// the pairs are shuffled (ChaCha8) first. The `|pairs| mod f` pairs left
/// at the end are dropped.
pub fn split_folds(p: &Phenomenon, f: usize, seed: Option<u64>) -> Result<FoldSplit> {
    if f < 2 {
        return Err(Error::InvalidArgument(format!("fold count must be >= 2, got {f}")));
    }
    if p.pairs.len() < f {
        return Err(Error::TooSmall {
            uid: p.uid.clone(),
            message: format!("{} pairs cannot fill {f} folds", p.pairs.len()),
        });
    }
    let mut order: Vec<usize> = (0..p.pairs.len()).collect();
    if let Some(seed) = seed {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    let size = p.pairs.len() / f;
    let folds = order[..size * f]
        .chunks(size)
        .map(|chunk| p.with_pairs(chunk.iter().map(|&i| p.pairs[i].clone()).collect()))
        .collect();
    Ok(FoldSplit {
        folds,
        dropped: p.pairs.len() - size * f,
    })
}

/// Per-phenomenon seed so phenomena are shuffled independently.
fn derived_seed(seed: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(label.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

fn derived_provenance(b: &Benchmark, tag: &str) -> Provenance {
    let mut h = Sha256::new();
    h.update(tag.as_bytes());
    h.update(b.provenance.content_hash.as_bytes());
    Provenance {
        sources: b.provenance.sources.clone(),
        content_hash: hex(&h.finalize()),
    }
}

/// Builds the label-shuffled control benchmark: per phenomenon, the distinct
/// grammatical sentences are shuffled and paired up, the second of each
/// pair arbitrarily playing the ungrammatical role.
///
/// Duplicate grammatical sentences are kept once. With an odd count the
/// last shuffled sentence is dropped.
pub fn make_blimp_control(b: &Benchmark, seed: u64) -> Result<Benchmark> {
    let mut phenomena = Vec::with_capacity(b.phenomena.len());
    for p in &b.phenomena {
        let mut seen = HashSet::new();
        let mut sentences: Vec<&str> = p
            .pairs
            .iter()
            .map(|q| q.sentence_good.as_str())
            .filter(|s| seen.insert(*s))
            .collect();
        if sentences.len() < 4 {
            return Err(Error::TooSmall {
                uid: p.uid.clone(),
                message: format!("{} distinct grammatical sentences, need at least 4", sentences.len()),
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derived_seed(seed, &p.uid));
        sentences.shuffle(&mut rng);
        if sentences.len() % 2 == 1 {
            log::warn!("{}: odd number of grammatical sentences, dropping one", p.uid);
            sentences.pop();
        }
        let uid = format!("{}_control", p.uid);
        let pairs = sentences
            .chunks(2)
            .enumerate()
            .map(|(i, two)| MinimalPair {
                pair_id: format!("{uid}/{i}"),
                sentence_good: two[0].to_string(),
                sentence_bad: two[1].to_string(),
            })
            .collect();
        phenomena.push(Phenomenon {
            uid,
            category: p.category.clone(),
            language: p.language.clone(),
            pairs,
        });
    }
    Ok(Benchmark {
        name: format!("{}-control", b.name),
        schema: b.schema.clone(),
        phenomena,
        provenance: derived_provenance(b, &format!("control:{seed}")),
    })
}

/// Reads a lexicon TSV with columns `lemma, pos, zipf, length` (header
/// optional).
pub fn load_lexicon(path: impl AsRef<Path>) -> Result<Vec<LexiconEntry>> {
    let path = path.as_ref();
    let text = read_to_string(path)?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() || (lineno == 0 && line.starts_with("lemma")) {
            continue;
        }
        let malformed = |message: String| Error::MalformedRecord {
            path: path.to_path_buf(),
            line: lineno + 1,
            message,
        };
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 4 {
            return Err(malformed(format!("expected 4 columns, found {}", cols.len())));
        }
        let entry = LexiconEntry {
            lemma: cols[0].to_string(),
            pos: cols[1].parse().map_err(malformed)?,
            zipf: cols[2].trim().parse().map_err(|e| malformed(format!("zipf: {e}")))?,
            length: cols[3].trim().parse().map_err(|e| malformed(format!("length: {e}")))?,
        };
        entry.validate().map_err(malformed)?;
        out.push(entry);
    }
    Ok(out)
}

/// Reads the token-span annotation sidecar (JSONL).
pub fn load_annotations(path: impl AsRef<Path>) -> Result<Annotations> {
    let path = path.as_ref();
    let text = read_to_string(path)?;
    let mut out = Annotations::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let a: TokenAnnotation = serde_json::from_str(line).map_err(|e| Error::MalformedRecord {
            path: path.to_path_buf(),
            line: lineno + 1,
            message: e.to_string(),
        })?;
        out.insert((a.pair_id.clone(), a.pos), a);
    }
    Ok(out)
}

/// Whether `candidate` may replace a token with the given statistics.
pub fn within_tolerance(candidate: &LexiconEntry, zipf: f64, length: usize) -> bool {
    (candidate.zipf - zipf).abs() <= ZIPF_TOLERANCE + TOLERANCE_SLACK
        && candidate.length.abs_diff(length) <= LENGTH_TOLERANCE
}

fn match_case(original: &str, replacement: &str) -> String {
    let upper = original.chars().next().is_some_and(char::is_uppercase);
    let mut chars = replacement.chars();
    match chars.next() {
        Some(c) if upper => c.to_uppercase().chain(chars).collect(),
        _ => replacement.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LexControl {
    pub benchmark: Benchmark,
    /// Sampled sentences with no eligible substitute.
    pub skipped: usize,
    pub sampled: usize,
}

/// Builds the lexical-substitution control: for each phenomenon, samples
/// `per_phenomenon` grammatical sentences and pairs each with a copy whose
/// first `pos` token is replaced by a frequency- and length-matched lexicon
/// entry. All pairs form one shuffled pseudo-phenomenon
/// `blimp_lex_<pos>`.
pub fn make_blimp_lex(
    b: &Benchmark,
    lexicon: &[LexiconEntry],
    pos: PartOfSpeech,
    per_phenomenon: usize,
    seed: u64,
    annotations: &Annotations,
) -> Result<LexControl> {
    if per_phenomenon == 0 {
        return Err(Error::InvalidArgument("per_phenomenon must be >= 1".into()));
    }
    let pool: Vec<&LexiconEntry> = lexicon.iter().filter(|e| e.pos == pos).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derived_seed(seed, &format!("lex:{pos}")));
    let mut pairs = Vec::new();
    let mut skipped = 0usize;
    let mut sampled = 0usize;

    for p in &b.phenomena {
        let n = p.pairs.len().min(per_phenomenon);
        let picks = rand::seq::index::sample(&mut rng, p.pairs.len(), n);
        for i in picks.iter() {
            let pair = &p.pairs[i];
            sampled += 1;
            let key = (pair.pair_id.clone(), pos);
            let ann = annotations.get(&key).ok_or_else(|| Error::MissingAnnotation {
                pair_id: pair.pair_id.clone(),
                pos: pos.to_string(),
            })?;
            let s = &pair.sentence_good;
            if ann.span_start >= ann.span_end
                || ann.span_end > s.len()
                || !s.is_char_boundary(ann.span_start)
                || !s.is_char_boundary(ann.span_end)
            {
                return Err(Error::InvalidArgument(format!(
                    "annotation span {}..{} invalid for `{}`",
                    ann.span_start, ann.span_end, pair.pair_id
                )));
            }
            let original = &s[ann.span_start..ann.span_end];
            let candidates: Vec<&LexiconEntry> = pool
                .iter()
                .copied()
                .filter(|c| c.lemma.to_lowercase() != original.to_lowercase())
                .filter(|c| within_tolerance(c, ann.zipf, ann.length))
                .collect();
            if candidates.is_empty() {
                skipped += 1;
                continue;
            }
            let chosen = candidates[rng.gen_range(0..candidates.len())];
            let replaced = format!(
                "{}{}{}",
                &s[..ann.span_start],
                match_case(original, &chosen.lemma),
                &s[ann.span_end..]
            );
            if replaced == *s {
                skipped += 1;
                continue;
            }
            pairs.push((pair.pair_id.clone(), s.clone(), replaced));
        }
    }
    if skipped > 0 {
        log::warn!("lexical control ({pos}): {skipped} of {sampled} sampled sentences had no candidate");
    }
    pairs.shuffle(&mut rng);
    let uid = format!("blimp_lex_{pos}");
    let phenomenon = Phenomenon {
        uid: uid.clone(),
        category: "lexical_control".into(),
        language: b
            .phenomena
            .first()
            .map(|p| p.language.clone())
            .unwrap_or_else(|| "en".into()),
        pairs: pairs
            .into_iter()
            .map(|(source, good, bad)| MinimalPair {
                pair_id: format!("{uid}/{source}"),
                sentence_good: good,
                sentence_bad: bad,
            })
            .collect(),
    };
    if phenomenon.pairs.is_empty() {
        return Err(Error::TooSmall {
            uid,
            message: "no sentence had an eligible substitute".into(),
        });
    }
    Ok(LexControl {
        benchmark: Benchmark {
            name: format!("{}-lex-{pos}", b.name),
            schema: b.schema.clone(),
            phenomena: vec![phenomenon],
            provenance: derived_provenance(b, &format!("lex:{pos}:{per_phenomenon}:{seed}")),
        },
        skipped,
        sampled,
    })
}
