// SPDX-License-Identifier: MIT OR Apache-2.0

//! Cross-language comparisons: unit overlap against typological syntactic
//! similarity, and agreement-unit overlap between two benchmarks.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use synloc_engine::Site;

use crate::analysis::overlap_pct;
use crate::corpus::Benchmark;
use crate::error::{Error, Result};
use crate::localizer::{localize_on_fold, UnitSet};
use crate::session::{FoldSpec, Session};
use crate::stats::{fit_line, mean, LineFit};

/// Marker for a missing feature value.
pub const MISSING: &str = "--";
/// Similarities this close to 1 between distinct vectors are treated as
/// data artifacts.
pub const SPURIOUS_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanguageFeatures {
    pub language: String,
    /// `None` marks a missing value.
    pub features: Vec<Option<f64>>,
    pub complete: bool,
}

impl LanguageFeatures {
    pub fn new(language: impl Into<String>, features: Vec<Option<f64>>) -> Self {
        let complete = features.iter().all(Option::is_some);
        Self {
            language: language.into(),
            features,
            complete,
        }
    }

    pub fn dense(language: impl Into<String>, values: &[f64]) -> Self {
        Self::new(language, values.iter().map(|&v| Some(v)).collect())
    }

    fn values(&self) -> Result<Vec<f64>> {
        self.features
            .iter()
            .map(|v| v.ok_or_else(|| Error::InvalidArgument(format!("`{}` has missing features", self.language))))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub languages: Vec<LanguageFeatures>,
    pub dropped_incomplete: usize,
}

fn delimiter_for(path: &Path, header: &str) -> u8 {
    if path.extension().is_some_and(|e| e == "tsv") || header.contains('\t') {
        b'\t'
    } else {
        b','
    }
}

/// Reads `lang, f1 … fn` rows (CSV or TSV). Values must lie in `[0, 1]`;
/// `--` (or an empty cell) marks a missing value.
pub fn load_feature_vectors(path: impl AsRef<Path>, require_complete: bool) -> Result<FeatureTable> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let header = text.lines().next().unwrap_or_default();
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter_for(path, header))
        .has_headers(true)
        .from_reader(text.as_bytes());
    let width = reader.headers()?.len();
    if width < 2 {
        return Err(Error::MalformedRecord {
            path: path.to_path_buf(),
            line: 1,
            message: "need a language column and at least one feature".into(),
        });
    }
    let mut seen = HashSet::new();
    let mut all = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let line = i + 2;
        let malformed = |message: String| Error::MalformedRecord {
            path: path.to_path_buf(),
            line,
            message,
        };
        let row = row.map_err(|e| malformed(e.to_string()))?;
        if row.len() != width {
            return Err(malformed(format!("expected {width} columns, found {}", row.len())));
        }
        let lang = row[0].trim().to_string();
        if lang.is_empty() {
            return Err(malformed("empty language code".into()));
        }
        if !seen.insert(lang.clone()) {
            return Err(malformed(format!("duplicate language `{lang}`")));
        }
        let features = row
            .iter()
            .skip(1)
            .map(|cell| {
                let cell = cell.trim();
                if cell == MISSING || cell.is_empty() {
                    return Ok(None);
                }
                let v: f64 = cell.parse().map_err(|e| malformed(format!("`{cell}`: {e}")))?;
                if !(0.0..=1.0).contains(&v) {
                    return Err(malformed(format!("feature value {v} outside [0, 1]")));
                }
                Ok(Some(v))
            })
            .collect::<Result<Vec<_>>>()?;
        all.push(LanguageFeatures::new(lang, features));
    }
    let total = all.len();
    if require_complete {
        all.retain(|l| l.complete);
    }
    if all.is_empty() {
        log::warn!("{}: no usable language rows", path.display());
    }
    Ok(FeatureTable {
        dropped_incomplete: total - all.len(),
        languages: all,
    })
}

/// Cosine similarity (one minus cosine distance).
pub fn syntactic_similarity(a: &LanguageFeatures, b: &LanguageFeatures) -> Result<f64> {
    let (x, y) = (a.values()?, b.values()?);
    if x.len() != y.len() {
        return Err(Error::InvalidArgument(format!(
            "feature lengths differ: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    let dot: f64 = x.iter().zip(&y).map(|(p, q)| p * q).sum();
    let nx = x.iter().map(|v| v * v).sum::<f64>();
    let ny = y.iter().map(|v| v * v).sum::<f64>();
    if nx == 0.0 || ny == 0.0 {
        return Err(Error::Degenerate(format!(
            "zero feature vector for `{}`",
            if nx == 0.0 { &a.language } else { &b.language }
        )));
    }
    // sqrt(fl(s*s)) == s, so identical vectors give exactly 1
    Ok((dot / (nx * ny).sqrt()).clamp(-1.0, 1.0))
}

/// Externally computed distances, `(lang_a, lang_b) -> distance` with the
/// pair stored in sorted order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DistanceTable(BTreeMap<(String, String), f64>);

impl DistanceTable {
    pub fn insert(&mut self, a: &str, b: &str, distance: f64) {
        self.0.insert(ordered(a, b), distance);
    }

    pub fn get(&self, a: &str, b: &str) -> Option<f64> {
        self.0.get(&ordered(a, b)).copied()
    }

    /// Reads `lang_a, lang_b, distance` rows (CSV with header).
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let header = text.lines().next().unwrap_or_default();
        let mut reader = csv::ReaderBuilder::new()
            .delimiter(delimiter_for(path, header))
            .from_reader(text.as_bytes());
        let mut table = Self::default();
        for (i, row) in reader.records().enumerate() {
            let malformed = |message: String| Error::MalformedRecord {
                path: path.to_path_buf(),
                line: i + 2,
                message,
            };
            let row = row.map_err(|e| malformed(e.to_string()))?;
            if row.len() != 3 {
                return Err(malformed(format!("expected 3 columns, found {}", row.len())));
            }
            let d: f64 = row[2].trim().parse().map_err(|e| malformed(format!("distance: {e}")))?;
            table.insert(row[0].trim(), row[1].trim(), d);
        }
        Ok(table)
    }
}

fn ordered(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanguagePairPoint {
    pub lang_a: String,
    pub lang_b: String,
    pub similarity: f64,
    pub overlap_pct: f64,
    pub excluded: bool,
    pub reason: Option<String>,
}

/// Marks pairs whose similarity is (numerically) 1 although their feature
/// vectors differ. Returns the number excluded.
pub fn filter_spurious(points: &mut [LanguagePairPoint], features: &[LanguageFeatures]) -> usize {
    let lookup: BTreeMap<&str, &LanguageFeatures> = features.iter().map(|f| (f.language.as_str(), f)).collect();
    let mut count = 0;
    for p in points.iter_mut() {
        if (p.similarity - 1.0).abs() > SPURIOUS_TOLERANCE {
            continue;
        }
        let (Some(a), Some(b)) = (lookup.get(p.lang_a.as_str()), lookup.get(p.lang_b.as_str())) else {
            continue;
        };
        if a.features != b.features {
            p.excluded = true;
            p.reason = Some("maximal similarity between different feature vectors".into());
            count += 1;
        }
    }
    count
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityRegression {
    pub points: Vec<LanguagePairPoint>,
    pub excluded: usize,
    /// Languages with a unit set but no complete feature vector.
    pub skipped_languages: Vec<String>,
    pub fit: Option<LineFit>,
    /// Why no line could be fit, if so.
    pub degenerate: Option<String>,
}

/// Scores every unordered language pair (lexicographic order) by feature
/// similarity and unit overlap, drops spurious pairs, and fits a line of
/// overlap against similarity.
pub fn overlap_vs_similarity(
    unit_sets: &[(String, UnitSet)],
    features: &[LanguageFeatures],
    precomputed: Option<&DistanceTable>,
) -> Result<SimilarityRegression> {
    let lookup: BTreeMap<&str, &LanguageFeatures> = features
        .iter()
        .filter(|f| f.complete)
        .map(|f| (f.language.as_str(), f))
        .collect();
    let mut langs: Vec<(&str, &UnitSet)> = Vec::new();
    let mut skipped_languages = Vec::new();
    for (lang, set) in unit_sets {
        if lookup.contains_key(lang.as_str()) {
            langs.push((lang, set));
        } else {
            skipped_languages.push(lang.clone());
        }
    }
    langs.sort_by(|a, b| a.0.cmp(b.0));
    if langs.windows(2).any(|w| w[0].0 == w[1].0) {
        return Err(Error::InvalidArgument("duplicate language among unit sets".into()));
    }
    if langs.len() < 3 {
        return Err(Error::TooFewSamples(format!(
            "need at least 3 languages with features and unit sets, got {}",
            langs.len()
        )));
    }
    if let Some(k) = langs.iter().map(|l| l.1.k).find(|&k| k != langs[0].1.k) {
        return Err(Error::Incomparable(format!(
            "unit sets of different size ({} vs {k})",
            langs[0].1.k
        )));
    }

    let mut points = Vec::new();
    for i in 0..langs.len() {
        for j in i + 1..langs.len() {
            let (a, b) = (langs[i].0, langs[j].0);
            let similarity = match precomputed.and_then(|t| t.get(a, b)) {
                Some(d) => 1.0 - d,
                None => syntactic_similarity(lookup[a], lookup[b])?,
            };
            points.push(LanguagePairPoint {
                lang_a: a.to_string(),
                lang_b: b.to_string(),
                similarity,
                overlap_pct: overlap_pct(langs[i].1, langs[j].1)?.value_pct,
                excluded: false,
                reason: None,
            });
        }
    }
    let excluded = filter_spurious(&mut points, features);
    let kept: Vec<&LanguagePairPoint> = points.iter().filter(|p| !p.excluded).collect();
    let x: Vec<f64> = kept.iter().map(|p| p.similarity).collect();
    let y: Vec<f64> = kept.iter().map(|p| p.overlap_pct).collect();
    let (fit, degenerate) = match fit_line(&x, &y) {
        Ok(f) => (Some(f), None),
        Err(e @ (Error::Degenerate(_) | Error::TooFewSamples(_))) => (None, Some(e.to_string())),
        Err(e) => return Err(e),
    };
    Ok(SimilarityRegression {
        points,
        excluded,
        skipped_languages,
        fit,
        degenerate,
    })
}

/// A benchmark's phenomena localized, with their categories.
#[derive(Debug, Clone)]
pub struct LocalizedBenchmark {
    pub name: String,
    pub content_hash: String,
    pub sets: Vec<UnitSet>,
    pub categories: Vec<String>,
    pub agreement: Vec<String>,
}

impl LocalizedBenchmark {
    pub fn localize(
        session: &Session,
        b: &Benchmark,
        agreement: &[String],
        sites: &[Site],
        fraction: f64,
    ) -> Result<Self> {
        let sets = b
            .phenomena
            .iter()
            .map(|p| localize_on_fold(session, b.content_hash(), p, FoldSpec::full(), sites, fraction))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            name: b.name.clone(),
            content_hash: b.content_hash().to_string(),
            sets,
            categories: b.phenomena.iter().map(|p| p.category.clone()).collect(),
            agreement: agreement.to_vec(),
        })
    }

    fn is_agreement(&self, i: usize) -> bool {
        self.agreement.contains(&self.categories[i])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiveBar {
    pub category: String,
    pub within_pct: Option<f64>,
    pub cross_agreement_pct: Option<f64>,
    pub non_agreement_pct: Option<f64>,
    pub reference_agreement_pct: Option<f64>,
    pub reference_non_agreement_pct: Option<f64>,
    pub pair_counts: [usize; 5],
}

/// Five mean overlaps per native agreement category: within the category,
/// with the other native agreement categories, with native non-agreement
/// categories, and with the reference benchmark's agreement and
/// non-agreement categories.
///
/// When both sides are the same benchmark, the reference category matching
/// the native one is left out of the last two bars, so a self-comparison
/// reproduces the second and third.
pub fn cross_language_agreement_report(
    native: &LocalizedBenchmark,
    reference: &LocalizedBenchmark,
) -> Result<Vec<FiveBar>> {
    if native.agreement.is_empty() {
        return Err(Error::InvalidArgument("native agreement category set is empty".into()));
    }
    let same = native.content_hash == reference.content_hash;
    let mut out = Vec::new();
    for a in &native.agreement {
        let members: Vec<usize> = (0..native.sets.len()).filter(|&i| native.categories[i] == *a).collect();
        if members.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "agreement category `{a}` has no phenomena"
            )));
        }
        let mut bars: [Vec<f64>; 5] = Default::default();
        for (x, &i) in members.iter().enumerate() {
            for &j in &members[x + 1..] {
                bars[0].push(overlap_pct(&native.sets[i], &native.sets[j])?.value_pct);
            }
            for j in 0..native.sets.len() {
                if native.categories[j] == *a {
                    continue;
                }
                let v = overlap_pct(&native.sets[i], &native.sets[j])?.value_pct;
                bars[if native.is_agreement(j) { 1 } else { 2 }].push(v);
            }
            for j in 0..reference.sets.len() {
                if same && reference.categories[j] == *a {
                    continue;
                }
                let v = overlap_pct(&native.sets[i], &reference.sets[j])?.value_pct;
                bars[if reference.is_agreement(j) { 3 } else { 4 }].push(v);
            }
        }
        let m = |v: &Vec<f64>| (!v.is_empty()).then(|| mean(v));
        out.push(FiveBar {
            category: a.clone(),
            within_pct: m(&bars[0]),
            cross_agreement_pct: m(&bars[1]),
            non_agreement_pct: m(&bars[2]),
            reference_agreement_pct: m(&bars[3]),
            reference_non_agreement_pct: m(&bars[4]),
            pair_counts: [
                bars[0].len(),
                bars[1].len(),
                bars[2].len(),
                bars[3].len(),
                bars[4].len(),
            ],
        });
    }
    Ok(out)
}
