// SPDX-License-Identifier: MIT OR Apache-2.0

//! Overlap statistics between unit sets: fold consistency, pairwise
//! phenomenon overlap, category and agreement summaries, random baselines
//! and site/layer breakdowns.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use synloc_engine::{Site, UnitId};

use crate::corpus::{split_folds, Phenomenon};
use crate::error::{Error, Result};
use crate::localizer::{localize_on_fold, UnitSet};
use crate::session::{FoldSpec, Session};
use crate::stats::{mean, sample_sd};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Operand {
    pub phenomenon_uid: String,
    pub fold: FoldSpec,
    pub k: usize,
}

impl Operand {
    fn of(s: &UnitSet) -> Self {
        Self {
            phenomenon_uid: s.provenance.phenomenon_uid.clone(),
            fold: s.provenance.fold,
            k: s.k,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapReport {
    pub value_pct: f64,
    pub numerator: usize,
    pub denominator: usize,
    /// Set sizes differed; the smallest was used as denominator.
    pub unequal_k: bool,
    pub operands: Vec<Operand>,
}

fn check_comparable(sets: &[&UnitSet]) -> Result<()> {
    let first = &sets[0].provenance;
    for s in &sets[1..] {
        let p = &s.provenance;
        if p.model_hash != first.model_hash {
            return Err(Error::Incomparable(format!(
                "model hashes differ ({} vs {})",
                first.model_hash, p.model_hash
            )));
        }
        if p.sites != first.sites || p.n_layers != first.n_layers || p.hidden != first.hidden {
            return Err(Error::Incomparable("unit spaces differ".into()));
        }
    }
    Ok(())
}

/// `100 · |∩ sets| / k` on unit identity alone.
pub fn intersection_overlap(sets: &[&UnitSet]) -> Result<OverlapReport> {
    if sets.len() < 2 {
        return Err(Error::InvalidArgument("overlap needs at least two unit sets".into()));
    }
    check_comparable(sets)?;
    let ks: Vec<usize> = sets.iter().map(|s| s.k).collect();
    let denominator = *ks.iter().min().expect("non-empty");
    let unequal_k = ks.iter().any(|&k| k != denominator);
    if unequal_k {
        log::warn!("overlap of unit sets with unequal k {ks:?}; using {denominator}");
    }
    if denominator == 0 {
        return Err(Error::Degenerate("overlap of empty unit sets is undefined".into()));
    }
    let mut common: BTreeSet<UnitId> = sets[0].ids();
    for s in &sets[1..] {
        let ids = s.ids();
        common.retain(|u| ids.contains(u));
    }
    let numerator = common.len();
    Ok(OverlapReport {
        value_pct: 100.0 * numerator as f64 / denominator as f64,
        numerator,
        denominator,
        unequal_k,
        operands: sets.iter().map(|s| Operand::of(s)).collect(),
    })
}

pub fn overlap_pct(a: &UnitSet, b: &UnitSet) -> Result<OverlapReport> {
    intersection_overlap(&[a, b])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub phenomenon_uid: String,
    pub category: String,
    pub folds: usize,
    pub fold_size: usize,
    pub dropped: usize,
    pub overlap: OverlapReport,
}

/// Localizes each of `f` folds independently and reports the overlap of
/// all fold unit sets.
pub fn kfold_consistency(
    session: &Session,
    benchmark_hash: &str,
    p: &Phenomenon,
    sites: &[Site],
    fraction: f64,
    folds: usize,
    seed: Option<u64>,
) -> Result<(ConsistencyReport, Vec<UnitSet>)> {
    let split = split_folds(p, folds, seed)?;
    let sets = split
        .folds
        .iter()
        .enumerate()
        .map(|(i, fold)| {
            localize_on_fold(
                session,
                benchmark_hash,
                fold,
                FoldSpec::new(i, folds, seed),
                sites,
                fraction,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&UnitSet> = sets.iter().collect();
    let overlap = intersection_overlap(&refs)?;
    Ok((
        ConsistencyReport {
            phenomenon_uid: p.uid.clone(),
            category: p.category.clone(),
            folds,
            fold_size: split.folds[0].len(),
            dropped: split.dropped,
            overlap,
        },
        sets,
    ))
}

fn check_random_domain(total: usize, k: usize, folds: usize) -> Result<()> {
    if k == 0 || k > total {
        return Err(Error::InvalidArgument(format!(
            "need 1 <= k <= U, got k={k}, U={total}"
        )));
    }
    if folds < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 folds, got {folds}")));
    }
    Ok(())
}

/// Expected overlap (percent of k) of `f` independent uniform k-subsets of
/// `U` units: `100 · (k/U)^(f−1)`.
pub fn expected_random_overlap(total: usize, k: usize, folds: usize) -> Result<f64> {
    check_random_domain(total, k, folds)?;
    Ok(100.0 * (k as f64 / total as f64).powi(folds as i32 - 1))
}

/// Variance of the intersection size `|∩|` under the same model.
///
/// With indicator `X_u` for unit `u` in every subset,
/// `P(X_u) = (k/U)^f` and `P(X_u X_v) = (k(k−1) / (U(U−1)))^f`.
pub fn random_intersection_variance(total: usize, k: usize, folds: usize) -> Result<f64> {
    check_random_domain(total, k, folds)?;
    let (u, kf) = (total as f64, k as f64);
    let f = folds as i32;
    let p = (kf / u).powi(f);
    let q = if total > 1 {
        (kf * (kf - 1.0) / (u * (u - 1.0))).powi(f)
    } else {
        0.0
    };
    let var = u * p + u * (u - 1.0) * q - (u * p) * (u * p);
    Ok(var.max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloOverlap {
    pub mean_pct: f64,
    pub se_pct: f64,
    pub trials: usize,
}

/// Seeded simulation of `f` independent uniform k-subsets.
pub fn monte_carlo_overlap(
    total: usize,
    k: usize,
    folds: usize,
    trials: usize,
    seed: u64,
) -> Result<MonteCarloOverlap> {
    use rand::{Rng, SeedableRng};
    check_random_domain(total, k, folds)?;
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be >= 1".into()));
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut counts = vec![0u32; total];
    // partial Fisher-Yates: the first k slots are a uniform k-subset
    // whatever order the array is left in
    let mut perm: Vec<usize> = (0..total).collect();
    let mut touched = Vec::with_capacity(k * folds);
    let mut values = Vec::with_capacity(trials);
    for _ in 0..trials {
        for _ in 0..folds {
            for i in 0..k {
                let j = rng.gen_range(i..total);
                perm.swap(i, j);
                counts[perm[i]] += 1;
                touched.push(perm[i]);
            }
        }
        let inter = touched[..k].iter().filter(|&&i| counts[i] as usize == folds).count();
        for &i in &touched {
            counts[i] = 0;
        }
        touched.clear();
        values.push(100.0 * inter as f64 / k as f64);
    }
    Ok(MonteCarloOverlap {
        mean_pct: mean(&values),
        se_pct: sample_sd(&values) / (trials as f64).sqrt(),
        trials,
    })
}

/// Symmetric overlap matrix with 100 on the diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapMatrix {
    pub uids: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl OverlapMatrix {
    pub fn from_sets(sets: &[UnitSet]) -> Result<Self> {
        let n = sets.len();
        if n < 2 {
            return Err(Error::InvalidArgument(
                "overlap matrix needs at least 2 phenomena".into(),
            ));
        }
        let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
        let vals = pairs
            .par_iter()
            .map(|&(i, j)| overlap_pct(&sets[i], &sets[j]).map(|r| r.value_pct))
            .collect::<Result<Vec<f64>>>()?;
        let mut values = vec![vec![100.0; n]; n];
        for (&(i, j), v) in pairs.iter().zip(vals) {
            values[i][j] = v;
            values[j][i] = v;
        }
        Ok(Self {
            uids: sets.iter().map(|s| s.provenance.phenomenon_uid.clone()).collect(),
            values,
        })
    }

    pub fn len(&self) -> usize {
        self.uids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.uids.is_empty()
    }

    /// Distinct unordered pairs `(a, b, pct)`, `a` before `b` in matrix order.
    pub fn long_form(&self) -> Vec<(String, String, f64)> {
        let n = self.len();
        let mut out = Vec::with_capacity(n * n.saturating_sub(1) / 2);
        for i in 0..n {
            for j in i + 1..n {
                out.push((self.uids[i].clone(), self.uids[j].clone(), self.values[i][j]));
            }
        }
        out
    }
}

/// Localizes every phenomenon on its full pair set and builds the overlap
/// matrix.
pub fn pairwise_overlap_matrix(
    session: &Session,
    benchmark_hash: &str,
    phenomena: &[Phenomenon],
    sites: &[Site],
    fraction: f64,
) -> Result<(OverlapMatrix, Vec<UnitSet>)> {
    if phenomena.len() < 2 {
        return Err(Error::InvalidArgument(
            "overlap matrix needs at least 2 phenomena".into(),
        ));
    }
    let sets = phenomena
        .iter()
        .map(|p| localize_on_fold(session, benchmark_hash, p, FoldSpec::full(), sites, fraction))
        .collect::<Result<Vec<_>>>()?;
    Ok((OverlapMatrix::from_sets(&sets)?, sets))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategorySummary {
    pub category: String,
    pub members: usize,
    /// Mean over unordered pairs within the category; absent below 2 members.
    pub within_mean_pct: Option<f64>,
    /// Mean over pairs with exactly one member in the category.
    pub cross_mean_pct: Option<f64>,
    pub within_pairs: usize,
    pub cross_pairs: usize,
}

fn categories_of(m: &OverlapMatrix, categories: &BTreeMap<String, String>) -> Result<Vec<String>> {
    m.uids
        .iter()
        .map(|u| {
            categories
                .get(u)
                .cloned()
                .ok_or_else(|| Error::UnknownCategory(u.clone()))
        })
        .collect()
}

fn mean_opt(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| mean(v))
}

/// Within- and cross-category mean overlaps, one row per category (sorted).
pub fn category_summary(m: &OverlapMatrix, categories: &BTreeMap<String, String>) -> Result<Vec<CategorySummary>> {
    let cats = categories_of(m, categories)?;
    let names: BTreeSet<&String> = cats.iter().collect();
    let n = m.len();
    let mut out = Vec::new();
    for name in names {
        let mut within = Vec::new();
        let mut cross = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                match (cats[i] == *name, cats[j] == *name) {
                    (true, true) => within.push(m.values[i][j]),
                    (true, false) | (false, true) => cross.push(m.values[i][j]),
                    _ => {}
                }
            }
        }
        out.push(CategorySummary {
            category: name.clone(),
            members: cats.iter().filter(|c| *c == name).count(),
            within_mean_pct: mean_opt(&within),
            cross_mean_pct: mean_opt(&cross),
            within_pairs: within.len(),
            cross_pairs: cross.len(),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementSummary {
    pub category: String,
    pub within_mean_pct: Option<f64>,
    /// Pairs with one member in this category and one in another agreement
    /// category.
    pub cross_agreement_mean_pct: Option<f64>,
    /// Pairs with one member in this category and one outside every
    /// agreement category.
    pub non_agreement_mean_pct: Option<f64>,
    pub within_pairs: usize,
    pub cross_agreement_pairs: usize,
    pub non_agreement_pairs: usize,
}

/// Within / cross-agreement / non-agreement means for each agreement
/// category, in the order given.
pub fn agreement_analysis(
    m: &OverlapMatrix,
    categories: &BTreeMap<String, String>,
    agreement_set: &[String],
) -> Result<Vec<AgreementSummary>> {
    if agreement_set.is_empty() {
        return Err(Error::InvalidArgument("agreement category set is empty".into()));
    }
    let cats = categories_of(m, categories)?;
    for a in agreement_set {
        if !cats.contains(a) {
            return Err(Error::InvalidArgument(format!(
                "agreement category `{a}` has no phenomena"
            )));
        }
    }
    let is_agreement = |c: &String| agreement_set.contains(c);
    let n = m.len();
    let mut out = Vec::new();
    for a in agreement_set {
        let (mut within, mut cross, mut non) = (Vec::new(), Vec::new(), Vec::new());
        for i in 0..n {
            for j in i + 1..n {
                let (ci, cj) = (&cats[i], &cats[j]);
                let other = match (ci == a, cj == a) {
                    (true, true) => {
                        within.push(m.values[i][j]);
                        continue;
                    }
                    (true, false) => cj,
                    (false, true) => ci,
                    _ => continue,
                };
                if is_agreement(other) {
                    cross.push(m.values[i][j]);
                } else {
                    non.push(m.values[i][j]);
                }
            }
        }
        out.push(AgreementSummary {
            category: a.clone(),
            within_mean_pct: mean_opt(&within),
            cross_agreement_mean_pct: mean_opt(&cross),
            non_agreement_mean_pct: mean_opt(&non),
            within_pairs: within.len(),
            cross_agreement_pairs: cross.len(),
            non_agreement_pairs: non.len(),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteShare {
    pub site: Site,
    pub count: usize,
    pub pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerShare {
    pub site: Site,
    pub layer: usize,
    /// `layer / L`
    pub depth: f64,
    pub count: usize,
    pub pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteBreakdown {
    pub phenomenon_uid: String,
    pub k: usize,
    pub per_site: Vec<SiteShare>,
    pub per_layer: Vec<LayerShare>,
}

/// Share of a unit set falling in each site kind and each (site, layer).
/// Every site and layer of the set's unit space gets a row.
pub fn site_breakdown(set: &UnitSet) -> Result<SiteBreakdown> {
    if set.is_empty() {
        return Err(Error::Degenerate("breakdown of an empty unit set".into()));
    }
    let n_layers = set.provenance.n_layers;
    let k = set.units.len() as f64;
    let mut per_site = Vec::new();
    let mut per_layer = Vec::new();
    for &site in &set.provenance.sites {
        let count = set.units.iter().filter(|u| u.site == site).count();
        per_site.push(SiteShare {
            site,
            count,
            pct: 100.0 * count as f64 / k,
        });
        for layer in 0..n_layers {
            let count = set.units.iter().filter(|u| u.site == site && u.layer == layer).count();
            per_layer.push(LayerShare {
                site,
                layer,
                depth: layer as f64 / n_layers as f64,
                count,
                pct: 100.0 * count as f64 / k,
            });
        }
    }
    Ok(SiteBreakdown {
        phenomenon_uid: set.provenance.phenomenon_uid.clone(),
        k: set.units.len(),
        per_site,
        per_layer,
    })
}

/// One benchmark's side of a cross-benchmark comparison.
#[derive(Debug, Clone, Copy)]
pub struct BenchmarkSlice<'a> {
    pub name: &'a str,
    pub hash: &'a str,
    pub phenomena: &'a [Phenomenon],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComparatorKind {
    /// Mean pairwise overlap among the benchmark's phenomena.
    Pairwise,
    /// Two-fold consistency of the single phenomenon.
    TwoFold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WithinComparator {
    pub benchmark: String,
    pub kind: ComparatorKind,
    pub mean_pct: f64,
    pub pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossBenchmarkReport {
    pub first: String,
    pub second: String,
    pub cross_mean_pct: f64,
    pub cross_pairs: usize,
    pub within: Vec<WithinComparator>,
}

/// Mean overlap over the cartesian product of two groups of unit sets.
pub fn cross_mean(first: &[UnitSet], second: &[UnitSet]) -> Result<(f64, usize)> {
    if first.is_empty() || second.is_empty() {
        return Err(Error::InvalidArgument(
            "cross-benchmark overlap needs non-empty sides".into(),
        ));
    }
    let mut vals = Vec::with_capacity(first.len() * second.len());
    for a in first {
        for b in second {
            vals.push(overlap_pct(a, b)?.value_pct);
        }
    }
    Ok((mean(&vals), vals.len()))
}

fn within_comparator(
    session: &Session,
    b: &BenchmarkSlice,
    sets: &[UnitSet],
    sites: &[Site],
    fraction: f64,
) -> Result<WithinComparator> {
    if sets.len() >= 2 {
        let m = OverlapMatrix::from_sets(sets)?;
        let vals: Vec<f64> = m.long_form().into_iter().map(|r| r.2).collect();
        return Ok(WithinComparator {
            benchmark: b.name.to_string(),
            kind: ComparatorKind::Pairwise,
            mean_pct: mean(&vals),
            pairs: vals.len(),
        });
    }
    let (report, _) = kfold_consistency(session, b.hash, &b.phenomena[0], sites, fraction, 2, None)?;
    Ok(WithinComparator {
        benchmark: b.name.to_string(),
        kind: ComparatorKind::TwoFold,
        mean_pct: report.overlap.value_pct,
        pairs: 1,
    })
}

/// Overlap between phenomena of two benchmarks, with within-benchmark
/// comparators (pairwise, or 2-fold consistency for single-phenomenon
/// benchmarks).
pub fn cross_benchmark_overlap(
    session: &Session,
    first: BenchmarkSlice,
    second: BenchmarkSlice,
    sites: &[Site],
    fraction: f64,
) -> Result<CrossBenchmarkReport> {
    if first.phenomena.is_empty() || second.phenomena.is_empty() {
        return Err(Error::InvalidArgument(
            "cross-benchmark overlap needs non-empty sides".into(),
        ));
    }
    let localize_all = |b: &BenchmarkSlice| -> Result<Vec<UnitSet>> {
        b.phenomena
            .iter()
            .map(|p| localize_on_fold(session, b.hash, p, FoldSpec::full(), sites, fraction))
            .collect()
    };
    let sets1 = localize_all(&first)?;
    let sets2 = localize_all(&second)?;
    let (cross_mean_pct, cross_pairs) = cross_mean(&sets1, &sets2)?;
    Ok(CrossBenchmarkReport {
        first: first.name.to_string(),
        second: second.name.to_string(),
        cross_mean_pct,
        cross_pairs,
        within: vec![
            within_comparator(session, &first, &sets1, sites, fraction)?,
            within_comparator(session, &second, &sets2, sites, fraction)?,
        ],
    })
}
