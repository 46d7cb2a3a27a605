// SPDX-License-Identifier: MIT OR Apache-2.0

//! Minimal-pair accuracy and ablation experiments.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use synloc_engine::{AblationSpec, Application, LanguageModel, Site, UnitId, UnitSpace};

use crate::corpus::{split_folds, Phenomenon};
use crate::error::{Error, Result};
use crate::localizer::localize_on_fold;
use crate::session::{FoldSpec, Session};
use crate::stats::pearson;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub accuracy: f64,
    pub n_pairs: usize,
    pub wins: usize,
    /// Pairs scored exactly equal; counted as losses.
    pub ties: usize,
    pub ablation: String,
}

/// Fraction of pairs whose grammatical sentence gets the higher total log
/// probability under `ablation`.
pub fn accuracy(lm: &LanguageModel, pairs: &[(&str, &str)], ablation: &AblationSpec) -> Result<AccuracyReport> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("accuracy needs at least one pair".into()));
    }
    let mut texts = Vec::with_capacity(2 * pairs.len());
    for (g, b) in pairs {
        texts.push(*g);
        texts.push(*b);
    }
    let scores = lm.sentence_logprobs(&texts, ablation)?;
    let mut wins = 0;
    let mut ties = 0;
    for s in scores.chunks(2) {
        if s[0] > s[1] {
            wins += 1;
        } else if s[0] == s[1] {
            ties += 1;
        }
    }
    Ok(AccuracyReport {
        accuracy: wins as f64 / pairs.len() as f64,
        n_pairs: pairs.len(),
        wins,
        ties,
        ablation: ablation.summary(),
    })
}

/// Mean of raw last-token residual activations over every sentence, layer
/// and channel, accumulated in `f64` in a fixed order.
pub fn mean_ablation_value(lm: &LanguageModel, sentences: &[&str]) -> Result<f64> {
    if sentences.is_empty() {
        return Err(Error::InvalidArgument(
            "mean ablation value needs at least one sentence".into(),
        ));
    }
    let space = lm.model().unit_space(&[Site::Residual])?;
    let acts = lm.capture(sentences, &space)?;
    Ok(mean_of(acts.iter().copied()))
}

pub(crate) fn mean_of(values: impl Iterator<Item = f32>) -> f64 {
    let mut sum = 0.0f64;
    let mut n = 0usize;
    for v in values {
        sum += v as f64;
        n += 1;
    }
    sum / n as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AblationKind {
    Zero,
    Mean,
}

impl std::str::FromStr for AblationKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "zero" => Ok(Self::Zero),
            "mean" => Ok(Self::Mean),
            other => Err(format!("unknown ablation mode `{other}` (expected zero or mean)")),
        }
    }
}

impl std::fmt::Display for AblationKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Zero => "zero",
            Self::Mean => "mean",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomArm {
    pub seed: u64,
    pub accuracy: f64,
    pub drop: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationOutcome {
    pub phenomenon_uid: String,
    pub category: String,
    pub mode: AblationKind,
    pub application: Application,
    /// Scalar used in mean mode.
    pub mean_value: Option<f64>,
    pub k: usize,
    pub localize_pairs: usize,
    pub eval_pairs: usize,
    pub baseline_accuracy: f64,
    pub top_accuracy: f64,
    pub top_drop: f64,
    pub random: Vec<RandomArm>,
}

impl AblationOutcome {
    pub fn random_drops(&self) -> Vec<f64> {
        self.random.iter().map(|r| r.drop).collect()
    }

    pub fn mean_random_drop(&self) -> f64 {
        let d = self.random_drops();
        d.iter().sum::<f64>() / d.len() as f64
    }
}

/// `k` units drawn uniformly without replacement from `space`.
pub fn random_units(space: &UnitSpace, k: usize, seed: u64) -> Vec<UnitId> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, space.len(), k.min(space.len())).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| space.unit_at(i)).collect()
}

fn spec_for(
    kind: AblationKind,
    m: Option<f64>,
    units: impl IntoIterator<Item = UnitId>,
    at: Application,
) -> AblationSpec {
    match kind {
        AblationKind::Zero => AblationSpec::zero(units),
        AblationKind::Mean => AblationSpec::mean(m.expect("mean value computed"), units),
    }
    .at(at)
}

/// Localizes on the first half of `p`, then compares accuracy on the second
/// half with no ablation, with the top units ablated, and with random
/// unit sets of the same size (one per seed).
#[allow(clippy::too_many_arguments)]
pub fn ablation_experiment(
    session: &Session,
    benchmark_hash: &str,
    p: &Phenomenon,
    sites: &[Site],
    fraction: f64,
    seeds: &[u64],
    kind: AblationKind,
    application: Application,
) -> Result<AblationOutcome> {
    if p.len() < 4 {
        return Err(Error::TooSmall {
            uid: p.uid.clone(),
            message: format!("ablation needs at least 4 pairs, got {}", p.len()),
        });
    }
    if seeds.is_empty() {
        return Err(Error::InvalidArgument("the random arm needs at least one seed".into()));
    }
    let split = split_folds(p, 2, None)?;
    let (train, test) = (&split.folds[0], &split.folds[1]);
    let lm = session.lm();
    let space = session.unit_space(sites)?;
    let top = localize_on_fold(
        session,
        benchmark_hash,
        train,
        FoldSpec::new(0, 2, None),
        sites,
        fraction,
    )?;

    let mean_value = match kind {
        AblationKind::Mean => {
            let good: Vec<&str> = train.pairs.iter().map(|q| q.sentence_good.as_str()).collect();
            Some(mean_ablation_value(lm, &good)?)
        }
        AblationKind::Zero => None,
    };
    let pairs = test.sentence_pairs();
    let baseline = accuracy(lm, &pairs, &AblationSpec::none())?;
    let top_acc = accuracy(lm, &pairs, &spec_for(kind, mean_value, top.ids(), application))?;
    let random = seeds
        .iter()
        .map(|&seed| {
            let units = random_units(&space, top.k, seed);
            let acc = accuracy(lm, &pairs, &spec_for(kind, mean_value, units, application))?;
            Ok(RandomArm {
                seed,
                accuracy: acc.accuracy,
                drop: baseline.accuracy - acc.accuracy,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(AblationOutcome {
        phenomenon_uid: p.uid.clone(),
        category: p.category.clone(),
        mode: kind,
        application,
        mean_value,
        k: top.k,
        localize_pairs: train.len(),
        eval_pairs: test.len(),
        baseline_accuracy: baseline.accuracy,
        top_accuracy: top_acc.accuracy,
        top_drop: baseline.accuracy - top_acc.accuracy,
        random,
    })
}

/// Pearson r between per-phenomenon zero- and mean-ablation drops.
pub fn ablation_correlation(zero_drops: &[f64], mean_drops: &[f64]) -> Result<f64> {
    pearson(zero_drops, mean_drops)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterPoint {
    pub phenomenon_uid: String,
    pub consistency_pct: f64,
    pub drop: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterReport {
    pub r: f64,
    pub points: Vec<ScatterPoint>,
}

/// Correlation between fold consistency and top-ablation drop.
pub fn consistency_vs_ablation(points: Vec<ScatterPoint>) -> Result<ScatterReport> {
    let x: Vec<f64> = points.iter().map(|p| p.consistency_pct).collect();
    let y: Vec<f64> = points.iter().map(|p| p.drop).collect();
    Ok(ScatterReport {
        r: pearson(&x, &y)?,
        points,
    })
}
