// SPDX-License-Identifier: MIT OR Apache-2.0

//! Per-unit Welch t between grammatical and ungrammatical activation
//! magnitudes, and top-k selection.

use std::collections::BTreeSet;

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use synloc_engine::{Site, UnitId, UnitSpace};

use crate::corpus::Phenomenon;
use crate::error::{Error, Result};
use crate::session::{FoldSpec, Session};
use crate::stats::welch_t_sorted;

/// Policy applied to units whose t statistic is undefined.
pub const ZERO_VARIANCE_POLICY: &str = "exclude";

/// Per-unit t statistics in [`UnitSpace`] order; `None` marks undefined.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastResult {
    pub t_stats: Vec<Option<f64>>,
    pub n_good: usize,
    pub n_bad: usize,
    pub space: UnitSpace,
}

impl ContrastResult {
    pub fn undefined(&self) -> usize {
        self.t_stats.iter().filter(|t| t.is_none()).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredUnit {
    pub site: Site,
    pub layer: usize,
    pub channel: usize,
    pub t: f64,
}

impl ScoredUnit {
    pub fn unit(&self) -> UnitId {
        UnitId::new(self.site, self.layer, self.channel)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitSetProvenance {
    pub model_hash: String,
    pub benchmark_hash: String,
    pub phenomenon_uid: String,
    pub sites: Vec<Site>,
    pub n_layers: usize,
    pub hidden: usize,
    pub fold: FoldSpec,
    pub n_good: usize,
    pub n_bad: usize,
    pub undefined_units: usize,
    pub zero_variance_policy: String,
}

/// The top-`k` units of one localization run, ordered by t descending then
/// [`UnitId`] ascending.
///
/// `k` is `floor(fraction × U)`; only when fewer than `k` units have a
/// defined statistic does the set hold fewer, and then `k` records the
/// number actually held.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitSet {
    pub provenance: UnitSetProvenance,
    pub fraction: f64,
    pub total_units: usize,
    pub k: usize,
    pub units: Vec<ScoredUnit>,
}

impl UnitSet {
    pub fn ids(&self) -> BTreeSet<UnitId> {
        self.units.iter().map(ScoredUnit::unit).collect()
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn space(&self) -> Result<UnitSpace> {
        let p = &self.provenance;
        Ok(UnitSpace::new(&p.sites, p.n_layers, p.hidden)?)
    }
}

/// `floor(fraction × total)`, snapping products that land within rounding
/// error of an integer (0.29 × 100 is 28.999… in binary).
pub fn top_k(fraction: f64, total: usize) -> usize {
    let prod = fraction * total as f64;
    let nearest = prod.round();
    if (prod - nearest).abs() <= 1e-9 * prod.max(1.0) {
        nearest as usize
    } else {
        prod.floor() as usize
    }
}

fn check_fraction(fraction: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&fraction) || fraction.is_nan() {
        return Err(Error::InvalidArgument(format!(
            "fraction must be in [0, 1], got {fraction}"
        )));
    }
    Ok(())
}

/// Welch t of `|good[:, u]|` against `|bad[:, u]|` for every column.
pub fn contrast(good: ArrayView2<f32>, bad: ArrayView2<f32>, space: &UnitSpace) -> Result<ContrastResult> {
    if good.ncols() != space.len() || bad.ncols() != space.len() {
        return Err(Error::InvalidArgument(format!(
            "activation matrices have {} / {} columns, unit space has {}",
            good.ncols(),
            bad.ncols(),
            space.len()
        )));
    }
    if good.nrows() < 2 || bad.nrows() < 2 {
        return Err(Error::TooFewSamples(format!(
            "localization needs at least 2 sentences per condition, got {} and {}",
            good.nrows(),
            bad.nrows()
        )));
    }
    let column = |m: &ArrayView2<f32>, u: usize| -> Option<Vec<f64>> {
        let mut v = Vec::with_capacity(m.nrows());
        for &x in m.column(u) {
            if !x.is_finite() {
                return None;
            }
            v.push(x.abs() as f64);
        }
        v.sort_by(f64::total_cmp);
        Some(v)
    };
    let t_stats = (0..space.len())
        .into_par_iter()
        .map(|u| match (column(&good, u), column(&bad, u)) {
            (Some(a), Some(b)) => welch_t_sorted(&a, &b),
            _ => None,
        })
        .collect();
    Ok(ContrastResult {
        t_stats,
        n_good: good.nrows(),
        n_bad: bad.nrows(),
        space: space.clone(),
    })
}

/// Ranks defined units by (t desc, UnitId asc) and keeps the top
/// `floor(fraction × U)`.
pub fn select(c: &ContrastResult, fraction: f64) -> Result<Vec<ScoredUnit>> {
    check_fraction(fraction)?;
    let mut ranked: Vec<(f64, UnitId)> = c
        .t_stats
        .iter()
        .enumerate()
        .filter_map(|(i, t)| t.map(|t| (t, c.space.unit_at(i))))
        .collect();
    if ranked.is_empty() {
        return Err(Error::AllUndefined);
    }
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    ranked.truncate(top_k(fraction, c.space.len()));
    Ok(ranked
        .into_iter()
        .map(|(t, u)| ScoredUnit {
            site: u.site,
            layer: u.layer,
            channel: u.channel,
            // -0.0 and 0.0 compare equal but serialize differently
            t: if t == 0.0 { 0.0 } else { t },
        })
        .collect())
}

/// Describes where activations came from, for [`UnitSet`] provenance.
#[derive(Debug, Clone)]
pub struct Origin {
    pub model_hash: String,
    pub benchmark_hash: String,
    pub phenomenon_uid: String,
    pub fold: FoldSpec,
}

impl Origin {
    pub fn anonymous() -> Self {
        Self {
            model_hash: String::new(),
            benchmark_hash: String::new(),
            phenomenon_uid: String::new(),
            fold: FoldSpec::full(),
        }
    }
}

/// Localizes from activation matrices (`n × U`, columns in `space` order).
pub fn localize(
    good: &Array2<f32>,
    bad: &Array2<f32>,
    fraction: f64,
    space: &UnitSpace,
    origin: Origin,
) -> Result<UnitSet> {
    check_fraction(fraction)?;
    let c = contrast(good.view(), bad.view(), space)?;
    let units = select(&c, fraction)?;
    Ok(UnitSet {
        provenance: UnitSetProvenance {
            model_hash: origin.model_hash,
            benchmark_hash: origin.benchmark_hash,
            phenomenon_uid: origin.phenomenon_uid,
            sites: space.sites().to_vec(),
            n_layers: space.n_layers(),
            hidden: space.hidden(),
            fold: origin.fold,
            n_good: c.n_good,
            n_bad: c.n_bad,
            undefined_units: c.undefined(),
            zero_variance_policy: ZERO_VARIANCE_POLICY.into(),
        },
        fraction,
        total_units: space.len(),
        k: units.len(),
        units,
    })
}

/// Captures activations for one fold of a phenomenon and localizes.
pub fn localize_on_fold(
    session: &Session,
    benchmark_hash: &str,
    fold_phenomenon: &Phenomenon,
    fold: FoldSpec,
    sites: &[Site],
    fraction: f64,
) -> Result<UnitSet> {
    check_fraction(fraction)?;
    let space = session.unit_space(sites)?;
    let (good, bad) = session.activations(benchmark_hash, fold_phenomenon, fold, sites)?;
    localize(
        &good,
        &bad,
        fraction,
        &space,
        Origin {
            model_hash: session.model_hash().to_string(),
            benchmark_hash: benchmark_hash.to_string(),
            phenomenon_uid: fold_phenomenon.uid.clone(),
            fold,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn space(h: usize) -> UnitSpace {
        UnitSpace::new(&[Site::Residual], 1, h).unwrap()
    }

    #[test]
    fn k_is_floored() {
        assert_eq!(top_k(0.01, 9216), 92);
        assert_eq!(top_k(0.005, 9216), 46);
        assert_eq!(top_k(0.05, 9216), 460);
        assert_eq!(top_k(0.29, 100), 29);
        assert_eq!(top_k(1.0, 768), 768);
        assert_eq!(top_k(0.01, 768), 7);
        assert_eq!(top_k(0.0, 768), 0);
    }

    #[test]
    fn identical_matrices_tie_break_by_unit_id() {
        let m = Array2::from_shape_fn((4, 10), |(i, j)| (i * 3 + j) as f32);
        let s = localize(&m, &m, 0.3, &space(10), Origin::anonymous()).unwrap();
        assert_eq!(s.k, 3);
        let ch: Vec<usize> = s.units.iter().map(|u| u.channel).collect();
        assert_eq!(ch, [0, 1, 2]);
        assert!(s.units.iter().all(|u| u.t == 0.0));
    }

    #[test]
    fn toy_unit_two_ranked_first() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 20;
        let mut good = Array2::zeros((n, 3));
        let mut bad = Array2::zeros((n, 3));
        for i in 0..n {
            for u in [0, 1] {
                good[[i, u]] = rng.gen_range(0.0..1.0f32);
                bad[[i, u]] = rng.gen_range(0.0..1.0f32);
            }
            good[[i, 2]] = 10.0 + rng.gen_range(-0.1..0.1f32);
            bad[[i, 2]] = -(1.0 + rng.gen_range(-0.1..0.1f32));
        }
        let s = localize(&good, &bad, 1.0, &space(3), Origin::anonymous()).unwrap();
        assert_eq!(s.units[0].channel, 2);
        assert_eq!(s.k, 3);
    }

    #[test]
    fn undefined_units_excluded() {
        // unit 0 constant but different across conditions, unit 1 dead
        let good = Array2::from_shape_vec((2, 3), vec![1.0, 0.0, 0.5, 1.0, 0.0, 0.7]).unwrap();
        let bad = Array2::from_shape_vec((2, 3), vec![2.0, 0.0, 0.1, 2.0, 0.0, 0.2]).unwrap();
        let s = localize(&good, &bad, 1.0, &space(3), Origin::anonymous()).unwrap();
        let ch: Vec<usize> = s.units.iter().map(|u| u.channel).collect();
        assert_eq!(ch, [2, 1]);
        assert_eq!(s.provenance.undefined_units, 1);

        let good = Array2::from_shape_vec((2, 1), vec![1.0, 1.0]).unwrap();
        let bad = Array2::from_shape_vec((2, 1), vec![2.0, 2.0]).unwrap();
        assert!(matches!(
            localize(&good, &bad, 1.0, &space(1), Origin::anonymous()),
            Err(Error::AllUndefined)
        ));
    }

    #[test]
    fn rejects_bad_inputs() {
        let m = Array2::<f32>::zeros((1, 2));
        assert!(matches!(
            localize(&m, &m, 0.5, &space(2), Origin::anonymous()),
            Err(Error::TooFewSamples(_))
        ));
        let m = Array2::<f32>::zeros((3, 2));
        assert!(localize(&m, &m, 1.5, &space(2), Origin::anonymous()).is_err());
        assert!(localize(&m, &m, 0.5, &space(3), Origin::anonymous()).is_err());
    }

    fn matrices() -> impl Strategy<Value = (Array2<f32>, Array2<f32>)> {
        (2usize..12, 2usize..12, 1usize..16).prop_flat_map(|(ng, nb, u)| {
            (
                proptest::collection::vec(-50.0f32..50.0, ng * u),
                proptest::collection::vec(-50.0f32..50.0, nb * u),
            )
                .prop_map(move |(g, b)| {
                    (
                        Array2::from_shape_vec((ng, u), g).unwrap(),
                        Array2::from_shape_vec((nb, u), b).unwrap(),
                    )
                })
        })
    }

    proptest! {
        #[test]
        fn selection_is_ordered_and_sized((good, bad) in matrices(), fraction in 0.0f64..=1.0) {
            let sp = space(good.ncols());
            let s = localize(&good, &bad, fraction, &sp, Origin::anonymous()).unwrap();
            prop_assert_eq!(s.k, top_k(fraction, sp.len()).min(sp.len() - s.provenance.undefined_units));
            prop_assert_eq!(s.units.len(), s.k);
            for w in s.units.windows(2) {
                prop_assert!(w[0].t > w[1].t || (w[0].t == w[1].t && w[0].unit() < w[1].unit()));
            }
        }

        #[test]
        fn power_of_two_scaling_keeps_selection((good, bad) in matrices(), e in -8i32..8, fraction in 0.05f64..=1.0) {
            let sp = space(good.ncols());
            let c = 2f32.powi(e);
            let a = localize(&good, &bad, fraction, &sp, Origin::anonymous()).unwrap();
            let b = localize(&(&good * c), &(&bad * c), fraction, &sp, Origin::anonymous()).unwrap();
            prop_assert_eq!(a.units, b.units);
        }

        #[test]
        fn row_shuffles_keep_selection((good, bad) in matrices(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            let sp = space(good.ncols());
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let shuffle = |m: &Array2<f32>, rng: &mut ChaCha8Rng| {
                let mut rows: Vec<usize> = (0..m.nrows()).collect();
                rows.shuffle(rng);
                m.select(ndarray::Axis(0), &rows)
            };
            let g2 = shuffle(&good, &mut rng);
            let b2 = shuffle(&bad, &mut rng);
            let a = localize(&good, &bad, 1.0, &sp, Origin::anonymous()).unwrap();
            let b = localize(&g2, &b2, 1.0, &sp, Origin::anonymous()).unwrap();
            prop_assert_eq!(a.units, b.units);
        }
    }
}
