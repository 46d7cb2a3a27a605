// SPDX-License-Identifier: MIT OR Apache-2.0

//! One function per subcommand. Each loads its inputs, runs the analysis
//! and writes reports through a [`RunWriter`], so a failed run leaves no
//! partial output behind.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use log::info;
use serde_json::json;
use synloc_core::analysis::{
    agreement_analysis, category_summary, cross_benchmark_overlap, expected_random_overlap, kfold_consistency,
    pairwise_overlap_matrix, site_breakdown, BenchmarkSlice, ConsistencyReport, OverlapMatrix,
};
use synloc_core::corpus::{
    load_annotations, load_benchmark, load_lexicon, make_blimp_control, make_blimp_lex, Benchmark, LoadOptions,
};
use synloc_core::crosslingual::{
    cross_language_agreement_report, load_feature_vectors, overlap_vs_similarity, DistanceTable, LocalizedBenchmark,
};
use synloc_core::evaluator::{
    ablation_correlation, ablation_experiment, consistency_vs_ablation, AblationKind, ScatterPoint,
};
use synloc_core::localizer::{localize_on_fold, UnitSet};
use synloc_core::store::{verify_run, ActivationCache, RunInputs, RunWriter};
use synloc_core::{Error, ErrorKind, FoldSpec, Session};
use synloc_engine::LanguageModel;

use crate::config::ExperimentConfig;
use crate::failure::Failure;

type Rows = Vec<Vec<String>>;

fn num(x: f64) -> String {
    format!("{x}")
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

/// File-name-safe rendering of a benchmark or phenomenon name.
fn safe(s: &str) -> String {
    s.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '_' || c == '-' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn load_model(cfg: &ExperimentConfig) -> Result<LanguageModel, Failure> {
    info!("loading model {}", cfg.model.display());
    LanguageModel::load(&cfg.model, &cfg.tokenizer).map_err(Failure::from)
}

fn load_one(path: &Path, categories: Option<&PathBuf>) -> Result<Benchmark, Failure> {
    let options = LoadOptions {
        category_map: categories.cloned(),
        ..LoadOptions::default()
    };
    Ok(load_benchmark(path, &options)?)
}

fn load_benchmarks(cfg: &ExperimentConfig) -> Result<Vec<Benchmark>, Failure> {
    let benches = cfg
        .benchmarks
        .iter()
        .map(|p| load_one(p, cfg.categories.as_ref()))
        .collect::<Result<Vec<_>, _>>()?;
    for (i, b) in benches.iter().enumerate() {
        if benches[..i].iter().any(|o| o.name == b.name) {
            return Err(Failure::config(format!("two benchmarks are named `{}`", b.name)));
        }
    }
    Ok(benches)
}

fn session<'a>(lm: &'a LanguageModel, cfg: &ExperimentConfig) -> Session<'a> {
    match &cfg.cache {
        Some(dir) => Session::with_cache(lm, ActivationCache::new(dir)),
        None => Session::new(lm),
    }
}

fn writer(
    command: &str,
    cfg: &ExperimentConfig,
    lm: &LanguageModel,
    hashes: Vec<String>,
) -> Result<RunWriter, Failure> {
    let inputs = RunInputs {
        command: command.into(),
        config: serde_json::to_value(cfg).map_err(|e| Failure::config(e.to_string()))?,
        model_hash: lm.hash().to_string(),
        benchmark_hashes: hashes,
        fraction: cfg.fraction,
        sites: cfg.sites_label(),
        seeds: cfg.seeds.clone(),
    };
    Ok(RunWriter::create(&cfg.out, inputs)?)
}

fn hashes(benches: &[Benchmark]) -> Vec<String> {
    benches.iter().map(|b| b.content_hash().to_string()).collect()
}

/// File name for a per-benchmark report; unsuffixed with a single benchmark.
fn per_bench(stem: &str, ext: &str, bench: &Benchmark, many: bool) -> String {
    if many {
        format!("{stem}__{}.{ext}", safe(&bench.name))
    } else {
        format!("{stem}.{ext}")
    }
}

fn finish(w: RunWriter) -> Result<PathBuf, Failure> {
    let dir = w.finish()?;
    println!("{}", dir.display());
    Ok(dir)
}

fn log_cache(s: &Session) {
    if let Some(c) = s.cache() {
        info!("activation cache: {} hits, {} misses", c.hits(), c.misses());
    }
}

// ---------------------------------------------------------------- localize

pub fn localize(cfg: &ExperimentConfig) -> Result<PathBuf, Failure> {
    let lm = load_model(cfg)?;
    let benches = load_benchmarks(cfg)?;
    let s = session(&lm, cfg);
    let mut w = writer("localize", cfg, &lm, hashes(&benches))?;
    let mut rows = Rows::new();
    for b in &benches {
        for p in &b.phenomena {
            let set = localize_on_fold(&s, b.content_hash(), p, FoldSpec::full(), &cfg.sites, cfg.fraction)?;
            w.write_unit_set(&format!("unitset__{}__{}.json", safe(&b.name), safe(&p.uid)), &set)?;
            rows.push(vec![
                b.name.clone(),
                p.uid.clone(),
                p.category.clone(),
                p.len().to_string(),
                set.total_units.to_string(),
                set.k.to_string(),
                set.provenance.undefined_units.to_string(),
                opt(set.units.first().map(|u| u.t)),
                opt(set.units.last().map(|u| u.t)),
            ]);
        }
    }
    w.write_csv(
        "localize.csv",
        &[
            "benchmark",
            "phenomenon",
            "category",
            "n_pairs",
            "total_units",
            "k",
            "undefined_units",
            "max_t",
            "min_t",
        ],
        &rows,
    )?;
    log_cache(&s);
    finish(w)
}

// ---------------------------------------------------------------- crossval

const CONSISTENCY_HEADER: [&str; 11] = [
    "benchmark",
    "kind",
    "phenomenon",
    "category",
    "folds",
    "fold_size",
    "dropped",
    "total_units",
    "k",
    "overlap_pct",
    "unequal_k",
];

fn consistency_row(bench: &str, kind: &str, r: &ConsistencyReport, sets: &[UnitSet]) -> Vec<String> {
    vec![
        bench.to_string(),
        kind.to_string(),
        r.phenomenon_uid.clone(),
        r.category.clone(),
        r.folds.to_string(),
        r.fold_size.to_string(),
        r.dropped.to_string(),
        sets[0].total_units.to_string(),
        sets[0].k.to_string(),
        num(r.overlap.value_pct),
        r.overlap.unequal_k.to_string(),
    ]
}

pub fn crossval(cfg: &ExperimentConfig) -> Result<PathBuf, Failure> {
    let lm = load_model(cfg)?;
    let benches = load_benchmarks(cfg)?;
    let s = session(&lm, cfg);
    let lex = match cfg.lex_parts() {
        Some((lexicon, annotations)) => Some((load_lexicon(lexicon)?, load_annotations(annotations)?)),
        None => None,
    };
    let mut w = writer("crossval", cfg, &lm, hashes(&benches))?;
    let mut rows = Rows::new();
    let mut reports = Vec::new();
    let mut means: BTreeMap<String, Vec<f64>> = BTreeMap::new();

    let mut run = |bench: &Benchmark, kind: &str, rows: &mut Rows| -> Result<Option<(usize, usize)>, Failure> {
        let mut shape = None;
        for p in &bench.phenomena {
            let (r, sets) = kfold_consistency(
                &s,
                bench.content_hash(),
                p,
                &cfg.sites,
                cfg.fraction,
                cfg.folds,
                cfg.fold_seed,
            )?;
            rows.push(consistency_row(&bench.name, kind, &r, &sets));
            means.entry(kind.to_string()).or_default().push(r.overlap.value_pct);
            shape = Some((sets[0].total_units, sets[0].k));
            reports.push(json!({"benchmark": bench.name, "kind": kind, "report": r}));
        }
        Ok(shape)
    };

    for b in &benches {
        let shape = run(b, "phenomenon", &mut rows)?;
        if let Some((total, k)) = shape {
            // analytic expectation for k uniformly drawn units per fold
            let expected = if k == 0 {
                None
            } else {
                Some(expected_random_overlap(total, k, cfg.folds)?)
            };
            rows.push(vec![
                b.name.clone(),
                "random".into(),
                "Random".into(),
                String::new(),
                cfg.folds.to_string(),
                String::new(),
                String::new(),
                total.to_string(),
                k.to_string(),
                opt(expected),
                "false".into(),
            ]);
        }
        let control = make_blimp_control(b, cfg.control_seed)?;
        run(&control, "control", &mut rows)?;
        if let Some((lexicon, annotations)) = &lex {
            for pos in ExperimentConfig::lex_pos() {
                let lc = make_blimp_lex(b, lexicon, pos, cfg.lex_per_phenomenon, cfg.control_seed, annotations)?;
                info!(
                    "lexical control ({pos}): {} sampled, {} skipped",
                    lc.sampled, lc.skipped
                );
                run(&lc.benchmark, "lex", &mut rows)?;
            }
        }
    }
    w.write_csv("consistency.csv", &CONSISTENCY_HEADER, &rows)?;
    let summary: BTreeMap<String, f64> = means
        .iter()
        .map(|(k, v)| (k.clone(), v.iter().sum::<f64>() / v.len() as f64))
        .collect();
    w.write_json(
        "consistency.json",
        &json!({"mean_overlap_pct": summary, "reports": reports}),
    )?;
    log_cache(&s);
    finish(w)
}

// ------------------------------------------------------------------ ablate

/// Numeric failures in optional summary statistics are reported, not fatal.
fn soft<T>(r: synloc_core::Result<T>) -> Result<Result<T, String>, Failure> {
    match r {
        Ok(v) => Ok(Ok(v)),
        Err(e) if e.kind() == ErrorKind::Numeric => Ok(Err(e.to_string())),
        Err(e) => Err(e.into()),
    }
}

fn soft_json<T: serde::Serialize>(r: Result<T, String>) -> serde_json::Value {
    match r {
        Ok(v) => json!({"value": v}),
        Err(reason) => json!({"undefined": reason}),
    }
}

pub fn ablate(cfg: &ExperimentConfig) -> Result<PathBuf, Failure> {
    if cfg.seeds.is_empty() {
        return Err(Failure::config("ablate needs at least one --seeds value"));
    }
    let lm = load_model(cfg)?;
    let benches = load_benchmarks(cfg)?;
    let s = session(&lm, cfg);
    let mut w = writer("ablate", cfg, &lm, hashes(&benches))?;
    let mut rows = Rows::new();
    let mut drops: BTreeMap<AblationKind, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    let mut outcomes = Vec::new();
    let mut scatter = Vec::new();
    let mut scatter_skipped = Vec::new();

    for kind in cfg.mode.kinds() {
        for b in &benches {
            for p in &b.phenomena {
                let o = ablation_experiment(
                    &s,
                    b.content_hash(),
                    p,
                    &cfg.sites,
                    cfg.fraction,
                    &cfg.seeds,
                    kind,
                    cfg.ablate_at,
                )?;
                let random = o.random_drops();
                rows.push(vec![
                    b.name.clone(),
                    p.uid.clone(),
                    p.category.clone(),
                    kind.to_string(),
                    o.application.to_string(),
                    o.k.to_string(),
                    o.localize_pairs.to_string(),
                    o.eval_pairs.to_string(),
                    opt(o.mean_value),
                    num(o.baseline_accuracy),
                    num(o.top_accuracy),
                    num(o.top_drop),
                    num(o.mean_random_drop()),
                    random.iter().map(|d| num(*d)).collect::<Vec<_>>().join(";"),
                ]);
                let e = drops.entry(kind).or_default();
                e.0.push(o.top_drop);
                e.1.push(o.mean_random_drop());
                if kind == cfg.mode.kinds()[0] {
                    let uid = format!("{}/{}", b.name, p.uid);
                    match soft(kfold_consistency(
                        &s,
                        b.content_hash(),
                        p,
                        &cfg.sites,
                        cfg.fraction,
                        2,
                        None,
                    ))? {
                        Ok((r, _)) => scatter.push(ScatterPoint {
                            phenomenon_uid: uid,
                            consistency_pct: r.overlap.value_pct,
                            drop: o.top_drop,
                        }),
                        Err(reason) => {
                            info!("{uid}: left out of the consistency scatter: {reason}");
                            scatter_skipped.push(json!({"phenomenon": uid, "reason": reason}));
                        }
                    }
                }
                outcomes.push(json!({"benchmark": b.name, "outcome": o}));
            }
        }
    }
    w.write_csv(
        "ablation.csv",
        &[
            "benchmark",
            "phenomenon",
            "category",
            "mode",
            "application",
            "k",
            "localize_pairs",
            "eval_pairs",
            "mean_value",
            "baseline_accuracy",
            "top_accuracy",
            "top_drop",
            "random_drop_mean",
            "random_drops",
        ],
        &rows,
    )?;

    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let per_mode: BTreeMap<String, serde_json::Value> = drops
        .iter()
        .map(|(k, (top, random))| {
            (
                k.to_string(),
                json!({"mean_top_drop": mean(top), "mean_random_drop": mean(random), "phenomena": top.len()}),
            )
        })
        .collect();
    let correlation = match (drops.get(&AblationKind::Zero), drops.get(&AblationKind::Mean)) {
        (Some(z), Some(m)) => Some(soft_json(soft(ablation_correlation(&z.0, &m.0))?)),
        _ => None,
    };
    let scatter = soft_json(soft(consistency_vs_ablation(scatter))?);
    w.write_json(
        "ablation.json",
        &json!({
            "modes": per_mode,
            "zero_mean_correlation": correlation,
            "consistency_vs_drop": scatter,
            "consistency_vs_drop_skipped": scatter_skipped,
            "outcomes": outcomes,
        }),
    )?;
    log_cache(&s);
    finish(w)
}

// ----------------------------------------------------------------- overlap

fn slice(x: &Benchmark) -> BenchmarkSlice<'_> {
    BenchmarkSlice {
        name: &x.name,
        hash: x.content_hash(),
        phenomena: &x.phenomena,
    }
}

fn matrix_rows(m: &OverlapMatrix) -> Rows {
    m.uids
        .iter()
        .zip(&m.values)
        .map(|(u, row)| std::iter::once(u.clone()).chain(row.iter().map(|v| num(*v))).collect())
        .collect()
}

pub fn overlap(cfg: &ExperimentConfig) -> Result<PathBuf, Failure> {
    let lm = load_model(cfg)?;
    let benches = load_benchmarks(cfg)?;
    let s = session(&lm, cfg);
    let mut w = writer("overlap", cfg, &lm, hashes(&benches))?;
    let many = benches.len() > 1;

    for b in &benches {
        let (m, sets) = pairwise_overlap_matrix(&s, b.content_hash(), &b.phenomena, &cfg.sites, cfg.fraction)?;
        let cats = b.categories();
        let long: Rows = m
            .long_form()
            .into_iter()
            .map(|(a, c, v)| vec![a.clone(), c.clone(), cats[&a].clone(), cats[&c].clone(), num(v)])
            .collect();
        w.write_csv(
            &per_bench("overlap_pairs", "csv", b, many),
            &[
                "phenomenon_a",
                "phenomenon_b",
                "category_a",
                "category_b",
                "overlap_pct",
            ],
            &long,
        )?;
        let mut header = vec!["phenomenon"];
        header.extend(m.uids.iter().map(String::as_str));
        w.write_csv(&per_bench("overlap_matrix", "csv", b, many), &header, &matrix_rows(&m))?;

        let summary: Rows = category_summary(&m, &cats)?
            .into_iter()
            .map(|c| {
                vec![
                    c.category,
                    c.members.to_string(),
                    opt(c.within_mean_pct),
                    opt(c.cross_mean_pct),
                    c.within_pairs.to_string(),
                    c.cross_pairs.to_string(),
                ]
            })
            .collect();
        w.write_csv(
            &per_bench("category_summary", "csv", b, many),
            &[
                "category",
                "members",
                "within_mean_pct",
                "cross_mean_pct",
                "within_pairs",
                "cross_pairs",
            ],
            &summary,
        )?;

        if !cfg.agreement.is_empty() {
            let rows: Rows = agreement_analysis(&m, &cats, &cfg.agreement)?
                .into_iter()
                .map(|a| {
                    vec![
                        a.category,
                        opt(a.within_mean_pct),
                        opt(a.cross_agreement_mean_pct),
                        opt(a.non_agreement_mean_pct),
                        a.within_pairs.to_string(),
                        a.cross_agreement_pairs.to_string(),
                        a.non_agreement_pairs.to_string(),
                    ]
                })
                .collect();
            w.write_csv(
                &per_bench("agreement", "csv", b, many),
                &[
                    "category",
                    "within_mean_pct",
                    "cross_agreement_mean_pct",
                    "non_agreement_mean_pct",
                    "within_pairs",
                    "cross_agreement_pairs",
                    "non_agreement_pairs",
                ],
                &rows,
            )?;
        }

        let mut layer_rows = Rows::new();
        for set in sets.iter().filter(|s| !s.is_empty()) {
            let bd = site_breakdown(set)?;
            for l in bd.per_layer {
                layer_rows.push(vec![
                    bd.phenomenon_uid.clone(),
                    l.site.to_string(),
                    l.layer.to_string(),
                    num(l.depth),
                    l.count.to_string(),
                    num(l.pct),
                ]);
            }
        }
        w.write_csv(
            &per_bench("layer_breakdown", "csv", b, many),
            &["phenomenon", "site", "layer", "depth", "count", "pct"],
            &layer_rows,
        )?;
    }

    if many {
        let mut rows = Rows::new();
        for (i, a) in benches.iter().enumerate() {
            for b in &benches[i + 1..] {
                let r = cross_benchmark_overlap(&s, slice(a), slice(b), &cfg.sites, cfg.fraction)?;
                rows.push(vec![
                    r.first.clone(),
                    r.second.clone(),
                    num(r.cross_mean_pct),
                    r.cross_pairs.to_string(),
                    num(r.within[0].mean_pct),
                    num(r.within[1].mean_pct),
                ]);
            }
        }
        w.write_csv(
            "cross_benchmark.csv",
            &[
                "first",
                "second",
                "cross_mean_pct",
                "cross_pairs",
                "first_within_pct",
                "second_within_pct",
            ],
            &rows,
        )?;
    }
    log_cache(&s);
    finish(w)
}

// ------------------------------------------------------------ crosslingual

pub fn crosslingual(cfg: &ExperimentConfig) -> Result<PathBuf, Failure> {
    if cfg.features.is_none() && cfg.reference.is_none() {
        return Err(Failure::config(
            "crosslingual needs --features (similarity regression) and/or --reference (agreement comparison)",
        ));
    }
    if cfg.features.is_some() && cfg.phenomenon.is_none() {
        return Err(Failure::config(
            "--features needs --phenomenon, the uid compared across languages",
        ));
    }
    if cfg.reference.is_some() && cfg.agreement.is_empty() {
        return Err(Failure::config("--reference needs --agreement categories"));
    }
    let lm = load_model(cfg)?;
    let benches = load_benchmarks(cfg)?;
    let reference = match &cfg.reference {
        Some(p) => Some(load_one(p, cfg.reference_categories.as_ref())?),
        None => None,
    };
    let s = session(&lm, cfg);
    let mut all_hashes = hashes(&benches);
    all_hashes.extend(reference.iter().map(|r| r.content_hash().to_string()));
    let mut w = writer("crosslingual", cfg, &lm, all_hashes)?;

    if let (Some(fpath), Some(uid)) = (&cfg.features, &cfg.phenomenon) {
        let table = load_feature_vectors(fpath, true)?;
        let distances = cfg.distances.as_ref().map(DistanceTable::load).transpose()?;
        let mut sets = Vec::new();
        for b in &benches {
            let Some(p) = b.phenomenon(uid) else {
                return Err(Failure::data(format!(
                    "benchmark `{}` has no phenomenon `{uid}`",
                    b.name
                )));
            };
            let set = localize_on_fold(&s, b.content_hash(), p, FoldSpec::full(), &cfg.sites, cfg.fraction)?;
            sets.push((p.language.clone(), set));
        }
        let reg = overlap_vs_similarity(&sets, &table.languages, distances.as_ref())?;
        let rows: Rows = reg
            .points
            .iter()
            .map(|p| {
                vec![
                    p.lang_a.clone(),
                    p.lang_b.clone(),
                    num(p.similarity),
                    num(p.overlap_pct),
                    p.excluded.to_string(),
                    p.reason.clone().unwrap_or_default(),
                ]
            })
            .collect();
        w.write_csv(
            "similarity_pairs.csv",
            &["lang_a", "lang_b", "similarity", "overlap_pct", "excluded", "reason"],
            &rows,
        )?;
        w.write_json(
            "similarity_regression.json",
            &json!({
                "phenomenon": uid,
                "pairs": reg.points.len(),
                "excluded": reg.excluded,
                "languages_without_features": reg.skipped_languages,
                "incomplete_feature_rows": table.dropped_incomplete,
                "fit": reg.fit,
                "degenerate": reg.degenerate,
            }),
        )?;
    }

    if let Some(r) = &reference {
        let localized_ref = LocalizedBenchmark::localize(&s, r, &cfg.reference_agreement, &cfg.sites, cfg.fraction)?;
        let mut rows = Rows::new();
        for b in &benches {
            let native = LocalizedBenchmark::localize(&s, b, &cfg.agreement, &cfg.sites, cfg.fraction)?;
            let language = b.phenomena.first().map(|p| p.language.clone()).unwrap_or_default();
            for bar in cross_language_agreement_report(&native, &localized_ref)? {
                let mut row = vec![
                    b.name.clone(),
                    language.clone(),
                    bar.category.clone(),
                    opt(bar.within_pct),
                    opt(bar.cross_agreement_pct),
                    opt(bar.non_agreement_pct),
                    opt(bar.reference_agreement_pct),
                    opt(bar.reference_non_agreement_pct),
                ];
                row.extend(bar.pair_counts.iter().map(|c| c.to_string()));
                rows.push(row);
            }
        }
        w.write_csv(
            "agreement_bars.csv",
            &[
                "benchmark",
                "language",
                "category",
                "within_pct",
                "cross_agreement_pct",
                "non_agreement_pct",
                "reference_agreement_pct",
                "reference_non_agreement_pct",
                "within_pairs",
                "cross_agreement_pairs",
                "non_agreement_pairs",
                "reference_agreement_pairs",
                "reference_non_agreement_pairs",
            ],
            &rows,
        )?;
    }
    log_cache(&s);
    finish(w)
}

// ------------------------------------------------------------------ verify

pub fn verify(dir: &Path) -> Result<(), Failure> {
    let report = verify_run(dir).map_err(|e| match e {
        Error::Io { .. } => Failure::data(format!("{e}")),
        other => other.into(),
    })?;
    println!("ok {} ({} files)", report.run_digest, report.files_checked);
    Ok(())
}
