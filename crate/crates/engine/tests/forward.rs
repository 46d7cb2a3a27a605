// SPDX-License-Identifier: MIT OR Apache-2.0

//! Forward-pass properties on random toy models and the fixture checkpoint.

mod common;

use common::{gpt2_config, llama_config, random_weights, tensors_with};
use ndarray::Array2;
use synloc_engine::scoring::sum_next_token_logprob;
use synloc_engine::{
    AblationSpec, Application, EngineError, LanguageModel, Model, ModelConfig, ModelWeights, NormKind, Site, Tokenizer,
    UnitId,
};

fn bits(a: &Array2<f32>) -> Vec<u32> {
    a.iter().map(|v| v.to_bits()).collect()
}

fn toy_models() -> Vec<Model> {
    vec![
        Model::new(random_weights(&gpt2_config(2, 8, 6), 7, 0.5)),
        Model::new(random_weights(&llama_config(2, 8, 6), 8, 0.5)),
    ]
}

fn fixture_lm() -> LanguageModel {
    let root = common::fixtures();
    LanguageModel::load(root.join("gpt2-tiny/model.safetensors"), root.join("gpt2-tiny")).unwrap()
}

#[test]
fn causality_exhaustive_on_toy_models() {
    let vocab = 6u32;
    let len = 4;
    for model in toy_models() {
        for code in 0..vocab.pow(len as u32) {
            let ids: Vec<u32> = (0..len).map(|i| (code / vocab.pow(i as u32)) % vocab).collect();
            let base = model.forward_logits(&ids, &AblationSpec::none()).unwrap();
            for t in 0..len {
                for alt in (0..vocab).filter(|&v| v != ids[t]) {
                    let mut changed = ids.clone();
                    changed[t] = alt;
                    let out = model.forward_logits(&changed, &AblationSpec::none()).unwrap();
                    for row in 0..t {
                        let (a, b) = (base.row(row), out.row(row));
                        assert!(
                            a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()),
                            "position {row} saw token {t}"
                        );
                    }
                }
            }
        }
    }
}

#[test]
fn empty_ablation_is_bitwise_noop() {
    for model in toy_models() {
        let ids = [1, 4, 2, 2, 5];
        let none = model.forward_logits(&ids, &AblationSpec::none()).unwrap();
        for spec in [
            AblationSpec::zero([]),
            AblationSpec::mean(0.7, []),
            AblationSpec::zero([]).at(Application::LastPosition),
        ] {
            assert_eq!(bits(&model.forward_logits(&ids, &spec).unwrap()), bits(&none));
        }
    }
}

/// Logits of `final_norm(0)` pushed through the unembedding.
fn zero_state_logits(w: &ModelWeights, cfg: &ModelConfig) -> Vec<f32> {
    let t = w.to_tensors();
    let normed: Vec<f32> = match cfg.norm {
        NormKind::LayerNorm => t["final_norm.bias"].1.clone(),
        NormKind::RmsNorm => vec![0.0; cfg.hidden],
    };
    let u = &t["unembed.weight"].1;
    (0..cfg.vocab_size)
        .map(|v| {
            (0..cfg.hidden)
                .map(|i| u[v * cfg.hidden + i] as f64 * normed[i] as f64)
                .sum::<f64>() as f32
        })
        .collect()
}

#[test]
fn zeroing_final_residual_leaves_only_norm_and_unembedding() {
    for cfg in [gpt2_config(2, 8, 6), llama_config(2, 8, 6)] {
        let w = random_weights(&cfg, 3, 0.5);
        let expected = zero_state_logits(&w, &cfg);
        let model = Model::new(w);
        let all = (0..cfg.hidden).map(|c| UnitId::residual(cfg.n_layers - 1, c));
        let spec = AblationSpec::zero(all);
        let a = model.forward_logits(&[1, 2, 3], &spec).unwrap();
        let b = model.forward_logits(&[5, 0, 4], &spec).unwrap();
        assert_eq!(bits(&a), bits(&b));
        for row in a.rows() {
            for (x, y) in row.iter().zip(&expected) {
                assert!((x - y).abs() < 1e-5, "{x} vs {y}");
            }
        }
    }
}

#[test]
fn zeroed_blocks_pass_the_embedding_through() {
    for cfg in [gpt2_config(3, 8, 6), llama_config(3, 8, 6)] {
        let t = tensors_with(&cfg, |name, i| {
            if name.starts_with("embed.") {
                ((i * 37 % 17) as f32 - 8.0) / 5.0
            } else if name.ends_with("norm1.weight") || name.ends_with("norm2.weight") || name == "final_norm.weight" {
                1.0
            } else {
                0.0
            }
        });
        let tok = t["embed.tokens"].1.clone();
        let pos = t.get("embed.positions").map(|p| p.1.clone());
        let model = Model::new(ModelWeights::from_tensors(cfg.clone(), t).unwrap());
        let space = model.unit_space(&[Site::Residual]).unwrap();
        let ids = [2u32, 5, 1];
        let out = model.forward(&ids, &AblationSpec::none(), Some(&space), false).unwrap();
        let captured = out.captured.unwrap();
        let h = cfg.hidden;
        let last = *ids.last().unwrap() as usize;
        let expected: Vec<f32> = (0..h)
            .map(|i| tok[last * h + i] + pos.as_ref().map_or(0.0, |p| p[(ids.len() - 1) * h + i]))
            .collect();
        for layer in 0..cfg.n_layers {
            assert_eq!(&captured[layer * h..(layer + 1) * h], &expected[..], "layer {layer}");
        }
    }
}

#[test]
fn ablation_does_not_reach_earlier_layers() {
    for model in toy_models() {
        let space = model
            .unit_space(&[Site::Residual, Site::AttnOut, Site::MlpOut])
            .unwrap();
        let ids = [3, 1, 4, 1, 5];
        let clean = model
            .forward(&ids, &AblationSpec::none(), Some(&space), false)
            .unwrap()
            .captured
            .unwrap();
        let spec = AblationSpec::zero([UnitId::residual(1, 0), UnitId::residual(1, 5), UnitId::residual(0, 3)]);
        let hit = model
            .forward(&ids, &spec, Some(&space), false)
            .unwrap()
            .captured
            .unwrap();
        for (i, u) in space.iter().enumerate() {
            let untouched = u.layer == 0 && u.site != Site::Residual;
            if untouched {
                assert_eq!(clean[i].to_bits(), hit[i].to_bits(), "{u:?}");
            }
        }
        // only layer 1 targeted: all of layer 0 and layer 1's module outputs unchanged
        let spec = AblationSpec::zero([UnitId::residual(1, 2)]);
        let hit = model
            .forward(&ids, &spec, Some(&space), false)
            .unwrap()
            .captured
            .unwrap();
        for (i, u) in space.iter().enumerate() {
            if u.layer == 0 || u.site != Site::Residual {
                assert_eq!(clean[i].to_bits(), hit[i].to_bits(), "{u:?}");
            } else if u.channel == 2 {
                assert_eq!(hit[i], 0.0);
            }
        }
    }
}

#[test]
fn last_position_ablation_spares_earlier_positions() {
    for model in toy_models() {
        let ids = [1, 2, 3, 4];
        let spec = AblationSpec::zero((0..8).map(|c| UnitId::residual(0, c))).at(Application::LastPosition);
        let clean = model.forward_logits(&ids, &AblationSpec::none()).unwrap();
        let hit = model.forward_logits(&ids, &spec).unwrap();
        for row in 0..3 {
            assert_eq!(
                bits(&clean.row(row).to_owned().insert_axis(ndarray::Axis(0))),
                bits(&hit.row(row).to_owned().insert_axis(ndarray::Axis(0)))
            );
        }
        assert_ne!(bits(&clean), bits(&hit));
    }
}

#[test]
fn input_errors() {
    let model = &toy_models()[0];
    let long: Vec<u32> = vec![1; 17];
    assert!(matches!(
        model.forward_logits(&long, &AblationSpec::none()),
        Err(EngineError::SequenceTooLong { len: 17, max: 16 })
    ));
    assert!(matches!(
        model.forward_logits(&[1, 6], &AblationSpec::none()),
        Err(EngineError::TokenOutOfRange { id: 6, .. })
    ));
    assert!(matches!(
        model.forward_logits(&[], &AblationSpec::none()),
        Err(EngineError::EmptySequence)
    ));
    let bad = AblationSpec::zero([UnitId::residual(9, 0)]);
    assert!(model.forward_logits(&[1], &bad).is_err());
    assert!(model
        .forward_logits(&[1], &AblationSpec::mean(f64::NAN, [UnitId::residual(0, 0)]))
        .is_err());
}

#[test]
fn thread_count_does_not_change_scores() {
    let lm = fixture_lm();
    let sentences: Vec<String> = (0..24)
        .map(|i| format!("The dogs near {} cats run.", ["the", "these", "a"][i % 3]))
        .collect();
    let refs: Vec<&str> = sentences.iter().map(String::as_str).collect();
    let run = |n: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .unwrap()
            .install(|| lm.sentence_logprobs(&refs, &AblationSpec::none()).unwrap())
    };
    let one: Vec<u64> = run(1).iter().map(|v| v.to_bits()).collect();
    for n in [2, 4] {
        assert_eq!(run(n).iter().map(|v| v.to_bits()).collect::<Vec<_>>(), one);
    }
    let space = lm.model().unit_space(&[Site::Residual]).unwrap();
    let a = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap()
        .install(|| lm.capture(&refs, &space).unwrap());
    let b = rayon::ThreadPoolBuilder::new()
        .num_threads(3)
        .build()
        .unwrap()
        .install(|| lm.capture(&refs, &space).unwrap());
    assert_eq!(bits(&a), bits(&b));
}

#[test]
fn scoring_depends_on_context() {
    let lm = fixture_lm();
    let s = "The dogs run.";
    let one = lm.sentence_logprob(s, &AblationSpec::none()).unwrap();
    let two = lm.sentence_logprob(&format!("{s} {s}"), &AblationSpec::none()).unwrap();
    assert!(one < 0.0);
    assert_ne!(two, 2.0 * one);
}

#[test]
fn single_token_sentence_is_one_term() {
    let lm = fixture_lm();
    let ids = lm.tokenizer().encode(".");
    assert_eq!(ids.len(), 1);
    let full = lm.encode_sentence(".");
    let logits = lm.model().forward_logits(&full, &AblationSpec::none()).unwrap();
    let row = logits.row(0);
    let max = row.iter().fold(f32::NEG_INFINITY, |m, &v| m.max(v)) as f64;
    let lse = row.iter().map(|&v| (v as f64 - max).exp()).sum::<f64>().ln() + max;
    let expected = row[ids[0] as usize] as f64 - lse;
    let got = lm.sentence_logprob(".", &AblationSpec::none()).unwrap();
    assert_eq!(got, expected);
    assert_eq!(got, sum_next_token_logprob(&logits, &full));
}

#[test]
fn capture_shapes_and_determinism() {
    let lm = fixture_lm();
    let cfg = lm.model().config().clone();
    let pairs = [
        ("The dogs run.", "The dogs run."),
        ("Mary saw these pictures.", "Mary saw these picture."),
    ];
    let (good, bad) = lm
        .capture_pairs(&pairs, &[Site::Residual, Site::AttnOut, Site::MlpOut])
        .unwrap();
    assert_eq!(good.dim(), (2, 3 * cfg.n_layers * cfg.hidden));
    assert_eq!(bad.dim(), good.dim());
    assert_eq!(
        bits(&good.row(0).to_owned().insert_axis(ndarray::Axis(0))),
        bits(&bad.row(0).to_owned().insert_axis(ndarray::Axis(0)))
    );
    assert!(good.iter().all(|v| v.is_finite()));
}

#[test]
fn tokenizer_larger_than_model_is_rejected() {
    let root = common::fixtures();
    let tok = Tokenizer::from_dir(root.join("gpt2-tiny")).unwrap();
    let model = Model::new(random_weights(&gpt2_config(1, 8, 6), 1, 0.1));
    assert!(LanguageModel::new(model, tok).is_err());
}
