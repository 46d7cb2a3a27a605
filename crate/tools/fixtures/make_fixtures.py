# SPDX-License-Identifier: MIT OR Apache-2.0
"""Builds the committed test fixtures under fixtures/.

  blimp-synth/    BLiMP-format JSONL benchmark + category map, lexicon TSV and
                  first-noun/first-verb annotation sidecars
  gpt2-tiny/      byte-level BPE tokenizer (vocab.json + merges.txt), a small
                  GPT-2 trained on the toy grammar, exported to the canonical
                  weight container, and reference ids/logits/log-probs
  llama-tiny/     random-init rotary / SiLU-gated checkpoint sharing the same
                  tokenizer, with its own reference logits

Usage: python3 tools/fixtures/make_fixtures.py [--steps N] [--out fixtures]
"""

import argparse
import hashlib
import json
import math
import os
import random
import sys

import torch
from safetensors.torch import save_file
from tokenizers import ByteLevelBPETokenizer

sys.path.insert(0, os.path.dirname(__file__))
import grammar  # noqa: E402

PAIRS_PER_PHENOMENON = 1000
CORPUS_SENTENCES = 300_000
VOCAB_SIZE = 512
EOT = "<|endoftext|>"

REFERENCE_SENTENCES = [
    "The dogs run.",
    "The dogs runs.",
    "Mary saw these pictures.",
    "Mary saw these picture.",
    "The friend of the teachers sleeps.",
    "No child has ever laughed.",
    "John knows what the girls found.",
    "The children saw themselves.",
    "A",
    "The dogs run. The dogs run.",
    "Ünïcödé ✓ 日本語 text, with 123 numbers!",
    "  leading and trailing spaces  ",
    "it's they're we've I'm you'll he'd",
]


def sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        h.update(f.read())
    return h.hexdigest()


def write_benchmark(out):
    bdir = os.path.join(out, "blimp-synth")
    os.makedirs(bdir, exist_ok=True)
    categories = {}
    all_good = set()
    bench = []
    for i, (uid, cat, method) in enumerate(grammar.PHENOMENA):
        pairs = grammar.minimal_pairs(method, PAIRS_PER_PHENOMENON, 1000 + i, set())
        categories[uid] = cat
        bench.append((uid, cat, pairs))
        with open(os.path.join(bdir, f"{uid}.jsonl"), "w", encoding="utf-8") as f:
            for j, (good, bad) in enumerate(pairs):
                rec = {
                    "sentence_good": good,
                    "sentence_bad": bad,
                    "field": "syntax",
                    "linguistics_term": cat,
                    "UID": uid,
                    "pairID": str(j),
                }
                f.write(json.dumps(rec, ensure_ascii=False) + "\n")
                all_good.add(good)
    with open(os.path.join(out, "blimp-synth.categories.json"), "w") as f:
        json.dump(categories, f, indent=2, sort_keys=True)
        f.write("\n")
    return bench, all_good


def write_lexical_resources(out, bench):
    """Lexicon TSV and first-noun / first-verb annotations for the benchmark."""
    rng = random.Random(7)
    # proper names count as nouns, as a tagger would have it
    nouns = sorted({w for pair in grammar.ANIMATE + grammar.INANIMATE + grammar.IRREGULAR
                    for w in pair} | {n.lower() for n in grammar.NAMES_M + grammar.NAMES_F})
    verbs = sorted({w for v in grammar.INTRANSITIVE + grammar.TRANSITIVE
                    + [tuple(x) for x in grammar.REFLEXIVE_VERBS] for w in v})
    zipf = {}
    for w in nouns + verbs:
        zipf[w] = round(rng.uniform(2.5, 5.5), 2)
    lex_path = os.path.join(out, "lexicon.tsv")
    with open(lex_path, "w", encoding="utf-8") as f:
        f.write("lemma\tpos\tzipf\tlength\n")
        for w in nouns:
            f.write(f"{w}\tnoun\t{zipf[w]}\t{len(w)}\n")
        for w in verbs:
            f.write(f"{w}\tverb\t{zipf[w]}\t{len(w)}\n")
    noun_set, verb_set = set(nouns), set(verbs)
    ann_path = os.path.join(out, "blimp-synth.annotations.jsonl")
    with open(ann_path, "w", encoding="utf-8") as f:
        for uid, _, pairs in bench:
            for j, (good, _) in enumerate(pairs):
                pair_id = f"{uid}/{j}"
                words, pos = [], 0
                for w in good.rstrip(".").split(" "):
                    words.append((w, pos))
                    pos += len(w.encode("utf-8")) + 1
                for tag, vocab in (("noun", noun_set), ("verb", verb_set)):
                    for w, start in words:
                        if w.lower() in vocab:
                            rec = {
                                "pair_id": pair_id,
                                "span_start": start,
                                "span_end": start + len(w.encode("utf-8")),
                                "pos": tag,
                                "zipf": zipf[w.lower()],
                                "length": len(w),
                            }
                            f.write(json.dumps(rec) + "\n")
                            break


def train_tokenizer(out, corpus):
    tdir = os.path.join(out, "gpt2-tiny")
    os.makedirs(tdir, exist_ok=True)
    tok = ByteLevelBPETokenizer()
    extra = REFERENCE_SENTENCES * 5
    tok.train_from_iterator(corpus[:100_000] + extra, vocab_size=VOCAB_SIZE,
                            min_frequency=2, special_tokens=[EOT], show_progress=False)
    tok.save_model(tdir)
    return tok


def encode(tok, text):
    return tok.encode(text).ids


def train_gpt2(tok, corpus, steps, seed):
    from transformers import GPT2Config, GPT2LMHeadModel

    torch.manual_seed(seed)
    eot = tok.token_to_id(EOT)
    cfg = GPT2Config(
        vocab_size=tok.get_vocab_size(), n_positions=64, n_embd=192, n_layer=6,
        n_head=4, n_inner=768, activation_function="gelu_new",
        resid_pdrop=0.0, embd_pdrop=0.0, attn_pdrop=0.0,
        layer_norm_epsilon=1e-5, bos_token_id=eot, eos_token_id=eot,
    )
    model = GPT2LMHeadModel(cfg)
    stream = []
    for s in corpus:
        stream.append(eot)
        stream.extend(encode(tok, s))
    data = torch.tensor(stream, dtype=torch.long)
    block, batch = 32, 48
    opt = torch.optim.AdamW(model.parameters(), lr=3e-3, weight_decay=0.01,
                            betas=(0.9, 0.98))
    warm = 200
    sched = torch.optim.lr_scheduler.LambdaLR(
        opt, lambda s: min(1.0, (s + 1) / warm) * 0.5 * (1 + math.cos(math.pi * min(s, steps) / steps)))
    g = torch.Generator().manual_seed(seed)
    model.train()
    for step in range(steps):
        starts = torch.randint(0, len(data) - block - 1, (batch,), generator=g)
        x = torch.stack([data[s:s + block] for s in starts])
        loss = model(input_ids=x, labels=x).loss
        opt.zero_grad()
        loss.backward()
        torch.nn.utils.clip_grad_norm_(model.parameters(), 1.0)
        opt.step()
        sched.step()
        if step % 200 == 0 or step == steps - 1:
            print(f"step {step} loss {loss.item():.4f}", flush=True)
    model.eval()
    return model


def gpt2_canonical(model):
    cfg = model.config
    sd = {k: v.detach().float().contiguous() for k, v in model.state_dict().items()}
    h = cfg.n_embd
    t = {
        "embed.tokens": sd["transformer.wte.weight"],
        "embed.positions": sd["transformer.wpe.weight"],
        "final_norm.weight": sd["transformer.ln_f.weight"],
        "final_norm.bias": sd["transformer.ln_f.bias"],
        "unembed.weight": sd["lm_head.weight"].clone(),
    }
    for i in range(cfg.n_layer):
        p = f"transformer.h.{i}."
        q = f"layers.{i}."
        w_qkv = sd[p + "attn.c_attn.weight"]  # [in, 3h]
        b_qkv = sd[p + "attn.c_attn.bias"]
        for j, name in enumerate(["q", "k", "v"]):
            t[q + f"attn.{name}.weight"] = w_qkv[:, j * h:(j + 1) * h].t().contiguous()
            t[q + f"attn.{name}.bias"] = b_qkv[j * h:(j + 1) * h].contiguous()
        t[q + "attn.o.weight"] = sd[p + "attn.c_proj.weight"].t().contiguous()
        t[q + "attn.o.bias"] = sd[p + "attn.c_proj.bias"]
        t[q + "norm1.weight"] = sd[p + "ln_1.weight"]
        t[q + "norm1.bias"] = sd[p + "ln_1.bias"]
        t[q + "norm2.weight"] = sd[p + "ln_2.weight"]
        t[q + "norm2.bias"] = sd[p + "ln_2.bias"]
        t[q + "mlp.up.weight"] = sd[p + "mlp.c_fc.weight"].t().contiguous()
        t[q + "mlp.up.bias"] = sd[p + "mlp.c_fc.bias"]
        t[q + "mlp.down.weight"] = sd[p + "mlp.c_proj.weight"].t().contiguous()
        t[q + "mlp.down.bias"] = sd[p + "mlp.c_proj.bias"]
    config = {
        "architecture": "gpt2",
        "n_layers": cfg.n_layer,
        "hidden": cfg.n_embd,
        "n_heads": cfg.n_head,
        "intermediate": cfg.n_inner,
        "vocab_size": cfg.vocab_size,
        "max_positions": cfg.n_positions,
        "layernorm_epsilon": cfg.layer_norm_epsilon,
        "activation": "gelu",
        "position_scheme": "learned-absolute",
        "norm": "layernorm",
        "attn_bias": True,
        "mlp_bias": True,
        "rope_theta": None,
        "bos_token_id": cfg.bos_token_id,
    }
    return t, config


def make_llama(vocab_size, bos, seed):
    from transformers import LlamaConfig, LlamaForCausalLM

    torch.manual_seed(seed)
    cfg = LlamaConfig(
        vocab_size=vocab_size, hidden_size=64, intermediate_size=160,
        num_hidden_layers=3, num_attention_heads=4, num_key_value_heads=4,
        max_position_embeddings=64, rms_norm_eps=1e-5, rope_theta=10000.0,
        tie_word_embeddings=False, bos_token_id=bos, eos_token_id=bos,
        attention_bias=False, mlp_bias=False,
    )
    model = LlamaForCausalLM(cfg)
    with torch.no_grad():
        for name, p in model.named_parameters():
            if name.endswith("norm.weight") or "layernorm" in name:
                p.copy_(1.0 + 0.1 * torch.randn_like(p))
            else:
                p.normal_(0.0, 0.15)
    model.eval()
    sd = {k: v.detach().float().contiguous() for k, v in model.state_dict().items()}
    t = {
        "embed.tokens": sd["model.embed_tokens.weight"],
        "final_norm.weight": sd["model.norm.weight"],
        "unembed.weight": sd["lm_head.weight"],
    }
    for i in range(cfg.num_hidden_layers):
        p = f"model.layers.{i}."
        q = f"layers.{i}."
        for a, b in (("q", "q_proj"), ("k", "k_proj"), ("v", "v_proj"), ("o", "o_proj")):
            t[q + f"attn.{a}.weight"] = sd[p + f"self_attn.{b}.weight"]
        t[q + "norm1.weight"] = sd[p + "input_layernorm.weight"]
        t[q + "norm2.weight"] = sd[p + "post_attention_layernorm.weight"]
        t[q + "mlp.gate.weight"] = sd[p + "mlp.gate_proj.weight"]
        t[q + "mlp.up.weight"] = sd[p + "mlp.up_proj.weight"]
        t[q + "mlp.down.weight"] = sd[p + "mlp.down_proj.weight"]
    config = {
        "architecture": "llama",
        "n_layers": cfg.num_hidden_layers,
        "hidden": cfg.hidden_size,
        "n_heads": cfg.num_attention_heads,
        "intermediate": cfg.intermediate_size,
        "vocab_size": cfg.vocab_size,
        "max_positions": cfg.max_position_embeddings,
        "layernorm_epsilon": cfg.rms_norm_eps,
        "activation": "silu-gated",
        "position_scheme": "rotary",
        "norm": "rmsnorm",
        "attn_bias": False,
        "mlp_bias": False,
        "rope_theta": 10000.0,
        "bos_token_id": bos,
    }
    return model, t, config


def save_canonical(tensors, config, path):
    ordered = {k: tensors[k].contiguous() for k in sorted(tensors)}
    save_file(ordered, path, metadata={"format": "synloc-weights-v1",
                                       "config": json.dumps(config, sort_keys=True)})


def write_reference(model, tok, bos, odir, sentences):
    ids_out, logits, logprobs = [], {}, []
    with torch.no_grad():
        for i, s in enumerate(sentences):
            ids = encode(tok, s)
            full = [bos] + ids
            out = model(input_ids=torch.tensor([full])).logits[0].float()
            logits[f"logits.{i}"] = out.contiguous()
            lp = torch.log_softmax(out.double(), dim=-1)
            total = sum(lp[t - 1, full[t]].item() for t in range(1, len(full)))
            ids_out.append(ids)
            logprobs.append(total)
    save_file(logits, os.path.join(odir, "reference_logits.safetensors"))
    with open(os.path.join(odir, "reference.json"), "w", encoding="utf-8") as f:
        json.dump({"bos_token_id": bos, "sentences": sentences, "ids": ids_out,
                   "logprobs": logprobs}, f, ensure_ascii=False, indent=1)
        f.write("\n")


def write_digests(out):
    digests = {}
    for root, _, files in os.walk(out):
        for name in sorted(files):
            if name == "DIGESTS.json":
                continue
            path = os.path.join(root, name)
            digests[os.path.relpath(path, out)] = sha256(path)
    with open(os.path.join(out, "DIGESTS.json"), "w") as f:
        json.dump(dict(sorted(digests.items())), f, indent=1)
        f.write("\n")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--steps", type=int, default=3000)
    ap.add_argument("--out", default="fixtures")
    ap.add_argument("--lexical-only", action="store_true",
                    help="only rewrite the lexicon and annotation sidecar")
    args = ap.parse_args()
    torch.set_num_threads(1)
    out = args.out
    os.makedirs(out, exist_ok=True)

    bench, bench_good = write_benchmark(out)
    write_lexical_resources(out, bench)
    if args.lexical_only:
        write_digests(out)
        return

    g = grammar.Gen(42)
    corpus = []
    while len(corpus) < CORPUS_SENTENCES:
        s = g.corpus_item()
        if s.split(". ")[0].rstrip(".") + "." not in bench_good:
            corpus.append(s)

    tok = train_tokenizer(out, corpus)
    bos = tok.token_to_id(EOT)
    gdir = os.path.join(out, "gpt2-tiny")

    # token-id reference for the tokenizer over a mixed corpus
    tok_cases = REFERENCE_SENTENCES + [
        "", " ", "aa", "Hello world", "naïve café", "emoji 🙂🙃 mix",
        "tabs\tand\nnewlines\n\n", "   ", "x  y", "'s'S's", "123abc456",
        "Москва большой город", "مرحبا بالعالم", "混合 text 和 中文",
    ]
    with open(os.path.join(gdir, "tokenizer_reference.json"), "w", encoding="utf-8") as f:
        json.dump([{"text": s, "ids": encode(tok, s)} for s in tok_cases], f,
                  ensure_ascii=False, indent=1)
        f.write("\n")

    model = train_gpt2(tok, corpus, args.steps, seed=0)
    tensors, config = gpt2_canonical(model)
    save_canonical(tensors, config, os.path.join(gdir, "model.safetensors"))
    write_reference(model, tok, bos, gdir, REFERENCE_SENTENCES)

    ldir = os.path.join(out, "llama-tiny")
    os.makedirs(ldir, exist_ok=True)
    lmodel, lt, lcfg = make_llama(tok.get_vocab_size(), bos, seed=1)
    save_canonical(lt, lcfg, os.path.join(ldir, "model.safetensors"))
    write_reference(lmodel, tok, bos, ldir, REFERENCE_SENTENCES)

    # quick sanity: accuracy per phenomenon with the reference stack
    with torch.no_grad():
        for uid, _, pairs in bench:
            wins = 0
            for good, bad in pairs[:100]:
                scores = []
                for s in (good, bad):
                    full = [bos] + encode(tok, s)
                    lp = torch.log_softmax(model(input_ids=torch.tensor([full])).logits[0], -1)
                    scores.append(sum(lp[t - 1, full[t]].item() for t in range(1, len(full))))
                wins += scores[0] > scores[1]
            print(f"{uid}: accuracy {wins / 100:.2f}")

    write_digests(out)


if __name__ == "__main__":
    main()
