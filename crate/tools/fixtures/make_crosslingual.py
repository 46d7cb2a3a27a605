# SPDX-License-Identifier: MIT OR Apache-2.0
"""Builds the cross-lingual fixtures from the committed English benchmark.

  multi-synth/<lang>.jsonl   four phenomena per pseudo-language, each a
                             deterministic word-level cipher of the English
                             pairs, with `language` and `linguistics_term`
  crosslingual/features.csv  syntactic feature vectors (`--` = missing)
  crosslingual/distances.csv precomputed cosine distances; two pairs with
                             different vectors are injected with distance 0

Run after make_fixtures.py. Refreshes DIGESTS.json.

Usage: python3 tools/fixtures/make_crosslingual.py [--out fixtures]
"""

import argparse
import hashlib
import itertools
import json
import math
import os

PAIRS = 200
PHENOMENA = [
    ("regular_plural_subject_verb_agreement_1", "sv_agreement", "subject_verb_agreement"),
    ("distractor_agreement_relational_noun", "sv_agreement_distractor", "subject_verb_agreement"),
    ("determiner_noun_agreement_1", "det_noun_agreement", "determiner_noun_agreement"),
    ("transitive", "transitive", "argument_structure"),
]

VOWELS = "aeiou"


def rotate_vowels(w):
    return "".join(VOWELS[(VOWELS.index(c) + 1) % 5] if c in VOWELS else c for c in w)


def reverse(w):
    return w[::-1]


def suffix_o(w):
    return w + "o"


def swap_first(w):
    return w[1] + w[0] + w[2:] if len(w) > 2 else w


CIPHERS = {
    "en": lambda w: w,
    "xa": rotate_vowels,
    "xb": reverse,
    "xc": suffix_o,
    "xd": swap_first,
}

# en and xd share a vector: a legitimate similarity of 1
FEATURES = {
    "en": [1, 0, 1, 1, 0, 0.5],
    "xa": [1, 1, 0, 1, 0, 0.25],
    "xb": [0, 1, 1, 0, 1, 0.75],
    "xc": [1, 0, 0, 1, 1, 0.5],
    "xd": [1, 0, 1, 1, 0, 0.5],
    "xe": [0, 1, None, 1, 0, 1],
}
ARTIFACTS = {("xa", "xc"), ("xb", "xd")}


def translate(sentence, fn):
    body, end = (sentence[:-1], sentence[-1]) if sentence.endswith(".") else (sentence, "")
    words = [fn(w.lower()) for w in body.split(" ")]
    out = " ".join(words)
    return out[:1].upper() + out[1:] + end


def cosine(a, b):
    dot = sum(x * y for x, y in zip(a, b))
    return dot / math.sqrt(sum(x * x for x in a) * sum(y * y for y in b))


def sha256(path):
    with open(path, "rb") as f:
        return hashlib.sha256(f.read()).hexdigest()


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="fixtures")
    out = ap.parse_args().out

    mdir = os.path.join(out, "multi-synth")
    os.makedirs(mdir, exist_ok=True)
    for lang, fn in CIPHERS.items():
        with open(os.path.join(mdir, f"{lang}.jsonl"), "w", encoding="utf-8") as f:
            for src, uid, term in PHENOMENA:
                with open(os.path.join(out, "blimp-synth", f"{src}.jsonl"), encoding="utf-8") as s:
                    rows = [json.loads(line) for line in s][:PAIRS]
                for i, r in enumerate(rows):
                    rec = {
                        "sentence_good": translate(r["sentence_good"], fn),
                        "sentence_bad": translate(r["sentence_bad"], fn),
                        "linguistics_term": term,
                        "UID": uid,
                        "pairID": str(i),
                        "language": lang,
                    }
                    f.write(json.dumps(rec, ensure_ascii=False) + "\n")

    cdir = os.path.join(out, "crosslingual")
    os.makedirs(cdir, exist_ok=True)
    with open(os.path.join(cdir, "features.csv"), "w") as f:
        f.write("lang," + ",".join(f"f{i + 1}" for i in range(6)) + "\n")
        for lang, vec in FEATURES.items():
            f.write(lang + "," + ",".join("--" if v is None else repr(v) for v in vec) + "\n")
    with open(os.path.join(cdir, "distances.csv"), "w") as f:
        f.write("lang_a,lang_b,distance\n")
        complete = [l for l, v in FEATURES.items() if None not in v]
        for a, b in itertools.combinations(complete, 2):
            d = 0.0 if (a, b) in ARTIFACTS else 1.0 - cosine(FEATURES[a], FEATURES[b])
            f.write(f"{a},{b},{d!r}\n")

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


if __name__ == "__main__":
    main()
