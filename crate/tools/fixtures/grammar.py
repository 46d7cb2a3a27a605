# SPDX-License-Identifier: MIT OR Apache-2.0
"""Toy English grammar used to build the committed test fixtures.

Produces a grammatical training corpus for the fixture language model and a
BLiMP-format minimal-pair benchmark (same JSONL fields as the public BLiMP
release) covering agreement and non-agreement phenomena.
"""

import random

NAMES_M = ["John", "David", "Peter", "Mark", "Paul", "Tom", "Carl", "Brian"]
NAMES_F = ["Mary", "Susan", "Anna", "Laura", "Emma", "Lucy", "Grace", "Helen"]

# animate regular nouns: (singular, plural)
ANIMATE = [
    ("teacher", "teachers"), ("doctor", "doctors"), ("student", "students"),
    ("girl", "girls"), ("boy", "boys"), ("artist", "artists"),
    ("driver", "drivers"), ("farmer", "farmers"), ("singer", "singers"),
    ("dancer", "dancers"), ("actor", "actors"), ("pilot", "pilots"),
    ("dog", "dogs"), ("cat", "cats"), ("bird", "birds"), ("horse", "horses"),
    ("friend", "friends"), ("cousin", "cousins"), ("nurse", "nurses"),
    ("waiter", "waiters"),
]
IRREGULAR = [
    ("child", "children"), ("man", "men"), ("woman", "women"),
    ("mouse", "mice"), ("person", "people"), ("goose", "geese"),
]
INANIMATE = [
    ("book", "books"), ("car", "cars"), ("picture", "pictures"),
    ("apple", "apples"), ("chair", "chairs"), ("box", "boxes"),
    ("window", "windows"), ("letter", "letters"), ("song", "songs"),
    ("cake", "cakes"), ("table", "tables"), ("lamp", "lamps"),
    ("shirt", "shirts"), ("bottle", "bottles"), ("plate", "plates"),
]
ADJECTIVES = ["big", "small", "old", "young", "red", "happy", "quiet", "tall",
              "new", "green"]
# intransitive: (3sg, base, past, participle)
INTRANSITIVE = [
    ("runs", "run", "ran", "run"), ("sleeps", "sleep", "slept", "slept"),
    ("laughs", "laugh", "laughed", "laughed"),
    ("smiles", "smile", "smiled", "smiled"),
    ("waits", "wait", "waited", "waited"), ("falls", "fall", "fell", "fallen"),
    ("sings", "sing", "sang", "sung"), ("dances", "dance", "danced", "danced"),
    ("cries", "cry", "cried", "cried"), ("arrives", "arrive", "arrived", "arrived"),
]
# transitive: (3sg, base, past, participle)
TRANSITIVE = [
    ("sees", "see", "saw", "seen"), ("likes", "like", "liked", "liked"),
    ("finds", "find", "found", "found"), ("moves", "move", "moved", "moved"),
    ("buys", "buy", "bought", "bought"), ("cleans", "clean", "cleaned", "cleaned"),
    ("paints", "paint", "painted", "painted"), ("takes", "take", "took", "taken"),
    ("visits", "visit", "visited", "visited"), ("breaks", "break", "broke", "broken"),
    ("hides", "hide", "hid", "hidden"), ("wants", "want", "wanted", "wanted"),
]
# transitive verbs that take animate objects and reflexives
REFLEXIVE_VERBS = [("sees", "see", "saw"), ("likes", "like", "liked"),
                   ("finds", "find", "found"), ("hides", "hide", "hid"),
                   ("helps", "help", "helped"), ("hurts", "hurt", "hurt")]
PREPS = ["near", "behind", "beside", "with"]
RELATIONAL = [("friend", "friends"), ("cousin", "cousins"),
              ("teacher", "teachers"), ("doctor", "doctors")]
DEM_SG = ["this", "that"]
DEM_PL = ["these", "those"]


def cap(s):
    return s[0].upper() + s[1:]


def sentence(words, end="."):
    return cap(" ".join(words)) + end


class Gen:
    def __init__(self, seed):
        self.r = random.Random(seed)

    def c(self, xs):
        return self.r.choice(xs)

    def name(self):
        if self.r.random() < 0.5:
            return self.c(NAMES_M), "m"
        return self.c(NAMES_F), "f"

    def det(self, plural):
        if plural:
            return self.c(["the", "these", "those", "many", "some", "two"])
        return self.c(["the", "this", "that", "a", "every", "one"])

    def np(self, plural, pool=None, adj_p=0.3):
        pool = pool or (ANIMATE if self.r.random() < 0.6 else INANIMATE)
        noun = self.c(pool)[1 if plural else 0]
        words = [self.det(plural)]
        if self.r.random() < adj_p:
            words.append(self.c(ADJECTIVES))
        words.append(noun)
        return words

    def subject(self, plural, irregular_p=0.15):
        pool = IRREGULAR if self.r.random() < irregular_p else ANIMATE
        return self.np(plural, pool)

    # -- training corpus -------------------------------------------------
    def corpus_item(self):
        """One sentence, or with probability 1/2 followed by a sentence whose
        pronoun subject refers back to it, so that number and gender of the
        referent must be carried across the sentence boundary."""
        text, ref = self.corpus_sentence()
        if self.r.random() < 0.5:
            text += " " + self.continuation(ref)
        return text

    def continuation(self, ref):
        plural, kind = ref
        if plural:
            pron = "they"
        elif kind == "inanimate":
            pron = "it"
        elif kind in ("m", "f"):
            pron = "he" if kind == "m" else "she"
        else:
            pron = self.c(["he", "she"])
        t = self.r.randrange(3)
        if t == 0:
            v = self.c(INTRANSITIVE)
            return sentence([pron, v[1] if plural else v[0]])
        if t == 1:
            return sentence([pron, "are" if plural else "is", self.c(ADJECTIVES)])
        return sentence([pron, "were" if plural else "was", self.c(ADJECTIVES)])

    def np_ref(self, plural, pool=None, adj_p=0.3):
        pool = pool or (ANIMATE if self.r.random() < 0.6 else INANIMATE)
        kind = "inanimate" if pool is INANIMATE else "animate"
        return self.np(plural, pool, adj_p), (plural, kind)

    def corpus_sentence(self):
        """A grammatical sentence and its referent `(plural, kind)`."""
        t = self.r.randrange(11)
        pl = self.r.random() < 0.5
        subj = (pl, "animate")
        if t == 0:
            v = self.c(INTRANSITIVE)
            return sentence(self.subject(pl) + [v[1] if pl else v[0]]), subj
        if t == 1:
            v = self.c(TRANSITIVE)
            obj, _ = self.np_ref(self.r.random() < 0.5, INANIMATE)
            return sentence(self.subject(pl) + [v[1] if pl else v[0]] + obj), subj
        if t == 2:
            rel = self.c(RELATIONAL)
            inner_pl = self.r.random() < 0.5
            v = self.c(INTRANSITIVE)
            return sentence([self.det(pl), rel[1] if pl else rel[0], "of"]
                            + self.np(inner_pl, ANIMATE + IRREGULAR, 0.2)
                            + [v[1] if pl else v[0]]), subj
        if t == 3:
            nm, _ = self.name()
            v = self.c(TRANSITIVE)
            pool = INANIMATE if self.r.random() < 0.5 else ANIMATE
            obj, ref = self.np_ref(pl, pool, 0.4)
            return sentence([nm, v[2]] + obj), ref
        if t == 4:
            v = self.c(REFLEXIVE_VERBS)
            if self.r.random() < 0.5:
                nm, g = self.name()
                return sentence([nm, v[2], "himself" if g == "m" else "herself"]), (False, g)
            return sentence(self.subject(True) + [v[2], "themselves"]), (True, "animate")
        if t == 5:
            v = self.c(INTRANSITIVE)
            if self.r.random() < 0.5:
                return sentence(["no"] + self.subject(False)[1:]
                                + ["has", "ever", v[3]]), (False, "animate")
            return sentence(self.subject(pl) + ["has" if not pl else "have",
                                                "not", "ever", v[3]]), subj
        if t == 6:
            nm, g = self.name()
            v = self.c(TRANSITIVE)
            if self.r.random() < 0.5:
                return sentence([nm, self.c(["knows", "wonders", "asked"]), "what"]
                                + self.subject(pl) + [v[2]]), (False, g)
            return sentence([nm, self.c(["knows", "said", "thinks"]), "that"]
                            + self.subject(pl) + [v[2]]
                            + self.np(self.r.random() < 0.5, INANIMATE)), (False, g)
        if t == 7:
            v = self.c(INTRANSITIVE)
            return sentence(self.subject(pl) + [self.c(PREPS)]
                            + self.np(self.r.random() < 0.5) + [v[2]]), subj
        if t == 8:
            v = self.c(INTRANSITIVE)
            return sentence(self.subject(pl) + [v[2]]), subj
        if t == 9:
            v = self.c(TRANSITIVE)
            return sentence(self.subject(pl) + [v[2]] + self.np(self.r.random() < 0.5)), subj
        aux = ("are" if pl else "is") if self.r.random() < 0.5 else ("were" if pl else "was")
        return sentence(self.subject(pl) + [aux, self.c(ADJECTIVES)]), subj

    # -- minimal pairs ---------------------------------------------------
    def det_noun_1(self):
        nm, _ = self.name()
        v = self.c(TRANSITIVE)
        pl = self.r.random() < 0.5
        n = self.c(INANIMATE + ANIMATE)
        d = self.c(DEM_PL if pl else DEM_SG)
        good = [nm, v[2], d, n[1] if pl else n[0]]
        bad = [nm, v[2], d, n[0] if pl else n[1]]
        return sentence(good), sentence(bad)

    def det_noun_adj(self):
        nm, _ = self.name()
        v = self.c(TRANSITIVE)
        pl = self.r.random() < 0.5
        n = self.c(INANIMATE + ANIMATE)
        d = self.c(DEM_PL if pl else DEM_SG)
        a = self.c(ADJECTIVES)
        good = [nm, v[2], d, a, n[1] if pl else n[0]]
        bad = [nm, v[2], d, a, n[0] if pl else n[1]]
        return sentence(good), sentence(bad)

    def det_noun_irregular(self):
        nm, _ = self.name()
        v = self.c(TRANSITIVE)
        pl = self.r.random() < 0.5
        n = self.c(IRREGULAR)
        d = self.c(DEM_PL if pl else DEM_SG)
        good = [nm, v[2], d, n[1] if pl else n[0]]
        bad = [nm, v[2], d, n[0] if pl else n[1]]
        return sentence(good), sentence(bad)

    def sv_regular(self):
        pl = self.r.random() < 0.5
        subj = self.np(pl, ANIMATE, 0.3)
        v = self.c(INTRANSITIVE)
        return (sentence(subj + [v[1] if pl else v[0]]),
                sentence(subj + [v[0] if pl else v[1]]))

    def sv_distractor(self):
        pl = self.r.random() < 0.5
        rel = self.c(RELATIONAL)
        inner = self.np(not pl, ANIMATE, 0.0)
        v = self.c(INTRANSITIVE)
        head = [self.det(pl), rel[1] if pl else rel[0], "of"] + inner
        return (sentence(head + [v[1] if pl else v[0]]),
                sentence(head + [v[0] if pl else v[1]]))

    def sv_irregular(self):
        pl = self.r.random() < 0.5
        subj = self.np(pl, IRREGULAR, 0.3)
        v = self.c(INTRANSITIVE)
        return (sentence(subj + [v[1] if pl else v[0]]),
                sentence(subj + [v[0] if pl else v[1]]))

    def anaphor_number(self):
        v = self.c(REFLEXIVE_VERBS)
        if self.r.random() < 0.5:
            nm, g = self.name()
            refl = "himself" if g == "m" else "herself"
            return sentence([nm, v[2], refl]), sentence([nm, v[2], "themselves"])
        subj = self.subject(True)
        return (sentence(subj + [v[2], "themselves"]),
                sentence(subj + [v[2], self.c(["himself", "herself"])]))

    def transitive(self):
        pl = self.r.random() < 0.5
        subj = self.subject(pl)
        obj = self.np(self.r.random() < 0.5, INANIMATE)
        vt = self.c(TRANSITIVE)
        vi = self.c(INTRANSITIVE)
        return sentence(subj + [vt[2]] + obj), sentence(subj + [vi[2]] + obj)

    def npi_present(self):
        subj = self.subject(False)
        v = self.c(INTRANSITIVE)
        return (sentence(["no"] + subj[1:] + ["has", "ever", v[3]]),
                sentence(["the"] + subj[1:] + ["has", "ever", v[3]]))

    def wh_vs_that_gap(self):
        nm, _ = self.name()
        verb = self.c(["knows", "said", "thinks"])
        subj = self.subject(self.r.random() < 0.5)
        v = self.c(TRANSITIVE)
        good = [nm, self.c(["knows", "wonders", "asked"]), "what"] + subj + [v[2]]
        bad = [nm, verb, "that"] + subj + [v[2]]
        return sentence(good), sentence(bad)


PHENOMENA = [
    ("determiner_noun_agreement_1", "determiner_noun_agreement", "det_noun_1"),
    ("determiner_noun_agreement_with_adjective_1", "determiner_noun_agreement", "det_noun_adj"),
    ("determiner_noun_agreement_irregular_1", "determiner_noun_agreement", "det_noun_irregular"),
    ("regular_plural_subject_verb_agreement_1", "subject_verb_agreement", "sv_regular"),
    ("distractor_agreement_relational_noun", "subject_verb_agreement", "sv_distractor"),
    ("irregular_plural_subject_verb_agreement_1", "subject_verb_agreement", "sv_irregular"),
    ("anaphor_number_agreement", "anaphor_agreement", "anaphor_number"),
    ("transitive", "argument_structure", "transitive"),
    ("npi_present_1", "npi_licensing", "npi_present"),
    ("wh_vs_that_with_gap", "filler_gap_dependency", "wh_vs_that_gap"),
]


def minimal_pairs(method, n, seed, exclude):
    g = Gen(seed)
    out, seen = [], set()
    fn = getattr(g, method)
    tries = 0
    while len(out) < n:
        tries += 1
        if tries > n * 200:
            raise RuntimeError(f"{method}: could not draw {n} unique pairs")
        good, bad = fn()
        if good in seen or good in exclude or good == bad:
            continue
        seen.add(good)
        out.append((good, bad))
    return out
