"""Synthetic desk-scale worlds: a CMU-format lexicon with planted homophones,
a pre-training corpus and an FSC-style command dataset, plus phone-driven
ASR-like corruption.

Each content word (action / object / location) has a homophone partner:
a different spelling with the identical pronunciation. Partners only occur
in the pre-training corpus, in contexts disjoint from their originals, so
text-only pre-training has no reason to tie them together.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .eval import align_words
from .lexicon import Lexicon, parse_dictionary
from .slu import SluRecord

ARPABET_VOWELS = ("AA", "AE", "AH", "AO", "AW", "AY", "EH", "ER", "EY", "IH", "IY", "OW", "OY", "UH", "UW")
ARPABET_CONSONANTS = ("B", "CH", "D", "DH", "F", "G", "HH", "JH", "K", "L", "M", "N", "NG", "P", "R", "S", "SH",
                      "T", "TH", "V", "W", "Y", "Z", "ZH")

FILLERS = {
    "please": "P L IY1 Z",
    "the": "DH AH0",
    "in": "IH0 N",
    "now": "N AW1",
    "could": "K UH1 D",
    "you": "Y UW1",
    "my": "M AY1",
    "at": "AE1 T",
    "a": "AH0",
    "i": "AY1",
    "saw": "S AO1",
    "near": "N IH1 R",
    "is": "IH1 Z",
    "was": "W AA1 Z",
    "and": "AH0 N D",
    "with": "W IH1 DH",
}

SLU_TEMPLATES = (
    ("{action} the {object} in the {location}", True),
    ("please {action} the {object} in the {location}", True),
    ("could you {action} my {object} in the {location}", True),
    ("{action} the {object} now", False),
    ("please {action} the {object}", False),
    ("in the {location} {action} the {object}", True),
    ("could you {action} the {object} at the {location} now", True),
)

_CONS_LETTERS = "bcdfghjklmnprstvwz"
_VOWEL_LETTERS = "aeiou"


@dataclass
class SyntheticWorld:
    lexicon_lines: list[str]
    lexicon: Lexicon
    actions: list[str]
    objects: list[str]
    locations: list[str]
    homophones: dict[str, str]
    distractors: list[str]
    oov_words: list[str]
    pretrain_corpus: list[str]
    slu_train: list[SluRecord]
    slu_valid: list[SluRecord]
    slu_test: list[SluRecord]
    meta: dict = field(default_factory=dict)

    @property
    def keywords(self) -> list[str]:
        return self.actions + self.objects + self.locations


def _spell(rng, taken: set[str]) -> str:
    while True:
        n = int(rng.integers(2, 4))
        word = "".join(_CONS_LETTERS[rng.integers(len(_CONS_LETTERS))] + _VOWEL_LETTERS[rng.integers(5)]
                       for _ in range(n))
        if rng.random() < 0.5:
            word += _CONS_LETTERS[rng.integers(len(_CONS_LETTERS))]
        if word not in taken:
            taken.add(word)
            return word


def _pronounce(rng, taken: set[tuple[str, ...]]) -> tuple[str, ...]:
    while True:
        syll = int(rng.integers(1, 3))
        phones = []
        for _ in range(syll):
            phones.append(ARPABET_CONSONANTS[rng.integers(len(ARPABET_CONSONANTS))])
            phones.append(ARPABET_VOWELS[rng.integers(len(ARPABET_VOWELS))] + str(int(rng.integers(0, 3))))
        if rng.random() < 0.6:
            phones.append(ARPABET_CONSONANTS[rng.integers(len(ARPABET_CONSONANTS))])
        key = tuple(p.rstrip("012") for p in phones)
        if key not in taken:
            taken.add(key)
            return tuple(phones)


def make_world(seed: int = 0, n_actions: int = 3, n_objects: int = 3, n_locations: int = 3,
               n_distractors: int = 24, n_oov: int = 2, n_pretrain: int = 600,
               split: tuple[float, float] = (0.6, 0.2)) -> SyntheticWorld:
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, 0x5EED])))
    spelled: set[str] = set(FILLERS)
    prons: set[tuple[str, ...]] = {tuple(p.rstrip("012") for p in v.split()) for v in FILLERS.values()}
    entries: dict[str, tuple[str, ...]] = {w: tuple(p.split()) for w, p in FILLERS.items()}

    def new_words(n):
        out = []
        for _ in range(n):
            w = _spell(rng, spelled)
            entries[w] = _pronounce(rng, prons)
            out.append(w)
        return out

    actions, objects, locations = new_words(n_actions), new_words(n_objects), new_words(n_locations)
    distractors = new_words(n_distractors)
    homophones = {}
    for w in actions + objects + locations:
        h = _spell(rng, spelled)
        entries[h] = entries[w]
        homophones[w] = h
    oov = [_spell(rng, spelled) for _ in range(n_oov)]

    lines = [";;; synthetic pronunciation dictionary", ";;; generated for desk-scale experiments"]
    for w in sorted(entries):
        lines.append(f"{w.upper()}  {' '.join(entries[w])}")
        if rng.random() < 0.1:
            lines.append(f"{w.upper()}(2)  {' '.join(_pronounce(rng, set()))}")
    lex = parse_dictionary(lines)

    def pick(seq):
        return seq[int(rng.integers(len(seq)))]

    corpus = []
    hom_words = list(homophones.values())
    for i in range(n_pretrain):
        kind = i % 4
        if kind in (0, 1):
            tmpl = pick(SLU_TEMPLATES)[0]
            s = tmpl.format(action=pick(actions), object=pick(objects), location=pick(locations))
            if rng.random() < 0.5:
                s += " " + pick(distractors)
        elif kind == 2:
            s = " ".join([pick(("i saw", "a", "near")), pick(hom_words), pick(("was", "is", "and")),
                          pick(distractors), pick(("with", "and")), pick(hom_words)])
        else:
            s = " ".join([pick(distractors), pick(("is", "was", "with")), pick(hom_words), pick(distractors)])
        if oov and rng.random() < 0.05:
            s += " " + pick(oov)
        corpus.append(s)

    records = []
    for a in actions:
        for o in objects:
            for loc in locations:
                for tmpl, has_loc in SLU_TEMPLATES:
                    text = tmpl.format(action=a, object=o, location=loc)
                    slots = [("object", o)] + ([("location", loc)] if has_loc else [])
                    records.append(SluRecord(text=text, intent=f"{a}_{o}", slots=slots))
    # dedupe (templates without a location repeat across locations)
    seen, unique = set(), []
    for r in records:
        if r.text not in seen:
            seen.add(r.text)
            unique.append(r)
    order = rng.permutation(len(unique))
    unique = [unique[i] for i in order]
    n_train = int(split[0] * len(unique))
    n_valid = int(split[1] * len(unique))
    train = unique[:n_train]
    valid = unique[n_train:n_train + n_valid]
    test = unique[n_train + n_valid:]
    return SyntheticWorld(lines, lex, actions, objects, locations, homophones, distractors, oov,
                          corpus, train, valid, test, meta={"seed": seed})


def nearest_phone_neighbors(lex: Lexicon, words=None) -> dict[str, tuple[str, int]]:
    """For each word, the other lexicon word with the closest phone sequence and its distance.

    Ties resolve to the alphabetically first word.
    """
    words = sorted(lex.entries) if words is None else sorted(words)
    pool = sorted(lex.entries)
    out = {}
    for w in words:
        best = None
        for v in pool:
            if v == w:
                continue
            d, _ = align_words(list(lex.entries[w]), list(lex.entries[v]))
            if best is None or d < best[1]:
                best = (v, d)
        out[w] = best
    return out


def corrupt_text(text: str, neighbors: dict[str, tuple[str, int]], rate: float, rng,
                 max_distance: int = 0) -> str:
    """Replace each eligible word by its nearest-pronunciation neighbor with probability ``rate``."""
    out = []
    for w in text.split():
        nb = neighbors.get(w)
        if nb is not None and nb[1] <= max_distance and rng.random() < rate:
            out.append(nb[0])
        else:
            out.append(w)
    return " ".join(out)


def corrupt_records(records, lex: Lexicon, rate: float, seed: int, keywords=None,
                    max_distance: int = 0) -> list[str]:
    """Corrupted transcripts (ASR 1-best stand-ins) for ``records``, aligned one-to-one."""
    neighbors = nearest_phone_neighbors(lex, keywords)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, 0xA5A])))
    return [corrupt_text(r.text, neighbors, rate, rng, max_distance) for r in records]
