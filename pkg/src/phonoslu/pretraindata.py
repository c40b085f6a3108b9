"""Pre-training example generation.

Whole-word masking over words (condMLM / MLM) and phones (condMSM / MSM),
oneMod / twoMod / textOnly strategies, and word-speech alignment (WSA)
positive/negative pairing. Every example draws from its own counter-based
RNG stream keyed by ``(seed, example index)`` so generation order and
parallelism never change the output.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .textproc import (
    MASK_ID,
    EncodedExample,
    IdSpace,
    PairedUtterance,
    Span,
    encode_pair,
    encode_text,
)

SHARD_FORMAT = "phonoslu-shard"
SHARD_VERSION = 1

MATCH, MISMATCH = "match", "mismatch"
COND_MLM, COND_MSM, MLM, MSM, WSA = "condMLM", "condMSM", "MLM", "MSM", "WSA"
STRATEGIES = ("oneMod", "twoMod", "textOnly")
MASK_ACTION, RANDOM_ACTION, KEEP_ACTION = "mask", "random", "keep"


class ConfigError(ValueError):
    pass


@dataclass
class MaskingConfig:
    word_mask_pct: float = 15.0
    phone_mask_pct: float = 0.0
    strategy: str = "textOnly"
    # extra plain-MLM branch (text-only layout) drawn alongside the others under oneMod
    text_mlm_pct: float = 0.0
    substitution_split: tuple[float, float, float] = (0.8, 0.1, 0.1)
    wsa_enabled: bool = False
    wsa_negative_rate: float = 0.5
    seed: int = 0

    def __post_init__(self):
        self.substitution_split = tuple(float(x) for x in self.substitution_split)

    def validate(self) -> "MaskingConfig":
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"unknown masking strategy {self.strategy!r}; expected one of {STRATEGIES}")
        for name in ("word_mask_pct", "phone_mask_pct", "text_mlm_pct"):
            v = getattr(self, name)
            if not 0 <= v <= 100:
                raise ConfigError(f"{name} must lie in [0, 100], got {v}")
        split = self.substitution_split
        if len(split) != 3 or any(x < 0 for x in split) or abs(sum(split) - 1.0) > 1e-9:
            raise ConfigError(f"substitution_split must be 3 non-negative probabilities summing to 1, got {split}")
        if not 0 <= self.wsa_negative_rate <= 1:
            raise ConfigError(f"wsa_negative_rate must lie in [0, 1], got {self.wsa_negative_rate}")
        if self.wsa_enabled and self.strategy == "oneMod" and self.word_mask_pct == 100 and self.phone_mask_pct == 100:
            raise ConfigError("WSA is infeasible with oneMod 100%/100% masking: "
                              "one modality is always fully hidden")
        if self.wsa_enabled and self.text_mlm_pct > 0:
            raise ConfigError("WSA needs a phone sequence; it cannot be combined with the text-only MLM branch")
        if self.text_mlm_pct > 0 and self.strategy != "oneMod":
            raise ConfigError("text_mlm_pct is an extra oneMod branch; use strategy='oneMod'")
        if self.strategy == "textOnly" and self.phone_mask_pct > 0:
            raise ConfigError("textOnly masks words only; phone_mask_pct must be 0")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        return self


# Named task presets. "+MLM 15%+NSP" maps NSP onto the WSA pairing task since
# the corpus holds single utterances.
PRESETS: dict[str, dict] = {
    "+MLM 15%": dict(word_mask_pct=15, strategy="textOnly"),
    "+MLM 15%+NSP": dict(word_mask_pct=15, strategy="textOnly", wsa_enabled=True),
    "+condMLM 100%+condMSM 100%(oneMod)": dict(word_mask_pct=100, phone_mask_pct=100, strategy="oneMod"),
    "+condMLM 30%+condMSM 30%(twoMod)": dict(word_mask_pct=30, phone_mask_pct=30, strategy="twoMod"),
    "+condMLM 30%+condMSM 30%(twoMod)+WSA": dict(word_mask_pct=30, phone_mask_pct=30, strategy="twoMod",
                                                 wsa_enabled=True),
    "+condMLM 100%+MLM 15%(oneMod)": dict(word_mask_pct=100, text_mlm_pct=15, strategy="oneMod"),
    "+condMSM 100%+MLM 15%(oneMod)": dict(word_mask_pct=0, phone_mask_pct=100, text_mlm_pct=15,
                                          strategy="oneMod"),
    "+condMLM 100%+condMSM 100%+MLM 15%(oneMod)": dict(word_mask_pct=100, phone_mask_pct=100, text_mlm_pct=15,
                                                       strategy="oneMod"),
}


def preset(name: str, **overrides) -> MaskingConfig:
    try:
        base = PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown task preset {name!r}; known: {sorted(PRESETS)}") from None
    fields = {"word_mask_pct": 0.0, "phone_mask_pct": 0.0, "text_mlm_pct": 0.0, "wsa_enabled": False}
    fields.update(base)
    fields.update(overrides)
    return MaskingConfig(**fields).validate()


@dataclass
class PretrainExample:
    encoded: EncodedExample
    loss_flags: frozenset
    # (modality, word index, action) for every selected word; diagnostics only
    mask_log: list[tuple[str, int, str]] = field(default_factory=list)


def example_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, index])))


def _num_selected(pct: float, m: int, rng: np.random.Generator) -> int:
    # stochastic rounding keeps the expected rate at exactly pct% of words
    x = pct / 100.0 * m
    k = math.floor(x)
    if rng.random() < x - k:
        k += 1
    if pct > 0 and k == 0:
        k = 1
    return min(k, m)


def _action(rng: np.random.Generator, split: Sequence[float]) -> str:
    r = rng.random()
    if r < split[0]:
        return MASK_ACTION
    if r < split[0] + split[1]:
        return RANDOM_ACTION
    return KEEP_ACTION


def _mask_spans(ids: list[int], spans: Sequence[Span], pct: float, split, rng,
                mask_id: int, pool: Sequence[int]) -> tuple[dict[int, int], list[tuple[int, str]]]:
    m = len(spans)
    if pct <= 0 or m == 0:
        return {}, []
    k = _num_selected(pct, m, rng)
    chosen = sorted(int(i) for i in rng.choice(m, size=k, replace=False))
    targets: dict[int, int] = {}
    log = []
    for w in chosen:
        action = _action(rng, split)
        a, b = spans[w]
        for pos in range(a, b):
            targets[pos] = ids[pos]
            if action == MASK_ACTION:
                ids[pos] = mask_id
            elif action == RANDOM_ACTION:
                ids[pos] = int(pool[rng.integers(len(pool))])
        log.append((w, action))
    return targets, log


def mask_words(enc: EncodedExample, cfg: MaskingConfig, rng: np.random.Generator, space: IdSpace,
               pct: float | None = None) -> tuple[list[int], dict[int, int], list[tuple[int, str]]]:
    """Whole-word masking of the W region; returns (ids, mlm_targets, per-word actions)."""
    ids = list(enc.input_ids)
    spans = [t for t, _ in enc.word_spans]
    pct = cfg.word_mask_pct if pct is None else pct
    targets, log = _mask_spans(ids, spans, pct, cfg.substitution_split, rng, MASK_ID, space.word_ids)
    return ids, targets, log


def mask_phones(enc: EncodedExample, cfg: MaskingConfig, rng: np.random.Generator, space: IdSpace,
                pct: float | None = None) -> tuple[list[int], dict[int, int], list[tuple[int, str]]]:
    """Whole-word masking of the P region: a selected word loses its entire phone span."""
    ids = list(enc.input_ids)
    pct = cfg.phone_mask_pct if pct is None else pct
    targets, log = _mask_spans(ids, enc.phone_word_spans, pct, cfg.substitution_split, rng,
                               space.mask_phone_id, space.real_phone_ids)
    return ids, targets, log


def loss_flags_for(enc: EncodedExample) -> frozenset:
    flags = set()
    aligned = enc.p_region is not None and enc.wsa_label != MISMATCH
    if enc.mlm_targets:
        flags.add(COND_MLM if aligned else MLM)
    if enc.msm_targets:
        flags.add(COND_MSM if aligned else MSM)
    if enc.wsa_label is not None:
        flags.add(WSA)
    return frozenset(flags)


def _branches(cfg: MaskingConfig) -> list[str]:
    out = []
    if cfg.word_mask_pct > 0:
        out.append("word")
    if cfg.phone_mask_pct > 0:
        out.append("phone")
    if cfg.text_mlm_pct > 0:
        out.append("text")
    return out


def apply_strategy(u: PairedUtterance, cfg: MaskingConfig, rng: np.random.Generator, space: IdSpace,
                   max_seq_len: int, donor: PairedUtterance | None = None,
                   wsa_label: str | None = None) -> PretrainExample:
    """Encode ``u`` and mask it according to the configured strategy.

    ``donor`` supplies a mismatched phone sequence for WSA negatives.
    """
    vocab = space.vocab
    branch = None
    if cfg.strategy == "oneMod":
        options = _branches(cfg)
        if options:
            branch = options[int(rng.integers(len(options)))]
    if cfg.strategy == "textOnly" and wsa_label is None or branch == "text":
        enc = encode_text(u, vocab, max_seq_len)
    else:
        enc = encode_pair(u, vocab, space, max_seq_len, phones=donor)
    enc.wsa_label = wsa_label

    log: list[tuple[str, int, str]] = []
    do_words = cfg.strategy in ("twoMod", "textOnly") or branch in ("word", "text")
    do_phones = cfg.strategy == "twoMod" or branch == "phone"
    ids = list(enc.input_ids)
    if do_words:
        pct = cfg.text_mlm_pct if branch == "text" else cfg.word_mask_pct
        ids, enc.mlm_targets, wlog = mask_words(enc, cfg, rng, space, pct=pct)
        log += [("word", w, a) for w, a in wlog]
    if do_phones:
        staged = enc.copy()
        staged.input_ids = ids
        ids, enc.msm_targets, plog = mask_phones(staged, cfg, rng, space)
        log += [("phone", w, a) for w, a in plog]
    enc.input_ids = ids
    return PretrainExample(enc, loss_flags_for(enc), log)


def generate_examples(corpus: Sequence[PairedUtterance], cfg: MaskingConfig, space: IdSpace,
                      max_seq_len: int, dupe_factor: int = 1) -> list[PretrainExample]:
    """Materialize ``dupe_factor`` statically-masked copies of the corpus.

    With WSA enabled each example is a negative with probability
    ``wsa_negative_rate``, pairing W with the phones of a different utterance.
    """
    cfg.validate()
    n = len(corpus)
    if cfg.wsa_enabled and cfg.wsa_negative_rate > 0 and n < 2:
        raise ValueError("cannot sample mismatched phone sequence: corpus needs at least 2 utterances")
    out = []
    for dup in range(dupe_factor):
        for i, u in enumerate(corpus):
            out.append(make_example(corpus, i, dup * n + i, cfg, space, max_seq_len))
    return out


def make_example(corpus: Sequence[PairedUtterance], i: int, index: int, cfg: MaskingConfig,
                 space: IdSpace, max_seq_len: int) -> PretrainExample:
    rng = example_rng(cfg.seed, index)
    donor = None
    label = None
    if cfg.wsa_enabled:
        label = MATCH
        if rng.random() < cfg.wsa_negative_rate:
            j = int(rng.integers(len(corpus) - 1))
            if j >= i:
                j += 1
            donor = corpus[j]
            label = MISMATCH
    return apply_strategy(corpus[i], cfg, rng, space, max_seq_len, donor=donor, wsa_label=label)


def build_wsa_batch(corpus: Sequence[PairedUtterance], cfg: MaskingConfig, space: IdSpace,
                    max_seq_len: int) -> list[PretrainExample]:
    if not cfg.wsa_enabled:
        raise ConfigError("build_wsa_batch requires wsa_enabled=True")
    return generate_examples(corpus, cfg, space, max_seq_len)


def masking_stats(examples: Iterable[PretrainExample]) -> dict:
    """Masking-rate, substitution-split, WSA and whole-word diagnostics."""
    words = selected = examples_n = negatives = wsa_n = 0
    atomicity_violations = 0
    actions: Counter = Counter()
    for ex in examples:
        enc = ex.encoded
        examples_n += 1
        if enc.wsa_label is not None:
            wsa_n += 1
            negatives += enc.wsa_label == MISMATCH
        if enc.mlm_targets or any(mod == "word" for mod, _, _ in ex.mask_log):
            words += len(enc.word_spans)
            selected += sum(1 for mod, _, _ in ex.mask_log if mod == "word")
        for mod, _, a in ex.mask_log:
            actions[a] += 1
        atomicity_violations += count_atomicity_violations(enc)
    total_actions = sum(actions.values()) or 1
    return {
        "examples": examples_n,
        "words_considered": words,
        "words_selected": selected,
        "word_mask_rate": selected / words if words else 0.0,
        "action_fractions": {a: actions[a] / total_actions for a in (MASK_ACTION, RANDOM_ACTION, KEEP_ACTION)},
        "wsa_examples": wsa_n,
        "negative_fraction": negatives / wsa_n if wsa_n else 0.0,
        "atomicity_violations": atomicity_violations,
    }


def count_atomicity_violations(enc: EncodedExample) -> int:
    bad = 0
    for tspan, _ in enc.word_spans:
        hit = [p in enc.mlm_targets for p in range(*tspan)]
        bad += any(hit) and not all(hit)
    for pspan in enc.phone_word_spans:
        hit = [p in enc.msm_targets for p in range(*pspan)]
        bad += any(hit) and not all(hit)
    return bad


# -- shards -------------------------------------------------------------------

def _record(ex: PretrainExample) -> dict:
    enc = ex.encoded
    return {
        "input_ids": enc.input_ids,
        "segment_ids": enc.segment_ids,
        "position_ids": enc.position_ids,
        "w_region": list(enc.w_region),
        "p_region": list(enc.p_region) if enc.p_region is not None else None,
        "word_spans": [[list(t), list(p) if p is not None else None] for t, p in enc.word_spans],
        "phone_word_spans": [list(s) for s in enc.phone_word_spans],
        "wsa_label": enc.wsa_label,
        "mlm_targets": [[k, v] for k, v in sorted(enc.mlm_targets.items())],
        "msm_targets": [[k, v] for k, v in sorted(enc.msm_targets.items())],
        "loss_flags": sorted(ex.loss_flags),
        "mask_log": [list(x) for x in ex.mask_log],
    }


def _from_record(r: dict) -> PretrainExample:
    enc = EncodedExample(
        input_ids=r["input_ids"],
        segment_ids=r["segment_ids"],
        position_ids=r["position_ids"],
        w_region=tuple(r["w_region"]),
        p_region=tuple(r["p_region"]) if r["p_region"] is not None else None,
        word_spans=[(tuple(t), tuple(p) if p is not None else None) for t, p in r["word_spans"]],
        phone_word_spans=[tuple(s) for s in r["phone_word_spans"]],
        wsa_label=r["wsa_label"],
        mlm_targets={k: v for k, v in r["mlm_targets"]},
        msm_targets={k: v for k, v in r["msm_targets"]},
    )
    return PretrainExample(enc, frozenset(r["loss_flags"]), [tuple(x) for x in r["mask_log"]])


def write_shard(path, examples: Iterable[PretrainExample], cfg: MaskingConfig | None = None) -> int:
    """Line-delimited JSON shard; the first line is a versioned header."""
    n = 0
    with open(path, "w", encoding="utf-8") as f:
        header = {"format": SHARD_FORMAT, "version": SHARD_VERSION}
        if cfg is not None:
            header["masking"] = asdict(cfg)
        f.write(json.dumps(header, sort_keys=True) + "\n")
        for ex in examples:
            f.write(json.dumps(_record(ex), separators=(",", ":")) + "\n")
            n += 1
    return n


def read_shard(path) -> list[PretrainExample]:
    with open(path, encoding="utf-8") as f:
        header = json.loads(f.readline())
        if header.get("format") != SHARD_FORMAT:
            raise ValueError(f"{path}: not a {SHARD_FORMAT} file")
        if header.get("version") != SHARD_VERSION:
            raise ValueError(f"{path}: unsupported shard version {header.get('version')}")
        return [_from_record(json.loads(line)) for line in f if line.strip()]
