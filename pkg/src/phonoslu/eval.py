"""Intent accuracy, semantic error rate, ASR confusion pairs and embedding MRR."""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

Frame = tuple[str, Sequence[tuple[str, str]]]

MATCH_OP, SUB_OP, DEL_OP, INS_OP = "match", "sub", "del", "ins"

# cosine similarities closer than this are ties; absorbs rounding between
# mathematically equal values computed along different float paths
COSINE_TIE_TOL = 1e-12


def intent_accuracy(predictions: Sequence, golds: Sequence) -> float:
    if len(predictions) != len(golds):
        raise ValueError(f"{len(predictions)} predictions for {len(golds)} references")
    if not golds:
        raise ValueError("intent accuracy over an empty set")
    return sum(p == g for p, g in zip(predictions, golds)) / len(golds)


@dataclass
class SemErCounts:
    cor: int = 0
    dele: int = 0
    ins: int = 0
    sub: int = 0

    def __add__(self, other: "SemErCounts") -> "SemErCounts":
        return SemErCounts(self.cor + other.cor, self.dele + other.dele, self.ins + other.ins, self.sub + other.sub)

    @property
    def errors(self) -> int:
        return self.dele + self.ins + self.sub

    @property
    def reference_slots(self) -> int:
        return self.cor + self.dele + self.sub

    @property
    def value(self) -> float:
        if self.reference_slots == 0:
            raise ZeroDivisionError("semER undefined: no reference slots")
        return self.errors / self.reference_slots

    def as_dict(self) -> dict:
        return {"cor": self.cor, "del": self.dele, "ins": self.ins, "sub": self.sub}


def semer_counts(ref: Frame, hyp: Frame) -> SemErCounts:
    """Count Cor/Del/Ins/Sub for one utterance; the intent counts as one extra slot.

    Slots are multisets of (name, value). Exact (name, value) matches are paired
    first, then leftover slots sharing a name become substitutions.
    """
    ref_intent, ref_slots = ref
    hyp_intent, hyp_slots = hyp
    c = SemErCounts()
    if ref_intent == hyp_intent:
        c.cor += 1
    else:
        c.sub += 1
    ref_left = Counter(ref_slots)
    hyp_left = Counter(hyp_slots)
    exact = ref_left & hyp_left
    c.cor += sum(exact.values())
    ref_left -= exact
    hyp_left -= exact
    ref_names = Counter(n for (n, _), k in ref_left.items() for _ in range(k))
    hyp_names = Counter(n for (n, _), k in hyp_left.items() for _ in range(k))
    for name in ref_names.keys() | hyp_names.keys():
        r, h = ref_names[name], hyp_names[name]
        paired = min(r, h)
        c.sub += paired
        c.dele += r - paired
        c.ins += h - paired
    return c


def semer(ref: Frame, hyp: Frame) -> tuple[SemErCounts, float]:
    c = semer_counts(ref, hyp)
    return c, c.value


def corpus_semer(refs: Sequence[Frame], hyps: Sequence[Frame]) -> SemErCounts:
    if len(refs) != len(hyps):
        raise ValueError("reference and hypothesis frame counts differ")
    total = SemErCounts()
    for r, h in zip(refs, hyps):
        total = total + semer_counts(r, h)
    return total


# -- alignment & confusion pairs ----------------------------------------------

def align_words(ref: Sequence[str], hyp: Sequence[str]) -> tuple[int, list[tuple[str, str | None, str | None]]]:
    """Minimum edit-distance alignment; returns (cost, ops).

    Each op is ``(kind, ref_word, hyp_word)``. Backtrace ties prefer match,
    then substitution, then deletion, then insertion.
    """
    n, m = len(ref), len(hyp)
    d = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(n + 1):
        d[i][0] = i
    for j in range(m + 1):
        d[0][j] = j
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            diag = d[i - 1][j - 1] + (ref[i - 1] != hyp[j - 1])
            d[i][j] = min(diag, d[i - 1][j] + 1, d[i][j - 1] + 1)
    ops = []
    i, j = n, m
    while i or j:
        if i and j and ref[i - 1] == hyp[j - 1] and d[i][j] == d[i - 1][j - 1]:
            ops.append((MATCH_OP, ref[i - 1], hyp[j - 1]))
            i, j = i - 1, j - 1
        elif i and j and d[i][j] == d[i - 1][j - 1] + 1:
            ops.append((SUB_OP, ref[i - 1], hyp[j - 1]))
            i, j = i - 1, j - 1
        elif i and d[i][j] == d[i - 1][j] + 1:
            ops.append((DEL_OP, ref[i - 1], None))
            i -= 1
        else:
            ops.append((INS_OP, None, hyp[j - 1]))
            j -= 1
    ops.reverse()
    return d[n][m], ops


@dataclass(frozen=True)
class ConfusionPair:
    hyp_word: str
    ref_word: str
    count: int = 1


def extract_confusion_pairs(refs: Sequence[str], hyps: Sequence[str], top_k: int = 20,
                            vocab_filter=None) -> list[ConfusionPair]:
    """Most frequent substitution pairs between reference and ASR transcripts.

    Pairs with a word that is not a single entry of ``vocab_filter`` are
    dropped. Ties in count are ordered by (hyp_word, ref_word).
    """
    if len(refs) != len(hyps):
        raise ValueError(f"{len(refs)} references but {len(hyps)} hypotheses")
    counts: Counter = Counter()
    for r, h in zip(refs, hyps):
        _, ops = align_words(r.lower().split(), h.lower().split())
        for kind, rw, hw in ops:
            if kind == SUB_OP:
                counts[(hw, rw)] += 1
    pairs = [(k, c) for k, c in counts.items()
             if vocab_filter is None or (k[0] in vocab_filter and k[1] in vocab_filter)]
    pairs.sort(key=lambda kc: (-kc[1], kc[0]))
    return [ConfusionPair(h, r, c) for (h, r), c in pairs[:top_k]]


# -- MRR ----------------------------------------------------------------------

def reciprocal_ranks(pairs: Sequence[ConfusionPair], embeddings, word_ids: dict[str, int],
                     candidate_ids: Sequence[int]) -> list[float]:
    """Reciprocal rank of each ref word when the candidates are sorted by cosine to the hyp word.

    Candidates exclude the query; equal similarities (within ``COSINE_TIE_TOL``)
    rank the lower id first.
    """
    emb = np.asarray(embeddings, dtype=np.float64)
    cand = np.asarray(sorted(set(int(c) for c in candidate_ids)), dtype=np.int64)
    norms = np.linalg.norm(emb[cand], axis=1)
    if (norms == 0).any():
        bad = int(cand[np.argmax(norms == 0)])
        name = next((w for w, i in word_ids.items() if i == bad), str(bad))
        raise ValueError(f"zero-norm embedding for token {name!r}")
    unit = emb[cand] / norms[:, None]
    out = []
    for pair in pairs:
        for w in (pair.hyp_word, pair.ref_word):
            if w not in word_ids:
                raise KeyError(f"word {w!r} is not a single vocabulary token")
        q, r = word_ids[pair.hyp_word], word_ids[pair.ref_word]
        qv = emb[q]
        qn = np.linalg.norm(qv)
        if qn == 0:
            raise ValueError(f"zero-norm embedding for token {pair.hyp_word!r}")
        sims = unit @ (qv / qn)
        keep = cand != q
        c, s = cand[keep], sims[keep]
        if r not in set(c.tolist()):
            raise KeyError(f"reference word {pair.ref_word!r} is not a candidate")
        s_ref = s[c == r][0]
        tied = np.abs(s - s_ref) <= COSINE_TIE_TOL
        rank = 1 + int(((s > s_ref) & ~tied).sum()) + int((tied & (c < r)).sum())
        out.append(1.0 / rank)
    return out


def mrr(pairs: Sequence[ConfusionPair], embeddings, word_ids: dict[str, int],
        candidate_ids: Sequence[int] | None = None) -> float:
    if not pairs:
        raise ValueError("MRR over an empty pair list")
    if candidate_ids is None:
        candidate_ids = list(word_ids.values())
    rr = reciprocal_ranks(pairs, embeddings, word_ids, candidate_ids)
    return sum(rr) / len(rr)


# -- reports ------------------------------------------------------------------

@dataclass
class MetricReport:
    icacc: float | None = None
    semer: dict | None = None
    mrr: float | None = None
    confusion_pairs: list = field(default_factory=list)
    label: str | None = None

    @classmethod
    def from_predictions(cls, ref_frames: Sequence[Frame], hyp_frames: Sequence[Frame],
                         with_slots: bool = True, label: str | None = None) -> "MetricReport":
        acc = intent_accuracy([h[0] for h in hyp_frames], [r[0] for r in ref_frames])
        sem = None
        if with_slots:
            c = corpus_semer(ref_frames, hyp_frames)
            sem = {**c.as_dict(), "value": c.value}
        return cls(icacc=acc, semer=sem, label=label)

    def as_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None and v != []}

    def to_text(self) -> str:
        """Sectioned, human-readable report."""
        lines = []
        if self.label:
            lines.append(f"model: {self.label}")
        if self.icacc is not None:
            lines.append(f"icacc: {self.icacc:.4f}")
        if self.semer is not None:
            s = self.semer
            lines.append("semer:")
            for k in ("cor", "del", "ins", "sub"):
                lines.append(f"  {k}: {s[k]}")
            lines.append(f"  value: {s['value']:.4f}")
        if self.mrr is not None:
            lines.append(f"mrr: {self.mrr:.4f}")
        if self.confusion_pairs:
            lines.append("confusion_pairs:")
            for p in self.confusion_pairs:
                lines.append(f"  {p['hyp_word']} -> {p['ref_word']}: {p['count']}")
        return "\n".join(lines) + "\n"

    def to_jsonl(self) -> str:
        """Machine-readable variant: one JSON object per metric."""
        out = []
        d = self.as_dict()
        for key in ("icacc", "semer", "mrr", "confusion_pairs"):
            if key in d:
                out.append(json.dumps({"metric": key, "value": d[key], "label": self.label}, sort_keys=True))
        return "\n".join(out) + "\n"


def write_report(report: MetricReport, text_path, jsonl_path=None) -> None:
    with open(text_path, "w", encoding="utf-8") as f:
        f.write(report.to_text())
    if jsonl_path is not None:
        with open(jsonl_path, "w", encoding="utf-8") as f:
            f.write(report.to_jsonl())


def mrr_table(rows: Iterable[tuple[str, float]]) -> str:
    """Model label -> MRR table, four decimals."""
    rows = list(rows)
    header = "Pre-trained Models"
    width = max([len(header)] + [len(label) for label, _ in rows])
    out = [f"{header.ljust(width)}  MRR"]
    out += [f"{label.ljust(width)}  {value:.4f}" for label, value in rows]
    return "\n".join(out) + "\n"
