"""Subword tokenization, word/phone pairing and the ``[CLS] W [SEP] P [SEP]`` layout.

Words and phones share one id space: word-piece ids occupy ``[0, len(vocab))``
and phone ids follow at ``len(vocab) + phone_index``.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

from .lexicon import MASK_PHONE, RESERVED_PHONES, Lexicon, lookup

PAD, CLS, SEP, MASK, UNK = "[PAD]", "[CLS]", "[SEP]", "[MASK]", "[UNK]"
SPECIALS = (PAD, CLS, SEP, MASK, UNK)
PAD_ID, CLS_ID, SEP_ID, MASK_ID, UNK_ID = range(5)

Span = tuple[int, int]


class EncodingError(ValueError):
    pass


@dataclass(frozen=True)
class Vocab:
    tokens: tuple[str, ...]
    index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if tuple(self.tokens[:5]) != SPECIALS:
            raise ValueError(f"vocab must start with {SPECIALS}, got {self.tokens[:5]}")
        index = {}
        for i, tok in enumerate(self.tokens):
            if tok in index:
                raise ValueError(f"duplicate vocab token {tok!r}")
            index[tok] = i
        object.__setattr__(self, "index", index)

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, tok):
        return tok in self.index

    def id(self, tok: str) -> int:
        return self.index.get(tok, UNK_ID)

    @classmethod
    def from_file(cls, path) -> "Vocab":
        with open(path, encoding="utf-8") as f:
            return cls(tuple(line.rstrip("\n") for line in f if line.rstrip("\n")))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            for tok in self.tokens:
                f.write(tok + "\n")


def build_vocab(lines: Iterable[str], min_count: int = 1, max_size: int | None = None) -> Vocab:
    """Whole-word vocabulary ranked by frequency (ties alphabetical)."""
    counts = Counter(w for line in lines for w in line.lower().split())
    ranked = sorted((w for w, c in counts.items() if c >= min_count), key=lambda w: (-counts[w], w))
    ranked = [w for w in ranked if w not in SPECIALS]
    if max_size is not None:
        ranked = ranked[: max(0, max_size - len(SPECIALS))]
    return Vocab(SPECIALS + tuple(ranked))


def wordpiece(vocab: Vocab, word: str) -> list[str]:
    """Greedy longest-match-first decomposition; ``[UNK]`` if none exists."""
    pieces = []
    start = 0
    while start < len(word):
        end = len(word)
        cur = None
        while start < end:
            sub = word[start:end]
            if start > 0:
                sub = "##" + sub
            if sub in vocab.index:
                cur = sub
                break
            end -= 1
        if cur is None:
            return [UNK]
        pieces.append(cur)
        start = end
    return pieces


def tokenize(vocab: Vocab, text: str) -> tuple[list[str], list[Span]]:
    tokens: list[str] = []
    spans: list[Span] = []
    for word in text.lower().split():
        pieces = wordpiece(vocab, word)
        spans.append((len(tokens), len(tokens) + len(pieces)))
        tokens.extend(pieces)
    return tokens, spans


@dataclass(frozen=True)
class PairedUtterance:
    words: tuple[str, ...]
    subtokens: tuple[str, ...]
    phones: tuple[str, ...]
    word_subtoken_spans: tuple[Span, ...]
    word_phone_spans: tuple[Span, ...]

    def __len__(self):
        return len(self.words)

    def truncate(self, n_words: int) -> "PairedUtterance":
        if n_words >= len(self.words):
            return self
        ts = self.word_subtoken_spans[:n_words]
        ps = self.word_phone_spans[:n_words]
        return PairedUtterance(
            words=self.words[:n_words],
            subtokens=self.subtokens[: ts[-1][1]] if ts else (),
            phones=self.phones[: ps[-1][1]] if ps else (),
            word_subtoken_spans=ts,
            word_phone_spans=ps,
        )

    def word_phones(self, i: int) -> tuple[str, ...]:
        a, b = self.word_phone_spans[i]
        return self.phones[a:b]


def build_paired(lex: Lexicon, vocab: Vocab, text: str) -> PairedUtterance:
    if not text.strip():
        raise ValueError("cannot pair an empty utterance")
    words = tuple(text.lower().split())
    subtokens, tok_spans = tokenize(vocab, text)
    phones: list[str] = []
    phone_spans = []
    for w in words:
        p = lookup(lex, w)
        phone_spans.append((len(phones), len(phones) + len(p)))
        phones.extend(p)
    return PairedUtterance(words, tuple(subtokens), tuple(phones), tuple(tok_spans), tuple(phone_spans))


class IdSpace:
    """Joint word/phone id space over a vocab and a phone vocabulary."""

    def __init__(self, vocab: Vocab, phone_vocab: Sequence[str]):
        self.vocab = vocab
        self.phone_vocab = tuple(phone_vocab)
        self.offset = len(vocab)
        self._phone_index = {p: self.offset + i for i, p in enumerate(self.phone_vocab)}
        self.mask_phone_id = self._phone_index[MASK_PHONE]
        # ids usable for random substitution
        self.word_ids = tuple(range(len(SPECIALS), len(vocab)))
        self.real_phone_ids = tuple(
            self._phone_index[p] for p in self.phone_vocab if p not in RESERVED_PHONES
        )

    def __len__(self):
        return self.offset + len(self.phone_vocab)

    def phone_id(self, phone: str) -> int:
        try:
            return self._phone_index[phone]
        except KeyError:
            raise EncodingError(f"phone {phone!r} not in phone vocabulary") from None

    def is_phone(self, i: int) -> bool:
        return i >= self.offset


@dataclass
class EncodedExample:
    input_ids: list[int]
    segment_ids: list[int]
    position_ids: list[int]
    w_region: Span
    p_region: Span | None
    # per word: (absolute subtoken span, absolute phone span or None)
    word_spans: list[tuple[Span, Span | None]]
    # whole-word spans of the P region; from the donor utterance for WSA negatives
    phone_word_spans: list[Span] = field(default_factory=list)
    wsa_label: str | None = None
    mlm_targets: dict[int, int] = field(default_factory=dict)
    msm_targets: dict[int, int] = field(default_factory=dict)

    def __len__(self):
        return len(self.input_ids)

    @property
    def first_subtokens(self) -> list[int]:
        return [t[0] for t, _ in self.word_spans]

    def copy(self) -> "EncodedExample":
        return replace(
            self,
            input_ids=list(self.input_ids),
            mlm_targets=dict(self.mlm_targets),
            msm_targets=dict(self.msm_targets),
        )


def _fit_words(u: PairedUtterance, budget: int, with_phones: bool) -> int:
    used = 0
    for i in range(len(u)):
        a, b = u.word_subtoken_spans[i]
        need = b - a
        if with_phones:
            pa, pb = u.word_phone_spans[i]
            need += pb - pa
        if used + need > budget:
            return i
        used += need
    return len(u)


def encode_pair(u: PairedUtterance, vocab: Vocab, phone_vocab: Sequence[str] | IdSpace,
                max_seq_len: int, phones: PairedUtterance | None = None) -> EncodedExample:
    """Lay out ``[CLS] W [SEP] P [SEP]``.

    ``phones`` optionally supplies the P side from another utterance (WSA
    negatives); by default P comes from ``u`` itself. Trailing whole words
    are dropped until the sequence fits.
    """
    ids = phone_vocab if isinstance(phone_vocab, IdSpace) else IdSpace(vocab, phone_vocab)
    donor = u if phones is None else phones
    if phones is None:
        n = _fit_words(u, max_seq_len - 3, with_phones=True)
        if n == 0:
            raise EncodingError(f"first word does not fit in max_seq_len={max_seq_len}")
        u = donor = u.truncate(n)
    else:
        # truncate each side independently; the pair is unaligned anyway
        n_w, n_p = len(u), len(donor)
        while True:
            tok_len = u.word_subtoken_spans[n_w - 1][1] if n_w else 0
            ph_len = donor.word_phone_spans[n_p - 1][1] if n_p else 0
            if 3 + tok_len + ph_len <= max_seq_len:
                break
            if n_w == 0 or n_p == 0:
                break
            if tok_len >= ph_len:
                n_w -= 1
            else:
                n_p -= 1
        if n_w == 0 or n_p == 0:
            raise EncodingError(f"pair does not fit in max_seq_len={max_seq_len}")
        u, donor = u.truncate(n_w), donor.truncate(n_p)

    input_ids = [CLS_ID] + [vocab.id(t) for t in u.subtokens] + [SEP_ID]
    w_region = (1, 1 + len(u.subtokens))
    p_start = len(input_ids)
    input_ids += [ids.phone_id(p) for p in donor.phones] + [SEP_ID]
    p_region = (p_start, p_start + len(donor.phones))
    segment_ids = [0] * p_start + [1] * (len(input_ids) - p_start)

    word_spans = []
    for i in range(len(u)):
        a, b = u.word_subtoken_spans[i]
        pspan = None
        if phones is None:
            pa, pb = u.word_phone_spans[i]
            pspan = (p_start + pa, p_start + pb)
        word_spans.append(((1 + a, 1 + b), pspan))
    enc = EncodedExample(
        input_ids=input_ids,
        segment_ids=segment_ids,
        position_ids=list(range(len(input_ids))),
        w_region=w_region,
        p_region=p_region,
        word_spans=word_spans,
        phone_word_spans=[(p_start + a, p_start + b) for a, b in donor.word_phone_spans],
    )
    return enc


def encode_text(u: PairedUtterance, vocab: Vocab, max_seq_len: int) -> EncodedExample:
    """Text-only layout ``[CLS] W [SEP]`` (plain MLM and fine-tuning input)."""
    n = _fit_words(u, max_seq_len - 2, with_phones=False)
    if n == 0:
        raise EncodingError(f"first word does not fit in max_seq_len={max_seq_len}")
    u = u.truncate(n)
    input_ids = [CLS_ID] + [vocab.id(t) for t in u.subtokens] + [SEP_ID]
    return EncodedExample(
        input_ids=input_ids,
        segment_ids=[0] * len(input_ids),
        position_ids=list(range(len(input_ids))),
        w_region=(1, 1 + len(u.subtokens)),
        p_region=None,
        word_spans=[((1 + a, 1 + b), None) for a, b in u.word_subtoken_spans],
    )
