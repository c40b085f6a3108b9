"""CMU-style pronunciation dictionary parsing and word -> phone lookup."""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping

PAD_PHONE = "[PAD]"
MASK_PHONE = "[MASK]"
UNK_PHONE = "<UNK>"
RESERVED_PHONES = (PAD_PHONE, MASK_PHONE, UNK_PHONE)

_ALT_RE = re.compile(r"^(.+)\((\d+)\)$")
_STRESS_RE = re.compile(r"\d+$")


class LexiconError(ValueError):
    pass


def strip_stress(phone: str) -> str:
    return _STRESS_RE.sub("", phone)


@dataclass(frozen=True)
class Lexicon:
    entries: Mapping[str, tuple[str, ...]]
    phone_vocab: tuple[str, ...]
    unk_rate: float | None = None
    _phone_index: Mapping[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(
            self, "_phone_index", {p: i for i, p in enumerate(self.phone_vocab)}
        )

    def __len__(self):
        return len(self.entries)

    def __contains__(self, word: str) -> bool:
        return word.lower() in self.entries

    def lookup(self, word: str) -> tuple[str, ...]:
        return lookup(self, word)

    def phone_id(self, phone: str) -> int:
        """Index of ``phone`` in ``phone_vocab``."""
        return self._phone_index[phone]

    @property
    def real_phones(self) -> tuple[str, ...]:
        """Phone vocabulary without the reserved symbols."""
        return tuple(p for p in self.phone_vocab if p not in RESERVED_PHONES)


def parse_dictionary(source: Iterable[str]) -> Lexicon:
    """Parse a CMU-format dictionary stream.

    Keeps the first pronunciation per word, lowercases keys and strips stress
    digits. ``WORD(n)`` alternates and ``;;;`` comments are skipped.
    """
    entries: dict[str, tuple[str, ...]] = {}
    observed: set[str] = set()
    for lineno, raw in enumerate(source, 1):
        line = raw.strip()
        if not line or line.startswith(";;;"):
            continue
        parts = line.split()
        word = parts[0]
        if len(parts) < 2:
            raise LexiconError(f"line {lineno}: entry {word!r} has no phones")
        if _ALT_RE.match(word):
            continue
        key = word.lower()
        if key in entries:
            continue
        phones = tuple(strip_stress(p) for p in parts[1:])
        if any(not p for p in phones):
            raise LexiconError(f"line {lineno}: malformed phone in entry {word!r}")
        entries[key] = phones
        observed.update(phones)
    if not entries:
        raise LexiconError("empty lexicon: no dictionary entries found")
    observed -= set(RESERVED_PHONES)
    return Lexicon(entries=entries, phone_vocab=RESERVED_PHONES + tuple(sorted(observed)))


def load_dictionary(path) -> Lexicon:
    with open(path, encoding="utf-8") as f:
        return parse_dictionary(f)


def lookup(lex: Lexicon, word: str) -> tuple[str, ...]:
    if not word:
        raise ValueError("cannot look up an empty word")
    return lex.entries.get(word.lower(), (UNK_PHONE,))


def measure_unk_rate(lex: Lexicon, lines: Iterable[str]) -> Lexicon:
    """Return a copy of ``lex`` with ``unk_rate`` measured over the word tokens of ``lines``."""
    total = unk = 0
    for line in lines:
        for word in line.split():
            total += 1
            unk += word.lower() not in lex.entries
    return replace(lex, unk_rate=unk / total if total else 0.0)


def write_phone_vocab(lex: Lexicon, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for p in lex.phone_vocab:
            f.write(p + "\n")


def read_phone_vocab(path) -> tuple[str, ...]:
    with open(path, encoding="utf-8") as f:
        return tuple(line.rstrip("\n") for line in f if line.strip())
