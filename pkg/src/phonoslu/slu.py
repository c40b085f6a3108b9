"""SLU datasets: JSONL records, BIO tagging and label maps."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .batches import SluFeatures
from .lexicon import Lexicon, lookup
from .textproc import IdSpace, build_paired, encode_pair, encode_text

OUTSIDE = "O"


@dataclass
class SluRecord:
    text: str
    intent: str
    slots: list[tuple[str, str]] = field(default_factory=list)
    tags: list[str] | None = None

    @property
    def words(self) -> list[str]:
        return self.text.lower().split()

    def bio(self) -> list[str]:
        if self.tags is not None:
            if len(self.tags) != len(self.words):
                raise ValueError(f"{len(self.tags)} tags for {len(self.words)} words in {self.text!r}")
            return list(self.tags)
        return slots_to_bio(self.words, self.slots)

    def frame(self) -> tuple[str, list[tuple[str, str]]]:
        slots = self.slots if self.tags is None else bio_to_slots(self.words, self.tags)
        return self.intent, list(slots)


def parse_record(obj: dict) -> SluRecord:
    slots = obj.get("slots")
    if slots is not None and len(slots) and isinstance(slots[0], dict):
        slots = [(s["name"], s["value"].lower()) for s in slots]
    elif slots is not None:
        slots = [(n, v.lower()) for n, v in slots]
    return SluRecord(text=obj["text"], intent=obj["intent"], slots=slots or [], tags=obj.get("tags"))


def read_slu(path) -> list[SluRecord]:
    with open(path, encoding="utf-8") as f:
        return [parse_record(json.loads(line)) for line in f if line.strip()]


def write_slu(path, records: Iterable[SluRecord]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for r in records:
            obj = {"text": r.text, "intent": r.intent, "slots": [{"name": n, "value": v} for n, v in r.slots]}
            if r.tags is not None:
                obj["tags"] = r.tags
            f.write(json.dumps(obj) + "\n")


def slots_to_bio(words: Sequence[str], slots: Sequence[tuple[str, str]]) -> list[str]:
    tags = [OUTSIDE] * len(words)
    for name, value in slots:
        span = value.lower().split()
        n = len(span)
        for start in range(len(words) - n + 1):
            if list(words[start:start + n]) == span and all(t == OUTSIDE for t in tags[start:start + n]):
                tags[start] = f"B-{name}"
                for k in range(start + 1, start + n):
                    tags[k] = f"I-{name}"
                break
        else:
            raise ValueError(f"slot value {value!r} ({name}) not found in {' '.join(words)!r}")
    return tags


def bio_to_slots(words: Sequence[str], tags: Sequence[str]) -> list[tuple[str, str]]:
    """Decode BIO tags; a stray ``I-x`` opens a new slot."""
    slots = []
    cur_name, cur_words = None, []
    for w, t in zip(words, tags):
        if t.startswith("I-") and cur_name == t[2:]:
            cur_words.append(w)
            continue
        if cur_name is not None:
            slots.append((cur_name, " ".join(cur_words)))
            cur_name, cur_words = None, []
        if t.startswith(("B-", "I-")):
            cur_name, cur_words = t[2:], [w]
    if cur_name is not None:
        slots.append((cur_name, " ".join(cur_words)))
    return slots


@dataclass
class LabelMaps:
    intents: list[str]
    tags: list[str]

    @classmethod
    def from_records(cls, records: Sequence[SluRecord]) -> "LabelMaps":
        intents = sorted({r.intent for r in records})
        tags = set()
        for r in records:
            tags.update(r.bio())
        tags.discard(OUTSIDE)
        return cls(intents, [OUTSIDE] + sorted(tags))

    def intent_id(self, intent: str) -> int:
        try:
            return self.intents.index(intent)
        except ValueError:
            raise ValueError(f"unknown intent label {intent!r}") from None

    def tag_id(self, tag: str) -> int:
        try:
            return self.tags.index(tag)
        except ValueError:
            raise ValueError(f"unknown slot tag {tag!r}") from None

    def check(self, records: Sequence[SluRecord], with_slots: bool = True) -> None:
        for r in records:
            self.intent_id(r.intent)
            if with_slots:
                for t in r.bio():
                    self.tag_id(t)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump({"intents": self.intents, "tags": self.tags}, f, indent=1)

    @classmethod
    def load(cls, path) -> "LabelMaps":
        with open(path, encoding="utf-8") as f:
            d = json.load(f)
        return cls(d["intents"], d["tags"])


def featurize(text: str, lex: Lexicon, space: IdSpace, max_seq_len: int, layout: str = "text",
              labels: LabelMaps | None = None, record: SluRecord | None = None) -> SluFeatures:
    """Encode ``text`` for fine-tuning or inference.

    ``layout='text'`` gives ``[CLS] W [SEP]``; ``'concat'`` appends the phone
    segment as in pre-training.
    """
    u = build_paired(lex, space.vocab, text)
    if layout == "text":
        enc = encode_text(u, space.vocab, max_seq_len)
    elif layout == "concat":
        enc = encode_pair(u, space.vocab, space, max_seq_len)
    else:
        raise ValueError(f"unknown layout {layout!r}")
    n = len(enc.word_spans)
    phone_ids = [[space.phone_id(p) for p in lookup(lex, w)] for w in u.words[:n]]
    feats = SluFeatures(enc, phone_ids)
    if labels is not None and record is not None:
        feats.intent = labels.intent_id(record.intent)
        feats.tags = [labels.tag_id(t) for t in record.bio()[:n]]
    return feats
