"""Padding and tensor collation for pre-training and fine-tuning examples."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import torch

from .pretraindata import COND_MLM, COND_MSM, MATCH, MISMATCH, PretrainExample
from .textproc import PAD_ID, EncodedExample

# columns of the per-example component matrix
COMPONENTS = ("condMLM", "condMSM", "MLM", "MSM", "WSA")
COND_MLM_COL, COND_MSM_COL, MLM_COL, MSM_COL, WSA_COL = range(5)
WSA_CLASSES = {MATCH: 0, MISMATCH: 1}


def _pad(rows: Sequence[Sequence[int]], value: int, width: int | None = None) -> torch.Tensor:
    width = max((len(r) for r in rows), default=0) if width is None else width
    out = torch.full((len(rows), width), value, dtype=torch.long)
    for i, r in enumerate(rows):
        if len(r):
            out[i, : len(r)] = torch.as_tensor(list(r), dtype=torch.long)
    return out


@dataclass
class PretrainBatch:
    input_ids: torch.Tensor
    segment_ids: torch.Tensor
    position_ids: torch.Tensor
    attention_mask: torch.Tensor
    # flattened masked-prediction targets
    tgt_batch: torch.Tensor
    tgt_pos: torch.Tensor
    tgt_gold: torch.Tensor
    tgt_col: torch.Tensor
    tgt_is_phone: torch.Tensor
    # WSA class per example, -1 where absent
    wsa_label: torch.Tensor
    flags: list

    def __len__(self):
        return self.input_ids.size(0)


def collate_pretrain(examples: Sequence[PretrainExample]) -> PretrainBatch:
    encs = [ex.encoded for ex in examples]
    tb, tp, tg, tc, tph = [], [], [], [], []
    for b, ex in enumerate(examples):
        enc = ex.encoded
        wcol = COND_MLM_COL if COND_MLM in ex.loss_flags else MLM_COL
        pcol = COND_MSM_COL if COND_MSM in ex.loss_flags else MSM_COL
        for pos, gold in sorted(enc.mlm_targets.items()):
            tb.append(b), tp.append(pos), tg.append(gold), tc.append(wcol), tph.append(False)
        for pos, gold in sorted(enc.msm_targets.items()):
            tb.append(b), tp.append(pos), tg.append(gold), tc.append(pcol), tph.append(True)
    input_ids = _pad([e.input_ids for e in encs], PAD_ID)
    return PretrainBatch(
        input_ids=input_ids,
        segment_ids=_pad([e.segment_ids for e in encs], 0),
        position_ids=_pad([e.position_ids for e in encs], 0),
        attention_mask=_pad([[1] * len(e) for e in encs], 0).bool(),
        tgt_batch=torch.tensor(tb, dtype=torch.long),
        tgt_pos=torch.tensor(tp, dtype=torch.long),
        tgt_gold=torch.tensor(tg, dtype=torch.long),
        tgt_col=torch.tensor(tc, dtype=torch.long),
        tgt_is_phone=torch.tensor(tph, dtype=torch.bool),
        wsa_label=torch.tensor([WSA_CLASSES.get(e.wsa_label, -1) for e in encs], dtype=torch.long),
        flags=[ex.loss_flags for ex in examples],
    )


@dataclass
class SluFeatures:
    """One fine-tuning input: encoded text plus per-word phone ids for phone augmentation."""
    encoded: EncodedExample
    word_phone_ids: list[list[int]]
    intent: int = -1
    tags: list[int] | None = None


@dataclass
class SluBatch:
    input_ids: torch.Tensor
    segment_ids: torch.Tensor
    position_ids: torch.Tensor
    attention_mask: torch.Tensor
    phone_ids: torch.Tensor
    phone_mask: torch.Tensor
    first_idx: torch.Tensor
    word_mask: torch.Tensor
    w_end: torch.Tensor
    intents: torch.Tensor
    tags: torch.Tensor

    def __len__(self):
        return self.input_ids.size(0)


def collate_slu(feats: Sequence[SluFeatures]) -> SluBatch:
    encs = [f.encoded for f in feats]
    b = len(feats)
    t = max(len(e) for e in encs)
    l = max((len(p) for f in feats for p in f.word_phone_ids), default=1) or 1
    phone_ids = torch.zeros((b, t, l), dtype=torch.long)
    phone_mask = torch.zeros((b, t, l), dtype=torch.bool)
    for i, f in enumerate(feats):
        for pos, pids in zip(f.encoded.first_subtokens, f.word_phone_ids):
            phone_ids[i, pos, : len(pids)] = torch.tensor(pids, dtype=torch.long)
            phone_mask[i, pos, : len(pids)] = True
    firsts = [e.first_subtokens for e in encs]
    first_idx = _pad(firsts, 1)
    word_mask = _pad([[1] * len(x) for x in firsts], 0).bool()
    tags = _pad([f.tags if f.tags is not None else [] for f in feats], -100, width=first_idx.size(1))
    return SluBatch(
        input_ids=_pad([e.input_ids for e in encs], PAD_ID),
        segment_ids=_pad([e.segment_ids for e in encs], 0),
        position_ids=_pad([e.position_ids for e in encs], 0),
        attention_mask=_pad([[1] * len(e) for e in encs], 0).bool(),
        phone_ids=phone_ids,
        phone_mask=phone_mask,
        first_idx=first_idx,
        word_mask=word_mask,
        w_end=torch.tensor([e.w_region[1] for e in encs], dtype=torch.long),
        intents=torch.tensor([f.intent for f in feats], dtype=torch.long),
        tags=tags,
    )
