"""Single-stream transformer encoder over the joint word/phone id space."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import torch
import torch.nn.functional as F
from torch import nn

FULL_SCALE_MAX_SEQ_LEN = 256


@dataclass
class ModelConfig:
    vocab_size: int
    word_vocab_size: int
    num_layers: int = 2
    hidden_dim: int = 64
    num_heads: int = 4
    ffn_dim: int = 256
    max_seq_len: int = FULL_SCALE_MAX_SEQ_LEN
    num_segments: int = 2
    dropout: float = 0.1
    num_intents: int = 0
    num_slot_tags: int = 0
    # restrict masked-word targets to word ids and masked-phone targets to phone ids
    restrict_lm_support: bool = False

    def validate(self) -> "ModelConfig":
        if self.hidden_dim % self.num_heads:
            raise ValueError(f"hidden_dim {self.hidden_dim} not divisible by num_heads {self.num_heads}")
        if not 0 <= self.dropout < 1:
            raise ValueError(f"dropout must lie in [0, 1), got {self.dropout}")
        if not 0 < self.word_vocab_size <= self.vocab_size:
            raise ValueError("word_vocab_size must lie in (0, vocab_size]")
        for name in ("hidden_dim", "num_heads", "ffn_dim", "max_seq_len", "vocab_size"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.num_layers < 0:
            raise ValueError("num_layers must be >= 0")
        return self

    def to_dict(self) -> dict:
        return asdict(self)


class EncoderLayer(nn.Module):
    """Pre-LN self-attention + GELU feed-forward block."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        h = cfg.hidden_dim
        self.num_heads = cfg.num_heads
        self.ln1 = nn.LayerNorm(h)
        self.qkv = nn.Linear(h, 3 * h)
        self.attn_out = nn.Linear(h, h)
        self.ln2 = nn.LayerNorm(h)
        self.ff1 = nn.Linear(h, cfg.ffn_dim)
        self.ff2 = nn.Linear(cfg.ffn_dim, h)
        self.drop = nn.Dropout(cfg.dropout)

    def forward(self, x, key_mask):
        b, t, h = x.shape
        d = h // self.num_heads
        q, k, v = self.qkv(self.ln1(x)).split(h, dim=-1)
        q = q.view(b, t, self.num_heads, d).transpose(1, 2)
        k = k.view(b, t, self.num_heads, d).transpose(1, 2)
        v = v.view(b, t, self.num_heads, d).transpose(1, 2)
        scores = q @ k.transpose(-1, -2) / math.sqrt(d)
        scores = scores.masked_fill(~key_mask[:, None, None, :], torch.finfo(scores.dtype).min)
        probs = self.drop(scores.softmax(dim=-1))
        ctx = (probs @ v).transpose(1, 2).reshape(b, t, h)
        x = x + self.drop(self.attn_out(ctx))
        x = x + self.drop(self.ff2(F.gelu(self.ff1(self.ln2(x)))))
        return x


class JointEncoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        h = cfg.hidden_dim
        self.token_embedding = nn.Embedding(cfg.vocab_size, h)
        self.position_embedding = nn.Embedding(cfg.max_seq_len, h)
        self.segment_embedding = nn.Embedding(cfg.num_segments, h)
        self.emb_drop = nn.Dropout(cfg.dropout)
        self.layers = nn.ModuleList(EncoderLayer(cfg) for _ in range(cfg.num_layers))
        self.final_ln = nn.LayerNorm(h) if cfg.num_layers > 0 else None
        self.lm_bias = nn.Parameter(torch.zeros(cfg.vocab_size))
        self.wsa_head = nn.Linear(h, 2)
        self.ic_pre = nn.Linear(h, h)
        self.ic_out = nn.Linear(h, cfg.num_intents) if cfg.num_intents else None
        self.sf_head = nn.Linear(h, cfg.num_slot_tags) if cfg.num_slot_tags else None
        self.reset_parameters()

    def reset_parameters(self):
        for module in self.modules():
            if isinstance(module, (nn.Linear, nn.Embedding)):
                nn.init.trunc_normal_(module.weight, std=0.02, a=-0.04, b=0.04)
                if isinstance(module, nn.Linear):
                    nn.init.zeros_(module.bias)
            elif isinstance(module, nn.LayerNorm):
                nn.init.ones_(module.weight)
                nn.init.zeros_(module.bias)
        nn.init.zeros_(self.lm_bias)

    # -- input ---------------------------------------------------------------

    def _check_bounds(self, input_ids, segment_ids, position_ids):
        for name, ids, size in (("token", input_ids, self.cfg.vocab_size),
                                ("segment", segment_ids, self.cfg.num_segments),
                                ("position", position_ids, self.cfg.max_seq_len)):
            if ids.numel() and (ids.min() < 0 or ids.max() >= size):
                raise IndexError(f"{name} id out of range [0, {size}): min {int(ids.min())}, max {int(ids.max())}")

    def embed_input(self, input_ids, segment_ids, position_ids):
        """token + position + segment embedding sum."""
        self._check_bounds(input_ids, segment_ids, position_ids)
        return (self.token_embedding(input_ids) + self.position_embedding(position_ids)
                + self.segment_embedding(segment_ids))

    def embed_input_with_phones(self, input_ids, segment_ids, position_ids, phone_ids, phone_mask, beta: float):
        """Standard embedding plus ``beta`` times the sum of the word's phone embeddings.

        ``phone_ids``/``phone_mask`` are ``[B, T, L]``; rows are empty except at
        the first sub-token of each word.
        """
        if beta < 0:
            raise ValueError(f"beta must be non-negative, got {beta}")
        base = self.embed_input(input_ids, segment_ids, position_ids)
        if phone_ids.numel() and (phone_ids.min() < 0 or phone_ids.max() >= self.cfg.vocab_size):
            raise IndexError("phone id out of range")
        pooled = (self.token_embedding(phone_ids) * phone_mask.unsqueeze(-1).to(base.dtype)).sum(dim=-2)
        return base + beta * pooled

    # -- encoder -------------------------------------------------------------

    def encode(self, embeddings, attention_mask):
        """Run the layer stack. ``attention_mask`` is True at real (non-pad) positions."""
        x = self.emb_drop(embeddings)
        for i, layer in enumerate(self.layers):
            x = layer(x, attention_mask)
            if not torch.isfinite(x).all():
                raise FloatingPointError(f"non-finite activations after encoder layer {i}")
        if self.final_ln is not None:
            x = self.final_ln(x)
        return x * attention_mask.unsqueeze(-1).to(x.dtype)

    # -- heads ---------------------------------------------------------------

    def lm_logits(self, hidden, target_is_phone=None):
        """Tied projection onto the joint vocabulary. ``hidden`` is ``[N, H]``."""
        logits = hidden @ self.token_embedding.weight.t() + self.lm_bias
        if self.cfg.restrict_lm_support and target_is_phone is not None:
            is_phone_col = torch.arange(self.cfg.vocab_size, device=hidden.device) >= self.cfg.word_vocab_size
            allowed = is_phone_col[None, :] == target_is_phone[:, None]
            logits = logits.masked_fill(~allowed, torch.finfo(logits.dtype).min)
        return logits

    def wsa_logits(self, h_cls):
        return self.wsa_head(h_cls)

    def ic_logits(self, h_cls):
        if self.ic_out is None:
            raise RuntimeError("model has no intent head (num_intents=0)")
        return self.ic_out(torch.tanh(self.ic_pre(h_cls)))

    def sf_logits(self, hidden, first_subtoken_index, w_region_end=None):
        """Slot-tag logits at each word's first sub-token: ``[B, M, num_slot_tags]``.

        ``first_subtoken_index`` is ``[B, M]``; padded word slots may hold any
        in-range index and are ignored downstream.
        """
        if self.sf_head is None:
            raise RuntimeError("model has no slot head (num_slot_tags=0)")
        if w_region_end is not None:
            bad = (first_subtoken_index < 1) | (first_subtoken_index >= w_region_end[:, None])
            if bad.any():
                raise ValueError("first sub-token index outside the word region")
        idx = first_subtoken_index.unsqueeze(-1).expand(-1, -1, hidden.size(-1))
        return self.sf_head(hidden.gather(1, idx))

    def resize_slu_heads(self, num_intents: int, num_slot_tags: int):
        """Attach freshly initialized intent/slot heads for fine-tuning."""
        h = self.cfg.hidden_dim
        self.cfg.num_intents = num_intents
        self.cfg.num_slot_tags = num_slot_tags
        self.ic_out = nn.Linear(h, num_intents) if num_intents else None
        self.sf_head = nn.Linear(h, num_slot_tags) if num_slot_tags else None
        for head in (self.ic_out, self.sf_head):
            if head is not None:
                nn.init.trunc_normal_(head.weight, std=0.02, a=-0.04, b=0.04)
                nn.init.zeros_(head.bias)
        return self


def predict_intent(logits):
    """argmax with ties resolved to the lowest index."""
    return logits.argmax(dim=-1)
