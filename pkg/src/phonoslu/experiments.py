"""Desk-scale experiment drivers on synthetic worlds.

These wire the modules end to end: build the id space, generate masked
examples for a task preset, pre-train, fine-tune with or without phone
embeddings, and score clean and homophone-corrupted test text.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

from .eval import ConfusionPair, MetricReport, mrr
from .model import JointEncoder, ModelConfig
from .pretraindata import generate_examples, preset
from .slu import LabelMaps, SluRecord, bio_to_slots, featurize
from .synth import SyntheticWorld, corrupt_records, make_world
from .textproc import IdSpace, build_paired, build_vocab
from .train import BETA_GRID, TrainConfig, finetune, predict_slu, pretrain

logger = logging.getLogger(__name__)

MLM_CONTROL = "+MLM 15%"
JOINT_ONEMOD = "+condMLM 100%+condMSM 100%(oneMod)"


@dataclass
class DeskSettings:
    hidden_dim: int = 64
    num_layers: int = 2
    num_heads: int = 4
    ffn_dim: int = 128
    max_seq_len: int = 64
    dropout: float = 0.1
    pretrain_steps: int = 600
    pretrain_batch: int = 16
    pretrain_lr: float = 2e-3
    dupe_factor: int = 2
    finetune_steps: int = 500
    finetune_batch: int = 16
    finetune_lr: float = 1e-3
    corruption_rate: float = 0.5


def world_space(world: SyntheticWorld) -> IdSpace:
    texts = world.pretrain_corpus + [r.text for r in world.slu_train]
    vocab = build_vocab(texts)
    return IdSpace(vocab, world.lexicon.phone_vocab)


def model_config(space: IdSpace, s: DeskSettings) -> ModelConfig:
    return ModelConfig(vocab_size=len(space), word_vocab_size=len(space.vocab), num_layers=s.num_layers,
                       hidden_dim=s.hidden_dim, num_heads=s.num_heads, ffn_dim=s.ffn_dim,
                       max_seq_len=s.max_seq_len, dropout=s.dropout)


def pretrain_world(world: SyntheticWorld, space: IdSpace, task: str, seed: int, s: DeskSettings):
    corpus = [build_paired(world.lexicon, space.vocab, t) for t in world.pretrain_corpus]
    cfg = preset(task, seed=seed)
    examples = generate_examples(corpus, cfg, space, s.max_seq_len, dupe_factor=s.dupe_factor)
    tcfg = TrainConfig(batch_size=s.pretrain_batch, max_steps=s.pretrain_steps, learning_rate=s.pretrain_lr,
                       seed=seed)
    model, log = pretrain(examples, model_config(space, s), tcfg)
    return model, log


def finetune_world(model: JointEncoder, world: SyntheticWorld, space: IdSpace, seed: int, s: DeskSettings,
                   use_pe: bool, mode: str = "joint", beta_grid=BETA_GRID):
    labels = LabelMaps.from_records(world.slu_train)
    tr = [featurize(r.text, world.lexicon, space, s.max_seq_len, labels=labels, record=r) for r in world.slu_train]
    va = [featurize(r.text, world.lexicon, space, s.max_seq_len, labels=labels, record=r) for r in world.slu_valid]
    tcfg = TrainConfig(batch_size=s.finetune_batch, max_steps=s.finetune_steps, learning_rate=s.finetune_lr,
                       seed=seed, eval_every=50)
    result = finetune(model, tr, va, len(labels.intents), len(labels.tags), mode=mode,
                      use_phone_embeddings=use_pe, beta_grid=beta_grid, cfg=tcfg)
    return result, labels


def score(result, world: SyntheticWorld, space: IdSpace, labels: LabelMaps, texts: list[str],
          refs: list[SluRecord], s: DeskSettings, mode: str = "joint") -> MetricReport:
    feats = [featurize(t, world.lexicon, space, s.max_seq_len) for t in texts]
    intents, tags = predict_slu(result.model, feats, mode, result.beta)
    hyp_frames = []
    for k, t in enumerate(texts):
        words = t.lower().split()
        slots = bio_to_slots(words, [labels.tags[i] for i in tags[k]]) if tags is not None else []
        hyp_frames.append((labels.intents[intents[k]], slots))
    ref_frames = [r.frame() for r in refs]
    return MetricReport.from_predictions(ref_frames, hyp_frames, with_slots=tags is not None)


def corrupted_test(world: SyntheticWorld, seed: int, rate: float) -> list[str]:
    return corrupt_records(world.slu_test, world.lexicon, rate, seed, keywords=world.keywords)


def homophone_pairs(world: SyntheticWorld) -> list[ConfusionPair]:
    return [ConfusionPair(hyp_word=h, ref_word=w) for w, h in world.homophones.items()]


def embedding_mrr(model: JointEncoder, space: IdSpace, pairs) -> float:
    emb = model.token_embedding.weight.detach().double().numpy()
    word_ids = {t: i for i, t in enumerate(space.vocab.tokens) if i >= 5}
    return mrr(pairs, emb, word_ids)


def directional_run(seed: int, s: DeskSettings | None = None, world_seed: int | None = None) -> dict:
    """One seed of the joint-vs-control and PE-vs-no-PE comparison on corrupted text."""
    s = s or DeskSettings()
    world = make_world(seed=seed if world_seed is None else world_seed)
    space = world_space(world)
    hyps = corrupted_test(world, seed, s.corruption_rate)
    out = {"seed": seed}
    pairs = homophone_pairs(world)
    for task, key in ((JOINT_ONEMOD, "joint"), (MLM_CONTROL, "mlm")):
        model, _ = pretrain_world(world, space, task, seed, s)
        out[f"{key}_mrr"] = embedding_mrr(model, space, pairs)
        variants = [(False, "nope")] + ([(True, "pe")] if key == "joint" else [])
        for use_pe, tag in variants:
            result, labels = finetune_world(model, world, space, seed, s, use_pe)
            clean = score(result, world, space, labels, [r.text for r in world.slu_test], world.slu_test, s)
            corrupt = score(result, world, space, labels, hyps, world.slu_test, s)
            out[f"{key}_{tag}_clean_icacc"] = clean.icacc
            out[f"{key}_{tag}_corrupt_icacc"] = corrupt.icacc
            out[f"{key}_{tag}_beta"] = result.beta
    return out
