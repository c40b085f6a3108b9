"""Losses, Adam, gradient checking and the pre-training / fine-tuning loops."""

from __future__ import annotations

import copy
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .batches import (
    COMPONENTS,
    WSA_COL,
    PretrainBatch,
    SluBatch,
    SluFeatures,
    collate_pretrain,
    collate_slu,
)
from .eval import intent_accuracy
from .model import JointEncoder, ModelConfig
from .pretraindata import COND_MLM, COND_MSM, MLM, MSM, WSA, PretrainExample

logger = logging.getLogger(__name__)

PRETRAIN_LR_GRID = (1e-4, 5e-5)
FINETUNE_LR_GRID = (3e-5, 5e-5)
BETA_GRID = (0.1, 0.25, 0.5, 1.0)

_FIELD_FOR = {COND_MLM: "l_condmlm", COND_MSM: "l_condmsm", MLM: "l_mlm", MSM: "l_msm", WSA: "l_wsa"}


class ContractError(ValueError):
    pass


# -- losses -------------------------------------------------------------------

@dataclass
class LossBundle:
    l_condmlm: float | None = None
    l_condmsm: float | None = None
    l_mlm: float | None = None
    l_msm: float | None = None
    l_wsa: float | None = None
    l_ic: float | None = None
    l_sf: float | None = None
    total: float = 0.0

    def present(self) -> dict[str, float]:
        return {k: v for k, v in asdict(self).items() if k != "total" and v is not None}


def masked_ce_loss(logits: torch.Tensor, targets: Mapping[int, int] | Sequence[int]):
    """Mean cross-entropy over target rows; ``None`` (absent) when there are no targets.

    ``targets`` is a position -> gold id map (rows follow sorted position order)
    or a plain sequence of gold ids.
    """
    if isinstance(targets, Mapping):
        gold = [targets[k] for k in sorted(targets)]
    else:
        gold = list(targets)
    if not gold:
        return None
    if logits.size(0) != len(gold):
        raise ContractError(f"{logits.size(0)} logit rows for {len(gold)} targets")
    return F.cross_entropy(logits, torch.tensor(gold, dtype=torch.long))


def wsa_loss(logits: torch.Tensor, label: int) -> torch.Tensor:
    return F.cross_entropy(logits.view(1, -1), torch.tensor([label]))


def combine_pretrain_losses(flags, losses: Mapping[str, float]) -> LossBundle:
    """Unweighted sum of the components named by ``flags``."""
    flags = set(flags)
    if flags != set(losses):
        raise ContractError(f"loss components {sorted(losses)} do not match flags {sorted(flags)}")
    bundle = LossBundle()
    for flag, value in losses.items():
        setattr(bundle, _FIELD_FOR[flag], float(value))
    bundle.total = sum(float(v) for v in losses.values())
    return bundle


def finetune_loss(mode: str, ic_loss, sf_loss=None) -> LossBundle:
    if ic_loss is None:
        raise ContractError("intent loss is required")
    if mode == "ic_only":
        if sf_loss is not None:
            raise ContractError("ic_only fine-tuning takes no slot loss")
        l_ic = float(ic_loss.detach()) if torch.is_tensor(ic_loss) else float(ic_loss)
        return LossBundle(l_ic=l_ic, total=l_ic)
    if mode == "joint":
        if sf_loss is None:
            raise ContractError("joint fine-tuning requires a slot loss")
        l_ic = float(ic_loss.detach()) if torch.is_tensor(ic_loss) else float(ic_loss)
        l_sf = float(sf_loss.detach()) if torch.is_tensor(sf_loss) else float(sf_loss)
        return LossBundle(l_ic=l_ic, l_sf=l_sf, total=l_ic + l_sf)
    raise ContractError(f"unknown fine-tuning mode {mode!r}")


def pretrain_component_losses(model: JointEncoder, batch: PretrainBatch):
    """Per-example component losses ``[B, 5]`` and their presence mask.

    Columns follow ``COMPONENTS``. Masked-prediction components are the mean
    over that example's targets; WSA is the [CLS] binary cross-entropy.
    """
    emb = model.embed_input(batch.input_ids, batch.segment_ids, batch.position_ids)
    hidden = model.encode(emb, batch.attention_mask)
    b = len(batch)
    dtype = hidden.dtype
    sums = torch.zeros(b * len(COMPONENTS), dtype=dtype)
    counts = torch.zeros(b * len(COMPONENTS), dtype=dtype)
    if batch.tgt_pos.numel():
        h = hidden[batch.tgt_batch, batch.tgt_pos]
        logits = model.lm_logits(h, batch.tgt_is_phone)
        ce = F.cross_entropy(logits, batch.tgt_gold, reduction="none")
        slot = batch.tgt_batch * len(COMPONENTS) + batch.tgt_col
        sums = sums.index_add(0, slot, ce)
        counts = counts.index_add(0, slot, torch.ones_like(ce))
    sums = sums.view(b, -1)
    counts = counts.view(b, -1)
    comp = sums / counts.clamp(min=1)
    present = counts > 0
    has_wsa = batch.wsa_label >= 0
    if has_wsa.any():
        wl = F.cross_entropy(model.wsa_logits(hidden[:, 0]), batch.wsa_label.clamp(min=0), reduction="none")
        comp = comp.clone()
        comp[:, WSA_COL] = torch.where(has_wsa, wl, torch.zeros_like(wl))
        present = present.clone()
        present[:, WSA_COL] = has_wsa
    return comp, present


def pretrain_batch_loss(model: JointEncoder, batch: PretrainBatch):
    """Batch loss (mean of per-example totals) and its component breakdown.

    Components are averaged over the whole batch with absent entries as zero,
    so they sum exactly to the total.
    """
    comp, present = pretrain_component_losses(model, batch)
    masked = comp * present.to(comp.dtype)
    b = len(batch)
    total = masked.sum() / b
    parts = {name: float(masked[:, j].detach().sum() / b) for j, name in enumerate(COMPONENTS) if present[:, j].any()}
    return total, parts


def example_bundles(model: JointEncoder, batch: PretrainBatch) -> list[LossBundle]:
    with torch.no_grad():
        comp, present = pretrain_component_losses(model, batch)
    out = []
    for i, flags in enumerate(batch.flags):
        losses = {COMPONENTS[j]: float(comp[i, j]) for j in range(len(COMPONENTS)) if present[i, j]}
        out.append(combine_pretrain_losses(flags, losses))
    return out


def slu_losses(model: JointEncoder, batch: SluBatch, mode: str, beta: float | None):
    """(ic loss, sf loss or None, ic logits, sf logits or None)."""
    if beta is None:
        emb = model.embed_input(batch.input_ids, batch.segment_ids, batch.position_ids)
    else:
        emb = model.embed_input_with_phones(batch.input_ids, batch.segment_ids, batch.position_ids,
                                            batch.phone_ids, batch.phone_mask, beta)
    hidden = model.encode(emb, batch.attention_mask)
    ic = model.ic_logits(hidden[:, 0])
    l_ic = F.cross_entropy(ic, batch.intents) if (batch.intents >= 0).all() else None
    sf = l_sf = None
    if mode == "joint":
        sf = model.sf_logits(hidden, batch.first_idx, batch.w_end)
        if (batch.tags[batch.word_mask] >= 0).all():
            ce = F.cross_entropy(sf.transpose(1, 2), batch.tags.clamp(min=0), reduction="none")
            wm = batch.word_mask.to(ce.dtype)
            l_sf = ((ce * wm).sum(1) / wm.sum(1).clamp(min=1)).mean()
    return l_ic, l_sf, ic, sf


# -- optimization -------------------------------------------------------------

def linear_warmup_decay(step: int, peak_lr: float, warmup_steps: int, max_steps: int) -> float:
    """0 at step 0 (when warming up), ``peak_lr`` at ``warmup_steps``, 0 at ``max_steps``."""
    if step < warmup_steps:
        return peak_lr * step / warmup_steps
    if step >= max_steps:
        return 0.0
    return peak_lr * (max_steps - step) / max(1, max_steps - warmup_steps)


@dataclass
class OptimizerState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


@torch.no_grad()
def adam_step(params: Mapping[str, torch.Tensor], grads: Mapping[str, torch.Tensor | None],
              state: OptimizerState) -> OptimizerState:
    """Bias-corrected Adam update of ``params`` in place."""
    for name, g in grads.items():
        if g is not None and not torch.isfinite(g).all():
            raise FloatingPointError(f"non-finite gradient in {name}; step aborted")
    state.step += 1
    t = state.step
    c1 = 1 - state.beta1 ** t
    c2 = 1 - state.beta2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if name not in state.m:
            state.m[name] = torch.zeros_like(p)
            state.v[name] = torch.zeros_like(p)
        m, v = state.m[name], state.v[name]
        m.mul_(state.beta1).add_(g, alpha=1 - state.beta1)
        v.mul_(state.beta2).addcmul_(g, g, value=1 - state.beta2)
        p.sub_(state.lr * (m / c1) / ((v / c2).sqrt() + state.eps))
    return state


def clip_grad_norm(grads: Mapping[str, torch.Tensor | None], max_norm: float) -> float:
    norm = math.sqrt(sum(float((g.double() ** 2).sum()) for g in grads.values() if g is not None))
    if norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for g in grads.values():
            if g is not None:
                g.mul_(scale)
    return norm


# -- gradient check -----------------------------------------------------------

@dataclass
class GradCheckReport:
    errors: dict[str, float]
    tolerance: float

    @property
    def failures(self) -> list[str]:
        return [k for k, e in self.errors.items() if not e <= self.tolerance]

    @property
    def passed(self) -> bool:
        return not self.failures

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)


def grad_check(loss_fn: Callable[[], torch.Tensor], params: Mapping[str, torch.Tensor],
               epsilon: float = 1e-6, tolerance: float = 1e-5, coords_per_tensor: int = 8,
               seed: int = 0, analytic: Mapping[str, torch.Tensor] | None = None) -> GradCheckReport:
    """Compare analytic gradients against central differences on sampled coordinates.

    The per-tensor error is ``max|a - n| / max(max|a|, max|n|)`` over the
    sampled coordinates. ``analytic`` overrides the autograd gradients (used
    to exercise the detector).
    """
    names = list(params)
    if analytic is None:
        loss = loss_fn()
        grads = torch.autograd.grad(loss, [params[n] for n in names], allow_unused=True)
        analytic = {n: (g if g is not None else torch.zeros_like(params[n])) for n, g in zip(names, grads)}
    rng = np.random.default_rng(seed)
    errors = {}
    for n in names:
        p = params[n]
        flat = p.data.view(-1)
        k = min(coords_per_tensor, flat.numel())
        idx = rng.choice(flat.numel(), size=k, replace=False)
        a_vals, n_vals = [], []
        for i in idx:
            orig = flat[i].item()
            with torch.no_grad():
                flat[i] = orig + epsilon
                up = float(loss_fn())
                flat[i] = orig - epsilon
                down = float(loss_fn())
                flat[i] = orig
            n_vals.append((up - down) / (2 * epsilon))
            a_vals.append(float(analytic[n].reshape(-1)[i]))
        a_arr, n_arr = np.array(a_vals), np.array(n_vals)
        scale = max(np.abs(a_arr).max(), np.abs(n_arr).max())
        errors[n] = 0.0 if scale == 0 else float(np.abs(a_arr - n_arr).max() / scale)
    return GradCheckReport(errors, tolerance)


# -- loops --------------------------------------------------------------------

@dataclass
class TrainConfig:
    batch_size: int = 8
    max_steps: int = 2000
    learning_rate: float = 1e-3
    lr_grid: tuple[float, ...] = PRETRAIN_LR_GRID
    warmup_frac: float = 0.1
    max_grad_norm: float | None = 1.0
    seed: int = 0
    deterministic: bool = True
    dupe_factor: int = 1
    eval_every: int = 50

    def validate(self) -> "TrainConfig":
        for name in ("batch_size", "max_steps", "learning_rate", "dupe_factor", "eval_every"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not self.lr_grid or any(x <= 0 for x in self.lr_grid):
            raise ValueError("lr_grid must be non-empty and positive")
        if not 0 <= self.warmup_frac < 1:
            raise ValueError("warmup_frac must lie in [0, 1)")
        return self


def set_determinism(seed: int, deterministic: bool = True) -> None:
    torch.manual_seed(seed)
    if deterministic:
        torch.use_deterministic_algorithms(True)


def _batches(n: int, batch_size: int, seed: int, epoch: int) -> list[np.ndarray]:
    order = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, 1, epoch]))).permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def _step_stream(n: int, cfg: TrainConfig):
    epoch = 0
    while True:
        for idx in _batches(n, cfg.batch_size, cfg.seed, epoch):
            yield idx
        epoch += 1


def _optimizer_update(model, state: OptimizerState, cfg: TrainConfig, step: int) -> float:
    warmup = int(cfg.warmup_frac * cfg.max_steps)
    state.lr = linear_warmup_decay(step + 1, cfg.learning_rate, warmup, cfg.max_steps)
    params = dict(model.named_parameters())
    grads = {k: p.grad for k, p in params.items()}
    if cfg.max_grad_norm:
        clip_grad_norm(grads, cfg.max_grad_norm)
    adam_step(params, grads, state)
    return state.lr


def _format_record(rec: dict) -> str:
    return json.dumps(rec, separators=(",", ":"))


def pretrain(examples: Sequence[PretrainExample], model_cfg: ModelConfig, cfg: TrainConfig,
             log_path=None, model: JointEncoder | None = None) -> tuple[JointEncoder, list[dict]]:
    """Pre-train on a static list of masked examples; returns the model and the loss log."""
    cfg.validate()
    set_determinism(cfg.seed, cfg.deterministic)
    model = JointEncoder(model_cfg) if model is None else model
    model.train()
    state = OptimizerState(lr=0.0)
    log = []
    fh = open(log_path, "w", encoding="utf-8") if log_path else None
    try:
        stream = _step_stream(len(examples), cfg)
        for step in range(cfg.max_steps):
            batch = collate_pretrain([examples[i] for i in next(stream)])
            model.zero_grad(set_to_none=True)
            total, parts = pretrain_batch_loss(model, batch)
            total.backward()
            lr = _optimizer_update(model, state, cfg, step)
            rec = {"step": step, "lr": lr, **{k: parts[k] for k in sorted(parts)}, "total": float(total.detach())}
            log.append(rec)
            if fh:
                fh.write(_format_record(rec) + "\n")
            if step % 100 == 0:
                logger.info("pretrain step %d total %.4f", step, rec["total"])
    finally:
        if fh:
            fh.close()
    model.eval()
    return model, log


@torch.no_grad()
def evaluate_pretrain_loss(model: JointEncoder, examples: Sequence[PretrainExample], batch_size: int = 32) -> float:
    """Mean per-example total loss in eval mode."""
    was = model.training
    model.eval()
    tot = 0.0
    for i in range(0, len(examples), batch_size):
        batch = collate_pretrain(examples[i:i + batch_size])
        loss, _ = pretrain_batch_loss(model, batch)
        tot += float(loss) * len(batch)
    model.train(was)
    return tot / len(examples)


@dataclass
class FinetuneResult:
    model: JointEncoder
    beta: float | None
    valid_icacc: float
    per_beta: dict
    log: list[dict]


@torch.no_grad()
def predict_slu(model: JointEncoder, feats: Sequence[SluFeatures], mode: str, beta: float | None,
                batch_size: int = 64) -> tuple[list[int], list[list[int]] | None]:
    model.eval()
    intents: list[int] = []
    tags: list[list[int]] | None = [] if mode == "joint" else None
    for i in range(0, len(feats), batch_size):
        chunk = feats[i:i + batch_size]
        batch = collate_slu(chunk)
        _, _, ic, sf = slu_losses(model, batch, mode, beta)
        intents.extend(ic.argmax(-1).tolist())
        if tags is not None:
            pred = sf.argmax(-1)
            for j, f in enumerate(chunk):
                tags.append(pred[j, : len(f.encoded.word_spans)].tolist())
    return intents, tags


def _train_one(base: JointEncoder, train_feats, valid_feats, num_intents, num_tags, mode, beta,
               cfg: TrainConfig, log: list, tag: str):
    set_determinism(cfg.seed, cfg.deterministic)
    model = copy.deepcopy(base)
    model.resize_slu_heads(num_intents, num_tags if mode == "joint" else 0)
    model.to(next(base.parameters()).dtype)
    model.train()
    state = OptimizerState(lr=0.0)
    best_acc, best_state = -1.0, None
    valid_gold = [f.intent for f in valid_feats]
    stream = _step_stream(len(train_feats), cfg)
    for step in range(cfg.max_steps):
        batch = collate_slu([train_feats[i] for i in next(stream)])
        model.zero_grad(set_to_none=True)
        l_ic, l_sf, _, _ = slu_losses(model, batch, mode, beta)
        bundle = finetune_loss(mode, l_ic, l_sf)
        loss = l_ic if l_sf is None else l_ic + l_sf
        loss.backward()
        lr = _optimizer_update(model, state, cfg, step)
        rec = {"run": tag, "step": step, "lr": lr, **bundle.present(), "total": bundle.total}
        if (step + 1) % cfg.eval_every == 0 or step + 1 == cfg.max_steps:
            pred, _ = predict_slu(model, valid_feats, mode, beta)
            acc = intent_accuracy(pred, valid_gold)
            rec["valid_icacc"] = acc
            if acc > best_acc:
                best_acc, best_state = acc, copy.deepcopy(model.state_dict())
            model.train()
        log.append(rec)
    model.load_state_dict(best_state)
    model.eval()
    return model, best_acc


def finetune(pretrained: JointEncoder, train_feats: Sequence[SluFeatures], valid_feats: Sequence[SluFeatures],
             num_intents: int, num_tags: int, mode: str = "joint", use_phone_embeddings: bool = False,
             beta_grid: Sequence[float] = BETA_GRID, cfg: TrainConfig | None = None) -> FinetuneResult:
    """Fine-tune for IC (and SF in joint mode), selecting checkpoints and beta by validation ICAcc."""
    cfg = (cfg or TrainConfig()).validate()
    if mode not in ("ic_only", "joint"):
        raise ContractError(f"unknown fine-tuning mode {mode!r}")
    betas = list(beta_grid) if use_phone_embeddings else [None]
    if use_phone_embeddings and not betas:
        raise ValueError("beta_grid must be non-empty when phone embeddings are used")
    log: list[dict] = []
    per_beta = {}
    best = None
    for beta in betas:
        tag = "no_pe" if beta is None else f"beta={beta}"
        model, acc = _train_one(pretrained, train_feats, valid_feats, num_intents, num_tags, mode, beta, cfg, log, tag)
        per_beta[tag] = acc
        if best is None or acc > best[2]:
            best = (model, beta, acc)
    return FinetuneResult(best[0], best[1], best[2], per_beta, log)
