"""Command-line entry point.

Every command reads one structured config (``--config run.yaml``) with
optional ``--set section.key=value`` overrides, validates it and the paths it
needs before doing any work, and writes the effective config next to its
outputs.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import types
import typing
from dataclasses import asdict, dataclass, field
from pathlib import Path

import yaml

from .checkpoint import load_checkpoint, save_checkpoint
from .eval import MetricReport, extract_confusion_pairs, mrr, mrr_table, write_report
from .lexicon import load_dictionary, measure_unk_rate, write_phone_vocab
from .model import ModelConfig
from .pretraindata import PRESETS, MaskingConfig, generate_examples, masking_stats, preset, read_shard, write_shard
from .slu import LabelMaps, bio_to_slots, featurize, read_slu, write_slu
from .synth import corrupt_records, make_world
from .textproc import IdSpace, Vocab, build_paired, build_vocab
from .train import BETA_GRID, TrainConfig, finetune, predict_slu, pretrain

logger = logging.getLogger("phonoslu")


# -- config -------------------------------------------------------------------

@dataclass
class Paths:
    dictionary: str | None = None
    corpus: str | None = None
    vocab: str | None = None
    slu_train: str | None = None
    slu_valid: str | None = None
    slu_test: str | None = None
    # ASR 1-best transcripts for slu_test, one per line
    asr_test: str | None = None
    # reference / hypothesis transcripts for confusion-pair MRR
    mrr_refs: str | None = None
    mrr_hyps: str | None = None
    checkpoint: str | None = None
    out_dir: str = "run"


@dataclass
class MaskingSection:
    word_mask_pct: float = 15.0
    phone_mask_pct: float = 0.0
    strategy: str = "textOnly"
    text_mlm_pct: float = 0.0
    substitution_split: tuple[float, float, float] = (0.8, 0.1, 0.1)
    wsa_enabled: bool = False
    wsa_negative_rate: float = 0.5
    dupe_factor: int = 2


@dataclass
class ModelSection:
    num_layers: int = 2
    hidden_dim: int = 64
    num_heads: int = 4
    ffn_dim: int = 128
    max_seq_len: int = 64
    dropout: float = 0.1
    restrict_lm_support: bool = False


@dataclass
class PretrainSection:
    steps: int = 600
    batch_size: int = 16
    learning_rate: float = 2e-3
    warmup_frac: float = 0.1
    max_grad_norm: float | None = 1.0


@dataclass
class FinetuneSection:
    steps: int = 500
    batch_size: int = 16
    learning_rate: float = 1e-3
    warmup_frac: float = 0.1
    max_grad_norm: float | None = 1.0
    eval_every: int = 50
    mode: str = "joint"
    use_phone_embeddings: bool = False
    beta_grid: tuple[float, ...] = BETA_GRID


@dataclass
class EvalSection:
    top_k: int = 20
    label: str | None = None


@dataclass
class RunConfig:
    seed: int = 0
    # a named preset (see PRESETS); null means the explicit masking section
    task: str | None = None
    deterministic: bool = True
    paths: Paths = field(default_factory=Paths)
    masking: MaskingSection = field(default_factory=MaskingSection)
    model: ModelSection = field(default_factory=ModelSection)
    pretrain: PretrainSection = field(default_factory=PretrainSection)
    finetune: FinetuneSection = field(default_factory=FinetuneSection)
    eval: EvalSection = field(default_factory=EvalSection)

    def masking_config(self) -> MaskingConfig:
        m = self.masking
        common = dict(substitution_split=m.substitution_split, wsa_negative_rate=m.wsa_negative_rate, seed=self.seed)
        if self.task is not None:
            # masking.wsa_enabled can switch WSA on for a preset that lacks it
            if m.wsa_enabled:
                common["wsa_enabled"] = True
            return preset(self.task, **common)
        return MaskingConfig(word_mask_pct=m.word_mask_pct, phone_mask_pct=m.phone_mask_pct, strategy=m.strategy,
                             text_mlm_pct=m.text_mlm_pct, wsa_enabled=m.wsa_enabled, **common).validate()

    def pretrain_config(self) -> TrainConfig:
        p = self.pretrain
        return TrainConfig(batch_size=p.batch_size, max_steps=p.steps, learning_rate=p.learning_rate,
                           warmup_frac=p.warmup_frac, max_grad_norm=p.max_grad_norm, seed=self.seed,
                           deterministic=self.deterministic).validate()

    def finetune_config(self) -> TrainConfig:
        f = self.finetune
        return TrainConfig(batch_size=f.batch_size, max_steps=f.steps, learning_rate=f.learning_rate,
                           warmup_frac=f.warmup_frac, max_grad_norm=f.max_grad_norm, seed=self.seed,
                           deterministic=self.deterministic, eval_every=f.eval_every).validate()

    def validate(self) -> "RunConfig":
        if self.task is not None and self.task not in PRESETS:
            raise ValueError(f"unknown task {self.task!r}; choose one of {sorted(PRESETS)} or null")
        self.masking_config()
        self.pretrain_config()
        self.finetune_config()
        if self.masking.dupe_factor < 1:
            raise ValueError("masking.dupe_factor must be >= 1")
        if self.finetune.mode not in ("joint", "ic_only"):
            raise ValueError(f"finetune.mode must be 'joint' or 'ic_only', got {self.finetune.mode!r}")
        if any(b < 0 for b in self.finetune.beta_grid):
            raise ValueError("finetune.beta_grid entries must be non-negative")
        return self


def _coerce(tp, value, where: str):
    origin = typing.get_origin(tp)
    if dataclasses.is_dataclass(tp):
        if not isinstance(value, dict):
            raise ValueError(f"{where}: expected a mapping")
        return _from_dict(tp, value, where + ".")
    if origin in (typing.Union, types.UnionType):
        args = typing.get_args(tp)
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _coerce(inner[0], value, where)
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ValueError(f"{where}: expected a list")
        args = typing.get_args(tp)
        item = args[0]
        if len(args) > 1 and args[1] is not Ellipsis and len(value) != len(args):
            raise ValueError(f"{where}: expected {len(args)} entries, got {len(value)}")
        return tuple(_coerce(item, v, where) for v in value)
    if tp is bool:
        if not isinstance(value, bool):
            raise ValueError(f"{where}: expected true/false, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ValueError(f"{where}: expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ValueError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ValueError(f"{where}: expected a string, got {value!r}")
        return value
    return value


def _from_dict(cls, data: dict, where: str = ""):
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ValueError(f"unknown config key(s) {sorted(where + k for k in unknown)}")
    kwargs = {k: _coerce(hints[k], v, where + k) for k, v in data.items()}
    return cls(**kwargs)


def config_from_dict(data: dict | None) -> RunConfig:
    return _from_dict(RunConfig, data or {})


def config_to_dict(cfg: RunConfig) -> dict:
    def plain(x):
        if isinstance(x, dict):
            return {k: plain(v) for k, v in x.items()}
        if isinstance(x, (list, tuple)):
            return [plain(v) for v in x]
        return x
    return plain(asdict(cfg))


def apply_override(data: dict, assignment: str) -> None:
    if "=" not in assignment:
        raise ValueError(f"--set expects key=value, got {assignment!r}")
    key, raw = assignment.split("=", 1)
    parts = key.strip().split(".")
    node = data
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ValueError(f"--set {key}: {p} is not a section")
    node[parts[-1]] = yaml.safe_load(raw)


def load_config(path: str | None, overrides=()) -> RunConfig:
    data = {}
    if path is not None:
        with open(path, encoding="utf-8") as f:
            data = yaml.safe_load(f) or {}
        if not isinstance(data, dict):
            raise ValueError(f"{path}: config must be a mapping")
    for o in overrides:
        apply_override(data, o)
    return config_from_dict(data).validate()


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(config_to_dict(cfg), sort_keys=False)


def _echo_config(cfg: RunConfig, out: Path, command: str) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{command}.config.yaml").write_text(dump_config(cfg), encoding="utf-8")


def _require(cfg: RunConfig, *names: str) -> None:
    for name in names:
        value = getattr(cfg.paths, name)
        if value is None:
            raise ValueError(f"paths.{name} is required for this command")
        if not Path(value).exists():
            raise FileNotFoundError(f"paths.{name}: {value} does not exist")


# -- shared loading -----------------------------------------------------------

def _read_lines(path) -> list[str]:
    with open(path, encoding="utf-8") as f:
        return [line.strip() for line in f if line.strip()]


def _vocab_path(cfg: RunConfig) -> Path:
    return Path(cfg.paths.vocab) if cfg.paths.vocab else Path(cfg.paths.out_dir) / "vocab.txt"


def _space(cfg: RunConfig, lex) -> IdSpace:
    path = _vocab_path(cfg)
    if not path.exists():
        raise FileNotFoundError(f"vocabulary {path} not found; run `prepare` first or set paths.vocab")
    return IdSpace(Vocab.from_file(path), lex.phone_vocab)


def _model_config(cfg: RunConfig, space: IdSpace) -> ModelConfig:
    m = cfg.model
    return ModelConfig(vocab_size=len(space), word_vocab_size=len(space.vocab), num_layers=m.num_layers,
                       hidden_dim=m.hidden_dim, num_heads=m.num_heads, ffn_dim=m.ffn_dim,
                       max_seq_len=m.max_seq_len, dropout=m.dropout,
                       restrict_lm_support=m.restrict_lm_support).validate()


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n", encoding="utf-8")


# -- commands -----------------------------------------------------------------

def cmd_build_lexicon(cfg: RunConfig) -> dict:
    _require(cfg, "dictionary")
    out = Path(cfg.paths.out_dir)
    _echo_config(cfg, out, "build-lexicon")
    lex = load_dictionary(cfg.paths.dictionary)
    if cfg.paths.corpus and Path(cfg.paths.corpus).exists():
        lex = measure_unk_rate(lex, _read_lines(cfg.paths.corpus))
    write_phone_vocab(lex, out / "phones.txt")
    stats = {"entries": len(lex.entries), "phones": len(lex.real_phones), "unk_rate": lex.unk_rate}
    _write_json(out / "lexicon_stats.json", stats)
    return stats


def cmd_prepare(cfg: RunConfig) -> dict:
    mcfg = cfg.masking_config()
    _require(cfg, "dictionary", "corpus")
    out = Path(cfg.paths.out_dir)
    _echo_config(cfg, out, "prepare")
    lex = load_dictionary(cfg.paths.dictionary)
    lines = _read_lines(cfg.paths.corpus)
    extra = [r.text for r in read_slu(cfg.paths.slu_train)] if cfg.paths.slu_train else []
    if cfg.paths.vocab:
        vocab = Vocab.from_file(cfg.paths.vocab)
    else:
        vocab = build_vocab(lines + extra)
        vocab.save(out / "vocab.txt")
    space = IdSpace(vocab, lex.phone_vocab)
    corpus = [build_paired(lex, vocab, t) for t in lines]
    examples = generate_examples(corpus, mcfg, space, cfg.model.max_seq_len, dupe_factor=cfg.masking.dupe_factor)
    shard = out / "shards" / "shard-000.jsonl"
    shard.parent.mkdir(exist_ok=True)
    write_shard(shard, examples, mcfg)
    report = masking_stats(examples)
    _write_json(out / "generation_report.json", report)
    return report


def cmd_pretrain(cfg: RunConfig) -> dict:
    _require(cfg, "dictionary")
    out = Path(cfg.paths.out_dir)
    shards = sorted((out / "shards").glob("shard-*.jsonl"))
    if not shards:
        raise FileNotFoundError(f"no shards under {out / 'shards'}; run `prepare` first")
    lex = load_dictionary(cfg.paths.dictionary)
    space = _space(cfg, lex)
    _echo_config(cfg, out, "pretrain")
    examples = [ex for s in shards for ex in read_shard(s)]
    dest = out / "pretrain"
    dest.mkdir(exist_ok=True)
    model, log = pretrain(examples, _model_config(cfg, space), cfg.pretrain_config(), log_path=dest / "loss_log.jsonl")
    save_checkpoint(dest / "model.ckpt", model, {"stage": "pretrain", "task": cfg.task, "steps": cfg.pretrain.steps})
    return {"final_total": log[-1]["total"], "steps": len(log)}


def _finetune_feats(cfg, lex, space, labels, records):
    return [featurize(r.text, lex, space, cfg.model.max_seq_len, labels=labels, record=r) for r in records]


def cmd_finetune(cfg: RunConfig) -> dict:
    _require(cfg, "dictionary", "slu_train", "slu_valid")
    out = Path(cfg.paths.out_dir)
    ckpt = Path(cfg.paths.checkpoint) if cfg.paths.checkpoint else out / "pretrain" / "model.ckpt"
    if not ckpt.exists():
        raise FileNotFoundError(f"checkpoint {ckpt} not found")
    lex = load_dictionary(cfg.paths.dictionary)
    space = _space(cfg, lex)
    _echo_config(cfg, out, "finetune")
    train_recs, valid_recs = read_slu(cfg.paths.slu_train), read_slu(cfg.paths.slu_valid)
    labels = LabelMaps.from_records(train_recs)
    labels.check(valid_recs, with_slots=cfg.finetune.mode == "joint")
    base, _ = load_checkpoint(ckpt)
    if base.cfg.vocab_size != len(space):
        raise ValueError(f"checkpoint vocabulary size {base.cfg.vocab_size} != id space size {len(space)}")
    result = finetune(base, _finetune_feats(cfg, lex, space, labels, train_recs),
                      _finetune_feats(cfg, lex, space, labels, valid_recs), len(labels.intents), len(labels.tags),
                      mode=cfg.finetune.mode, use_phone_embeddings=cfg.finetune.use_phone_embeddings,
                      beta_grid=cfg.finetune.beta_grid, cfg=cfg.finetune_config())
    dest = out / "finetune"
    dest.mkdir(exist_ok=True)
    meta = {"stage": "finetune", "mode": cfg.finetune.mode, "beta": result.beta}
    save_checkpoint(dest / "model.ckpt", result.model, meta)
    labels.save(dest / "labels.json")
    with open(dest / "finetune_log.jsonl", "w", encoding="utf-8") as f:
        for rec in result.log:
            f.write(json.dumps(rec, separators=(",", ":")) + "\n")
    report = {"valid_icacc": result.valid_icacc, "beta": result.beta, "per_beta": result.per_beta}
    _write_json(dest / "valid_report.json", report)
    return report


def predict_frames(model, beta, mode, texts, lex, space, labels, max_seq_len):
    """(intent, slots) per input text."""
    feats = [featurize(t, lex, space, max_seq_len) for t in texts]
    intents, tags = predict_slu(model, feats, mode, beta)
    frames = []
    for k, t in enumerate(texts):
        slots = []
        if tags is not None:
            words = t.lower().split()[: len(tags[k])]
            slots = bio_to_slots(words, [labels.tags[i] for i in tags[k]])
        frames.append((labels.intents[intents[k]], slots))
    return frames


def cmd_eval(cfg: RunConfig, hyp_path: str | None = None) -> MetricReport:
    _require(cfg, "dictionary", "slu_test")
    hyp_path = hyp_path or cfg.paths.asr_test
    if hyp_path is not None and not Path(hyp_path).exists():
        raise FileNotFoundError(f"hypothesis file {hyp_path} does not exist")
    out = Path(cfg.paths.out_dir)
    ckpt = Path(cfg.paths.checkpoint) if cfg.paths.checkpoint else out / "finetune" / "model.ckpt"
    label_path = ckpt.parent / "labels.json"
    for p in (ckpt, label_path):
        if not p.exists():
            raise FileNotFoundError(f"{p} not found; run `finetune` first")
    lex = load_dictionary(cfg.paths.dictionary)
    space = _space(cfg, lex)
    _echo_config(cfg, out, "eval")
    refs = read_slu(cfg.paths.slu_test)
    labels = LabelMaps.load(label_path)
    model, meta = load_checkpoint(ckpt)
    mode = meta.get("mode", cfg.finetune.mode)
    labels.check(refs, with_slots=mode == "joint")
    texts = [r.text for r in refs] if hyp_path is None else _read_lines(hyp_path)
    if len(texts) != len(refs):
        raise ValueError(f"{len(texts)} hypotheses for {len(refs)} reference utterances")
    hyps = predict_frames(model, meta.get("beta"), mode, texts, lex, space, labels, cfg.model.max_seq_len)
    report = MetricReport.from_predictions([r.frame() for r in refs], hyps, with_slots=mode == "joint",
                                           label=cfg.eval.label)
    if hyp_path is not None:
        pairs = extract_confusion_pairs([r.text for r in refs], texts, cfg.eval.top_k)
        report.confusion_pairs = [asdict(p) for p in pairs]
    write_report(report, out / "report.txt", out / "report.jsonl")
    return report


def cmd_mrr(cfg: RunConfig) -> float:
    _require(cfg, "dictionary", "mrr_refs", "mrr_hyps")
    out = Path(cfg.paths.out_dir)
    ckpt = Path(cfg.paths.checkpoint) if cfg.paths.checkpoint else out / "pretrain" / "model.ckpt"
    if not ckpt.exists():
        raise FileNotFoundError(f"checkpoint {ckpt} not found")
    lex = load_dictionary(cfg.paths.dictionary)
    space = _space(cfg, lex)
    _echo_config(cfg, out, "mrr")
    allowed = set(space.word_ids)
    word_ids = {t: i for i, t in enumerate(space.vocab.tokens) if i in allowed}
    pairs = extract_confusion_pairs(_read_lines(cfg.paths.mrr_refs), _read_lines(cfg.paths.mrr_hyps),
                                    cfg.eval.top_k, vocab_filter=word_ids)
    if not pairs:
        raise ValueError("no in-vocabulary confusion pairs between the reference and hypothesis transcripts")
    model, _ = load_checkpoint(ckpt)
    value = mrr(pairs, model.token_embedding.weight.detach().double().numpy(), word_ids)
    label = cfg.eval.label or cfg.task or "model"
    (out / "mrr.txt").write_text(mrr_table([(label, value)]), encoding="utf-8")
    _write_json(out / "mrr.json", {"label": label, "mrr": value, "pairs": [asdict(p) for p in pairs]})
    return value


def cmd_synth(out_dir: str, seed: int, corruption_rate: float) -> RunConfig:
    """Write a synthetic world (dictionary, corpus, SLU splits, corrupted 1-best) plus a starter config."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    world = make_world(seed=seed)
    (out / "lexicon.dict").write_text("\n".join(world.lexicon_lines) + "\n", encoding="utf-8")
    (out / "corpus.txt").write_text("\n".join(world.pretrain_corpus) + "\n", encoding="utf-8")
    write_slu(out / "train.jsonl", world.slu_train)
    write_slu(out / "valid.jsonl", world.slu_valid)
    write_slu(out / "test.jsonl", world.slu_test)
    hyps = corrupt_records(world.slu_test, world.lexicon, corruption_rate, seed, keywords=world.keywords)
    (out / "test_asr.txt").write_text("\n".join(hyps) + "\n", encoding="utf-8")
    (out / "test_ref.txt").write_text("\n".join(r.text for r in world.slu_test) + "\n", encoding="utf-8")
    cfg = RunConfig(seed=seed, paths=Paths(dictionary=str(out / "lexicon.dict"), corpus=str(out / "corpus.txt"),
                                           slu_train=str(out / "train.jsonl"), slu_valid=str(out / "valid.jsonl"),
                                           slu_test=str(out / "test.jsonl"), asr_test=str(out / "test_asr.txt"),
                                           mrr_refs=str(out / "test_ref.txt"), mrr_hyps=str(out / "test_asr.txt"),
                                           out_dir=str(out / "run")))
    (out / "config.yaml").write_text(dump_config(cfg), encoding="utf-8")
    return cfg


# -- argument parsing ---------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="phonoslu", description="Joint textual-phonetic pre-training for SLU.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="YAML run config")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config field, e.g. --set pretrain.steps=100")
        return p

    with_config("build-lexicon", "parse the pronunciation dictionary and write the phone vocabulary")
    with_config("prepare", "build the vocabulary and masked pre-training shards")
    with_config("pretrain", "pre-train on prepared shards")
    with_config("finetune", "fine-tune intent/slot heads on the SLU train split")
    p = with_config("eval", "score the fine-tuned model on the test split")
    p.add_argument("--hyp", help="ASR 1-best transcripts aligned with the test split (overrides paths.asr_test)")
    with_config("mrr", "confusion-pair MRR over the input embeddings")
    p = sub.add_parser("synth", help="write a synthetic demo world and starter config")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--corruption-rate", type=float, default=0.5)
    p = sub.add_parser("presets", help="list the named pre-training task presets")
    return parser


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.command == "presets":
        for name in PRESETS:
            print(name)
        return 0
    if args.command == "synth":
        cfg = cmd_synth(args.out, args.seed, args.corruption_rate)
        print(f"wrote synthetic world; config at {Path(args.out) / 'config.yaml'}")
        return 0
    cfg = load_config(args.config, args.overrides)
    if args.command == "build-lexicon":
        print(json.dumps(cmd_build_lexicon(cfg), sort_keys=True))
    elif args.command == "prepare":
        rep = cmd_prepare(cfg)
        print(f"examples {rep['examples']}  word_mask_rate {rep['word_mask_rate']:.4f}  "
              f"negatives {rep['negative_fraction']:.4f}")
    elif args.command == "pretrain":
        print(json.dumps(cmd_pretrain(cfg), sort_keys=True))
    elif args.command == "finetune":
        print(json.dumps(cmd_finetune(cfg), sort_keys=True))
    elif args.command == "eval":
        print(cmd_eval(cfg, args.hyp).to_text(), end="")
    elif args.command == "mrr":
        print(f"mrr {cmd_mrr(cfg):.4f}")
    return 0


def main(argv=None) -> int:
    try:
        return run(argv)
    except (OSError, ValueError, KeyError, RuntimeError, FloatingPointError) as e:
        msg = str(e).splitlines()[0] if str(e) else type(e).__name__
        print(f"phonoslu: error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
