import json

import pytest
import yaml

from phonoslu import cli
from phonoslu.cli import RunConfig, config_from_dict, config_to_dict, dump_config, load_config

FAST = ["--set", "pretrain.steps=8", "--set", "finetune.steps=8", "--set", "finetune.eval_every=4",
        "--set", "model.hidden_dim=16", "--set", "model.ffn_dim=32", "--set", "model.num_layers=1",
        "--set", "finetune.beta_grid=[0.5]"]


@pytest.fixture(scope="module")
def demo(tmp_path_factory):
    root = tmp_path_factory.mktemp("demo")
    cli.cmd_synth(str(root), seed=1, corruption_rate=0.5)
    return root


def run(demo, *args, out=None):
    argv = [args[0], "--config", str(demo / "config.yaml"), *FAST, *args[1:]]
    if out is not None:
        argv += ["--set", f"paths.out_dir={out}"]
    return cli.main(argv)


def test_config_roundtrip(demo):
    cfg = load_config(str(demo / "config.yaml"), ["finetune.beta_grid=[0.1, 1.0]", "task=+MLM 15%"])
    assert cfg.finetune.beta_grid == (0.1, 1.0)
    again = config_from_dict(yaml.safe_load(dump_config(cfg)))
    assert again == cfg
    assert config_from_dict(config_to_dict(RunConfig())) == RunConfig()


@pytest.mark.parametrize("override", ["pretrain.steps=many", "masking.strategy=both", "task=+XYZ",
                                      "nosuch.key=1", "finetune.mode=ner", "masking.substitution_split=[1, 0]"])
def test_bad_config_rejected(demo, override):
    with pytest.raises(ValueError):
        load_config(str(demo / "config.yaml"), [override])


def test_infeasible_task_fails_before_work(demo, tmp_path, capsys):
    out = tmp_path / "o"
    code = run(demo, "prepare", "--set", "task=+condMLM 100%+condMSM 100%(oneMod)",
               "--set", "masking.wsa_enabled=true", out=out)
    assert code != 0
    err = capsys.readouterr().err.strip()
    assert err.startswith("phonoslu: error:") and "infeasible" in err and "\n" not in err
    assert not out.exists()


def test_missing_path_is_one_line_error(demo, tmp_path, capsys):
    assert run(demo, "prepare", "--set", f"paths.corpus={tmp_path / 'missing.txt'}", out=tmp_path / "o") == 1
    err = capsys.readouterr().err
    assert err.count("\n") == 1 and "does not exist" in err


def test_pipeline_and_determinism(demo, tmp_path):
    outs = [tmp_path / "a", tmp_path / "b"]
    for out in outs:
        for cmd in ("build-lexicon", "prepare", "pretrain", "finetune", "eval", "mrr"):
            extra = ["--set", "task=+condMLM 30%+condMSM 30%(twoMod)+WSA"]
            if cmd == "finetune":
                extra += ["--set", "finetune.use_phone_embeddings=true"]
            assert run(demo, cmd, *extra, out=out) == 0, cmd
    for rel in ("pretrain/loss_log.jsonl", "finetune/finetune_log.jsonl", "report.txt", "report.jsonl",
                "mrr.json", "shards/shard-000.jsonl", "pretrain/model.ckpt", "finetune/model.ckpt"):
        assert (outs[0] / rel).read_bytes() == (outs[1] / rel).read_bytes(), rel
    echoed = load_config(str(outs[0] / "finetune.config.yaml"))
    assert echoed.finetune.use_phone_embeddings and echoed.paths.out_dir == str(outs[0])
    assert json.loads((outs[0] / "finetune" / "valid_report.json").read_text())["beta"] == 0.5
    assert (outs[0] / "finetune" / "labels.json").exists()


def test_eval_with_perfect_classifier(demo, tmp_path, monkeypatch):
    out = tmp_path / "p"
    for cmd in ("prepare", "pretrain", "finetune"):
        assert run(demo, cmd, out=out) == 0
    refs = [json.loads(line) for line in (demo / "test.jsonl").read_text().splitlines()]
    hyp = tmp_path / "hyp.txt"
    hyp.write_text("\n".join(r["text"] for r in refs) + "\n")
    gold = {r["text"]: (r["intent"], [(s["name"], s["value"]) for s in r["slots"]]) for r in refs}
    monkeypatch.setattr(cli, "predict_frames", lambda model, beta, mode, texts, *a: [gold[t] for t in texts])
    assert run(demo, "eval", "--hyp", str(hyp), out=out) == 0
    lines = [json.loads(x) for x in (out / "report.jsonl").read_text().splitlines()]
    metrics = {x["metric"]: x["value"] for x in lines}
    assert metrics["icacc"] == 1.0
    assert metrics["semer"]["value"] == 0.0
    assert "confusion_pairs" not in metrics


def test_presets_command(capsys):
    assert cli.main(["presets"]) == 0
    assert "+condMLM 100%+condMSM 100%(oneMod)" in capsys.readouterr().out.splitlines()
