import struct

import pytest
import torch

from phonoslu.checkpoint import MAGIC, CheckpointError, load_checkpoint, read_checkpoint, save_checkpoint
from phonoslu.model import JointEncoder, ModelConfig


@pytest.fixture
def model():
    torch.manual_seed(3)
    return JointEncoder(ModelConfig(vocab_size=20, word_vocab_size=12, num_layers=1, hidden_dim=8, num_heads=2,
                                    ffn_dim=16, max_seq_len=10, num_intents=3, num_slot_tags=5))


def test_roundtrip(model, tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, model, {"step": 7})
    loaded, meta = load_checkpoint(path)
    assert meta == {"step": 7}
    assert loaded.cfg == model.cfg
    for (n1, a), (n2, b) in zip(model.state_dict().items(), loaded.state_dict().items()):
        assert n1 == n2 and torch.equal(a, b)


def test_bytes_are_stable(model, tmp_path):
    save_checkpoint(tmp_path / "a", model)
    save_checkpoint(tmp_path / "b", model)
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()
    assert (tmp_path / "a").read_bytes()[:8] == MAGIC


def test_bad_magic_and_version(model, tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, model)
    raw = path.read_bytes()
    (tmp_path / "x").write_bytes(b"NOTACKPT" + raw[8:])
    with pytest.raises(CheckpointError, match="magic"):
        read_checkpoint(tmp_path / "x")
    (tmp_path / "y").write_bytes(raw[:8] + struct.pack("<B", 9) + raw[9:])
    with pytest.raises(CheckpointError, match="version"):
        read_checkpoint(tmp_path / "y")
    (tmp_path / "z").write_bytes(raw[:-3])
    with pytest.raises(CheckpointError, match="truncated"):
        read_checkpoint(tmp_path / "z")


def test_shape_mismatch_detected(model, tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, model)
    raw = path.read_bytes()
    # rewrite the header so the config claims one more intent than the tensors hold
    n = struct.unpack("<I", raw[9:13])[0]
    header = raw[13:13 + n].replace(b'"num_intents": 3', b'"num_intents": 4')
    (tmp_path / "bad").write_bytes(raw[:9] + struct.pack("<I", len(header)) + header + raw[13 + n:])
    with pytest.raises(CheckpointError, match="shape"):
        load_checkpoint(tmp_path / "bad")
