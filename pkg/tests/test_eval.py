import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import levenshtein, ranks_by_sort, semer_bruteforce

from phonoslu.eval import (
    ConfusionPair,
    MetricReport,
    SemErCounts,
    align_words,
    corpus_semer,
    extract_confusion_pairs,
    intent_accuracy,
    mrr,
    mrr_table,
    reciprocal_ranks,
    semer,
    write_report,
)


def test_intent_accuracy():
    assert intent_accuracy([1, 2, 3], [1, 2, 3]) == 1.0
    assert intent_accuracy([0, 0], [1, 1]) == 0.0
    assert intent_accuracy([1] * 7 + [0] * 3, [1] * 10) == pytest.approx(0.7)
    with pytest.raises(ValueError):
        intent_accuracy([], [])
    with pytest.raises(ValueError):
        intent_accuracy([1], [1, 2])


def test_semer_identical():
    frame = ("PlayMusic", [("sort", "popular"), ("artist", "x")])
    c, v = semer(frame, frame)
    assert (c.cor, c.dele, c.ins, c.sub) == (3, 0, 0, 0) and v == 0.0


def test_semer_worked_example():
    ref = ("PlayMusic", [("sort", "popular"), ("music_item", "song"), ("artist", "brian epstein")])
    hyp = ("PlayMusic", [("sort", "popular"), ("artist", "brian epsten"), ("playlist", "x")])
    c, v = semer(ref, hyp)
    assert c.as_dict() == {"cor": 2, "del": 1, "ins": 1, "sub": 1}
    assert v == pytest.approx(0.75)


def test_semer_empty_hyp_wrong_intent():
    c, v = semer(("A", [("x", "1"), ("y", "2")]), ("B", []))
    assert c.as_dict() == {"cor": 0, "del": 2, "ins": 0, "sub": 1}
    assert v == 1.0


def test_semer_prefers_exact_match_among_duplicate_names():
    ref = ("I", [("loc", "a"), ("loc", "b")])
    hyp = ("I", [("loc", "b")])
    c, _ = semer(ref, hyp)
    assert c.as_dict() == {"cor": 2, "del": 1, "ins": 0, "sub": 0}


def test_semer_undefined_denominator():
    with pytest.raises(ZeroDivisionError):
        SemErCounts().value


def test_corpus_semer_sums():
    a = (("I", [("x", "1")]), ("I", [("x", "2")]))
    b = (("J", []), ("J", []))
    total = corpus_semer([a[0], b[0]], [a[1], b[1]])
    assert total == SemErCounts(cor=2, dele=0, ins=0, sub=1)


names = st.sampled_from(["a", "b", "c"])
values = st.sampled_from(["1", "2", "3"])
frames = st.tuples(st.sampled_from(["I", "J"]), st.lists(st.tuples(names, values), max_size=5))


@settings(max_examples=200, deadline=None)
@given(frames, frames)
def test_semer_matches_bruteforce(ref, hyp):
    c, v = semer(ref, hyp)
    assert (c.cor, c.dele, c.ins, c.sub) == semer_bruteforce(ref, hyp)
    assert c.cor + c.dele + c.sub == len(ref[1]) + 1
    assert v >= 0
    exact = ref[0] == hyp[0] and sorted(ref[1]) == sorted(hyp[1])
    assert (v == 0) == exact


def test_alignment_worked_example():
    cost, ops = align_words("turn the lights off".split(), "turn a light off".split())
    assert cost == 2
    assert [(k, r, h) for k, r, h in ops if k == "sub"] == [("sub", "the", "a"), ("sub", "lights", "light")]
    pairs = extract_confusion_pairs(["turn the lights off"], ["turn a light off"])
    assert {(p.hyp_word, p.ref_word): p.count for p in pairs} == {("a", "the"): 1, ("light", "lights"): 1}


def test_alignment_tie_prefers_substitution_over_indels():
    _, ops = align_words(["a", "b"], ["a", "c"])
    assert [k for k, _, _ in ops] == ["match", "sub"]
    _, ops = align_words(["x"], [])
    assert ops == [("del", "x", None)]


def test_confusion_pairs_selection():
    assert extract_confusion_pairs(["a b c"], ["a b c"]) == []
    refs = ["turn the lights off"] * 3 + ["the lights"]
    hyps = ["turn a lights off"] * 3 + ["the light"]
    top = extract_confusion_pairs(refs, hyps, top_k=1)
    assert top == [ConfusionPair("a", "the", 3)]
    filtered = extract_confusion_pairs(refs, hyps, vocab_filter={"light", "lights", "the"})
    assert filtered == [ConfusionPair("light", "lights", 1)]
    with pytest.raises(ValueError):
        extract_confusion_pairs(["a"], [])


def test_confusion_pairs_tie_order():
    pairs = extract_confusion_pairs(["b a"], ["z y"])
    assert [(p.hyp_word, p.ref_word) for p in pairs] == [("y", "a"), ("z", "b")]


words = st.lists(st.sampled_from(["a", "b", "c", "d"]), max_size=8)


@settings(max_examples=200, deadline=None)
@given(words, words)
def test_alignment_is_optimal_and_consistent(ref, hyp):
    cost, ops = align_words(ref, hyp)
    assert cost == levenshtein(tuple(ref), tuple(hyp))
    assert [r for _, r, _ in ops if r is not None] == ref
    assert [h for _, _, h in ops if h is not None] == hyp
    assert sum(k != "match" for k, _, _ in ops) == cost
    assert all((k == "match") == (r == h) for k, r, h in ops if k in ("match", "sub"))


def test_mrr_nearest_is_one():
    emb = np.array([[1.0, 0.0], [0.9, 0.1], [0.0, 1.0]])
    ids = {"a": 0, "b": 1, "c": 2}
    assert mrr([ConfusionPair("a", "b")], emb, ids) == 1.0


def test_mrr_two_pairs():
    emb = np.array([[1.0, 0.0], [0.9, 0.1], [0.8, 0.3], [0.5, 0.5], [0.1, 0.9], [0.0, 1.0]])
    ids = {w: i for i, w in enumerate("abcdef")}
    rr = reciprocal_ranks([ConfusionPair("a", "b"), ConfusionPair("a", "e")], emb, ids, range(6))
    assert rr == [1.0, 0.25]
    assert mrr([ConfusionPair("a", "b"), ConfusionPair("a", "e")], emb, ids) == 0.625


def test_mrr_ties_rank_lower_id_first():
    emb = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 2.0]])
    ids = {"q": 0, "x": 1, "y": 2}
    assert reciprocal_ranks([ConfusionPair("q", "x"), ConfusionPair("q", "y")], emb, ids, [0, 1, 2]) == [1.0, 0.5]


def test_mrr_zero_norm_names_token():
    emb = np.array([[1.0, 0.0], [0.0, 0.0]])
    with pytest.raises(ValueError, match="'z'"):
        mrr([ConfusionPair("a", "z")], emb, {"a": 0, "z": 1})


def test_cosine_symmetry():
    rng = np.random.default_rng(0)
    emb = rng.normal(size=(4, 3))
    ids = {"a": 0, "b": 1, "c": 2, "d": 3}
    ab = reciprocal_ranks([ConfusionPair("a", "b")], emb, ids, [1])
    ba = reciprocal_ranks([ConfusionPair("b", "a")], emb, ids, [0])
    assert ab == ba == [1.0]


@settings(max_examples=100, deadline=None)
@given(st.integers(3, 50), st.integers(0, 2**32 - 1), st.booleans())
def test_mrr_matches_sort_oracle(v, seed, quantize):
    rng = np.random.default_rng(seed)
    emb = rng.normal(size=(v, 4))
    if quantize:
        # small integer grid so exact cosine ties actually occur
        emb = rng.integers(-1, 2, size=(v, 4)).astype(float)
        emb[np.linalg.norm(emb, axis=1) == 0] = 1.0
    ids = {f"w{i}": i for i in range(v)}
    pairs = []
    for _ in range(5):
        a, b = rng.choice(v, size=2, replace=False)
        pairs.append((f"w{a}", f"w{b}"))
    got = reciprocal_ranks([ConfusionPair(h, r) for h, r in pairs], emb, ids, range(v))
    assert got == ranks_by_sort(pairs, emb.tolist(), ids, range(v))


def test_report_formats(tmp_path):
    ref = [("A", [("x", "1")]), ("B", [])]
    hyp = [("A", [("x", "1")]), ("A", [])]
    rep = MetricReport.from_predictions(ref, hyp, label="toy")
    assert rep.icacc == 0.5
    assert rep.semer["value"] == pytest.approx(1 / 3)
    text = rep.to_text()
    assert "icacc: 0.5000" in text and "value: 0.3333" in text
    lines = [json.loads(x) for x in rep.to_jsonl().splitlines()]
    assert [x["metric"] for x in lines] == ["icacc", "semer"]
    write_report(rep, tmp_path / "r.txt", tmp_path / "r.jsonl")
    assert (tmp_path / "r.txt").read_text() == text
    table = mrr_table([("baseline", 0.25), ("+condMLM", 0.5)])
    assert table.splitlines()[1] == "baseline            0.2500"
