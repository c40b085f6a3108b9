import pytest
from hypothesis import given
from hypothesis import strategies as st

from phonoslu.lexicon import (
    RESERVED_PHONES,
    UNK_PHONE,
    LexiconError,
    lookup,
    measure_unk_rate,
    parse_dictionary,
    read_phone_vocab,
    write_phone_vocab,
)

# Lines copied from the published CMU dictionary (cmudict-0.7b).
CMU_SAMPLE = """\
;;; # CMUdict  --  Major Version: 0.07
;;; sample
A  AH0
A(2)  EY1
HELLO  HH AH0 L OW1
PLAY  P L EY1
SONG  S AO1 NG
"""


@pytest.fixture
def lex():
    return parse_dictionary(CMU_SAMPLE.splitlines())


def test_hello_entry(lex):
    assert lex.entries["hello"] == ("HH", "AH", "L", "OW")


def test_first_pronunciation_wins(lex):
    assert lex.entries["a"] == ("AH",)


def test_comment_only_is_empty_lexicon_error():
    with pytest.raises(LexiconError, match="empty"):
        parse_dictionary([";;; comment"])


def test_malformed_line_reports_line_number():
    with pytest.raises(LexiconError, match="line 2"):
        parse_dictionary(["HELLO  HH AH0 L OW1", "BROKEN"])


def test_lookup(lex):
    assert lookup(lex, "HELLO") == ("HH", "AH", "L", "OW")
    assert lookup(lex, "Hello") == lookup(lex, "hello")
    assert lookup(lex, "zzqxv") == (UNK_PHONE,)
    with pytest.raises(ValueError):
        lookup(lex, "")


def test_phone_vocab(lex):
    assert lex.phone_vocab[:3] == RESERVED_PHONES
    observed = lex.phone_vocab[3:]
    assert list(observed) == sorted(observed)
    assert set(observed) == {"AH", "HH", "L", "OW", "P", "EY", "S", "AO", "NG"}
    assert all(not p[-1].isdigit() for p in lex.phone_vocab)


def test_unk_rate_formula(lex):
    measured = measure_unk_rate(lex, ["hello play zzz", "song qqq qqq"])
    assert measured.unk_rate == pytest.approx(3 / 6)
    assert lex.unk_rate is None


def test_phone_vocab_file_roundtrip(lex, tmp_path):
    path = tmp_path / "phones.txt"
    write_phone_vocab(lex, path)
    assert read_phone_vocab(path) == lex.phone_vocab


PHONES = ["AA", "AE", "AH", "B", "D", "K", "S", "T", "IY", "OW"]
words = st.text(alphabet="ABCDEFGHIJKLMNOPQRSTUVWXYZ'", min_size=1, max_size=8)
prons = st.lists(st.tuples(st.sampled_from(PHONES), st.sampled_from(["", "0", "1", "2"])), min_size=1, max_size=6)


@given(st.dictionaries(words, prons, min_size=1, max_size=20))
def test_roundtrip_property(entries):
    lines = [f"{w}  {' '.join(p + s for p, s in pr)}" for w, pr in entries.items()]
    lex = parse_dictionary(lines)
    for w, pr in entries.items():
        assert lookup(lex, w) == tuple(p for p, _ in pr)
        assert lookup(lex, w.lower()) == lookup(lex, w)
    for seq in lex.entries.values():
        assert seq and all(not p[-1].isdigit() for p in seq)
