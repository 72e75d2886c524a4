import string

import numpy as np
import pytest
from hypothesis import given, strategies as st

from haap.charset import (
    EVAL36,
    TRAIN94,
    LabelTooLong,
    MalformedSequence,
    UnknownCharacter,
    decode,
    encode,
    fold_for_eval,
)


def test_charset_sizes_and_subset():
    assert TRAIN94.size == 94 and EVAL36.size == 36
    assert len(set(TRAIN94.symbols)) == 94
    assert set(EVAL36.symbols) == set(string.digits + string.ascii_lowercase)
    assert set(EVAL36.symbols) <= {c.lower() for c in TRAIN94.symbols}
    assert " " not in TRAIN94.symbols


def test_special_ids():
    assert TRAIN94.eos_id == 0
    assert TRAIN94.bos_id == 95
    assert TRAIN94.num_classes == 95


def test_encode_empty():
    seq = encode("")
    assert seq.length == 0
    assert seq.ids[0] == TRAIN94.bos_id
    assert seq.ids[1] == TRAIN94.eos_id
    assert (seq.ids[2:] == TRAIN94.pad_id).all()
    assert len(seq.ids) == 27


def test_encode_clearance():
    seq = encode("clearance")
    assert seq.length == 9
    assert [TRAIN94.symbols[i - 1] for i in seq.ids[1:10]] == list("clearance")
    assert seq.ids[10] == TRAIN94.eos_id


def test_label_too_long():
    encode("a" * 25)
    with pytest.raises(LabelTooLong):
        encode("a" * 26)


def test_unknown_character_reports_position():
    with pytest.raises(UnknownCharacter) as exc:
        encode("ab c")
    assert exc.value.position == 2


def test_decode_basic():
    assert decode(encode("abc")) == "abc"
    assert decode(encode("")) == ""


def _first_eos_oracle(ids):
    out = []
    for i in ids[1:]:
        if i == 0:
            break
        out.append(TRAIN94.symbols[i - 1])
    return "".join(out)


def test_decode_truncates_at_first_eos():
    ids = np.full(27, TRAIN94.pad_id)
    ids[0] = TRAIN94.bos_id
    ids[1:5] = [TRAIN94.id_of("a"), TRAIN94.id_of("b"), 0, TRAIN94.id_of("z")]
    assert decode(ids) == _first_eos_oracle(ids) == "ab"


def test_decode_malformed():
    ids = np.full(27, TRAIN94.pad_id)
    ids[0] = TRAIN94.bos_id
    ids[1] = TRAIN94.id_of("a")
    with pytest.raises(MalformedSequence):
        decode(ids)


@pytest.mark.parametrize("text,expected", [("ShArP", "sharp"), ("corner!", "corner"), ("A1-b", "a1b")])
def test_fold_for_eval(text, expected):
    assert fold_for_eval(text) == expected
    assert "".join(c for c in text.lower() if c in EVAL36.symbols) == expected


@given(st.text(alphabet=TRAIN94.symbols, max_size=25))
def test_round_trip(label):
    assert decode(encode(label)) == label


@given(st.text(alphabet=TRAIN94.symbols, max_size=25))
def test_encoding_is_pure(label):
    a, b = encode(label), encode(label)
    encode("zzz")
    assert np.array_equal(a.ids, b.ids) and np.array_equal(encode(label).ids, a.ids)


@given(st.text(max_size=40))
def test_fold_output_in_eval36(text):
    assert set(fold_for_eval(text)) <= set(EVAL36.symbols)
