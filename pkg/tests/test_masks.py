import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from haap.masks import (
    CYCLIC_EXAMPLE,
    AttentionMask,
    InvalidPermutation,
    Permutation,
    cloze_mask,
    context_self_mask,
    format_mask,
    mask_from_permutation,
    random_permutation,
    reverse,
    to_content,
    validate,
)

LTR_GRID = [[1, 0, 0, 0], [1, 1, 0, 0], [1, 1, 1, 0], [1, 1, 1, 1]]
RTL_GRID = [[1, 0, 1, 1], [1, 0, 0, 1], [1, 0, 0, 0], [1, 1, 1, 1]]


def precedence_oracle(order, kind="query"):
    """Brute force: output yi sees input yj iff j is decoded before i."""
    order = list(order)
    T = len(order)
    bits = np.zeros((T + 1, T + 1), dtype=np.uint8)
    for r in range(T + 1):
        for c in range(T + 1):
            if c == 0 or r == T:
                bits[r, c] = 1
                continue
            i, j = r + 1, c
            if order.index(j) < order.index(i) or (kind == "content" and i == j):
                bits[r, c] = 1
    return bits


def test_ltr_and_rtl_grids():
    assert mask_from_permutation(Permutation((1, 2, 3))).bits.tolist() == LTR_GRID
    assert mask_from_permutation(Permutation((3, 2, 1))).bits.tolist() == RTL_GRID


def test_derived_213():
    expected = [[1, 0, 1, 0], [1, 0, 0, 0], [1, 1, 1, 0], [1, 1, 1, 1]]
    assert precedence_oracle([2, 1, 3]).tolist() == expected
    assert mask_from_permutation(Permutation((2, 1, 3))).bits.tolist() == expected


@pytest.mark.parametrize("T", [1, 2, 3, 4, 5])
@pytest.mark.parametrize("kind", ["query", "content"])
def test_exhaustive_oracle_equivalence(T, kind):
    for order in itertools.permutations(range(1, T + 1)):
        got = mask_from_permutation(Permutation(order), kind).bits
        assert np.array_equal(got, precedence_oracle(order, kind)), order


def test_random_oracle_equivalence_T25():
    rng = np.random.default_rng(7)
    for _ in range(1000):
        p = random_permutation(25, rng)
        assert np.array_equal(mask_from_permutation(p).bits, precedence_oracle(p.order))


def test_invalid_permutation():
    with pytest.raises(InvalidPermutation):
        Permutation((1, 1, 3))
    with pytest.raises(InvalidPermutation):
        Permutation((0, 1, 2))


def test_random_permutation_golden_and_determinism():
    assert random_permutation(1, 0).order == (1,)
    assert random_permutation(3, 5).order == (2, 3, 1)
    assert random_permutation(25, 99) == random_permutation(25, 99)


def test_reverse():
    assert reverse(Permutation((1, 2, 3))).order == (3, 2, 1)
    assert reverse(Permutation((2, 1, 3))).order == (3, 1, 2)


@given(st.permutations(list(range(1, 13))))
def test_reverse_involution(order):
    p = Permutation(tuple(order))
    assert reverse(reverse(p)) == p


@given(st.permutations(list(range(1, 10))))
def test_bidirectional_complement(order):
    p = Permutation(tuple(order))
    a = mask_from_permutation(p).y_block().astype(bool)
    b = mask_from_permutation(reverse(p)).y_block().astype(bool)
    off = ~np.eye(len(order), dtype=bool)
    assert np.array_equal(a | b, off)
    assert not (a & b).any()


def test_triangularity():
    T = 25
    ltr = mask_from_permutation(Permutation.canonical(T)).y_block()
    rtl = mask_from_permutation(reverse(Permutation.canonical(T))).y_block()
    assert np.array_equal(ltr, np.tril(np.ones((T, T)), -1))
    assert np.array_equal(rtl, np.triu(np.ones((T, T)), 1))


@given(st.permutations(list(range(1, 8))))
def test_content_is_query_plus_diagonal(order):
    p = Permutation(tuple(order))
    q = mask_from_permutation(p, "query")
    c = mask_from_permutation(p, "content")
    expected = q.y_block().copy()
    np.fill_diagonal(expected, 1)
    assert np.array_equal(c.y_block(), expected)
    assert to_content(q) == c
    assert (c.bits[:, 0] == 1).all() and (c.bits[-1] == 1).all()


def test_context_self_mask_alignment():
    c = mask_from_permutation(Permutation((2, 1, 3)), "content")
    m = context_self_mask(c)
    # [B] row sees only itself; y_p rows reuse the content rows
    assert m[0].tolist() == [True, False, False, False]
    assert m[1:].astype(int).tolist() == c.bits[:3].tolist()


def test_cloze_rows():
    assert cloze_mask(2, 3).bits[1].tolist() == [1, 1, 0, 1]
    assert cloze_mask(1, 3).bits[0].tolist() == [1, 0, 1, 1]
    with pytest.raises(IndexError):
        cloze_mask(0, 3)
    with pytest.raises(IndexError):
        cloze_mask(4, 3)


def test_validate_ltr_recovers_permutation():
    rep = validate(mask_from_permutation(Permutation((1, 2, 3))))
    assert rep.valid and rep.acyclic and rep.permutation == Permutation((1, 2, 3))


@given(st.permutations(list(range(1, 9))), st.sampled_from(["query", "content"]))
@settings(max_examples=50)
def test_validate_recovers_any_permutation(order, kind):
    p = Permutation(tuple(order))
    assert validate(mask_from_permutation(p, kind)).permutation == p


def test_validate_flags_cyclic_example():
    rep = validate(CYCLIC_EXAMPLE)
    assert rep.b_column_ok and rep.e_row_ok
    assert not rep.acyclic
    assert set(rep.cycle) == {1, 2}
    assert rep.permutation is None and not rep.valid


def test_validate_all_ones_block_is_cyclic():
    rep = validate(AttentionMask(np.ones((4, 4)), "query"))
    assert not rep.acyclic and rep.permutation is None


def test_format_mask_layout():
    text = format_mask(mask_from_permutation(Permutation((2, 1, 3))))
    lines = text.splitlines()
    assert lines[0].split() == ["[B]", "y1", "y2", "y3"]
    assert lines[1].split() == ["y1", "1", "0", "1", "0"]
    assert lines[4].split() == ["[E]", "1", "1", "1", "1"]
