"""Permutations and the attention masks they induce.

A mask is a ``(T+1) x (T+1)`` 0/1 matrix. Rows are outputs ``y1..yT, [E]``;
columns are inputs ``[B], y1..yT``. A 1 means the output may attend to the
input. Row ``r < T`` therefore belongs to position ``r + 1`` and column
``c > 0`` to position ``c``, so the "y-diagonal" (a position seeing itself)
sits at ``bits[p - 1, p]``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

MaskKind = Literal["query", "content"]


class InvalidPermutation(ValueError):
    pass


class MaskKindError(ValueError):
    pass


@dataclass(frozen=True)
class Permutation:
    """``order[k]`` is the 1-based position decoded at step ``k + 1``."""

    order: tuple[int, ...]

    def __post_init__(self):
        order = tuple(int(x) for x in self.order)
        object.__setattr__(self, "order", order)
        if sorted(order) != list(range(1, len(order) + 1)):
            raise InvalidPermutation(f"{list(order)} is not a permutation of 1..{len(order)}")

    @classmethod
    def canonical(cls, T: int) -> Permutation:
        return cls(tuple(range(1, T + 1)))

    @property
    def T(self) -> int:
        return len(self.order)

    def rank_of(self) -> np.ndarray:
        """rank[p - 1] = step at which position p is decoded (0-based)."""
        r = np.empty(self.T, dtype=np.int64)
        r[np.asarray(self.order) - 1] = np.arange(self.T)
        return r

    def __len__(self):
        return self.T

    def __iter__(self):
        return iter(self.order)

    def __repr__(self):
        return f"Permutation({list(self.order)})"


@dataclass(frozen=True)
class AttentionMask:
    bits: np.ndarray
    kind: MaskKind = "query"

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=np.uint8)
        if bits.ndim != 2 or bits.shape[0] != bits.shape[1]:
            raise ValueError(f"mask must be square, got shape {bits.shape}")
        if self.kind not in ("query", "content"):
            raise MaskKindError(f"unknown mask kind {self.kind!r}")
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)

    @property
    def T(self) -> int:
        return self.bits.shape[0] - 1

    def y_block(self) -> np.ndarray:
        """``block[i, j]`` = position i+1 sees position j+1."""
        return self.bits[: self.T, 1:]

    def __eq__(self, other):
        return isinstance(other, AttentionMask) and self.kind == other.kind and np.array_equal(self.bits, other.bits)

    def __hash__(self):
        return hash((self.kind, self.bits.tobytes()))


def reverse(perm: Permutation) -> Permutation:
    return Permutation(perm.order[::-1])


def random_permutation(T: int, rng_seed=None) -> Permutation:
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    return Permutation(tuple(rng.permutation(T) + 1))


def mask_from_permutation(perm: Permutation, kind: MaskKind = "query") -> AttentionMask:
    if not isinstance(perm, Permutation):
        perm = Permutation(tuple(perm))
    T = perm.T
    rank = perm.rank_of()
    bits = np.zeros((T + 1, T + 1), dtype=np.uint8)
    bits[:, 0] = 1
    bits[T, :] = 1
    bits[:T, 1:] = rank[None, :] < rank[:, None]
    if kind == "content":
        bits[np.arange(T), np.arange(1, T + 1)] = 1
    elif kind != "query":
        raise MaskKindError(f"unknown mask kind {kind!r}")
    return AttentionMask(bits, kind)


def to_content(mask: AttentionMask) -> AttentionMask:
    bits = mask.bits.copy()
    T = mask.T
    bits[np.arange(T), np.arange(1, T + 1)] = 1
    return AttentionMask(bits, "content")


def cloze_mask(position: int, T: int) -> AttentionMask:
    """Query mask where ``position`` sees [B] and every other position.

    The remaining rows follow the same all-but-self rule, which is the
    batched form used for iterative refinement.
    """
    if not 1 <= position <= T:
        raise IndexError(f"position {position} out of range 1..{T}")
    return full_cloze_mask(T)


def full_cloze_mask(T: int) -> AttentionMask:
    bits = np.ones((T + 1, T + 1), dtype=np.uint8)
    bits[np.arange(T), np.arange(1, T + 1)] = 0
    return AttentionMask(bits, "query")


def context_self_mask(mask: AttentionMask) -> np.ndarray:
    """Re-index a content mask for context self-attention.

    The context stream's rows are inputs ``[B], y1..yT``, not outputs. Row
    ``[B]`` may only see itself; row ``yp`` takes the content mask's row for
    position p. The ``[E]`` row is dropped since [E] is never a context input.
    """
    if mask.kind != "content":
        raise MaskKindError("context self-attention needs a content-kind mask")
    T = mask.T
    out = np.zeros((T + 1, T + 1), dtype=bool)
    out[0, 0] = True
    out[1:, :] = mask.bits[:T, :].astype(bool)
    return out


@dataclass
class MaskReport:
    b_column_ok: bool
    e_row_ok: bool
    acyclic: bool
    cycle: list[int] | None
    permutation: Permutation | None

    @property
    def valid(self) -> bool:
        return self.b_column_ok and self.e_row_ok and self.permutation is not None


def _find_cycle(adj: np.ndarray) -> list[int] | None:
    """Return a cycle (1-based positions) in the directed graph adj[i, j] = i depends on j."""
    n = adj.shape[0]
    color = [0] * n
    stack_path: list[int] = []

    def visit(u):
        color[u] = 1
        stack_path.append(u)
        for v in np.flatnonzero(adj[u]):
            v = int(v)
            if color[v] == 1:
                return stack_path[stack_path.index(v):] + [v]
            if color[v] == 0:
                found = visit(v)
                if found:
                    return found
        stack_path.pop()
        color[u] = 2
        return None

    for s in range(n):
        if color[s] == 0:
            found = visit(s)
            if found:
                return [p + 1 for p in found]
    return None


def validate(mask: AttentionMask) -> MaskReport:
    bits = mask.bits
    T = mask.T
    block = mask.y_block().astype(bool).copy()
    if mask.kind == "content":
        np.fill_diagonal(block, False)
    b_ok = bool(bits[:, 0].all())
    e_ok = bool(bits[T, :].all())
    self_loop = [p + 1 for p in range(T) if block[p, p]]
    cycle = [self_loop[0], self_loop[0]] if self_loop else _find_cycle(block)
    perm = None
    if cycle is None:
        # A permutation mask is a strict total order: position p depends on
        # exactly the positions decoded before it.
        counts = block.sum(axis=1)
        if sorted(counts.tolist()) == list(range(T)):
            candidate = Permutation(tuple(int(p) + 1 for p in np.argsort(counts, kind="stable")))
            if mask_from_permutation(candidate, mask.kind) == mask:
                perm = candidate
    return MaskReport(b_ok, e_ok, cycle is None, cycle, perm)


def format_mask(mask: AttentionMask) -> str:
    """Aligned 0/1 grid in the row/column layout of a dependency table."""
    T = mask.T
    cols = ["[B]"] + [f"y{p}" for p in range(1, T + 1)]
    rows = [f"y{p}" for p in range(1, T + 1)] + ["[E]"]
    w = max(len(s) for s in cols + rows)
    lines = [" " * w + " " + " ".join(c.rjust(w) for c in cols)]
    for name, row in zip(rows, mask.bits):
        lines.append(name.ljust(w) + " " + " ".join(str(int(b)).rjust(w) for b in row))
    return "\n".join(lines)


# y1 and y2 each see the other: no single decoding order yields this mask.
CYCLIC_EXAMPLE = AttentionMask(
    np.array(
        [
            [1, 0, 1, 1],
            [1, 1, 0, 0],
            [1, 1, 1, 0],
            [1, 1, 1, 1],
        ]
    ),
    "query",
)
