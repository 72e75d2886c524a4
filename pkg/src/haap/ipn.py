"""Implicit permutation neurons: learnable score-then-rank permutation generator."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from haap.masks import Permutation, random_permutation, reverse


class NonFiniteParams(ValueError):
    pass


class NonPositiveTemperature(ValueError):
    pass


PROVENANCE = ("canonical", "reversed_canonical", "adaptive", "reversed_adaptive")


@dataclass(frozen=True)
class PermutationSet:
    members: tuple[Permutation, ...]
    provenance: tuple[str, ...]

    def __post_init__(self):
        if len(self.members) != len(self.provenance):
            raise ValueError("members and provenance differ in length")

    def __len__(self):
        return len(self.members)

    def __iter__(self):
        return iter(self.members)

    def __getitem__(self, k):
        return self.members[k]


class IPN(nn.Module):
    """Scores ``T`` positions through query/weight/value projections of the canonical order.

    ``scores = (P_l2r^T @ P_query @ P_weight) @ P_value`` with ``P_l2r`` the
    identity permutation matrix. Ranking the scores in descending order gives
    the adaptive decoding order.
    """

    def __init__(self, T: int = 25, init_noise: float | None = None, generator: torch.Generator | None = None):
        super().__init__()
        self.T = T
        # noise must stay well below the unit gaps of p_value so training starts at the canonical order
        init_noise = 0.02 / T if init_noise is None else init_noise
        eye = torch.eye(T)
        self.p_query = nn.Parameter(eye + init_noise * torch.randn(T, T, generator=generator))
        self.p_weight = nn.Parameter(eye + init_noise * torch.randn(T, T, generator=generator))
        self.p_value = nn.Parameter(torch.arange(T, 0, -1, dtype=torch.float32))
        self.register_buffer("p_left2right", eye.clone(), persistent=False)

    def score(self) -> torch.Tensor:
        for name, p in (("p_query", self.p_query), ("p_weight", self.p_weight), ("p_value", self.p_value)):
            if not torch.isfinite(p).all():
                raise NonFiniteParams(f"{name} contains non-finite entries")
        m_t = self.p_left2right.to(self.p_query.dtype).T @ self.p_query
        m_w = m_t @ self.p_weight
        return m_w @ self.p_value

    def adaptive_permutation(self) -> Permutation:
        return rank(self.score().detach().cpu().numpy())

    def permutation_set(self) -> PermutationSet:
        return permutation_set_from_scores(self.score().detach().cpu().numpy())


def score(p_query, p_weight, p_value) -> np.ndarray:
    """Functional form of the IPN score on plain arrays."""
    p_query, p_weight, p_value = (np.asarray(a, dtype=np.float64) for a in (p_query, p_weight, p_value))
    if not all(np.isfinite(a).all() for a in (p_query, p_weight, p_value)):
        raise NonFiniteParams("IPN parameters must be finite")
    T = p_value.shape[0]
    m_t = np.eye(T).T @ p_query
    return (m_t @ p_weight) @ p_value


def rank(scores) -> Permutation:
    """Positions sorted by descending score; ties go to the lower index."""
    s = np.asarray(scores, dtype=np.float64)
    order = np.argsort(-s, kind="stable")
    return Permutation(tuple(int(i) + 1 for i in order))


def permutation_set_from_scores(scores) -> PermutationSet:
    T = len(scores)
    canonical = Permutation.canonical(T)
    adaptive = rank(scores)
    return PermutationSet((canonical, reverse(canonical), adaptive, reverse(adaptive)), PROVENANCE)


def build_permutation_set(mode: str, T: int, ipn: IPN | None = None, rng: np.random.Generator | None = None) -> PermutationSet:
    canonical = Permutation.canonical(T)
    if mode == "ltr":
        return PermutationSet((canonical,), ("canonical",))
    if mode == "bidir":
        return PermutationSet((canonical, reverse(canonical)), PROVENANCE[:2])
    if mode == "plm":
        rnd = random_permutation(T, rng)
        return PermutationSet((canonical, reverse(canonical), rnd, reverse(rnd)), ("canonical", "reversed_canonical", "random", "reversed_random"))
    if mode == "ipn":
        if ipn is None:
            raise ValueError("ipn mode needs IPN parameters")
        return ipn.permutation_set()
    raise ValueError(f"unknown permutation mode {mode!r}")


def soft_rank(scores: torch.Tensor, temperature: float = 1.0) -> torch.Tensor:
    """Relaxed descending-sort permutation matrix.

    Row ``k`` is a distribution over positions for decoding step ``k``;
    as ``temperature -> 0`` it approaches the hard permutation matrix of
    :func:`rank`. Differentiable in ``scores``.
    """
    if temperature <= 0:
        raise NonPositiveTemperature(f"temperature must be positive, got {temperature}")
    s = scores.reshape(-1)
    n = s.shape[0]
    pairwise = (s[:, None] - s[None, :]).abs().sum(dim=1)
    scaling = (n + 1 - 2 * torch.arange(1, n + 1, dtype=s.dtype, device=s.device))
    logits = scaling[:, None] * s[None, :] - pairwise[None, :]
    return torch.softmax(logits / temperature, dim=-1)


def precedence(perm_matrix: torch.Tensor) -> torch.Tensor:
    """``prec[i, j]`` = probability that position j is decoded before position i."""
    n = perm_matrix.shape[0]
    earlier = torch.tril(torch.ones(n, n, dtype=perm_matrix.dtype, device=perm_matrix.device), diagonal=-1)
    return perm_matrix.T @ earlier @ perm_matrix


def hard_precedence(perm: Permutation, dtype=torch.float32) -> torch.Tensor:
    r = torch.as_tensor(perm.rank_of())
    return (r[None, :] < r[:, None]).to(dtype)


def straight_through_gates(ipn: IPN, perms: PermutationSet, temperature: float) -> list[torch.Tensor | None]:
    """Per-member y-block gates whose forward value is the hard precedence.

    Gradients flow into the IPN parameters through the soft relaxation.
    Members that do not come from the IPN get ``None``.
    """
    soft = precedence(soft_rank(ipn.score(), temperature))
    gates: list[torch.Tensor | None] = []
    for perm, origin in zip(perms.members, perms.provenance):
        if origin == "adaptive":
            s = soft
        elif origin == "reversed_adaptive":
            s = soft.T
        else:
            gates.append(None)
            continue
        hard = hard_precedence(perm, soft.dtype).to(soft.device)
        gates.append(hard + (s - s.detach()))
    return gates
