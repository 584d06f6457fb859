"""Contrastive (InfoNCE) mutual-information lower bound with a bilinear critic."""

from __future__ import annotations

import numpy as np

from . import ndgrad as G
from .ndgrad import Node
from .nn import ParamRegistry


class BilinearCritic:
    """score(x, y) = x^T W y. The temperature is fixed at 1."""

    temperature = 1.0

    def __init__(self, dim: int, seed: int = 0, registry: ParamRegistry | None = None, init_scale=0.1):
        self.params = registry if registry is not None else ParamRegistry()
        rng = np.random.default_rng(seed)
        self.dim = dim
        self.W = self.params.add("W", init_scale * rng.standard_normal((dim, dim)) / np.sqrt(dim))


def score_matrix(s1: Node, s2: Node, critic: BilinearCritic) -> Node:
    """scores[i, j] = s1[i]^T W s2[j]."""
    s1, s2 = G._lift(s1), G._lift(s2)
    if s1.ndim != 2 or s1.shape != s2.shape or s1.shape[1] != critic.W.shape[0]:
        raise G.InvalidShapeError(f"score_matrix of {s1.shape} and {s2.shape} with W {critic.W.shape}")
    return G.matmul(G.matmul(s1, critic.W), G.transpose(s2))


def infonce(scores: Node) -> Node:
    """(1/M) sum_i [ s_ii - log((1/M) sum_j exp s_ij) ]; never exceeds log M.

    Written as (s_ii - m_i) - log sum_j exp(s_ij - m_i) + log M with the row
    max m_i held constant, so shifting a whole row cancels exactly.
    """
    scores = G._lift(scores)
    if scores.ndim != 2 or scores.shape[0] != scores.shape[1]:
        raise G.InvalidShapeError(f"infonce needs a square score matrix, got {scores.shape}")
    m = scores.shape[0]
    if m < 2:
        raise G.ContractError("infonce needs at least two pairs")
    row_max = scores.value.max(axis=1, keepdims=True)
    shifted = G.sub(scores, G.broadcast(G.constant(row_max), scores.shape))
    lse = G.log(G.sum_(G.exp(shifted), axis=1))
    idx = np.arange(m)
    diag = G.slice_(shifted, (idx, idx))
    return G.add(G.mean(G.sub(diag, lse)), G.constant(np.log(m)))
