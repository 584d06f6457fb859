"""Sparse joint distributions over named finite variables."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .ndgrad import ContractError

ZERO_PROB = 1e-15


@dataclass
class JointTable:
    """Atoms ``(n, k)`` of integer values for ``names`` with probabilities ``(n,)``.

    Variable ``names[j]`` takes values in ``range(sizes[j])``. Atoms need not be
    unique; every grouping operation sums duplicates.
    """

    names: list[str]
    sizes: list[int]
    atoms: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        self.atoms = np.asarray(self.atoms, dtype=np.int64).reshape(len(self.probs), len(self.names))
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if len(set(self.names)) != len(self.names):
            raise ContractError("duplicate variable names")
        if np.any(self.probs < 0):
            raise ContractError("negative probability")

    def total(self) -> float:
        return float(self.probs.sum())

    def cols(self, vars: Sequence[str]) -> list[int]:
        try:
            return [self.names.index(v) for v in vars]
        except ValueError as exc:
            raise ContractError(f"unknown variable: {exc}") from None

    def keys(self, vars: Sequence[str]) -> np.ndarray:
        """Mixed-radix integer key of the listed variables for every atom."""
        key = np.zeros(len(self.probs), dtype=np.int64)
        for c in self.cols(vars):
            key = key * self.sizes[c] + self.atoms[:, c]
        return key

    def grouped(self, vars: Sequence[str]) -> tuple[np.ndarray, np.ndarray]:
        """(inverse index per atom, probability of each group)."""
        if not vars:
            return np.zeros(len(self.probs), dtype=np.int64), np.array([self.total()])
        _, inv = np.unique(self.keys(vars), return_inverse=True)
        return inv, np.bincount(inv, weights=self.probs)

    def marginal(self, vars: Sequence[str]) -> "JointTable":
        cols = self.cols(vars)
        if not vars:
            return JointTable([], [], np.zeros((1, 0), dtype=np.int64), np.array([self.total()]))
        uniq, inv = np.unique(self.keys(vars), return_inverse=True)
        first = np.zeros(len(uniq), dtype=np.int64)
        first[inv[::-1]] = np.arange(len(inv))[::-1]
        probs = np.bincount(inv, weights=self.probs)
        return JointTable(list(vars), [self.sizes[c] for c in cols], self.atoms[first][:, cols], probs)

    def extend(self, name: str, size: int, rows: np.ndarray) -> "JointTable":
        """Append variable ``name`` drawn from ``rows[i]`` (a distribution over
        ``size`` values) for atom i; zero-probability branches are dropped."""
        rows = np.asarray(rows, dtype=np.float64)
        if rows.shape != (len(self.probs), size):
            raise ContractError(f"rows shape {rows.shape} != {(len(self.probs), size)}")
        p = self.probs[:, None] * rows
        keep = p > ZERO_PROB
        idx, val = np.nonzero(keep)
        atoms = np.concatenate([self.atoms[idx], val[:, None]], axis=1)
        return JointTable(self.names + [name], self.sizes + [size], atoms, p[idx, val])

    def with_function(self, name: str, size: int, fn: Callable[[dict], np.ndarray]) -> "JointTable":
        """Append a deterministic variable computed from the existing columns."""
        view = {n: self.atoms[:, i] for i, n in enumerate(self.names)}
        vals = np.asarray(fn(view), dtype=np.int64)
        return JointTable(self.names + [name], self.sizes + [size],
                          np.concatenate([self.atoms, vals[:, None]], axis=1), self.probs.copy())

    def column(self, name: str) -> np.ndarray:
        return self.atoms[:, self.cols([name])[0]]
