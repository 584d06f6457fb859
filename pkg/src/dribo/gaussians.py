"""Diagonal Gaussians over the last axis, with closed-form KL divergences."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ndgrad as G
from .ndgrad import Node

STDDEV_FLOOR = 1e-4
_HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)


@dataclass
class DiagGaussian:
    mean: Node
    stddev: Node

    def __post_init__(self):
        if self.mean.shape != self.stddev.shape:
            raise G.InvalidShapeError(f"mean {self.mean.shape} vs stddev {self.stddev.shape}")

    @classmethod
    def from_raw(cls, mean: Node, raw_std: Node, floor: float = STDDEV_FLOOR) -> "DiagGaussian":
        """stddev = softplus(raw) + floor."""
        return cls(mean, G.add(G.softplus(raw_std), G.constant(floor)))

    @property
    def shape(self) -> tuple:
        return self.mean.shape

    def detach(self) -> "DiagGaussian":
        return DiagGaussian(G.stop_gradient(self.mean), G.stop_gradient(self.stddev))


def _check(p: DiagGaussian, q: DiagGaussian) -> None:
    if p.shape != q.shape:
        raise G.InvalidShapeError(f"gaussian shapes differ: {p.shape} vs {q.shape}")


def kl(p: DiagGaussian, q: DiagGaussian) -> Node:
    """KL(p || q), summed over the last axis."""
    _check(p, q)
    var_p = G.square(p.stddev)
    var_q = G.square(q.stddev)
    log_ratio = G.sub(G.log(q.stddev), G.log(p.stddev))
    quad = G.div(G.add(var_p, G.square(G.sub(p.mean, q.mean))), G.mul(G.constant(2.0), var_q))
    per_dim = G.sub(G.add(log_ratio, quad), G.constant(0.5))
    return G.sum_(per_dim, axis=-1)


def skl(p: DiagGaussian, q: DiagGaussian) -> Node:
    """Symmetrized KL: the average of both directions."""
    return G.mul(G.constant(0.5), G.add(kl(p, q), kl(q, p)))


def rsample(d: DiagGaussian, noise) -> Node:
    noise = G._lift(noise)
    if noise.shape != d.shape:
        raise G.InvalidShapeError(f"noise {noise.shape} vs distribution {d.shape}")
    return G.add(d.mean, G.mul(d.stddev, noise))


def log_prob(d: DiagGaussian, x) -> Node:
    x = G._lift(x)
    if x.shape != d.shape:
        raise G.InvalidShapeError(f"x {x.shape} vs distribution {d.shape}")
    z = G.div(G.sub(x, d.mean), d.stddev)
    per_dim = G.neg(G.add(G.add(G.log(d.stddev), G.mul(G.constant(0.5), G.square(z))),
                          G.constant(_HALF_LOG_2PI)))
    return G.sum_(per_dim, axis=-1)
