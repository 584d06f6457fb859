"""Parameter registry, dense layers and the Adam optimizer on top of ndgrad."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import ndgrad as G
from .ndgrad import Node


class ParamRegistry:
    """Ordered name -> parameter Node mapping. Gradients are reset only by
    :meth:`zero_grads`; ``backward`` accumulates."""

    def __init__(self):
        self._params: dict[str, Node] = {}

    def add(self, name: str, value) -> Node:
        if name in self._params:
            raise G.ContractError(f"duplicate parameter {name!r}")
        node = G.param(value)
        self._params[name] = node
        return node

    def __getitem__(self, name: str) -> Node:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def items(self):
        return self._params.items()

    def nodes(self) -> list[Node]:
        return list(self._params.values())

    def zero_grads(self) -> None:
        for p in self._params.values():
            p.grad = None

    def state(self) -> dict[str, np.ndarray]:
        return {k: p.value.copy() for k, p in self._params.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self._params) - set(state)
        extra = set(state) - set(self._params)
        if missing or extra:
            raise G.ContractError(f"state mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        for k, p in self._params.items():
            v = np.asarray(state[k], dtype=np.float64)
            if v.shape != p.shape:
                raise G.InvalidShapeError(f"{k}: expected {p.shape}, got {v.shape}")
            p.value = v.copy()

    def num_params(self) -> int:
        return sum(p.value.size for p in self._params.values())


def polyak(target: ParamRegistry, online: ParamRegistry, tau: float) -> None:
    """target <- tau * online + (1 - tau) * target, parameter by parameter."""
    for name, p in target.items():
        p.value = tau * online[name].value + (1.0 - tau) * p.value


class Linear:
    def __init__(self, reg: ParamRegistry, name: str, n_in: int, n_out: int, rng, scale=None):
        scale = np.sqrt(1.0 / n_in) if scale is None else scale
        self.w = reg.add(f"{name}.w", rng.uniform(-scale, scale, size=(n_in, n_out)))
        self.b = reg.add(f"{name}.b", np.zeros(n_out))

    def __call__(self, x: Node) -> Node:
        return G.add(G.matmul(x, self.w), self.b)


class LayerNorm:
    def __init__(self, reg: ParamRegistry, name: str, dim: int, eps: float = 1e-5):
        self.gain = reg.add(f"{name}.gain", np.ones(dim))
        self.shift = reg.add(f"{name}.shift", np.zeros(dim))
        self.eps = eps

    def __call__(self, x: Node) -> Node:
        return layer_norm(x, self.gain, self.shift, self.eps)


def layer_norm(x: Node, gain: Node, shift: Node, eps: float = 1e-5) -> Node:
    shape = x.shape
    mu = G.broadcast(G.mean(x, axis=-1, keepdims=True), shape)
    centered = G.sub(x, mu)
    var = G.mean(G.square(centered), axis=-1, keepdims=True)
    std = G.broadcast(G.sqrt(G.add(var, G.constant(eps))), shape)
    return G.add(G.mul(G.div(centered, std), gain), shift)


class MLP:
    """Dense layers with ReLU between them (none after the last)."""

    def __init__(self, reg: ParamRegistry, name: str, sizes: list[int], rng, out_scale=None):
        self.layers = []
        for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
            last = i == len(sizes) - 2
            self.layers.append(Linear(reg, f"{name}.{i}", a, b, rng, out_scale if last else None))

    def __call__(self, x: Node) -> Node:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = G.relu(x)
        return x


class Adam:
    def __init__(self, params: list[Node], lr: float = 1e-3, betas=(0.9, 0.999), eps=1e-8,
                 max_grad_norm: float | None = None):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.max_grad_norm = max_grad_norm
        self.t = 0
        self.m = [np.zeros(p.shape) for p in self.params]
        self.v = [np.zeros(p.shape) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        grads = [np.zeros(p.shape) if p.grad is None else p.grad for p in self.params]
        if self.max_grad_norm is not None:
            norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads))
            if norm > self.max_grad_norm:
                grads = [g * (self.max_grad_norm / norm) for g in grads]
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for i, (p, g) in enumerate(zip(self.params, grads)):
            self.m[i] = self.b1 * self.m[i] + (1.0 - self.b1) * g
            self.v[i] = self.b2 * self.v[i] + (1.0 - self.b2) * g * g
            p.value = p.value - self.lr * (self.m[i] / c1) / (np.sqrt(self.v[i] / c2) + self.eps)

    def state(self) -> dict:
        return {"t": self.t, "m": [m.copy() for m in self.m], "v": [v.copy() for v in self.v]}
