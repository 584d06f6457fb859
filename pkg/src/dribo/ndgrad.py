"""Dense float64 tensors with reverse-mode automatic differentiation.

A :class:`Node` wraps a numpy array and remembers how it was produced.
Calling :func:`backward` on a scalar node walks the graph in reverse
topological order and accumulates ``d root / d node`` into ``node.grad`` for
every reachable node that requires gradients.

Gradient semantics: ``backward`` *accumulates*. Running it twice on the same
graph without calling ``zero_grad``/``ParamRegistry.zero_grads`` in between
doubles every gradient, exactly like fan-out inside one graph does.

Implicit broadcasting in binary ops is restricted to leading dimensions
(``(B, D) + (D,)``). Anything else must go through the explicit
``broadcast`` op.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Node",
    "InvalidShapeError",
    "DomainError",
    "ContractError",
    "ResourceError",
    "apply",
    "backward",
    "stop_gradient",
    "finite_diff_check",
    "constant",
    "param",
    "OPS",
]


class InvalidShapeError(ValueError):
    pass


class DomainError(ValueError):
    pass


class ContractError(ValueError):
    pass


class ResourceError(RuntimeError):
    pass


class Node:
    __slots__ = ("value", "grad", "parents", "backward_fn", "requires_grad", "op")

    def __init__(self, value, requires_grad=False, parents=(), backward_fn=None, op="leaf"):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.parents = parents
        self.backward_fn = backward_fn
        self.requires_grad = requires_grad
        self.op = op

    @property
    def shape(self) -> tuple:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def zero_grad(self) -> None:
        self.grad = None

    def item(self) -> float:
        if self.value.size != 1:
            raise ContractError(f"item() on node of shape {self.shape}")
        return float(self.value.reshape(()))

    def detach(self) -> "Node":
        return Node(self.value)

    def __repr__(self) -> str:
        return f"Node(op={self.op}, shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar -------------------------------------------------------
    def __add__(self, other):
        return add(self, _lift(other))

    def __radd__(self, other):
        return add(_lift(other), self)

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __rsub__(self, other):
        return sub(_lift(other), self)

    def __mul__(self, other):
        return mul(self, _lift(other))

    def __rmul__(self, other):
        return mul(_lift(other), self)

    def __truediv__(self, other):
        return div(self, _lift(other))

    def __rtruediv__(self, other):
        return div(_lift(other), self)

    def __matmul__(self, other):
        return matmul(self, _lift(other))

    def __neg__(self):
        return neg(self)

    def __getitem__(self, key):
        return slice_(self, key)

    @property
    def T(self):
        return transpose(self)


def _lift(x) -> Node:
    return x if isinstance(x, Node) else Node(x)


def constant(x) -> Node:
    return Node(x)


def param(x) -> Node:
    return Node(np.array(x, dtype=np.float64), requires_grad=True)


def _make(value, parents, backward_fn, op) -> Node:
    req = any(p.requires_grad for p in parents)
    if not req:
        return Node(value, op=op)
    return Node(value, True, parents, backward_fn, op)


# ---------------------------------------------------------------------------
# shape helpers


def _broadcast_shape(a: tuple, b: tuple) -> tuple:
    if a == b:
        return a
    if len(a) >= len(b) and a[len(a) - len(b):] == b:
        return a
    if len(b) > len(a) and b[len(b) - len(a):] == a:
        return b
    raise InvalidShapeError(f"shapes {a} and {b} differ beyond leading-dimension broadcast")


def _reduce_to(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    return g.sum(axis=tuple(range(lead))) if lead else g


# ---------------------------------------------------------------------------
# elementwise binary ops


def add(a: Node, b: Node) -> Node:
    shape = _broadcast_shape(a.shape, b.shape)
    sa, sb = a.shape, b.shape

    def bw(g):
        return _reduce_to(g, sa), _reduce_to(g, sb)

    out = _make(a.value + b.value, (a, b), bw, "add")
    assert out.shape == shape
    return out


def sub(a: Node, b: Node) -> Node:
    _broadcast_shape(a.shape, b.shape)
    sa, sb = a.shape, b.shape

    def bw(g):
        return _reduce_to(g, sa), -_reduce_to(g, sb)

    return _make(a.value - b.value, (a, b), bw, "sub")


def mul(a: Node, b: Node) -> Node:
    _broadcast_shape(a.shape, b.shape)
    av, bv = a.value, b.value

    def bw(g):
        return _reduce_to(g * bv, av.shape), _reduce_to(g * av, bv.shape)

    return _make(av * bv, (a, b), bw, "mul")


def div(a: Node, b: Node) -> Node:
    _broadcast_shape(a.shape, b.shape)
    av, bv = a.value, b.value
    if np.any(bv == 0.0):
        raise DomainError("division by zero")
    out = av / bv

    def bw(g):
        return _reduce_to(g / bv, av.shape), _reduce_to(-g * out / bv, bv.shape)

    return _make(out, (a, b), bw, "div")


def minimum(a: Node, b: Node) -> Node:
    _broadcast_shape(a.shape, b.shape)
    av, bv = a.value, b.value
    pick_a = av <= bv

    def bw(g):
        return _reduce_to(g * pick_a, av.shape), _reduce_to(g * ~pick_a, bv.shape)

    return _make(np.where(pick_a, av, bv), (a, b), bw, "minimum")


def maximum(a: Node, b: Node) -> Node:
    _broadcast_shape(a.shape, b.shape)
    av, bv = a.value, b.value
    pick_a = av >= bv

    def bw(g):
        return _reduce_to(g * pick_a, av.shape), _reduce_to(g * ~pick_a, bv.shape)

    return _make(np.where(pick_a, av, bv), (a, b), bw, "maximum")


def matmul(a: Node, b: Node) -> Node:
    av, bv = a.value, b.value
    if av.ndim < 2 or bv.ndim != 2 or av.shape[-1] != bv.shape[0]:
        raise InvalidShapeError(f"matmul of {av.shape} and {bv.shape}")

    def bw(g):
        ga = g @ bv.T
        gb = av.reshape(-1, av.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        return ga, gb

    return _make(av @ bv, (a, b), bw, "matmul")


# ---------------------------------------------------------------------------
# elementwise unary ops


def neg(x: Node) -> Node:
    return _make(-x.value, (x,), lambda g: (-g,), "neg")


def exp(x: Node) -> Node:
    out = np.exp(x.value)
    return _make(out, (x,), lambda g: (g * out,), "exp")


def log(x: Node) -> Node:
    xv = x.value
    if np.any(xv <= 0.0):
        raise DomainError("log of non-positive value")
    return _make(np.log(xv), (x,), lambda g: (g / xv,), "log")


def tanh(x: Node) -> Node:
    out = np.tanh(x.value)
    return _make(out, (x,), lambda g: (g * (1.0 - out * out),), "tanh")


def sigmoid(x: Node) -> Node:
    out = _np_sigmoid(x.value)
    return _make(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def relu(x: Node) -> Node:
    mask = x.value > 0.0
    return _make(x.value * mask, (x,), lambda g: (g * mask,), "relu")


def softplus(x: Node) -> Node:
    xv = x.value
    out = np.logaddexp(0.0, xv)
    return _make(out, (x,), lambda g: (g * _np_sigmoid(xv),), "softplus")


def square(x: Node) -> Node:
    xv = x.value
    return _make(xv * xv, (x,), lambda g: (2.0 * g * xv,), "square")


def sqrt(x: Node) -> Node:
    xv = x.value
    if np.any(xv < 0.0):
        raise DomainError("sqrt of negative value")
    out = np.sqrt(xv)
    return _make(out, (x,), lambda g: (g * 0.5 / out,), "sqrt")


def _np_sigmoid(v: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(v))
    return np.where(v >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


# ---------------------------------------------------------------------------
# reductions and structural ops


def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum_(x: Node, axis=None, keepdims=False) -> Node:
    shape = x.shape
    axes = _norm_axis(axis, x.ndim)

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape),)

    return _make(x.value.sum(axis=axes, keepdims=keepdims), (x,), bw, "sum")


def mean(x: Node, axis=None, keepdims=False) -> Node:
    shape = x.shape
    axes = _norm_axis(axis, x.ndim)
    count = 1
    for a in axes:
        count *= shape[a]

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, shape),)

    return _make(x.value.mean(axis=axes, keepdims=keepdims), (x,), bw, "mean")


def broadcast(x: Node, shape) -> Node:
    shape = tuple(shape)
    src = x.shape
    try:
        out = np.broadcast_to(x.value, shape)
    except ValueError as exc:
        raise InvalidShapeError(str(exc)) from None
    lead = len(shape) - len(src)
    keep = tuple(i + lead for i, n in enumerate(src) if n == 1 and shape[i + lead] != 1)

    def bw(g):
        if lead:
            g = g.sum(axis=tuple(range(lead)))
        if keep:
            g = g.sum(axis=tuple(k - lead for k in keep), keepdims=True)
        return (g,)

    return _make(out, (x,), bw, "broadcast")


def concat(xs: Sequence[Node], axis: int = -1) -> Node:
    xs = list(xs)
    vals = [x.value for x in xs]
    try:
        out = np.concatenate(vals, axis=axis)
    except ValueError as exc:
        raise InvalidShapeError(str(exc)) from None
    splits = np.cumsum([v.shape[axis] for v in vals])[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(out, tuple(xs), bw, "concat")


def slice_(x: Node, key) -> Node:
    shape = x.shape
    try:
        out = x.value[key]
    except IndexError as exc:
        raise InvalidShapeError(str(exc)) from None

    def bw(g):
        full = np.zeros(shape)
        np.add.at(full, key, g)
        return (full,)

    return _make(np.array(out), (x,), bw, "slice")


def transpose(x: Node, axes=None) -> Node:
    inv = None if axes is None else tuple(np.argsort(axes))
    return _make(np.transpose(x.value, axes), (x,), lambda g: (np.transpose(g, inv),), "transpose")


def reshape(x: Node, shape) -> Node:
    src = x.shape
    try:
        out = x.value.reshape(shape)
    except ValueError as exc:
        raise InvalidShapeError(str(exc)) from None
    return _make(out, (x,), lambda g: (g.reshape(src),), "reshape")


class _StopGradTape:
    """Records stop_gradient values at a base point and replays them while
    finite differences perturb the inputs, so the numerical derivative sees
    stopped values as the constants that ``backward`` treats them as."""

    def __init__(self):
        self.values: list[np.ndarray] = []
        self.replay = False
        self.pos = 0

    def take(self, value: np.ndarray) -> np.ndarray:
        if not self.replay:
            self.values.append(value)
            return value
        if self.pos >= len(self.values):
            raise ContractError("graph under finite differences has more stop_gradient calls than at x0")
        v = self.values[self.pos]
        self.pos += 1
        if v.shape != value.shape:
            raise ContractError("stop_gradient replay shape mismatch")
        return v


_TAPE: _StopGradTape | None = None


def stop_gradient(x: Node) -> Node:
    """Same value, but no gradient flows back through this edge."""
    value = x.value if _TAPE is None else _TAPE.take(x.value)
    return Node(value, op="stop_gradient")


OPS: dict[str, Callable[..., Node]] = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "matmul": matmul,
    "exp": exp,
    "log": log,
    "tanh": tanh,
    "relu": relu,
    "softplus": softplus,
    "sum": sum_,
    "mean": mean,
    "broadcast": broadcast,
    "concat": None,  # variadic, handled in apply
    "slice": slice_,
    "transpose": transpose,
    "square": square,
    "sqrt": sqrt,
    # extras used by the models
    "neg": neg,
    "sigmoid": sigmoid,
    "minimum": minimum,
    "maximum": maximum,
    "reshape": reshape,
}


def apply(op_kind: str, inputs: Sequence[Node], attrs: dict | None = None) -> Node:
    """Generic entry point: ``apply("matmul", [a, b])``, ``apply("sum", [x], {"axis": 0})``."""
    attrs = attrs or {}
    if op_kind not in OPS:
        raise ContractError(f"unknown op {op_kind!r}")
    inputs = [_lift(x) for x in inputs]
    if op_kind == "concat":
        return concat(inputs, **attrs)
    return OPS[op_kind](*inputs, **attrs)


# ---------------------------------------------------------------------------
# backward


def _topo(root: Node) -> list[Node]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root: Node) -> None:
    if root.value.size != 1:
        raise ContractError(f"backward needs a scalar root, got shape {root.shape}")
    if not root.requires_grad:
        return
    flowing = {id(root): np.ones(root.shape)}
    for node in reversed(_topo(root)):
        g = flowing.pop(id(node), None)
        if g is None:
            continue
        node.grad = g.copy() if node.grad is None else node.grad + g
        if node.backward_fn is None:
            continue
        for p, pg in zip(node.parents, node.backward_fn(g)):
            if not p.requires_grad or pg is None:
                continue
            key = id(p)
            prev = flowing.get(key)
            flowing[key] = pg if prev is None else prev + pg


# ---------------------------------------------------------------------------
# verification


def finite_diff_check(f: Callable[[Node], Node], x0, eps: float = 1e-5,
                      freeze_stop_gradients: bool = True) -> float:
    """Max relative error between the analytic gradient of ``f`` at ``x0`` and
    central differences, ``|g - fd| / max(1, |fd|)``.

    With ``freeze_stop_gradients`` the values passing through
    :func:`stop_gradient` are pinned to those at ``x0`` during the perturbed
    evaluations, so the check targets the gradient ``backward`` is meant to
    produce for graphs that deliberately cut edges.
    """
    if eps <= 0:
        raise ContractError("eps must be positive")
    x0 = np.array(x0, dtype=np.float64)
    x = Node(x0.copy(), requires_grad=True)
    with _tape(freeze_stop_gradients) as tape:
        y = f(x)
        if not np.all(np.isfinite(y.value)):
            raise DomainError("f is not finite at x0")
        backward(y)
        analytic = np.zeros_like(x0) if x.grad is None else x.grad
        return _compare(lambda v: _replayed(tape, lambda: f(Node(v))), x0, analytic, eps)


def finite_diff_check_params(
    f: Callable[[], Node], params: Iterable[Node], eps: float = 1e-5,
    freeze_stop_gradients: bool = True,
) -> float:
    """Same check as :func:`finite_diff_check` over every entry of several
    parameter nodes that ``f`` closes over."""
    params = list(params)
    for p in params:
        p.zero_grad()
    with _tape(freeze_stop_gradients) as tape:
        y = f()
        if not np.all(np.isfinite(y.value)):
            raise DomainError("f is not finite at x0")
        backward(y)
        worst = 0.0
        for p in params:
            analytic = np.zeros(p.shape) if p.grad is None else p.grad.copy()
            base = p.value.copy()

            def g(v, p=p):
                p.value = v
                return _replayed(tape, f)

            try:
                worst = max(worst, _compare(g, base, analytic, eps))
            finally:
                p.value = base
    return worst


class _tape:
    def __init__(self, active: bool):
        self.active = active

    def __enter__(self):
        global _TAPE
        self.prev = _TAPE
        _TAPE = _StopGradTape() if self.active else None
        return _TAPE

    def __exit__(self, *exc):
        global _TAPE
        _TAPE = self.prev
        return False


def _replayed(tape: _StopGradTape | None, f) -> float:
    if tape is None:
        return f().item()
    tape.replay, tape.pos = True, 0
    try:
        out = f().item()
    finally:
        tape.replay = False
    if tape.pos != len(tape.values):
        raise ContractError("graph under finite differences has fewer stop_gradient calls than at x0")
    return out


def _compare(fn, x0: np.ndarray, analytic: np.ndarray, eps: float) -> float:
    worst = 0.0
    flat = x0.reshape(-1)
    for i in range(flat.size):
        xp = flat.copy()
        xp[i] += eps
        xm = flat.copy()
        xm[i] -= eps
        fp, fm = fn(xp.reshape(x0.shape)), fn(xm.reshape(x0.shape))
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise DomainError("f is not finite near x0")
        fd = (fp - fm) / (2 * eps)
        err = abs(analytic.reshape(-1)[i] - fd) / max(1.0, abs(fd))
        worst = max(worst, err)
    return worst
