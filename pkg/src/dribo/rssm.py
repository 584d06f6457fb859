"""Recurrent state-space encoder.

The representation ``s_t = (h_t, z_t)`` has a deterministic part ``h_t``
produced by a gated recurrent update of ``(h_{t-1}, z_{t-1}, a_{t-1})`` and a
stochastic part ``z_t`` sampled from a diagonal-Gaussian posterior conditioned
on ``h_t`` and the embedded observation. A prior ``p(z_t | h_t)`` is computed
alongside for KL balancing. Observations are small grayscale images embedded
by a two-layer dense network.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import ndgrad as G
from .gaussians import DiagGaussian, rsample
from .ndgrad import Node
from .nn import MLP, LayerNorm, Linear, ParamRegistry


@dataclass(frozen=True)
class RSSMConfig:
    obs_shape: tuple = (24, 24)
    action_dim: int = 1
    discrete_actions: int = 0  # >0: actions arrive one-hot and are embedded to action_dim
    deter: int = 32
    stoch: int = 8
    embed: int = 32
    embed_hidden: int = 64
    hidden: int = 64
    action_hidden: int = 16

    def __post_init__(self):
        object.__setattr__(self, "obs_shape", tuple(int(n) for n in self.obs_shape))
        for k in ("deter", "stoch", "embed", "embed_hidden", "hidden", "action_dim"):
            if getattr(self, k) <= 0:
                raise G.ContractError(f"{k} must be positive")

    @property
    def obs_size(self) -> int:
        return int(np.prod(self.obs_shape))

    @property
    def state_dim(self) -> int:
        return self.deter + self.stoch

    @property
    def raw_action_dim(self) -> int:
        return self.discrete_actions or self.action_dim

    def to_dict(self) -> dict:
        d = asdict(self)
        d["obs_shape"] = list(self.obs_shape)
        return d


@dataclass
class LatentState:
    h: Node
    z: Node

    def features(self) -> Node:
        return G.concat([self.h, self.z], axis=-1)

    def detach(self) -> "LatentState":
        return LatentState(G.stop_gradient(self.h), G.stop_gradient(self.z))

    @classmethod
    def from_features(cls, s, deter: int) -> "LatentState":
        s = np.asarray(s, dtype=np.float64)
        return cls(Node(s[..., :deter].copy()), Node(s[..., deter:].copy()))


@dataclass
class EncodedStep:
    state: LatentState
    posterior: DiagGaussian
    prior: DiagGaussian


class RSSM:
    def __init__(self, config: RSSMConfig, seed: int = 0, registry: ParamRegistry | None = None):
        self.config = c = config
        self.params = reg = registry if registry is not None else ParamRegistry()
        rng = np.random.default_rng(seed)
        self.embedder = MLP(reg, "embed", [c.obs_size, c.embed_hidden, c.embed], rng)
        self.embed_norm = LayerNorm(reg, "embed_norm", c.embed)
        if c.discrete_actions:
            self.act_in = Linear(reg, "action.in", c.discrete_actions, c.action_dim, rng)
            self.act_res = MLP(reg, "action.res", [c.action_dim, c.action_hidden, c.action_dim], rng)
        self.inp = Linear(reg, "gru.input", c.stoch + c.action_dim, c.hidden, rng)
        self.gate_u = Linear(reg, "gru.update", c.hidden + c.deter, c.deter, rng)
        self.gate_r = Linear(reg, "gru.reset", c.hidden + c.deter, c.deter, rng)
        self.cand = Linear(reg, "gru.cand", c.hidden + c.deter, c.deter, rng)
        self.deter_norm = LayerNorm(reg, "deter_norm", c.deter)
        self.prior_net = MLP(reg, "prior", [c.deter, c.hidden, 2 * c.stoch], rng)
        self.post_net = MLP(reg, "posterior", [c.deter + c.embed, c.hidden, 2 * c.stoch], rng)
        self.stoch_norm = LayerNorm(reg, "stoch_norm", c.stoch)

    # -- pieces -------------------------------------------------------------

    def initial_state(self, batch: int | None = None) -> LatentState:
        lead = () if batch is None else (batch,)
        return LatentState(Node(np.zeros(lead + (self.config.deter,))),
                           Node(np.zeros(lead + (self.config.stoch,))))

    def embed_observation(self, o) -> Node:
        o = G._lift(o)
        shape = self.config.obs_shape
        if o.shape[-len(shape):] != shape:
            raise G.InvalidShapeError(f"observation shape {o.shape} does not end in {shape}")
        flat = G.reshape(o, o.shape[: o.ndim - len(shape)] + (self.config.obs_size,))
        return self.embed_norm(self.embedder(flat))

    def embed_action(self, a) -> Node:
        a = G._lift(a)
        if a.shape[-1] != self.config.raw_action_dim:
            raise G.InvalidShapeError(f"action dim {a.shape[-1]} != {self.config.raw_action_dim}")
        if not self.config.discrete_actions:
            return a
        y = self.act_in(a)
        return G.add(y, self.act_res(y))

    def det_step(self, prev: LatentState, a) -> Node:
        c = self.config
        if prev.h.shape[-1] != c.deter or prev.z.shape[-1] != c.stoch:
            raise G.InvalidShapeError("previous state dims do not match the model")
        x = G.relu(self.inp(G.concat([prev.z, self.embed_action(a)], axis=-1)))
        xh = G.concat([x, prev.h], axis=-1)
        u = G.sigmoid(self.gate_u(xh))
        r = G.sigmoid(self.gate_r(xh))
        cand = G.tanh(self.cand(G.concat([x, G.mul(r, prev.h)], axis=-1)))
        h = G.add(prev.h, G.mul(u, G.sub(cand, prev.h)))
        return self.deter_norm(h)

    def _gaussian(self, out: Node) -> DiagGaussian:
        z = self.config.stoch
        idx = (Ellipsis, slice(0, z))
        return DiagGaussian.from_raw(G.slice_(out, idx), G.slice_(out, (Ellipsis, slice(z, 2 * z))))

    def prior(self, h: Node) -> DiagGaussian:
        if h.shape[-1] != self.config.deter:
            raise G.InvalidShapeError(f"h dim {h.shape[-1]} != {self.config.deter}")
        return self._gaussian(self.prior_net(h))

    def posterior(self, h: Node, o=None, embedding: Node | None = None) -> DiagGaussian:
        if h.shape[-1] != self.config.deter:
            raise G.InvalidShapeError(f"h dim {h.shape[-1]} != {self.config.deter}")
        e = self.embed_observation(o) if embedding is None else embedding
        return self._gaussian(self.post_net(G.concat([h, e], axis=-1)))

    def sample_z(self, post: DiagGaussian, noise) -> Node:
        return self.stoch_norm(rsample(post, noise))

    def step(self, prev: LatentState, a_prev, o=None, noise=None, embedding=None) -> EncodedStep:
        """One filtering step: h from the recurrence, then posterior and prior."""
        h = self.det_step(prev, a_prev)
        post = self.posterior(h, o, embedding)
        if noise is None:
            noise = np.zeros(post.shape)
        z = self.sample_z(post, noise)
        return EncodedStep(LatentState(h, z), post, self.prior(h))

    # -- sequences ----------------------------------------------------------

    def encode_sequence(self, obs, actions, s0: LatentState | None = None, noise=None,
                        block_state_grad: bool = False) -> list[EncodedStep]:
        """Encode ``obs`` of shape ``(N, T, *obs_shape)`` given ``actions`` of
        shape ``(N, T, raw_action_dim)``. Step t conditions on ``a_{t-1}``; the
        first step uses the zero action and ``s0`` (zeros by default).

        ``noise`` is a ``numpy.random.Generator``, an array of shape
        ``(T, N, stoch)``, or ``None`` for zero noise (posterior means).
        """
        obs = np.asarray(obs.value if isinstance(obs, Node) else obs, dtype=np.float64)
        actions = np.asarray(actions, dtype=np.float64)
        n, t_len = obs.shape[0], obs.shape[1]
        if actions.shape[:2] != (n, t_len):
            raise G.ContractError(f"actions {actions.shape[:2]} do not match observations {(n, t_len)}")
        c = self.config
        if isinstance(noise, np.random.Generator):
            noise = noise.standard_normal((t_len, n, c.stoch))
        elif noise is None:
            noise = np.zeros((t_len, n, c.stoch))
        else:
            noise = np.asarray(noise, dtype=np.float64)
            if noise.shape != (t_len, n, c.stoch):
                raise G.InvalidShapeError(f"noise shape {noise.shape} != {(t_len, n, c.stoch)}")
        emb = self.embed_observation(Node(obs))
        state = s0 if s0 is not None else self.initial_state(n)
        out = []
        zero_a = np.zeros((n, c.raw_action_dim))
        for t in range(t_len):
            a_prev = zero_a if t == 0 else actions[:, t - 1]
            prev = state.detach() if block_state_grad else state
            step = self.step(prev, a_prev, noise=noise[t], embedding=G.slice_(emb, (slice(None), t)))
            out.append(step)
            state = step.state
        return out
