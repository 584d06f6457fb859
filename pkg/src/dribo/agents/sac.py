"""Soft actor-critic over encoder representations.

Critics see ``s_t`` from the online encoder (so the critic loss also shapes
the encoder); targets come from the target encoder and target critics. The
actor and temperature see detached representations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import ndgrad as G
from ..batch import SequenceBatch
from ..ndgrad import Node
from ..nn import MLP, Adam, ParamRegistry, polyak
from ..rssm import RSSM, LatentState
from .carry import Carry

LOG_2 = float(np.log(2.0))


@dataclass(frozen=True)
class SacConfig:
    gamma: float = 0.99
    tau_q: float = 0.01
    tau_encoder: float = 0.05
    init_alpha: float = 0.1
    target_update_freq: int = 2
    hidden: int = 64
    critic_lr: float = 1e-3
    actor_lr: float = 1e-3
    alpha_lr: float = 1e-4
    encoder_lr: float = 1e-3
    log_std_min: float = -10.0
    log_std_max: float = 2.0
    critic_trains_encoder: bool = True
    max_grad_norm: float | None = 100.0


@dataclass
class SacNoise:
    encoder: np.ndarray  # (T, N, Z)
    target_encoder: np.ndarray  # (T, N, Z)
    action: np.ndarray  # (M, A) for the actor loss
    next_action: np.ndarray  # (M, A) for the bootstrap value

    @classmethod
    def draw(cls, rng: np.random.Generator, n: int, t: int, stoch: int, action_dim: int) -> "SacNoise":
        m = n * (t - 1)
        return cls(rng.standard_normal((t, n, stoch)), rng.standard_normal((t, n, stoch)),
                   rng.standard_normal((m, action_dim)), rng.standard_normal((m, action_dim)))

    @classmethod
    def zeros(cls, n: int, t: int, stoch: int, action_dim: int) -> "SacNoise":
        m = n * (t - 1)
        return cls(np.zeros((t, n, stoch)), np.zeros((t, n, stoch)), np.zeros((m, action_dim)),
                   np.zeros((m, action_dim)))


class SacAgent:
    def __init__(self, model: RSSM, config: SacConfig | None = None, seed: int = 0):
        self.config = c = config or SacConfig()
        self.model = model
        if model.config.discrete_actions:
            raise G.ContractError("SAC needs a continuous-action encoder")
        self.action_dim = a = model.config.action_dim
        self.target_entropy = -float(a)
        d = model.config.state_dim
        rng = np.random.default_rng(seed)

        self.target_model = RSSM(model.config, seed=seed)
        self.target_model.params.load_state(model.params.state())

        self.critic = ParamRegistry()
        self.q1 = MLP(self.critic, "q1", [d + a, c.hidden, c.hidden, 1], rng)
        self.q2 = MLP(self.critic, "q2", [d + a, c.hidden, c.hidden, 1], rng)
        self.critic_target = ParamRegistry()
        self.q1_t = MLP(self.critic_target, "q1", [d + a, c.hidden, c.hidden, 1], rng)
        self.q2_t = MLP(self.critic_target, "q2", [d + a, c.hidden, c.hidden, 1], rng)
        self.critic_target.load_state(self.critic.state())

        self.actor = ParamRegistry()
        self.pi = MLP(self.actor, "pi", [d, c.hidden, c.hidden, 2 * a], rng)
        self.temperature = ParamRegistry()
        self.log_alpha = self.temperature.add("log_alpha", np.array(np.log(c.init_alpha)))

        self.critic_opt = Adam(self.critic.nodes(), lr=c.critic_lr, max_grad_norm=c.max_grad_norm)
        # the critic loss also steps the encoder, at its own rate
        self.encoder_opt = (Adam(model.params.nodes(), lr=c.encoder_lr, max_grad_norm=c.max_grad_norm)
                            if c.critic_trains_encoder else None)
        self.actor_opt = Adam(self.actor.nodes(), lr=c.actor_lr, max_grad_norm=c.max_grad_norm)
        self.alpha_opt = Adam(self.temperature.nodes(), lr=c.alpha_lr)
        self.updates = 0

    @property
    def alpha(self) -> float:
        return float(np.exp(self.log_alpha.value))

    def registries(self) -> dict[str, ParamRegistry]:
        return {"encoder_target": self.target_model.params, "critic": self.critic,
                "critic_target": self.critic_target, "actor": self.actor, "temperature": self.temperature}

    # -- heads ----------------------------------------------------------------

    def q_values(self, s: Node, a, target: bool = False) -> tuple[Node, Node]:
        x = G.concat([s, G._lift(a)], axis=-1)
        n1, n2 = (self.q1_t, self.q2_t) if target else (self.q1, self.q2)
        return G.reshape(n1(x), (x.shape[0],)), G.reshape(n2(x), (x.shape[0],))

    def policy_params(self, s: Node) -> tuple[Node, Node]:
        c, a = self.config, self.action_dim
        out = self.pi(s)
        mean = G.slice_(out, (Ellipsis, slice(0, a)))
        raw = G.tanh(G.slice_(out, (Ellipsis, slice(a, 2 * a))))
        half = 0.5 * (c.log_std_max - c.log_std_min)
        log_std = G.add(G.mul(G.constant(half), raw), G.constant(c.log_std_min + half))
        return mean, log_std

    def policy_sample(self, s: Node, noise) -> tuple[Node, Node]:
        """Squashed Gaussian: a = tanh(mean + std * noise) with its log-density."""
        mean, log_std = self.policy_params(s)
        noise = np.asarray(noise, dtype=np.float64)
        u = G.add(mean, G.mul(G.exp(log_std), G.constant(noise)))
        gauss = -0.5 * noise * noise - 0.5 * np.log(2 * np.pi)
        log_u = G.sub(G.constant(gauss), log_std)
        # log(1 - tanh(u)^2) = 2 (log 2 - u - softplus(-2u)), stable for large |u|
        log_jac = G.mul(G.constant(2.0), G.sub(G.sub(G.constant(LOG_2), u), G.softplus(G.mul(G.constant(-2.0), u))))
        logp = G.sum_(G.sub(log_u, log_jac), axis=-1)
        return G.tanh(u), logp


# -- losses and update ----------------------------------------------------------


def _time_major(x: np.ndarray, lo: int, hi: int) -> np.ndarray:
    """(N, T, ...) -> rows (t, n) for t in [lo, hi)."""
    x = np.swapaxes(x, 0, 1)[lo:hi]
    return x.reshape((-1,) + x.shape[2:])


def sac_losses(agent: SacAgent, batch: SequenceBatch, noise: SacNoise, gamma: float | None = None) -> dict:
    c = agent.config
    gamma = c.gamma if gamma is None else gamma
    obs, act = batch.observations, batch.actions
    t = batch.t
    if t < 2:
        raise G.ContractError("SAC needs windows of at least two steps")
    steps = agent.model.encode_sequence(obs, act, noise=noise.encoder)
    s = G.concat([st.state.features() for st in steps[:-1]], axis=0)
    a = _time_major(act, 0, t - 1)
    r = _time_major(batch.rewards, 0, t - 1)

    tsteps = agent.target_model.encode_sequence(obs, act, noise=noise.target_encoder)
    s_next = G.stop_gradient(G.concat([st.state.features() for st in tsteps[1:]], axis=0))
    alpha = G.stop_gradient(G.exp(agent.log_alpha))
    a_next, logp_next = agent.policy_sample(s_next, noise.next_action)
    tq1, tq2 = agent.q_values(s_next, a_next, target=True)
    value = G.sub(G.minimum(tq1, tq2), G.mul(alpha, logp_next))
    y = G.stop_gradient(G.add(G.constant(r), G.mul(G.constant(gamma), value)))
    q1, q2 = agent.q_values(s, a)
    critic = G.add(G.mean(G.square(G.sub(q1, y))), G.mean(G.square(G.sub(q2, y))))

    s_d = G.stop_gradient(s)
    a_pi, logp = agent.policy_sample(s_d, noise.action)
    p1, p2 = agent.q_values(s_d, a_pi)
    actor = G.mean(G.sub(G.mul(alpha, logp), G.minimum(p1, p2)))
    entropy_gap = G.stop_gradient(G.add(logp, G.constant(agent.target_entropy)))
    temperature = G.mean(G.neg(G.mul(G.exp(agent.log_alpha), entropy_gap)))
    return {"critic": critic, "actor": actor, "alpha": temperature, "q1": q1, "target": y, "logp": logp}


def _finite(name: str, node: Node) -> None:
    if not np.all(np.isfinite(node.value)):
        raise G.DomainError(f"non-finite {name} loss: {node.value}")


def sac_update(agent: SacAgent, batch: SequenceBatch, rng: np.random.Generator) -> dict[str, float]:
    mc = agent.model.config
    noise = SacNoise.draw(rng, batch.n, batch.t, mc.stoch, agent.action_dim)
    losses = sac_losses(agent, batch, noise)
    for k in ("critic", "actor", "alpha"):
        _finite(k, losses[k])

    steps = (("critic", (agent.critic_opt, agent.encoder_opt)), ("actor", (agent.actor_opt,)),
             ("alpha", (agent.alpha_opt,)))
    for key, opts in steps:
        _zero_all(agent)
        G.backward(losses[key])
        for opt in opts:
            if opt is not None:
                opt.step()
    _zero_all(agent)

    if agent.updates % agent.config.target_update_freq == 0:
        polyak(agent.critic_target, agent.critic, agent.config.tau_q)
        polyak(agent.target_model.params, agent.model.params, agent.config.tau_encoder)
    agent.updates += 1
    return {
        "sac/critic_loss": losses["critic"].item(),
        "sac/actor_loss": losses["actor"].item(),
        "sac/alpha_loss": losses["alpha"].item(),
        "sac/alpha": agent.alpha,
        "sac/q_mean": float(np.mean(losses["q1"].value)),
        "sac/entropy": float(-np.mean(losses["logp"].value)),
    }


METRIC_KEYS = ("sac/critic_loss", "sac/actor_loss", "sac/alpha_loss", "sac/alpha", "sac/q_mean", "sac/entropy")


def _zero_all(agent: SacAgent) -> None:
    for reg in (agent.model.params, agent.critic, agent.actor, agent.temperature,
                agent.critic_target, agent.target_model.params):
        reg.zero_grads()


def act(agent: SacAgent, o: np.ndarray, carry: Carry, mode: str = "stochastic",
        rng: np.random.Generator | None = None) -> tuple[np.ndarray, Carry]:
    """One encoder step on a single observation, then the squashed policy."""
    if mode not in ("stochastic", "deterministic"):
        raise G.ContractError(f"mode must be stochastic or deterministic, got {mode!r}")
    model = agent.model
    z = model.config.stoch
    if mode == "stochastic":
        rng = rng if rng is not None else np.random.default_rng()
        enc_noise = rng.standard_normal((1, z))
        act_noise = rng.standard_normal((1, agent.action_dim))
    else:
        enc_noise = np.zeros((1, z))
        act_noise = None
    state = LatentState(G.reshape(carry.state.h, (1, -1)) if carry.state.h.ndim == 1 else carry.state.h,
                        G.reshape(carry.state.z, (1, -1)) if carry.state.z.ndim == 1 else carry.state.z)
    step = model.step(state, carry.action.reshape(1, -1), o=np.asarray(o)[None], noise=enc_noise)
    s = step.state.features()
    if act_noise is None:
        mean, _ = agent.policy_params(s)
        a = np.tanh(mean.value)
    else:
        a = agent.policy_sample(s, act_noise)[0].value
    a = a.reshape(-1)
    nxt = LatentState(Node(step.state.h.value[0]), Node(step.state.z.value[0]))
    return a, Carry(nxt, a.copy())
