"""PPO with the encoder step treated as part of the policy.

During collection each step stores the representation carried into it
(``old_states``), the previous one-hot action and the sampling noise. An
update re-encodes every step from those stored inputs, so with unchanged
parameters it reproduces the collection-time policy and the ratio is 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import ndgrad as G
from ..ndgrad import Node
from ..nn import Adam, Linear, ParamRegistry
from ..rssm import RSSM, LatentState
from .carry import Carry

METRIC_KEYS = ("ppo/policy_loss", "ppo/value_loss", "ppo/entropy", "ppo/clip_fraction", "ppo/approx_kl",
               "ppo/reward_scale")


@dataclass(frozen=True)
class PpoConfig:
    gamma: float = 0.99
    lam: float = 0.95
    clip: float = 0.2
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    epochs: int = 3
    minibatches: int = 4
    lr: float = 5e-4
    hidden: int = 64
    max_grad_norm: float | None = 0.5
    normalize_rewards: bool = True
    normalize_advantages: bool = True


@dataclass
class RunningMoments:
    """Running mean/variance (parallel-merge form)."""

    mean: float = 0.0
    var: float = 1.0
    count: float = 1e-4

    def update(self, x: np.ndarray) -> None:
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        if x.size == 0:
            return
        bm, bv, bn = float(x.mean()), float(x.var()), x.size
        delta = bm - self.mean
        tot = self.count + bn
        self.mean += delta * bn / tot
        m2 = self.var * self.count + bv * bn + delta * delta * self.count * bn / tot
        self.var = m2 / tot
        self.count = tot


@dataclass
class Rollout:
    """E episodes of T decisions each, all arrays indexed [episode, step]."""

    observations: np.ndarray  # (E, T, *obs)
    actions: np.ndarray  # (E, T) int
    rewards: np.ndarray  # (E, T)
    old_states: np.ndarray | None  # (E, T, H+Z): representation carried into step t
    prev_actions: np.ndarray  # (E, T, K): one-hot a_{t-1}, zeros at t=0
    noise: np.ndarray  # (E, T, Z)
    logp: np.ndarray  # (E, T)
    values: np.ndarray  # (E, T)
    extras: dict = field(default_factory=dict)

    @property
    def episodes(self) -> int:
        return self.actions.shape[0]

    @property
    def steps(self) -> int:
        return self.actions.shape[1]


class PpoAgent:
    def __init__(self, model: RSSM, config: PpoConfig | None = None, seed: int = 0):
        self.config = c = config or PpoConfig()
        self.model = model
        self.n_actions = k = model.config.discrete_actions
        if not k:
            raise G.ContractError("PPO needs an encoder built for discrete actions")
        rng = np.random.default_rng(seed)
        d = model.config.state_dim
        self.heads = reg = ParamRegistry()
        self.shared = Linear(reg, "shared", d, c.hidden, rng)
        self.policy = Linear(reg, "policy", c.hidden, k, rng, scale=0.01)
        self.value = Linear(reg, "value", c.hidden, 1, rng)
        self.opt = Adam(reg.nodes() + model.params.nodes(), lr=c.lr, max_grad_norm=c.max_grad_norm)
        self.returns = RunningMoments()

    def registries(self) -> dict[str, ParamRegistry]:
        return {"ppo": self.heads}

    def heads_of(self, s: Node) -> tuple[Node, Node]:
        x = G.relu(self.shared(s))
        logits = self.policy(x)
        value = G.reshape(self.value(x), s.shape[:-1])
        return logits, value

    def one_hot(self, a) -> np.ndarray:
        a = np.asarray(a, dtype=np.int64)
        return np.eye(self.n_actions)[a]


def log_softmax(logits: Node) -> Node:
    """Row max treated as a constant; exact since log-sum-exp is shift-invariant."""
    m = np.max(logits.value, axis=-1, keepdims=True)
    shifted = G.sub(logits, G.constant(np.broadcast_to(m, logits.shape).copy()))
    lse = G.log(G.sum_(G.exp(shifted), axis=-1, keepdims=True))
    return G.sub(shifted, G.broadcast(lse, logits.shape))


def compute_gae(rewards: np.ndarray, values: np.ndarray, gamma: float, lam: float,
                last_value: float | np.ndarray = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Advantages and returns along the last axis; the step after the final
    one is valued at ``last_value`` (0 for an episode end)."""
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    adv = np.zeros_like(rewards)
    nxt_v = np.broadcast_to(np.asarray(last_value, dtype=np.float64), rewards.shape[:-1])
    run = np.zeros(rewards.shape[:-1])
    for t in reversed(range(rewards.shape[-1])):
        delta = rewards[..., t] + gamma * nxt_v - values[..., t]
        run = delta + gamma * lam * run
        adv[..., t] = run
        nxt_v = values[..., t]
    return adv, adv + values


def ppo_losses(agent: PpoAgent, obs, actions, old_states, prev_actions, noise, logp_old, advantages, returns,
               clip: float | None = None) -> dict:
    c = agent.config
    clip = c.clip if clip is None else clip
    if old_states is None:
        raise G.ContractError("PPO update needs stored old representations")
    model = agent.model
    state = LatentState.from_features(old_states, model.config.deter)
    step = model.step(state, prev_actions, o=obs, noise=noise)
    logits, value = agent.heads_of(step.state.features())
    logsm = log_softmax(logits)
    logp = G.sum_(G.mul(logsm, G.constant(agent.one_hot(actions))), axis=-1)
    ratio = G.exp(G.sub(logp, G.constant(logp_old)))
    adv = G.constant(advantages)
    clipped = G.minimum(G.maximum(ratio, G.constant(1.0 - clip)), G.constant(1.0 + clip))
    surrogate = G.minimum(G.mul(ratio, adv), G.mul(clipped, adv))
    policy_loss = G.neg(G.mean(surrogate))
    value_loss = G.mul(G.constant(0.5), G.mean(G.square(G.sub(value, G.constant(returns)))))
    entropy = G.neg(G.mean(G.sum_(G.mul(G.exp(logsm), logsm), axis=-1)))
    total = G.add(policy_loss, G.sub(G.mul(G.constant(c.value_coef), value_loss),
                                     G.mul(G.constant(c.entropy_coef), entropy)))
    return {"total": total, "policy": policy_loss, "value": value_loss, "entropy": entropy,
            "ratio": ratio, "logp": logp}


def ppo_update(agent: PpoAgent, rollout: Rollout, rng: np.random.Generator) -> dict[str, float]:
    c = agent.config
    if rollout.old_states is None:
        raise G.ContractError("rollout is missing the stored old representations")
    rewards = rollout.rewards
    scale = 1.0
    if c.normalize_rewards:
        disc = np.zeros(rollout.episodes)
        seen = []
        for t in range(rollout.steps):
            disc = disc * c.gamma + rewards[:, t]
            seen.append(disc.copy())
        agent.returns.update(np.array(seen))
        scale = float(np.sqrt(agent.returns.var) + 1e-8)
    adv, ret = compute_gae(rewards / scale, rollout.values, c.gamma, c.lam)
    flat = lambda x: x.reshape((-1,) + x.shape[2:])
    data = {
        "obs": flat(rollout.observations), "actions": flat(rollout.actions), "old": flat(rollout.old_states),
        "prev": flat(rollout.prev_actions), "noise": flat(rollout.noise), "logp": flat(rollout.logp),
        "adv": flat(adv), "ret": flat(ret),
    }
    n = len(data["actions"])
    stats = {k: [] for k in ("policy", "value", "entropy", "clip", "kl")}
    for _ in range(c.epochs):
        for idx in np.array_split(rng.permutation(n), min(c.minibatches, n)):
            a = data["adv"][idx]
            if c.normalize_advantages and len(idx) > 1:
                a = (a - a.mean()) / (a.std() + 1e-8)
            out = ppo_losses(agent, data["obs"][idx], data["actions"][idx], data["old"][idx], data["prev"][idx],
                             data["noise"][idx], data["logp"][idx], a, data["ret"][idx])
            if not np.isfinite(out["total"].item()):
                raise G.DomainError(f"non-finite PPO loss {out['total'].item()}")
            agent.heads.zero_grads()
            agent.model.params.zero_grads()
            G.backward(out["total"])
            agent.opt.step()
            r = out["ratio"].value
            stats["policy"].append(out["policy"].item())
            stats["value"].append(out["value"].item())
            stats["entropy"].append(out["entropy"].item())
            stats["clip"].append(float(np.mean(np.abs(r - 1.0) > c.clip)))
            stats["kl"].append(float(np.mean(data["logp"][idx] - out["logp"].value)))
    agent.heads.zero_grads()
    agent.model.params.zero_grads()
    return {
        "ppo/policy_loss": float(np.mean(stats["policy"])),
        "ppo/value_loss": float(np.mean(stats["value"])),
        "ppo/entropy": float(np.mean(stats["entropy"])),
        "ppo/clip_fraction": float(np.mean(stats["clip"])),
        "ppo/approx_kl": float(np.mean(stats["kl"])),
        "ppo/reward_scale": scale,
    }


def act(agent: PpoAgent, o: np.ndarray, carry: Carry, mode: str = "stochastic",
        rng: np.random.Generator | None = None) -> tuple[int, Carry, dict]:
    """One encoder step, then a categorical draw (or argmax when deterministic).

    Returns the action index, the next carry and what the update needs:
    ``old_state``, ``prev_action``, ``noise``, ``logp`` and ``value``.
    """
    if mode not in ("stochastic", "deterministic"):
        raise G.ContractError(f"mode must be stochastic or deterministic, got {mode!r}")
    model = agent.model
    z = model.config.stoch
    rng = rng if rng is not None else np.random.default_rng()
    noise = rng.standard_normal((1, z)) if mode == "stochastic" else np.zeros((1, z))
    old = carry.state.features().value.reshape(1, -1)
    prev = np.asarray(carry.action, dtype=np.float64).reshape(1, -1)
    state = LatentState.from_features(old, model.config.deter)
    step = model.step(state, prev, o=np.asarray(o)[None], noise=noise)
    logits, value = agent.heads_of(step.state.features())
    lp = log_softmax(logits).value[0]
    if mode == "stochastic":
        a = int(rng.choice(agent.n_actions, p=np.exp(lp) / np.exp(lp).sum()))
    else:
        a = int(np.argmax(lp))
    info = {"old_state": old[0], "prev_action": prev[0], "noise": noise[0], "logp": float(lp[a]),
            "value": float(value.value[0])}
    nxt = LatentState(Node(step.state.h.value[0]), Node(step.state.z.value[0]))
    return a, Carry(nxt, agent.one_hot(a).astype(np.float64)), info
