"""Finite-difference checks for every differentiable op and composite loss.

Each check returns the max relative error ``|g - fd| / max(1, |fd|)`` over
all checked coordinates. Model parameters are jittered away from their
initial values first: zero biases with a zero start state put ReLU inputs
exactly at the kink, where one-sided differences disagree with any
subgradient.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import ndgrad as G
from .batch import SequenceBatch
from .gaussians import DiagGaussian, kl, log_prob, skl
from .loss import dribo_loss, kl_balanced
from .mi import BilinearCritic, infonce, score_matrix
from .nn import ParamRegistry, layer_norm
from .rssm import RSSM, RSSMConfig

TOL = 1e-4


@dataclass
class GradRecord:
    name: str
    error: float
    trials: int
    seconds: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.error) and self.error < TOL)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"grad[{self.name}] max_rel_err={self.error:.3e} trials={self.trials} {status}"


def _away_from_zero(rng, shape, lo=0.1, hi=2.0):
    return rng.uniform(lo, hi, shape) * rng.choice([-1.0, 1.0], shape)


def _weighted(fn, w):
    """Scalarize an op by a fixed random weighting of its output."""
    return lambda *xs: G.sum_(G.mul(fn(*xs), G.constant(w)))


def _check_op(fn, inputs: list[np.ndarray], rng) -> float:
    """Check ``fn`` w.r.t. each input in turn, the others held fixed."""
    probe = fn(*[G.constant(x) for x in inputs])
    f = _weighted(fn, rng.standard_normal(probe.shape))
    worst = 0.0
    for i in range(len(inputs)):
        def g(x, i=i):
            args = [G.constant(v) for v in inputs]
            args[i] = x
            return f(*args)
        worst = max(worst, G.finite_diff_check(g, inputs[i]))
    return worst


def op_cases() -> dict:
    """name -> (fn, input sampler(rng) -> list of arrays)."""
    u = lambda rng, *s: rng.uniform(-2, 2, s)
    pos = lambda rng, *s: rng.uniform(0.1, 2.0, s)
    return {
        "add": (G.add, lambda r: [u(r, 3, 4), u(r, 3, 4)]),
        "add-broadcast": (G.add, lambda r: [u(r, 2, 3, 4), u(r, 3, 4)]),
        "sub": (G.sub, lambda r: [u(r, 3, 4), u(r, 3, 4)]),
        "mul": (G.mul, lambda r: [u(r, 3, 4), u(r, 3, 4)]),
        "mul-broadcast": (G.mul, lambda r: [u(r, 3, 4), u(r, 4)]),
        "div": (G.div, lambda r: [u(r, 3, 4), _away_from_zero(r, (3, 4), 0.5)]),
        "matmul": (G.matmul, lambda r: [u(r, 3, 4), u(r, 4, 2)]),
        "matmul-batched": (G.matmul, lambda r: [u(r, 2, 3, 4), u(r, 4, 2)]),
        "exp": (G.exp, lambda r: [u(r, 5)]),
        "log": (G.log, lambda r: [pos(r, 5)]),
        "tanh": (G.tanh, lambda r: [u(r, 5)]),
        "sigmoid": (G.sigmoid, lambda r: [u(r, 5)]),
        "relu": (G.relu, lambda r: [_away_from_zero(r, (5,), 0.01)]),
        "softplus": (G.softplus, lambda r: [u(r, 5)]),
        "square": (G.square, lambda r: [u(r, 5)]),
        "sqrt": (G.sqrt, lambda r: [pos(r, 5)]),
        "neg": (G.neg, lambda r: [u(r, 5)]),
        "minimum": (G.minimum, lambda r: [u(r, 6), u(r, 6)]),
        "maximum": (G.maximum, lambda r: [u(r, 6), u(r, 6)]),
        "sum": (lambda x: G.sum_(x), lambda r: [u(r, 3, 4)]),
        "sum-axis": (lambda x: G.sum_(x, axis=0, keepdims=True), lambda r: [u(r, 3, 4)]),
        "mean": (lambda x: G.mean(x), lambda r: [u(r, 3, 4)]),
        "mean-axis": (lambda x: G.mean(x, axis=-1), lambda r: [u(r, 3, 4)]),
        "broadcast": (lambda x: G.broadcast(x, (3, 4)), lambda r: [u(r, 4)]),
        "concat": (lambda a, b: G.concat([a, b], axis=-1), lambda r: [u(r, 3, 2), u(r, 3, 4)]),
        "concat-axis0": (lambda a, b: G.concat([a, b], axis=0), lambda r: [u(r, 2, 4), u(r, 3, 4)]),
        "slice": (lambda x: G.slice_(x, (slice(1, 3), slice(None, None, 2))), lambda r: [u(r, 4, 5)]),
        "transpose": (lambda x: G.transpose(x), lambda r: [u(r, 3, 4)]),
        "reshape": (lambda x: G.reshape(x, (4, 3)), lambda r: [u(r, 3, 4)]),
        "stop_gradient": (lambda x: G.mul(G.stop_gradient(x), x), lambda r: [u(r, 5)]),
    }


def check_ops(trials: int = 20, seed: int = 0) -> list[GradRecord]:
    rng = np.random.default_rng(seed)
    out = []
    for name, (fn, sampler) in op_cases().items():
        t0 = time.perf_counter()
        err = max(_check_op(fn, sampler(rng), rng) for _ in range(trials))
        out.append(GradRecord(name, err, trials, time.perf_counter() - t0))
    return out


# -- composites -------------------------------------------------------------------


def jitter(regs, rng, scale: float = 0.3) -> None:
    for reg in regs:
        for p in reg.nodes():
            p.value = p.value + scale * rng.standard_normal(p.shape)


def tiny_rssm(discrete: int = 0, seed: int = 0) -> RSSM:
    c = RSSMConfig(obs_shape=(4, 4), deter=4, stoch=3, embed=5, embed_hidden=6, hidden=5,
                   discrete_actions=discrete, action_dim=4 if discrete else 1, action_hidden=5)
    return RSSM(c, seed)


def _params_check(name: str, f, params) -> GradRecord:
    t0 = time.perf_counter()
    err = G.finite_diff_check_params(f, params)
    return GradRecord(name, err, 1, time.perf_counter() - t0)


def check_layers(seed: int = 0) -> list[GradRecord]:
    rng = np.random.default_rng(seed)
    out = []
    reg = ParamRegistry()
    gain = reg.add("gain", 1.0 + 0.3 * rng.standard_normal(5))
    shift = reg.add("shift", 0.3 * rng.standard_normal(5))
    x = reg.add("x", rng.uniform(-2, 2, (3, 5)))
    w = rng.standard_normal((3, 5))
    out.append(_params_check("layer_norm", lambda: G.sum_(G.mul(layer_norm(x, gain, shift), G.constant(w))),
                             reg.nodes()))

    reg = ParamRegistry()
    mp, mq = reg.add("mp", rng.uniform(-2, 2, (4, 3))), reg.add("mq", rng.uniform(-2, 2, (4, 3)))
    rp, rq = reg.add("rp", rng.uniform(-2, 2, (4, 3))), reg.add("rq", rng.uniform(-2, 2, (4, 3)))
    pq = lambda: (DiagGaussian.from_raw(mp, rp), DiagGaussian.from_raw(mq, rq))
    xs = rng.uniform(-2, 2, (4, 3))
    out.append(_params_check("gaussian.kl", lambda: G.sum_(kl(*pq())), reg.nodes()))
    out.append(_params_check("gaussian.skl", lambda: G.sum_(skl(*pq())), reg.nodes()))
    out.append(_params_check("gaussian.log_prob", lambda: G.sum_(log_prob(pq()[0], xs)), [mp, rp]))
    out.append(_params_check("kl_balanced", lambda: G.sum_(kl_balanced(*pq())), reg.nodes()))

    reg = ParamRegistry()
    s1, s2 = reg.add("s1", rng.uniform(-2, 2, (6, 4))), reg.add("s2", rng.uniform(-2, 2, (6, 4)))
    critic = BilinearCritic(4, seed=seed, registry=reg, init_scale=1.0)
    out.append(_params_check("infonce", lambda: infonce(score_matrix(s1, s2, critic)), reg.nodes()))

    for discrete in (0, 4):
        model = tiny_rssm(discrete, seed)
        jitter([model.params], rng)
        obs = rng.random((2, 3, 4, 4))
        acts = (np.eye(4)[rng.integers(0, 4, (2, 3))] if discrete else rng.uniform(-1, 1, (2, 3, 1)))
        noise = rng.standard_normal((3, 2, 3))
        w = rng.standard_normal((3, 2, 7))

        def f(model=model, obs=obs, acts=acts, noise=noise, w=w):
            steps = model.encode_sequence(obs, acts, noise=noise)
            feats = G.concat([G.reshape(s.state.features(), (1, 2, 7)) for s in steps], axis=0)
            return G.sum_(G.mul(feats, G.constant(w)))
        out.append(_params_check(f"rssm.encode_sequence[{'discrete' if discrete else 'continuous'}]", f,
                                 model.params.nodes()))
    return out


def check_dribo_loss(seed: int = 0) -> list[GradRecord]:
    rng = np.random.default_rng(seed)
    model = tiny_rssm(0, seed)
    critic = BilinearCritic(model.config.state_dim, seed=seed + 1, init_scale=1.0)
    jitter([model.params], rng)
    b1 = SequenceBatch(rng.random((2, 3, 4, 4)), rng.uniform(-1, 1, (2, 3, 1)), rng.random((2, 3)))
    b2 = b1.replace(observations=rng.random((2, 3, 4, 4)))
    noise = (rng.standard_normal((3, 2, 3)), rng.standard_normal((3, 2, 3)))
    params = model.params.nodes() + critic.params.nodes()
    out = []
    for block in (False, True):
        f = lambda block=block: dribo_loss(b1, b2, model, critic, 0.5, noise=noise, block_state_grad=block).total
        out.append(_params_check(f"dribo_loss[N=2,T=3,block_state_grad={block}]", f, params))
    return out


def check_sac(seed: int = 0) -> list[GradRecord]:
    from .agents.sac import SacAgent, SacConfig, SacNoise, sac_losses

    rng = np.random.default_rng(seed)
    model = tiny_rssm(0, seed)
    agent = SacAgent(model, SacConfig(hidden=6), seed=seed + 1)
    jitter([model.params, agent.critic, agent.actor, agent.target_model.params, agent.critic_target], rng)
    batch = SequenceBatch(rng.random((2, 3, 4, 4)), rng.uniform(-1, 1, (2, 3, 1)), rng.random((2, 3)))
    noise = SacNoise.draw(rng, 2, 3, 3, 1)
    groups = {
        "critic": agent.critic.nodes() + model.params.nodes(),
        "actor": agent.actor.nodes() + agent.critic.nodes() + model.params.nodes(),
        "alpha": agent.temperature.nodes(),
    }
    return [_params_check(f"sac.{key}_loss", lambda key=key: sac_losses(agent, batch, noise)[key], params)
            for key, params in groups.items()]


def check_ppo(seed: int = 0) -> list[GradRecord]:
    from .agents.carry import initial_carry
    from .agents.ppo import PpoAgent, PpoConfig, act, ppo_losses

    rng = np.random.default_rng(seed)
    model = tiny_rssm(4, seed)
    agent = PpoAgent(model, PpoConfig(hidden=6), seed=seed + 1)
    jitter([model.params, agent.heads], rng)
    obs = rng.random((2, 3, 4, 4))
    rows = []
    for e in range(2):
        carry = initial_carry(model)
        for t in range(3):
            a, carry, info = act(agent, obs[e, t], carry, "stochastic", rng)
            rows.append((a, info))
    stack = lambda k: np.array([i[k] for _, i in rows])
    actions = np.array([a for a, _ in rows])
    # shift the stored log-probs so ratios differ from 1 and both clip branches occur
    logp_old = stack("logp") + np.array([-0.5, -0.1, 0.0, 0.1, 0.3, 0.5])
    adv, ret = rng.standard_normal(6), rng.standard_normal(6)
    obs_flat = obs.reshape(6, 4, 4)

    def f():
        return ppo_losses(agent, obs_flat, actions, stack("old_state"), stack("prev_action"), stack("noise"),
                          logp_old, adv, ret)["total"]
    return [_params_check("ppo.total_loss", f, agent.heads.nodes() + model.params.nodes())]


def run_gradient_suite(seed: int = 0, trials: int = 20) -> list[GradRecord]:
    return (check_ops(trials, seed) + check_layers(seed) + check_dribo_loss(seed) + check_sac(seed)
            + check_ppo(seed))
