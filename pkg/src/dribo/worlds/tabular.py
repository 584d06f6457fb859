"""Small fully enumerable partially observed processes with two views.

At every step t = 1..T the latent state ``state{t}`` and an action-free
distractor bit ``dist{t}`` emit one symbol per view (``obs1_{t}``,
``obs2_{t}``), then an action ``act{t}`` is drawn and the state transitions.
Enumerating all trajectories gives the exact joint distribution that the
information oracle works on.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..joint import JointTable
from ..ndgrad import ContractError, ResourceError

ROW_TOL = 1e-12
COUPLINGS = ("independent", "copy")


def _stochastic(name: str, arr: np.ndarray) -> None:
    if np.any(arr < 0) or np.any(np.abs(arr.sum(axis=-1) - 1.0) > ROW_TOL):
        raise ContractError(f"{name} is not row-stochastic")


@dataclass
class TabularPOMDP:
    p0: np.ndarray  # (S,)
    trans: np.ndarray  # (S, A, S)
    reward: np.ndarray  # (S, A)
    emit1: np.ndarray  # (S, 2, O1): view-1 symbol given (state, distractor)
    emit2: np.ndarray  # (S, 2, O2)
    dist0: np.ndarray  # (2,)
    dist_trans: np.ndarray  # (2, 2)
    horizon: int = 2
    coupling: str = "independent"  # "copy": view 2 repeats the view-1 symbol

    def __post_init__(self):
        for k in ("p0", "trans", "reward", "emit1", "emit2", "dist0", "dist_trans"):
            setattr(self, k, np.asarray(getattr(self, k), dtype=np.float64))
        s, a = self.reward.shape
        if s > 6 or a > 3 or self.n_obs1 > 8 or self.n_obs2 > 8:
            raise ContractError("tabular process exceeds 6 states, 3 actions or 8 symbols")
        if not 1 <= self.horizon <= 4:
            raise ContractError("horizon must be in 1..4")
        if self.coupling not in COUPLINGS:
            raise ContractError(f"coupling must be one of {COUPLINGS}")
        if self.coupling == "copy" and self.n_obs1 != self.n_obs2:
            raise ContractError("copied views need equal alphabets")
        shapes = {"p0": (s,), "trans": (s, a, s), "emit1": (s, 2, self.n_obs1), "emit2": (s, 2, self.n_obs2),
                  "dist0": (2,), "dist_trans": (2, 2)}
        for k, shp in shapes.items():
            if getattr(self, k).shape != shp:
                raise ContractError(f"{k} has shape {getattr(self, k).shape}, expected {shp}")
            _stochastic(k, getattr(self, k))

    @property
    def n_states(self) -> int:
        return self.reward.shape[0]

    @property
    def n_actions(self) -> int:
        return self.reward.shape[1]

    @property
    def n_obs1(self) -> int:
        return self.emit1.shape[-1]

    @property
    def n_obs2(self) -> int:
        return self.emit2.shape[-1]


@dataclass
class Policy:
    """``kind="open"``: table (A,) or (T, A), ignores the state.
    ``kind="state"``: table (S, A) or (T, S, A), reads the current state."""

    table: np.ndarray
    kind: str = "open"

    def rows(self, t: int, states: np.ndarray, m: TabularPOMDP) -> np.ndarray:
        tab = np.asarray(self.table, dtype=np.float64)
        if self.kind == "open":
            row = tab if tab.ndim == 1 else tab[t]
            return np.broadcast_to(row, (len(states), m.n_actions))
        if self.kind == "state":
            tab = tab if tab.ndim == 2 else tab[t]
            return tab[states]
        raise ContractError(f"unknown policy kind {self.kind!r}")

    def validate(self, m: TabularPOMDP) -> None:
        tab = np.asarray(self.table, dtype=np.float64)
        want = {"open": [(m.n_actions,), (m.horizon, m.n_actions)],
                "state": [(m.n_states, m.n_actions), (m.horizon, m.n_states, m.n_actions)]}.get(self.kind)
        if want is None or tab.shape not in want:
            raise ContractError(f"policy table shape {tab.shape} does not fit kind {self.kind!r}")
        _stochastic("policy", tab)


def uniform_policy(m: TabularPOMDP) -> Policy:
    return Policy(np.full(m.n_actions, 1.0 / m.n_actions), "open")


def names_at(t: int) -> dict[str, str]:
    return {"state": f"state{t}", "dist": f"dist{t}", "obs1": f"obs1_{t}", "obs2": f"obs2_{t}",
            "act": f"act{t}"}


def enumerate_trajectories(m: TabularPOMDP, policy: Policy | None = None, cap: int = 1_000_000) -> JointTable:
    """Exact joint over states, distractors, both views and actions for t=1..T."""
    policy = policy or uniform_policy(m)
    policy.validate(m)
    j = JointTable(["state1"], [m.n_states], np.arange(m.n_states)[:, None], m.p0.copy())
    j = _drop_zero(j)
    for t in range(1, m.horizon + 1):
        n = names_at(t)
        if t > 1:
            prev = names_at(t - 1)
            j = j.extend(n["state"], m.n_states, m.trans[j.column(prev["state"]), j.column(prev["act"])])
            j = j.extend(n["dist"], 2, m.dist_trans[j.column(prev["dist"])])
        else:
            j = j.extend(n["dist"], 2, np.broadcast_to(m.dist0, (len(j.probs), 2)))
        s, d = j.column(n["state"]), j.column(n["dist"])
        j = j.extend(n["obs1"], m.n_obs1, m.emit1[s, d])
        if m.coupling == "copy":
            j = j.with_function(n["obs2"], m.n_obs2, lambda v, k=n["obs1"]: v[k])
        else:
            s, d = j.column(n["state"]), j.column(n["dist"])
            j = j.extend(n["obs2"], m.n_obs2, m.emit2[s, d])
        j = j.extend(n["act"], m.n_actions, policy.rows(t - 1, j.column(n["state"]), m))
        if len(j.probs) > cap:
            raise ResourceError(f"trajectory enumeration exceeded {cap} atoms at step {t}")
    if abs(j.total() - 1.0) > 1e-9:
        raise ContractError(f"enumerated probabilities sum to {j.total()}")
    return j


def _drop_zero(j: JointTable) -> JointTable:
    keep = j.probs > 0
    return JointTable(j.names, j.sizes, j.atoms[keep], j.probs[keep])


def state_marginals(m: TabularPOMDP, policy: Policy | None = None) -> np.ndarray:
    """(T, S) state marginals by forward matrix products (no enumeration)."""
    policy = policy or uniform_policy(m)
    states = np.arange(m.n_states)
    p = m.p0.copy()
    out = [p]
    for t in range(1, m.horizon):
        pa = policy.rows(t - 1, states, m)  # (S, A)
        p = np.einsum("s,sa,sat->t", p, pa, m.trans)
        out.append(p)
    return np.array(out)


def optimal_actions(m: TabularPOMDP) -> np.ndarray:
    """Finite-horizon DP on the underlying MDP; ``(T, S)`` table of a*_t(s).
    Ties go to the lowest action index."""
    v = np.zeros(m.n_states)
    table = np.zeros((m.horizon, m.n_states), dtype=np.int64)
    for t in reversed(range(m.horizon)):
        q = m.reward + m.trans @ v
        table[t] = np.argmax(q, axis=1)  # first maximum wins
        v = q.max(axis=1)
    return table


# -- generators ---------------------------------------------------------------


def _dirichlet(rng, shape, alpha=1.0) -> np.ndarray:
    return rng.dirichlet(np.full(shape[-1], alpha), size=shape[:-1])


def random_pomdp(rng: np.random.Generator, n_states: int = 3, n_actions: int = 2, n_obs: int = 4,
                 horizon: int = 2, coupling: str = "independent", factored: bool = False,
                 alpha: float = 1.0) -> TabularPOMDP:
    """Random instance. ``factored=True`` makes view 1 emit ``2*state + dist``
    exactly (so a* is recoverable and the distractor is separable); view 2 is
    then a noisy channel of the same pair."""
    s, a = n_states, n_actions
    trans = _dirichlet(rng, (s, a, s), alpha)
    reward = rng.uniform(0.0, 1.0, size=(s, a))
    if factored:
        n_obs = 2 * s
        emit1 = np.zeros((s, 2, n_obs))
        for i in range(s):
            for d in range(2):
                emit1[i, d, 2 * i + d] = 1.0
        emit2 = emit1.copy() if coupling == "copy" else 0.7 * emit1 + 0.3 * _dirichlet(rng, (s, 2, n_obs), alpha)
    else:
        emit1 = _dirichlet(rng, (s, 2, n_obs), alpha)
        emit2 = emit1.copy() if coupling == "copy" else _dirichlet(rng, (s, 2, n_obs), alpha)
    return TabularPOMDP(
        p0=_dirichlet(rng, (s,), alpha), trans=trans, reward=reward, emit1=emit1, emit2=emit2,
        dist0=np.array([0.5, 0.5]), dist_trans=np.array([[0.8, 0.2], [0.3, 0.7]]),
        horizon=horizon, coupling=coupling,
    )


def coin_chain(horizon: int = 2) -> TabularPOMDP:
    """Two states, each step a fair coin picks the next state; one action."""
    half = np.full(2, 0.5)
    eye = np.eye(2)
    return TabularPOMDP(
        p0=half, trans=np.tile(half, (2, 1, 1)), reward=np.zeros((2, 1)),
        emit1=np.stack([eye, eye], axis=1), emit2=np.stack([eye, eye], axis=1),
        dist0=np.array([1.0, 0.0]), dist_trans=eye, horizon=horizon,
    )
