"""Pendulum swing-up rendered over action-independent moving backgrounds.

The plant is a damped pendulum (angle 0 = upright) driven by a torque in
[-1, 1]. The reward is the upright bonus (1 + cos angle) / 2 summed over
action repeats and depends on the physics only. Backgrounds are drifting
sinusoid gratings plus bouncing blobs keyed by an integer id; training and
test backgrounds come from disjoint id ranges and parameter ranges, and
their dynamics never see the action.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..ndgrad import ContractError

TEST_ID_OFFSET = 10_000
DISCRETE_TORQUES = {2: (-1.0, 1.0), 3: (-1.0, 0.0, 1.0), 4: (-1.0, -1.0 / 3.0, 1.0 / 3.0, 1.0)}


@dataclass(frozen=True)
class ControlConfig:
    size: int = 28
    episode_length: int = 50
    action_repeat: int = 2
    dt: float = 0.05
    gravity: float = 1.0
    torque: float = 3.0
    damping: float = 0.3
    max_speed: float = 8.0
    init_angle_spread: float = 0.4
    discrete_actions: int = 0
    background: str = "pool"  # pool | fixed | none
    pool_size: int = 8
    background_strength: float = 0.6

    def __post_init__(self):
        if self.background not in ("pool", "fixed", "none"):
            raise ContractError(f"unknown background mode {self.background!r}")
        if self.discrete_actions and self.discrete_actions not in DISCRETE_TORQUES:
            raise ContractError("discrete_actions must be 0, 2, 3 or 4")
        if self.size < 4 or self.episode_length < 1 or self.action_repeat < 1:
            raise ContractError("bad control config")

    @property
    def action_dim(self) -> int:
        return self.discrete_actions or 1


class Background:
    """Deterministic distractor layer; ``frame(k)`` depends on (id, k) only."""

    def __init__(self, bg_id: int, size: int, strength: float):
        self.id = bg_id
        self.size = size
        self.strength = strength
        test = bg_id >= TEST_ID_OFFSET
        rng = np.random.default_rng(1_000_003 + bg_id)
        lo, hi = (0.6, 1.6) if not test else (1.2, 2.6)
        n_gratings = 2 if not test else 3
        self.gratings = [
            (rng.uniform(lo, hi) * rng.choice([-1, 1]), rng.uniform(lo, hi) * rng.choice([-1, 1]),
             rng.uniform(0.1, 0.4), rng.uniform(0, 2 * np.pi), rng.uniform(0.3, 1.0))
            for _ in range(n_gratings)
        ]
        n_blobs = 2 if not test else 4
        self.blobs = [
            (rng.uniform(0, 1, 2), rng.uniform(-0.05, 0.05, 2), rng.uniform(0.08, 0.2))
            for _ in range(n_blobs)
        ]
        yy, xx = np.mgrid[0:size, 0:size]
        self._x = (xx + 0.5) / size
        self._y = (yy + 0.5) / size

    def frame(self, k: int) -> np.ndarray:
        img = np.zeros((self.size, self.size))
        for fx, fy, speed, phase, amp in self.gratings:
            img += amp * (0.5 + 0.5 * np.sin(2 * np.pi * (fx * self._x + fy * self._y) + phase + speed * k))
        for pos, vel, rad in self.blobs:
            p = np.abs(((pos + vel * k) % 2.0) - 1.0)  # bounce inside the unit square
            d2 = (self._x - p[0]) ** 2 + (self._y - p[1]) ** 2
            img += np.exp(-d2 / (2 * rad * rad))
        img /= len(self.gratings) + len(self.blobs)
        return self.strength * np.clip(img, 0.0, 1.0)


def render_pendulum(angle: float, size: int) -> np.ndarray:
    c = size / 2.0
    length = 0.38 * size
    width = max(0.08 * size, 0.9)
    tip = np.array([c + length * np.sin(angle), c - length * np.cos(angle)])
    base = np.array([c, c])
    yy, xx = np.mgrid[0:size, 0:size]
    pts = np.stack([xx + 0.5, yy + 0.5], axis=-1)
    seg = tip - base
    t = np.clip(((pts - base) @ seg) / (seg @ seg), 0.0, 1.0)
    d = np.linalg.norm(pts - (base + t[..., None] * seg), axis=-1)
    return np.clip(1.0 - d / width, 0.0, 1.0)


def compose(rod: np.ndarray, bg: np.ndarray | None) -> np.ndarray:
    return rod if bg is None else np.maximum(rod, bg)


class DistractorControl:
    def __init__(self, config: ControlConfig | None = None):
        self.config = config or ControlConfig()
        self.angle = np.pi
        self.velocity = 0.0
        self.background: Background | None = None
        self.bg_step = 0
        self.t = 0
        self.done = True

    @property
    def background_id(self) -> int:
        return -1 if self.background is None else self.background.id

    def pool(self, mode: str) -> list[int]:
        c = self.config
        if mode not in ("train", "test"):
            raise ContractError(f"mode must be train or test, got {mode!r}")
        base = 0 if mode == "train" else TEST_ID_OFFSET
        n = 1 if c.background == "fixed" else c.pool_size
        return list(range(base, base + n))

    def reset(self, mode: str = "train", rng: np.random.Generator | None = None) -> np.ndarray:
        rng = rng if rng is not None else np.random.default_rng()
        c = self.config
        ids = self.pool(mode)
        self.angle = float(np.pi + rng.uniform(-c.init_angle_spread, c.init_angle_spread))
        self.velocity = 0.0
        self.t = 0
        self.done = False
        if c.background == "none":
            self.background = None
            self.bg_step = 0
        else:
            self.background = Background(int(ids[int(rng.integers(len(ids)))]), c.size, c.background_strength)
            self.bg_step = int(rng.integers(0, 1000))
        return self.render()

    def set_physics(self, angle: float, velocity: float) -> None:
        self.angle, self.velocity = float(angle), float(velocity)

    def render(self) -> np.ndarray:
        bg = None if self.background is None else self.background.frame(self.bg_step)
        return compose(render_pendulum(self.angle, self.config.size), bg)

    def torque_of(self, action) -> float:
        c = self.config
        if c.discrete_actions:
            a = np.asarray(action)
            idx = int(np.argmax(a)) if a.ndim else int(a)
            if not 0 <= idx < c.discrete_actions:
                raise ContractError(f"action index {idx} out of range")
            return DISCRETE_TORQUES[c.discrete_actions][idx]
        u = float(np.asarray(action).reshape(-1)[0])
        if not -1.0 - 1e-9 <= u <= 1.0 + 1e-9:
            raise ContractError(f"torque {u} outside [-1, 1]")
        return float(np.clip(u, -1.0, 1.0))

    def physics_step(self, u: float) -> float:
        c = self.config
        acc = c.gravity * np.sin(self.angle) + c.torque * u - c.damping * self.velocity
        self.velocity = float(np.clip(self.velocity + c.dt * acc, -c.max_speed, c.max_speed))
        self.angle = float((self.angle + c.dt * self.velocity + np.pi) % (2 * np.pi) - np.pi)
        return 0.5 * (1.0 + np.cos(self.angle))

    def step(self, action):
        if self.done:
            raise ContractError("step() called on a finished episode; call reset()")
        u = self.torque_of(action)
        reward = 0.0
        for _ in range(self.config.action_repeat):
            reward += self.physics_step(u)
            self.bg_step += 1
        self.t += 1
        self.done = self.t >= self.config.episode_length
        return self.render(), reward, self.done

    @property
    def env_steps_per_episode(self) -> int:
        return self.config.episode_length * self.config.action_repeat
