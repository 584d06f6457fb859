"""Desk-scale learning experiments: SAC and PPO smoke tests and the
with/without-SKL ablation on disjoint train/test background pools."""

from __future__ import annotations

import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import spearmanr

from ..agents.training import build_learner, evaluate_returns, train
from .config import RunConfig

SMALL_ENV = {"size": 8, "background": "fixed"}
SMALL_AUGMENT = {"kinds": ("crop",), "target_size": 7}


def sac_small_config(seed: int = 0, episodes: int = 80) -> RunConfig:
    """8x8 render, one fixed background, continuous torque."""
    return RunConfig.from_dict({
        "run": {"agent": "sac", "seed": seed, "episodes": episodes, "updates_per_episode": 25,
                "batch_size": 16, "seq_len": 8, "eval_episodes": 10, "checkpoint_every": 10},
        "env": dict(SMALL_ENV), "augment": dict(SMALL_AUGMENT),
    })


def ppo_small_config(seed: int = 0, episodes: int = 50) -> RunConfig:
    """Same small render with four discrete torques, one episode per rollout."""
    return RunConfig.from_dict({
        "run": {"agent": "ppo", "seed": seed, "episodes": episodes, "updates_per_episode": 4,
                "batch_size": 8, "seq_len": 16, "eval_episodes": 4, "checkpoint_every": 10},
        "env": dict(SMALL_ENV, discrete_actions=4), "augment": dict(SMALL_AUGMENT),
        "ppo": {"lr": 1e-3},
    })


def ablation_config(seed: int, beta_scale: float, episodes: int = 150) -> RunConfig:
    """Pool backgrounds (8 train ids, 8 disjoint test ids), 20x20 render
    randomly cropped to 16x16 for the two views."""
    return RunConfig.from_dict({
        "run": {"agent": "sac", "seed": seed, "episodes": episodes, "updates_per_episode": 20,
                "batch_size": 16, "seq_len": 8, "eval_episodes": 8, "checkpoint_every": 10},
        "env": {"size": 20, "background": "pool", "pool_size": 8},
        "augment": {"kinds": ("crop",), "target_size": 16},
        "beta": {"scale": beta_scale},
    })


def random_baseline(config: RunConfig, episodes: int = 50, seed: int = 12345) -> tuple[float, float]:
    """Mean and std of uniform-random-policy returns on the train pool."""
    ret = evaluate_returns(build_learner(config), "train", episodes, np.random.default_rng(seed),
                           random_policy=True)
    return float(ret.mean()), float(ret.std())


def _workdir(output_dir, name: str) -> Path:
    base = Path(output_dir) if output_dir is not None else Path(tempfile.mkdtemp(prefix="dribo-"))
    return base / name


@dataclass
class SmokeResult:
    passed: bool
    summary: dict = field(default_factory=dict)

    def line(self, name: str) -> str:
        more = " ".join(f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}" for k, v in self.summary.items())
        return f"{name} {more} {'PASS' if self.passed else 'FAIL'}"


def sac_learning_smoke(seed: int = 0, episodes: int = 80, output_dir=None) -> SmokeResult:
    """Final deterministic return over 10 evaluation episodes against the
    random policy's mean + 3 std, within 30k environment steps."""
    cfg = sac_small_config(seed, episodes)
    rand_mean, rand_std = random_baseline(cfg)
    t0 = time.perf_counter()
    res = train(cfg, _workdir(output_dir, f"sac-small-{seed}"))
    steps = int(res.series("eval/return_train")[0][-1])
    ret = res.last("eval/return_train")
    threshold = rand_mean + 3.0 * rand_std
    return SmokeResult(bool(ret > threshold and steps <= 30_000), {
        "return": ret, "random_mean": rand_mean, "random_std": rand_std, "threshold": threshold,
        "env_steps": steps, "seconds": time.perf_counter() - t0})


def ppo_learning_smoke(seed: int = 0, episodes: int = 50, output_dir=None) -> SmokeResult:
    """Spearman correlation of training return with episode index."""
    cfg = ppo_small_config(seed, episodes)
    t0 = time.perf_counter()
    res = train(cfg, _workdir(output_dir, f"ppo-small-{seed}"))
    ep, ret = res.series("train/episode")[1], res.series("train/return")[1]
    rho = float(spearmanr(ep, ret)[0])
    return SmokeResult(bool(rho > 0.5 and len(ret) == episodes), {
        "spearman": rho, "episodes": len(ret), "first10": float(ret[:10].mean()),
        "last10": float(ret[-10:].mean()), "seconds": time.perf_counter() - t0})


def ppo_learning_seeds(seeds=(0, 1, 2, 3, 4), required: int = 4, episodes: int = 50,
                       output_dir=None) -> tuple[bool, list[SmokeResult]]:
    """Single-run rank correlation over 50 noisy episodes varies a lot
    between seeds, so the criterion is judged on several of them."""
    results = [ppo_learning_smoke(s, episodes, output_dir) for s in seeds]
    return sum(r.passed for r in results) >= required, results


@dataclass
class AblationSeed:
    seed: int
    skl_dribo: float
    skl_ablation: float
    test_dribo: float
    test_ablation: float
    train_dribo: float
    train_ablation: float
    seconds: float

    @property
    def skl_lower(self) -> bool:
        return self.skl_dribo < self.skl_ablation

    @property
    def test_not_worse(self) -> bool:
        return self.test_dribo >= self.test_ablation

    def line(self) -> str:
        return (f"ablation seed={self.seed} skl dribo={self.skl_dribo:.6g} no-skl={self.skl_ablation:.6g} "
                f"test_return dribo={self.test_dribo:.6g} no-skl={self.test_ablation:.6g} "
                f"train_return dribo={self.train_dribo:.6g} no-skl={self.train_ablation:.6g} "
                f"cpu_s={self.seconds:.0f}")


def ablation_seed(seed: int, beta_scale: float = 1.0, episodes: int = 150, output_dir=None) -> AblationSeed:
    """One seed of both arms; the arms share every seed and differ only in beta."""
    t0 = time.process_time()
    out = {}
    for arm, scale in (("dribo", beta_scale), ("ablation", 0.0)):
        res = train(ablation_config(seed, scale, episodes), _workdir(output_dir, f"ablation-{arm}-{seed}"))
        out[arm] = (res.last("eval/skl_probe"), res.last("eval/return_test"), res.last("eval/return_train"))
    return AblationSeed(seed, out["dribo"][0], out["ablation"][0], out["dribo"][1], out["ablation"][1],
                        out["dribo"][2], out["ablation"][2], time.process_time() - t0)


def run_ablation(seeds=(0, 1, 2, 3, 4), beta_scale: float = 1.0, episodes: int = 150,
                 output_dir=None) -> list[AblationSeed]:
    return [ablation_seed(s, beta_scale, episodes, output_dir) for s in seeds]
