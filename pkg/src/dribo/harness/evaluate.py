"""Generalization report and embedding export for a saved run."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .. import checkpoint
from ..agents.carry import initial_carry
from ..agents.training import Learner, build_learner, evaluate_returns, run_episode, skl_probe
from ..ndgrad import ContractError
from ..worlds.control import DistractorControl
from .config import RunConfig


def load_learner(path) -> Learner:
    """Rebuild the model and agent from a checkpoint's stored config."""
    config_dict, _ = checkpoint.read(path)
    learner = build_learner(RunConfig.from_dict(config_dict))
    checkpoint.load_into(path, learner.groups())
    return learner


def eval_generalization(path, episodes: int = 8, seed: int = 0) -> dict[str, float]:
    """Mean and std of deterministic returns on the train and test background
    pools, plus the two-view posterior SKL on test-pool observations."""
    if episodes < 1:
        raise ContractError("need at least one evaluation episode")
    learner = load_learner(path)
    rng = np.random.default_rng(seed)
    report = {}
    for mode in ("train", "test"):
        ret = evaluate_returns(learner, mode, episodes, rng)
        report[f"{mode}_return"] = float(ret.mean())
        report[f"{mode}_return_std"] = float(ret.std())
    env = DistractorControl(learner.config.env)
    eps = [run_episode(learner, env, "test", rng, rng, "deterministic")[0] for _ in range(episodes)]
    report["skl_probe"] = skl_probe(learner, eps, rng)
    return report


def embedding_rows(learner: Learner, episodes: int, mode: str, seed: int = 0):
    """Yield ``(episode, step, background_id, reward, s)`` for every step of
    ``episodes`` deterministic episodes; ``s`` is the representation the
    policy acted on at that step."""
    rng = np.random.default_rng(seed)
    env = DistractorControl(learner.config.env)
    for e in range(episodes):
        o = env.reset(mode, rng)
        carry = initial_carry(learner.model)
        step, done = 0, False
        while not done:
            a, carry, _ = learner.act(o, carry, "deterministic", rng)
            s = np.concatenate([carry.state.h.value, carry.state.z.value])
            o, r, done = env.step(a)
            yield e, step, env.background_id, float(r), s
            step += 1


def export_embeddings(path, out_csv, episodes: int = 4, mode: str = "test", seed: int = 0) -> int:
    """Write one CSV row per step with a header line; returns the row count.

    Columns: ``episode,step,background_id,reward,s0,...,s{D-1}``; floats are
    written with ``repr`` so they parse back exactly, e.g.::

        episode,step,background_id,reward,s0,s1
        0,0,10003,0.0019514523251839402,-0.4312,1.2038
    """
    if episodes < 1:
        raise ContractError("need at least one episode")
    learner = load_learner(path)
    dim = learner.model.config.state_dim
    n = 0
    with Path(out_csv).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["episode", "step", "background_id", "reward"] + [f"s{i}" for i in range(dim)])
        for e, t, bg, r, s in embedding_rows(learner, episodes, mode, seed):
            w.writerow([e, t, bg, repr(r)] + [repr(float(v)) for v in s])
            n += 1
    return n
