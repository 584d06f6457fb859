"""Episode loop that trains an agent and the encoder together.

Each episode is collected, stored, and followed by K gradient steps. A step
first updates the agent on the batch, then updates the encoder and the MI
critic with the multi-view loss on a fresh pair of augmented views of the
same batch, with beta from the episode schedule.

The output directory receives ``config.ini``, ``metrics.tsv`` (one
``step<TAB>key<TAB>value`` record per line, ``step`` counting environment
steps and values written with ``repr``) and ``checkpoint.bin``, e.g.::

    100	train/return	4.318705244916797
    100	sac/critic_loss	0.06190436016413498
"""

from __future__ import annotations

import os
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import checkpoint
from .. import ndgrad as G
from ..batch import SequenceBatch
from ..harness.config import RunConfig
from ..loss import beta_at, dribo_loss, skl_sequence
from ..mi import BilinearCritic
from ..nn import Adam, ParamRegistry
from ..rssm import RSSM
from ..views import center_crop, make_two_views
from ..worlds.control import DistractorControl
from ..worlds.recording import Episode
from . import ppo, sac
from .carry import initial_carry
from .replay import SequenceReplay

STREAMS = ("env", "act", "replay", "update", "augment", "noise", "eval")


class TrainingAborted(RuntimeError):
    """Raised by the NaN guard; ``checkpoint`` is the last good one on disk."""

    def __init__(self, message: str, checkpoint_path: Path | None):
        super().__init__(message)
        self.checkpoint = checkpoint_path


@dataclass
class Learner:
    config: RunConfig
    model: RSSM
    critic: BilinearCritic
    agent: object  # SacAgent | PpoAgent

    @property
    def kind(self) -> str:
        return self.config.run.agent

    def groups(self) -> dict[str, ParamRegistry]:
        return {"encoder": self.model.params, "mi_critic": self.critic.params, **self.agent.registries()}

    def crop(self, obs: np.ndarray) -> np.ndarray:
        return center_crop(obs, self.config.augment.target_size)

    def act(self, o: np.ndarray, carry, mode: str, rng: np.random.Generator):
        """Env action, next carry and the PPO bookkeeping (empty for SAC)."""
        if self.kind == "sac":
            a, carry = sac.act(self.agent, self.crop(o), carry, mode, rng)
            return a, carry, {}
        a, carry, info = ppo.act(self.agent, self.crop(o), carry, mode, rng)
        return a, carry, info

    def encode_action(self, a) -> np.ndarray:
        """Action as stored in episodes: (A,) torque or one-hot."""
        if self.kind == "sac":
            return np.asarray(a, dtype=np.float64).reshape(-1)
        return self.agent.one_hot(a).astype(np.float64)


def build_learner(config: RunConfig) -> Learner:
    seed = config.run.seed
    model = RSSM(config.rssm_config(), seed=seed)
    critic = BilinearCritic(model.config.state_dim, seed=seed + 1, init_scale=config.loss.critic_init_scale)
    if config.run.agent == "sac":
        agent = sac.SacAgent(model, config.sac, seed=seed + 2)
    else:
        agent = ppo.PpoAgent(model, config.ppo, seed=seed + 2)
    return Learner(config, model, critic, agent)


def rng_streams(seed: int) -> dict[str, np.random.Generator]:
    children = np.random.SeedSequence(seed).spawn(len(STREAMS))
    return {name: np.random.default_rng(s) for name, s in zip(STREAMS, children)}


# -- acting -----------------------------------------------------------------------


def run_episode(learner: Learner, env: DistractorControl, mode: str, rng_env: np.random.Generator,
                rng_act: np.random.Generator, act_mode: str = "stochastic", random_policy: bool = False):
    """One episode; returns the Episode and a list of per-step PPO infos."""
    o = env.reset(mode, rng_env)
    carry = initial_carry(learner.model)
    frames, actions, rewards, infos = [o], [], [], []
    done = False
    while not done:
        if random_policy:
            if learner.kind == "sac":
                a = rng_act.uniform(-1.0, 1.0, size=learner.model.config.action_dim)
            else:
                a = int(rng_act.integers(learner.agent.n_actions))
            info = {}
        else:
            a, carry, info = learner.act(o, carry, act_mode, rng_act)
        o, r, done = env.step(a)
        frames.append(o)
        actions.append(learner.encode_action(a))
        rewards.append(r)
        infos.append(info)
    ep = Episode(np.stack(frames), np.stack(actions), np.array(rewards, dtype=np.float64), env.background_id)
    return ep, infos


def evaluate_returns(learner: Learner, mode: str, episodes: int, rng: np.random.Generator,
                     random_policy: bool = False) -> np.ndarray:
    """Deterministic-policy returns on the train or test background pool."""
    env = DistractorControl(learner.config.env)
    out = []
    for _ in range(episodes):
        ep, _ = run_episode(learner, env, mode, rng, rng, act_mode="deterministic", random_policy=random_policy)
        out.append(ep.total_reward)
    return np.array(out)


def skl_probe(learner: Learner, episodes: list[Episode], rng: np.random.Generator) -> float:
    """Mean symmetrized KL between the posteriors of two augmented views of
    the same observation sequences (posterior means, no sampling noise)."""
    obs = np.stack([ep.observations[:-1] for ep in episodes])
    acts = np.stack([ep.actions for ep in episodes])
    batch = SequenceBatch(obs, acts, np.stack([ep.rewards for ep in episodes]))
    v1, v2 = make_two_views(batch, learner.config.augmentation_spec(), rng)
    model = learner.model
    p1 = [s.posterior for s in model.encode_sequence(v1.observations, acts)]
    p2 = [s.posterior for s in model.encode_sequence(v2.observations, acts)]
    return float(np.mean(skl_sequence(p1, p2).value))


# -- training ---------------------------------------------------------------------


@dataclass
class RunResult:
    output_dir: Path
    metrics: list = field(default_factory=list)  # (step, key, value)
    checkpoint: Path | None = None

    def series(self, key: str) -> tuple[np.ndarray, np.ndarray]:
        rows = [(s, v) for s, k, v in self.metrics if k == key]
        if not rows:
            return np.zeros(0, dtype=np.int64), np.zeros(0)
        s, v = zip(*rows)
        return np.array(s), np.array(v)

    def last(self, key: str) -> float:
        _, v = self.series(key)
        if not len(v):
            raise KeyError(key)
        return float(v[-1])


class _Log:
    def __init__(self, path: Path, result: RunResult):
        self.path = path
        self.result = result
        path.write_text("")

    def write(self, step: int, metrics: dict[str, float]) -> None:
        lines = []
        for key in sorted(metrics):
            v = float(metrics[key])
            self.result.metrics.append((int(step), key, v))
            lines.append(f"{int(step)}\t{key}\t{v!r}\n")
        with self.path.open("a") as fh:
            fh.writelines(lines)


def _save(learner: Learner, path: Path) -> None:
    tmp = path.with_suffix(".tmp")
    checkpoint.save(tmp, learner.groups(), learner.config.to_dict())
    os.replace(tmp, path)


class _Trainer:
    def __init__(self, config: RunConfig, output_dir=None):
        self.config = c = config
        self.out = Path(output_dir if output_dir is not None else c.run.output_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        (self.out / "config.ini").write_text(c.to_text())
        self.result = RunResult(self.out)
        self.log = _Log(self.out / "metrics.tsv", self.result)
        self.ckpt = self.out / "checkpoint.bin"
        self.rng = rng_streams(c.run.seed)
        self.learner = build_learner(c)
        lr = self.learner
        self.dribo_opt = Adam(lr.model.params.nodes() + lr.critic.params.nodes(), lr=c.run.encoder_lr)
        self.spec = c.augmentation_spec()
        self.schedule = c.beta_schedule()
        self.env = DistractorControl(c.env)
        self.env_steps = 0
        _save(lr, self.ckpt)
        self.result.checkpoint = self.ckpt

    def beta(self, episode: int) -> float:
        return self.config.beta.scale * beta_at(self.schedule, episode)

    def dribo_step(self, batch: SequenceBatch, beta: float) -> dict[str, float]:
        lr, lc = self.learner, self.config.loss
        v1, v2 = make_two_views(batch, self.spec, self.rng["augment"])
        out = dribo_loss(v1, v2, lr.model, lr.critic, beta, noise=self.rng["noise"],
                         shared_noise=lc.shared_noise, block_state_grad=lc.block_state_grad)
        if not np.isfinite(out.total.item()):
            raise G.DomainError(f"non-finite representation loss {out.total.item()}")
        lr.model.params.zero_grads()
        lr.critic.params.zero_grads()
        G.backward(out.total)
        self.dribo_opt.step()
        lr.model.params.zero_grads()
        lr.critic.params.zero_grads()
        return out.metrics()

    def guarded(self, fn, *args):
        try:
            return fn(*args)
        except G.DomainError as exc:
            checkpoint.load_into(self.ckpt, self.learner.groups())
            self.log.write(self.env_steps, {"train/aborted": 1.0})
            raise TrainingAborted(f"aborted at step {self.env_steps}: {exc}; restored {self.ckpt}",
                                  self.ckpt) from exc

    def end_of_episode(self, episode: int, metrics: dict[str, float]) -> None:
        r = self.config.run
        done = episode + 1
        if r.eval_every and done % r.eval_every == 0 and done < r.episodes:
            metrics.update(self.evaluate(final=False))
        if r.checkpoint_every and done % r.checkpoint_every == 0:
            _save(self.learner, self.ckpt)
        self.log.write(self.env_steps, metrics)

    def evaluate(self, final: bool) -> dict[str, float]:
        r = self.config.run
        rng = self.rng["eval"]
        out = {}
        for mode in ("train", "test"):
            ret = evaluate_returns(self.learner, mode, r.eval_episodes, rng)
            out[f"eval/return_{mode}"] = float(ret.mean())
            out[f"eval/return_{mode}_std"] = float(ret.std())
        if final:
            env = DistractorControl(self.config.env)
            eps = [run_episode(self.learner, env, "test", rng, rng, "deterministic")[0]
                   for _ in range(r.eval_episodes)]
            out["eval/skl_probe"] = skl_probe(self.learner, eps, rng)
        return out

    def finish(self) -> RunResult:
        self.log.write(self.env_steps, self.evaluate(final=True))
        _save(self.learner, self.ckpt)
        return self.result

    # -- SAC ----------------------------------------------------------------

    def run_sac(self) -> RunResult:
        c, lr = self.config, self.learner
        replay = SequenceReplay(c.run.seq_len, c.run.replay_capacity)
        for episode in range(c.run.episodes):
            ep, _ = run_episode(lr, self.env, "train", self.rng["env"], self.rng["act"],
                                random_policy=episode < c.run.init_episodes)
            replay.push(ep)
            self.env_steps += ep.steps * c.env.action_repeat
            beta = self.beta(episode)
            acc = defaultdict(list)
            for _ in range(c.run.updates_per_episode):
                batch = replay.sample(c.run.batch_size, self.rng["replay"])
                cropped = batch.replace(observations=lr.crop(batch.observations))
                for k, v in self.guarded(sac.sac_update, lr.agent, cropped, self.rng["update"]).items():
                    acc[k].append(v)
                if c.run.dribo:
                    for k, v in self.guarded(self.dribo_step, batch, beta).items():
                        acc[k].append(v)
            metrics = {k: float(np.mean(v)) for k, v in acc.items()}
            metrics.update({"train/return": ep.total_reward, "train/episode": float(episode), "train/beta": beta})
            self.end_of_episode(episode, metrics)
        return self.finish()

    # -- PPO ----------------------------------------------------------------

    def run_ppo(self) -> RunResult:
        c, lr = self.config, self.learner
        episode = 0
        while episode < c.run.episodes:
            n_eps = min(c.run.rollout_episodes, c.run.episodes - episode)
            eps, infos = [], []
            for _ in range(n_eps):
                ep, info = run_episode(lr, self.env, "train", self.rng["env"], self.rng["act"])
                eps.append(ep)
                infos.append(info)
                self.env_steps += ep.steps * c.env.action_repeat
            rollout = ppo.Rollout(
                observations=np.stack([lr.crop(ep.observations[:-1]) for ep in eps]),
                actions=np.stack([np.argmax(ep.actions, axis=-1) for ep in eps]),
                rewards=np.stack([ep.rewards for ep in eps]),
                old_states=np.array([[i["old_state"] for i in inf] for inf in infos]),
                prev_actions=np.array([[i["prev_action"] for i in inf] for inf in infos]),
                noise=np.array([[i["noise"] for i in inf] for inf in infos]),
                logp=np.array([[i["logp"] for i in inf] for inf in infos]),
                values=np.array([[i["value"] for i in inf] for inf in infos]),
            )
            metrics = self.guarded(ppo.ppo_update, lr.agent, rollout, self.rng["update"])
            beta = self.beta(episode)
            if c.run.dribo and c.run.updates_per_episode:
                window = SequenceReplay(c.run.seq_len, capacity=len(eps))
                for ep in eps:
                    window.push(ep)
                acc = defaultdict(list)
                for _ in range(c.run.updates_per_episode):
                    batch = window.sample(c.run.batch_size, self.rng["replay"])
                    for k, v in self.guarded(self.dribo_step, batch, beta).items():
                        acc[k].append(v)
                metrics.update({k: float(np.mean(v)) for k, v in acc.items()})
            metrics.update({"train/return": float(np.mean([ep.total_reward for ep in eps])),
                            "train/episode": float(episode), "train/beta": beta})
            episode += n_eps
            self.end_of_episode(episode - 1, metrics)
        return self.finish()


def train(config: RunConfig, output_dir=None) -> RunResult:
    """Run a full training job; artifacts go to ``output_dir`` (default: the
    config's ``[run] output_dir``)."""
    t = _Trainer(config, output_dir)
    return t.run_sac() if config.run.agent == "sac" else t.run_ppo()


def read_metrics(path) -> list[tuple[int, str, float]]:
    rows = []
    for line in Path(path).read_text().splitlines():
        if line:
            s, k, v = line.split("\t")
            rows.append((int(s), k, float(v)))
    return rows
