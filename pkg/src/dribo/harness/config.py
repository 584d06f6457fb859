"""Run configuration read from a ``key = value`` file with section headers.

Example (every key optional; unknown sections or keys are rejected)::

    [run]
    agent = sac
    seed = 3
    episodes = 40

    [env]
    size = 20
    background = pool

    [augment]
    kinds = crop, intensity
    target_size = 16

    [beta]
    scale = 0

Values are coerced to the type of the field's default; ``none`` clears an
optional float, tuples are comma separated.
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from ..agents.ppo import PpoConfig
from ..agents.sac import SacConfig
from ..loss import BetaSchedule
from ..ndgrad import ContractError
from ..rssm import RSSMConfig
from ..views import AugmentationSpec
from ..worlds.control import ControlConfig


class ConfigError(ContractError):
    pass


@dataclass(frozen=True)
class RunSection:
    agent: str = "sac"  # sac | ppo
    seed: int = 0
    episodes: int = 40
    updates_per_episode: int = 20
    batch_size: int = 8
    seq_len: int = 16
    init_episodes: int = 2  # SAC: episodes collected with uniform random actions
    replay_capacity: int = 10_000  # episodes
    rollout_episodes: int = 1  # PPO: episodes per rollout
    eval_every: int = 0  # episodes between evaluations; 0 evaluates only at the end
    eval_episodes: int = 8
    checkpoint_every: int = 1
    encoder_lr: float = 1e-3
    dribo: bool = True  # False skips the representation loss entirely
    output_dir: str = "runs/default"


@dataclass(frozen=True)
class ModelSection:
    deter: int = 32
    stoch: int = 8
    embed: int = 32
    embed_hidden: int = 64
    hidden: int = 64
    action_embed: int = 4  # discrete actions only: width of the embedded one-hot
    action_hidden: int = 64


@dataclass(frozen=True)
class AugmentSection:
    kinds: tuple = ("crop",)
    target_size: int = 24
    flip_axis: int = 1
    cutout_max: int = 8
    intensity_low: float = 0.8
    intensity_high: float = 1.2
    gray_prob: float = 0.3
    flip_prob: float = 0.5
    per_frame: bool = False


@dataclass(frozen=True)
class BetaSection:
    beta_start: float = 1e-4
    beta_end: float = 1e-3
    start_episode: int = 10
    end_episode: int = 60
    scale: float = 1.0  # multiplies the schedule; 0 is the "no SKL term" ablation


@dataclass(frozen=True)
class LossSection:
    shared_noise: bool = False
    block_state_grad: bool = False
    critic_init_scale: float = 0.1


SECTIONS = {
    "run": RunSection, "env": ControlConfig, "model": ModelSection, "augment": AugmentSection,
    "beta": BetaSection, "loss": LossSection, "sac": SacConfig, "ppo": PpoConfig,
}


def _coerce(name: str, default, text: str):
    text = text.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float) or default is None:
            return None if text.lower() == "none" else float(text)
        if isinstance(default, tuple):
            return tuple(p.strip() for p in text.split(",") if p.strip())
        return text
    except ValueError as exc:
        raise ConfigError(f"{name}: cannot parse {text!r}") from exc


def _format(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ", ".join(str(v) for v in value)
    return str(value)


@dataclass(frozen=True)
class RunConfig:
    run: RunSection = field(default_factory=RunSection)
    env: ControlConfig = field(default_factory=ControlConfig)
    model: ModelSection = field(default_factory=ModelSection)
    augment: AugmentSection = field(default_factory=AugmentSection)
    beta: BetaSection = field(default_factory=BetaSection)
    loss: LossSection = field(default_factory=LossSection)
    sac: SacConfig = field(default_factory=SacConfig)
    ppo: PpoConfig = field(default_factory=PpoConfig)

    def __post_init__(self):
        self.validate()

    # -- construction -------------------------------------------------------

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        parts = {}
        for sec, values in data.items():
            if sec not in SECTIONS:
                raise ConfigError(f"unknown section [{sec}]")
            known = {f.name: f for f in dataclasses.fields(SECTIONS[sec])}
            kw = {}
            for key, value in values.items():
                if key not in known:
                    raise ConfigError(f"unknown key {key!r} in [{sec}]")
                default = known[key].default
                if isinstance(value, str) and not isinstance(default, str):
                    value = _coerce(f"[{sec}] {key}", default, value)
                elif isinstance(default, tuple) and isinstance(value, list):
                    value = tuple(value)
                elif isinstance(default, float) and isinstance(value, int) and not isinstance(value, bool):
                    value = float(value)
                kw[key] = value
            try:
                parts[sec] = SECTIONS[sec](**kw)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"[{sec}]: {exc}") from exc
        return cls(**parts)

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        parser = configparser.ConfigParser(interpolation=None, default_section="__none__")
        try:
            parser.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"malformed config: {exc}") from exc
        return cls.from_dict({s: dict(parser[s]) for s in parser.sections()})

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_text(text)

    def replace(self, **sections) -> "RunConfig":
        """``cfg.replace(run={"seed": 2})`` returns a copy with updated keys."""
        data = self.to_dict()
        for sec, values in sections.items():
            if sec not in SECTIONS:
                raise ConfigError(f"unknown section [{sec}]")
            data[sec].update(values)
        return RunConfig.from_dict(data)

    def to_dict(self) -> dict:
        out = {}
        for sec in SECTIONS:
            d = dataclasses.asdict(getattr(self, sec))
            out[sec] = {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}
        return out

    def to_text(self) -> str:
        lines = []
        for sec in SECTIONS:
            lines.append(f"[{sec}]")
            for f in dataclasses.fields(SECTIONS[sec]):
                lines.append(f"{f.name} = {_format(getattr(getattr(self, sec), f.name))}")
            lines.append("")
        return "\n".join(lines)

    # -- validation ---------------------------------------------------------

    def validate(self) -> None:
        r, e = self.run, self.env
        if r.agent not in ("sac", "ppo"):
            raise ConfigError(f"agent must be sac or ppo, got {r.agent!r}")
        if r.agent == "ppo" and not e.discrete_actions:
            raise ConfigError("ppo needs [env] discrete_actions > 0")
        if r.agent == "sac" and e.discrete_actions:
            raise ConfigError("sac needs continuous actions ([env] discrete_actions = 0)")
        for k in ("episodes", "batch_size", "seq_len", "replay_capacity", "rollout_episodes", "eval_episodes"):
            if getattr(r, k) < 1:
                raise ConfigError(f"[run] {k} must be positive")
        for k in ("updates_per_episode", "init_episodes", "eval_every", "checkpoint_every"):
            if getattr(r, k) < 0:
                raise ConfigError(f"[run] {k} must be non-negative")
        if r.encoder_lr <= 0:
            raise ConfigError("[run] encoder_lr must be positive")
        if r.seq_len > e.episode_length:
            raise ConfigError("[run] seq_len exceeds the episode length")
        if r.agent == "sac" and r.seq_len < 2:
            raise ConfigError("[run] seq_len must be at least 2 for sac")
        if self.beta.scale < 0:
            raise ConfigError("[beta] scale must be non-negative")
        for sec in ("model", "loss"):
            for f in dataclasses.fields(SECTIONS[sec]):
                v = getattr(getattr(self, sec), f.name)
                if isinstance(v, (int, float)) and not isinstance(v, bool) and v <= 0:
                    raise ConfigError(f"[{sec}] {f.name} must be positive")
        if self.augment.target_size > e.size:
            raise ConfigError("[augment] target_size exceeds [env] size")
        for name in ("sac", "ppo"):
            c = getattr(self, name)
            if any(v <= 0 for k, v in dataclasses.asdict(c).items()
                   if k.endswith("lr") or k in ("hidden", "epochs", "minibatches", "target_update_freq")):
                raise ConfigError(f"[{name}] rates and sizes must be positive")
        # building the derived objects runs their own checks
        try:
            self.augmentation_spec()
            self.beta_schedule()
        except ContractError as exc:
            raise ConfigError(str(exc)) from exc

    # -- derived objects ----------------------------------------------------

    def augmentation_spec(self) -> AugmentationSpec:
        a = self.augment
        return AugmentationSpec(
            kinds=a.kinds, source_size=self.env.size, target_size=a.target_size, flip_axis=a.flip_axis,
            cutout_max=a.cutout_max, intensity_range=(a.intensity_low, a.intensity_high),
            gray_prob=a.gray_prob, flip_prob=a.flip_prob, per_frame=a.per_frame)

    def beta_schedule(self) -> BetaSchedule:
        b = self.beta
        return BetaSchedule(b.beta_start, b.beta_end, b.start_episode, b.end_episode)

    def rssm_config(self) -> RSSMConfig:
        m, e = self.model, self.env
        k = e.discrete_actions
        return RSSMConfig(
            obs_shape=(self.augment.target_size,) * 2, action_dim=m.action_embed if k else 1,
            discrete_actions=k, deter=m.deter, stoch=m.stoch, embed=m.embed, embed_hidden=m.embed_hidden,
            hidden=m.hidden, action_hidden=m.action_hidden)


def paper_scale(agent: str = "sac") -> RunConfig:
    """Sizes and rates from the published hyperparameter tables.

    Far beyond a desk budget on a numpy engine; provided for reference runs.
    """
    model = {"deter": 200, "stoch": 30, "embed": 1024, "embed_hidden": 1024, "hidden": 200,
             "action_embed": 4, "action_hidden": 64}
    if agent == "sac":
        return RunConfig.from_dict({
            "run": {"agent": "sac", "episodes": 880, "batch_size": 8, "seq_len": 32, "init_episodes": 2,
                    "replay_capacity": 2000, "eval_episodes": 8, "encoder_lr": 1e-5,
                    "updates_per_episode": 250},
            "env": {"size": 100, "episode_length": 500, "action_repeat": 2},
            "augment": {"kinds": ("crop",), "target_size": 84},
            "model": model,
            "beta": {"beta_start": 1e-4, "beta_end": 1e-3, "start_episode": 10, "end_episode": 60},
            "sac": {"hidden": 1024, "critic_lr": 1e-5, "actor_lr": 1e-5, "encoder_lr": 1e-5, "alpha_lr": 1e-4},
        })
    if agent == "ppo":
        return RunConfig.from_dict({
            "run": {"agent": "ppo", "episodes": 100_000, "batch_size": 8, "seq_len": 256, "rollout_episodes": 64,
                    "eval_episodes": 10, "encoder_lr": 1e-4, "replay_capacity": 4000},
            "env": {"size": 64, "episode_length": 256, "action_repeat": 1, "discrete_actions": 4},
            "augment": {"kinds": ("crop",), "target_size": 64 - 8},
            "model": model,
            "beta": {"beta_start": 1e-8, "beta_end": 1e-3, "start_episode": 10, "end_episode": 110},
            "ppo": {"hidden": 1024, "lr": 5e-4, "epochs": 3, "minibatches": 8},
        })
    raise ConfigError(f"no paper-scale preset for agent {agent!r}")
