"""Random augmentations that turn one observation sequence into two views.

One transform is drawn per sequence and applied to every frame of it, so a
view never jitters within a trajectory (``per_frame=True`` switches that off
for ablations). Actions and rewards are never touched.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .batch import SequenceBatch
from .ndgrad import ContractError

KINDS = ("crop", "flip", "cutout", "intensity", "grayscale-mix")


@dataclass(frozen=True)
class AugmentationSpec:
    kinds: tuple = ("crop",)
    source_size: int = 28
    target_size: int = 24
    flip_axis: int = 1
    cutout_max: int = 8
    intensity_range: tuple = (0.8, 1.2)
    gray_prob: float = 0.3
    flip_prob: float = 0.5
    per_frame: bool = False

    def __post_init__(self):
        kinds = (self.kinds,) if isinstance(self.kinds, str) else tuple(self.kinds)
        object.__setattr__(self, "kinds", kinds)
        for k in kinds:
            if k not in KINDS:
                raise ContractError(f"unknown augmentation {k!r}")
        if self.target_size > self.source_size:
            raise ContractError("target size exceeds source size")
        if "crop" not in kinds and self.target_size != self.source_size:
            raise ContractError("target size differs from source size without a crop")
        for p in (self.gray_prob, self.flip_prob):
            if not 0.0 <= p <= 1.0:
                raise ContractError("probabilities must lie in [0, 1]")
        if self.flip_axis not in (0, 1):
            raise ContractError("flip_axis must be 0 or 1")
        lo, hi = self.intensity_range
        if not 0 < lo <= hi:
            raise ContractError("bad intensity range")

    @property
    def kind(self) -> str:
        return "+".join(self.kinds)


def sample_transform(spec: AugmentationSpec, rng: np.random.Generator) -> dict:
    params: dict = {}
    slack = spec.source_size - spec.target_size
    if "crop" in spec.kinds:
        params["crop"] = (int(rng.integers(0, slack + 1)), int(rng.integers(0, slack + 1)))
    if "flip" in spec.kinds:
        params["flip"] = bool(rng.random() < spec.flip_prob)
    if "cutout" in spec.kinds:
        size = spec.target_size
        h = int(rng.integers(1, spec.cutout_max + 1))
        w = int(rng.integers(1, spec.cutout_max + 1))
        params["cutout"] = (int(rng.integers(0, size - h + 1)), int(rng.integers(0, size - w + 1)), h, w)
    if "intensity" in spec.kinds:
        params["intensity"] = float(rng.uniform(*spec.intensity_range))
    if "grayscale-mix" in spec.kinds:
        params["gray"] = bool(rng.random() < spec.gray_prob)
    return params


def apply_transform(frames: np.ndarray, spec: AugmentationSpec, params: dict) -> np.ndarray:
    """Apply one sampled transform to frames of shape ``(..., H, W)``."""
    out = frames
    if "crop" in params:
        y, x = params["crop"]
        s = spec.target_size
        out = out[..., y:y + s, x:x + s]
    if params.get("flip"):
        out = np.flip(out, axis=out.ndim - 2 + spec.flip_axis)
    out = np.array(out, dtype=np.float64)
    if "cutout" in params:
        y, x, h, w = params["cutout"]
        out[..., y:y + h, x:x + w] = 0.0
    if "intensity" in params:
        out = out * params["intensity"]
    if params.get("gray"):
        m = out.mean(axis=(-2, -1), keepdims=True)
        out = 0.5 * out + 0.5 * m
    return out


def augment_sequence(obs: np.ndarray, spec: AugmentationSpec, rng: np.random.Generator) -> np.ndarray:
    obs = np.asarray(obs, dtype=np.float64)
    if obs.shape[-2:] != (spec.source_size, spec.source_size):
        raise ContractError(f"frames {obs.shape[-2:]} do not match source size {spec.source_size}")
    if spec.per_frame:
        return np.stack([apply_transform(f, spec, sample_transform(spec, rng)) for f in obs])
    return apply_transform(obs, spec, sample_transform(spec, rng))


def make_two_views(batch: SequenceBatch, spec: AugmentationSpec, rng: np.random.Generator):
    views = []
    for _ in range(2):
        obs = np.stack([augment_sequence(seq, spec, rng) for seq in batch.observations])
        views.append(batch.replace(observations=obs))
    return views[0], views[1]


def center_crop(obs: np.ndarray, target: int) -> np.ndarray:
    h = obs.shape[-1]
    off = (h - target) // 2
    return np.asarray(obs[..., off:off + target, off:off + target], dtype=np.float64)
