"""Episode recordings on disk.

A recording directory holds ``manifest.json`` and one ``episode_XXXX.bin``
per episode. Each ``.bin`` is three raw little-endian float64 blocks written
back to back: frames ``(T+1, H, W)``, actions ``(T, A)``, rewards ``(T,)``.
The manifest stores the shapes, the background id and byte offsets, e.g.::

    {"version": 1, "episodes": [{"file": "episode_0000.bin", "steps": 50,
      "frame_shape": [28, 28], "action_dim": 1, "background_id": 3,
      "offsets": [0, 159152, 159552]}]}
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..ndgrad import ContractError


@dataclass
class Episode:
    observations: np.ndarray  # (T+1, H, W): o_0 .. o_T
    actions: np.ndarray  # (T, A)
    rewards: np.ndarray  # (T,)
    background_id: int = -1

    def __post_init__(self):
        t = len(self.actions)
        if self.actions.ndim != 2 or len(self.rewards) != t or len(self.observations) != t + 1:
            raise ContractError("episode arrays are not aligned")

    @property
    def steps(self) -> int:
        return len(self.actions)

    @property
    def total_reward(self) -> float:
        return float(np.sum(self.rewards))


def write(directory, episodes: list[Episode]) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, ep in enumerate(episodes):
        name = f"episode_{i:04d}.bin"
        blocks = [np.ascontiguousarray(a, dtype="<f8").tobytes()
                  for a in (ep.observations, ep.actions, ep.rewards)]
        offsets = [0, len(blocks[0]), len(blocks[0]) + len(blocks[1])]
        (d / name).write_bytes(b"".join(blocks))
        entries.append({
            "file": name, "steps": ep.steps, "frame_shape": list(ep.observations.shape[1:]),
            "action_dim": int(ep.actions.shape[1]), "background_id": int(ep.background_id),
            "offsets": offsets,
        })
    (d / "manifest.json").write_text(json.dumps({"version": 1, "episodes": entries}, indent=1))
    return d


def read(directory) -> list[Episode]:
    d = Path(directory)
    manifest = json.loads((d / "manifest.json").read_text())
    if manifest.get("version") != 1:
        raise ContractError(f"unsupported recording version {manifest.get('version')}")
    out = []
    for e in manifest["episodes"]:
        raw = (d / e["file"]).read_bytes()
        t, a = e["steps"], e["action_dim"]
        fshape = tuple(e["frame_shape"])
        o0, o1, o2 = e["offsets"]
        obs = np.frombuffer(raw[o0:o1], dtype="<f8").reshape((t + 1,) + fshape)
        acts = np.frombuffer(raw[o1:o2], dtype="<f8").reshape(t, a)
        rews = np.frombuffer(raw[o2:], dtype="<f8").reshape(t)
        out.append(Episode(obs.astype(np.float64), acts.astype(np.float64), rews.astype(np.float64),
                           e["background_id"]))
    return out
