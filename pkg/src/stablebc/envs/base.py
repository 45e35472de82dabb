"""Shared environment plumbing: trajectories and the episode protocol.

Each environment exposes the same duck-typed surface consumed by data
generation and evaluation:

- ``init_episode(rng, protocol) -> ep``: sample a fresh episode state
- ``observation(ep) -> (x, y)``: the policy's current view
- ``expert_action(ep, rng) -> u``: scripted expert for this episode
- ``advance(ep, u, rng, protocol)``: apply the robot action in place
- ``status(ep, t) -> str | None``: terminal status, or None while running
- ``demo(rng) -> (X, Y, U)``: one expert demonstration as arrays
- ``system_model(...) -> SystemModel``: jacobians for training/analysis

Episodes own all per-episode randomness through the rng handed in, so a
fixed seed reproduces an episode exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import DimensionError


class DemoFailure(Exception):
    """The scripted expert failed this demonstration (caller may resample)."""


@dataclass
class Trajectory:
    """One executed episode.

    ``xs`` has one more row than ``us`` (states bracket actions). For
    environments whose observation never changes, ``ys`` holds a single
    row; for interactive environments it parallels ``xs``.
    """

    ts: np.ndarray
    xs: np.ndarray
    ys: np.ndarray
    us: np.ndarray
    status: str

    def __post_init__(self):
        if self.status not in ("success", "collision", "timeout", "failed"):
            raise DimensionError(f"unknown terminal status {self.status!r}")
        if len(self.xs) != len(self.us) + 1 or len(self.ts) != len(self.xs):
            raise DimensionError("trajectory lengths inconsistent")
        if len(self.ys) not in (1, len(self.xs)):
            raise DimensionError("ys must have one row or parallel xs")

    @property
    def steps(self) -> int:
        return len(self.us)

    def y_at(self, t: int) -> np.ndarray:
        return self.ys[0] if len(self.ys) == 1 else self.ys[t]


def episode_rng(seed: int, episode: int) -> np.random.Generator:
    """Independent, reproducible stream for one episode of one protocol."""
    return np.random.default_rng([int(seed), int(episode)])
