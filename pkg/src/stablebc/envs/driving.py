"""Two-car intersection environment.

The robot car crosses an intersection left to right while a human-driven
car crosses bottom to top. Both are velocity-controlled point cars
integrated with explicit Euler. The human is scripted: it greedily picks
the best of 17 candidate velocities (16 compass directions at fixed
speed, plus zero) under a one-step cost, then adds Gaussian noise. In
``interactive`` mode that cost rewards progress toward the human's goal
and distance from the robot; in ``self_centered`` mode the robot term is
dropped and the human ignores the robot entirely.

The robot expert uses the same candidate machinery against its own goal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError
from ..stability import SystemModel


def driving_cost(x_t, x_t1, y_t, goal, avoid_weight: float = 0.75) -> float:
    """One-step cost of moving x_t -> x_t1 with the other car at y_t.

    Progress toward ``goal`` lowers the cost; increasing distance from
    the other car lowers it too (weighted by ``avoid_weight``).
    """
    x_t = np.asarray(x_t, dtype=float)
    x_t1 = np.asarray(x_t1, dtype=float)
    y_t = np.asarray(y_t, dtype=float)
    goal = np.asarray(goal, dtype=float)
    progress = np.linalg.norm(x_t1 - goal) - np.linalg.norm(x_t - goal)
    avoid = np.linalg.norm(x_t - y_t) - np.linalg.norm(x_t1 - y_t)
    return float(progress + avoid_weight * avoid)


@dataclass(frozen=True)
class DrivingSpec:
    dt: float = 0.1
    horizon: int = 20
    speed: float = 2.0              # candidate speed, robot expert
    human_speed: float = 2.0        # candidate speed, scripted human
    n_directions: int = 16
    avoid_weight: float = 0.75
    expert_noise: float = 0.05
    human_noise: float = 0.05
    # axis-aligned start boxes; goals sit at the mirror image of each
    # box's center through the intersection at the origin
    robot_start_low: tuple = (-2.0, -0.25)
    robot_start_high: tuple = (-1.5, 0.25)
    human_start_low: tuple = (-0.25, -2.0)
    human_start_high: tuple = (0.25, -1.5)
    # lateral displacement applied to robot starts under ood_start
    ood_shift: tuple = (0.0, 0.5)

    def __post_init__(self):
        if self.dt <= 0 or self.horizon < 1:
            raise ConfigError("dt must be positive and horizon at least 1")
        if self.speed <= 0 or self.human_speed <= 0:
            raise ConfigError("candidate speeds must be positive")
        if self.n_directions < 1:
            raise ConfigError("need at least one compass direction")

    @property
    def robot_goal(self) -> np.ndarray:
        low = np.asarray(self.robot_start_low)
        high = np.asarray(self.robot_start_high)
        return -(low + high) / 2.0

    @property
    def human_goal(self) -> np.ndarray:
        low = np.asarray(self.human_start_low)
        high = np.asarray(self.human_start_high)
        return -(low + high) / 2.0


@dataclass
class DrivingEpisode:
    x: np.ndarray  # robot position
    y: np.ndarray  # human position


class DrivingEnv:
    name = "driving"
    m = 2
    d = 2
    n = 2
    dynamic_observation = True

    def __init__(self, spec: DrivingSpec | None = None):
        self.spec = spec if spec is not None else DrivingSpec()

    # -- candidate actions --------------------------------------------

    def candidates(self, speed: float) -> np.ndarray:
        angles = 2.0 * math.pi * np.arange(self.spec.n_directions) / self.spec.n_directions
        moves = speed * np.stack([np.cos(angles), np.sin(angles)], axis=1)
        return np.vstack([np.zeros((1, 2)), moves])

    def _greedy(self, p, other, goal, speed, avoid: bool) -> np.ndarray:
        cands = self.candidates(speed)
        weight = self.spec.avoid_weight if avoid else 0.0
        costs = [
            driving_cost(p, p + u * self.spec.dt, other, goal, weight)
            for u in cands
        ]
        return cands[int(np.argmin(costs))].copy()

    # -- episode protocol ---------------------------------------------

    def init_episode(self, rng, protocol: str = "matched") -> DrivingEpisode:
        s = self.spec
        x = rng.uniform(s.robot_start_low, s.robot_start_high)
        y = rng.uniform(s.human_start_low, s.human_start_high)
        if protocol == "ood_start":
            x = x + np.asarray(s.ood_shift, dtype=float)
        return DrivingEpisode(x=x, y=y)

    def observation(self, ep: DrivingEpisode):
        return ep.x.copy(), ep.y.copy()

    def expert_action(self, ep: DrivingEpisode, rng) -> np.ndarray:
        u = self._greedy(ep.x, ep.y, self.spec.robot_goal, self.spec.speed, avoid=True)
        return u + rng.normal(0.0, self.spec.expert_noise, size=2)

    def human_action(self, ep: DrivingEpisode, rng, mode: str = "interactive") -> np.ndarray:
        if mode not in ("interactive", "self_centered"):
            raise ConfigError(f"unknown human mode {mode!r}")
        u = self._greedy(
            ep.y, ep.x, self.spec.human_goal, self.spec.human_speed,
            avoid=(mode == "interactive"),
        )
        return u + rng.normal(0.0, self.spec.human_noise, size=2)

    def advance(self, ep: DrivingEpisode, u, rng, protocol: str = "matched") -> None:
        # both cars move simultaneously off the pre-step state
        mode = "self_centered" if protocol == "human_self_centered" else "interactive"
        u_h = self.human_action(ep, rng, mode)
        ep.x = ep.x + np.asarray(u, dtype=float) * self.spec.dt
        ep.y = ep.y + u_h * self.spec.dt

    def status(self, ep: DrivingEpisode, t: int):
        # fixed-length interaction: the episode simply completes
        return "success" if t >= self.spec.horizon else None

    def final_error(self, ep: DrivingEpisode) -> float:
        return float(np.linalg.norm(ep.x - self.spec.robot_goal))

    # -- demonstrations -----------------------------------------------

    def demo(self, rng) -> tuple:
        ep = self.init_episode(rng, "matched")
        xs, ys, us = [], [], []
        for _ in range(self.spec.horizon):
            u = self.expert_action(ep, rng)
            xs.append(ep.x.copy())
            ys.append(ep.y.copy())
            us.append(u)
            self.advance(ep, u, rng, "matched")
        return np.array(xs), np.array(ys), np.array(us)

    # -- model --------------------------------------------------------

    def system_model(self) -> SystemModel:
        dfdx = np.zeros((2, 2))
        dfdu = np.eye(2)

        def f_jacobians(x, u):
            return dfdx, dfdu

        # the human's decision rule is discrete and unknown to the
        # robot, so only the model-free route applies
        return SystemModel(m=2, d=2, n=2, f_jacobians=f_jacobians)
