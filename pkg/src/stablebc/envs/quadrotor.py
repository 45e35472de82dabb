"""Quadrotor navigation through a field of spherical obstacles.

State is position and velocity in a closed room; the action is
(thrust, roll, pitch). Small-angle planar thrust components give

    v̇x = a_g tan(pitch),  v̇y = -a_g tan(roll),  v̇z = thrust - a_g

integrated with explicit Euler. Tilt commands are clamped to just inside
+-pi/2 (counted on ``clamp_count``) so the tangent stays finite.

The scripted expert runs a potential field: attraction toward the goal,
repulsion from obstacle surfaces and walls, converted to a desired
velocity, tracked with a proportional acceleration law, and inverted
through the dynamics to recover the action. Demonstrations that do not
reach the goal raise DemoFailure so callers can resample.

Obstacle centers are drawn once from a seeded generator inside a
mid-room slab, rejection-sampled to keep a minimum pairwise separation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError
from ..stability import SystemModel
from .base import DemoFailure


@dataclass(frozen=True)
class QuadrotorSpec:
    dt: float = 0.05
    horizon: int = 200
    a_g: float = 9.81
    room_low: tuple = (0.0, 0.0, 0.0)
    room_high: tuple = (10.0, 10.0, 10.0)
    n_obstacles: int = 7
    obstacle_radius: float = 0.75
    geometry_seed: int = 0
    slab_low: tuple = (3.5, 1.5, 1.5)
    slab_high: tuple = (6.5, 8.5, 8.5)
    min_separation: float = 2.0
    success_radius: float = 0.5
    start_low: tuple = (0.5, 1.5, 1.5)
    start_high: tuple = (1.5, 8.5, 8.5)
    # the goal is one fixed point; a degenerate box keeps it overridable
    goal_low: tuple = (8.0, 5.0, 5.0)
    goal_high: tuple = (8.0, 5.0, 5.0)
    # expert gains
    k_att: float = 2.0
    k_rep: float = 3.0
    d_influence: float = 0.8
    k_vel: float = 4.0
    a_max: float = 5.0
    tilt_max: float = math.pi / 2 - 0.1
    demo_stride: int = 4

    def __post_init__(self):
        if self.dt <= 0 or self.horizon < 1:
            raise ConfigError("dt must be positive and horizon at least 1")
        if self.demo_stride < 1:
            raise ConfigError("demo_stride must be at least 1")
        lo, hi = np.asarray(self.room_low), np.asarray(self.room_high)
        if np.any(np.asarray(self.slab_low) < lo + self.obstacle_radius) or np.any(
            np.asarray(self.slab_high) > hi - self.obstacle_radius
        ):
            raise ConfigError("obstacle slab must keep spheres inside the room")


@dataclass
class QuadrotorEpisode:
    x: np.ndarray     # (6,) position and velocity
    goal: np.ndarray  # (3,)


class QuadrotorEnv:
    name = "quadrotor"
    m = 6
    d = 3
    n = 3
    dynamic_observation = False

    def __init__(self, spec: QuadrotorSpec | None = None):
        self.spec = spec if spec is not None else QuadrotorSpec()
        self.clamp_count = 0
        self.obstacles = self._place_obstacles()

    def _place_obstacles(self) -> np.ndarray:
        s = self.spec
        rng = np.random.default_rng(s.geometry_seed)
        centers = []
        attempts = 0
        while len(centers) < s.n_obstacles:
            attempts += 1
            if attempts > 1000:
                raise ConfigError(
                    "could not place obstacles with the requested separation"
                )
            c = rng.uniform(s.slab_low, s.slab_high)
            if all(np.linalg.norm(c - prev) >= s.min_separation for prev in centers):
                centers.append(c)
        return np.array(centers)

    # -- dynamics -------------------------------------------------------

    def _clamp_tilt(self, u: np.ndarray) -> np.ndarray:
        s = self.spec
        clamped = u.copy()
        clamped[1] = min(max(u[1], -s.tilt_max), s.tilt_max)
        clamped[2] = min(max(u[2], -s.tilt_max), s.tilt_max)
        if clamped[1] != u[1] or clamped[2] != u[2]:
            self.clamp_count += 1
        return clamped

    def acceleration(self, u) -> np.ndarray:
        s = self.spec
        u = self._clamp_tilt(np.asarray(u, dtype=float))
        return np.array(
            [
                s.a_g * math.tan(u[2]),
                -s.a_g * math.tan(u[1]),
                u[0] - s.a_g,
            ]
        )

    def step(self, x, u) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        acc = self.acceleration(u)
        return np.concatenate(
            [x[:3] + x[3:] * self.spec.dt, x[3:] + acc * self.spec.dt]
        )

    # -- episode protocol ------------------------------------------------

    def init_episode(self, rng, protocol: str = "matched") -> QuadrotorEpisode:
        s = self.spec
        p = rng.uniform(s.start_low, s.start_high)
        goal = rng.uniform(s.goal_low, s.goal_high)
        return QuadrotorEpisode(x=np.concatenate([p, np.zeros(3)]), goal=goal)

    def observation(self, ep: QuadrotorEpisode):
        return ep.x.copy(), ep.goal.copy()

    def advance(self, ep: QuadrotorEpisode, u, rng, protocol: str = "matched") -> None:
        ep.x = self.step(ep.x, u)

    def status(self, ep: QuadrotorEpisode, t: int):
        s = self.spec
        p = ep.x[:3]
        if np.linalg.norm(p - ep.goal) < s.success_radius:
            return "success"
        if np.any(p < s.room_low) or np.any(p > s.room_high):
            return "collision"
        for c in self.obstacles:
            if np.linalg.norm(p - c) < s.obstacle_radius:
                return "collision"
        if t >= s.horizon:
            return "timeout"
        return None

    def final_error(self, ep: QuadrotorEpisode) -> float:
        return float(np.linalg.norm(ep.x[:3] - ep.goal))

    # -- scripted expert -------------------------------------------------

    def _desired_velocity(self, p, goal) -> np.ndarray:
        # Gaussian repulsion keeps the command field smooth; a tanh speed
        # cap bounds it without the kink a hard clip would introduce.
        s = self.spec
        to_goal = goal - p
        dist = np.linalg.norm(to_goal)
        v = np.zeros(3)
        if dist > 1e-12:
            v = s.k_att * min(dist, 1.0) * (to_goal / dist)
        for c in self.obstacles:
            away = p - c
            sep = np.linalg.norm(away)
            gap = max(sep - s.obstacle_radius, 1e-9)
            push = s.k_rep * math.exp(-((gap / s.d_influence) ** 2))
            v = v + push * (away / max(sep, 1e-9))
        for axis in range(3):
            gap_lo = max(p[axis] - s.room_low[axis], 1e-9)
            gap_hi = max(s.room_high[axis] - p[axis], 1e-9)
            v[axis] += s.k_rep * math.exp(-((gap_lo / s.d_influence) ** 2))
            v[axis] -= s.k_rep * math.exp(-((gap_hi / s.d_influence) ** 2))
        speed = np.linalg.norm(v)
        cap = 2.0 * s.k_att
        if speed > 1e-12:
            v = v * (cap * math.tanh(speed / cap) / speed)
        return v

    def expert_action(self, ep: QuadrotorEpisode, rng) -> np.ndarray:
        s = self.spec
        v_des = self._desired_velocity(ep.x[:3], ep.goal)
        acc = s.a_max * np.tanh(s.k_vel * (v_des - ep.x[3:]) / s.a_max)
        return np.array(
            [
                acc[2] + s.a_g,
                math.atan2(-acc[1], s.a_g),
                math.atan2(acc[0], s.a_g),
            ]
        )

    # -- demonstrations ---------------------------------------------------

    def demo(self, rng) -> tuple:
        s = self.spec
        ep = self.init_episode(rng, "matched")
        xs, us = [], []
        goal = ep.goal.copy()
        for t in range(s.horizon):
            done = self.status(ep, t)
            if done == "success":
                break
            if done is not None:
                raise DemoFailure(f"expert demonstration ended with {done}")
            u = self.expert_action(ep, rng)
            xs.append(ep.x.copy())
            us.append(u)
            self.advance(ep, u, rng)
        else:
            if self.status(ep, s.horizon) != "success":
                raise DemoFailure("expert demonstration timed out")
        xs = np.array(xs)[:: s.demo_stride]
        us = np.array(us)[:: s.demo_stride]
        ys = np.tile(goal, (len(xs), 1))
        return xs, ys, us

    # -- model -------------------------------------------------------------

    def system_model(self) -> SystemModel:
        s = self.spec
        dfdx = np.zeros((6, 6))
        dfdx[:3, 3:] = np.eye(3)

        def f_jacobians(x, u):
            phi = min(max(float(u[1]), -s.tilt_max), s.tilt_max)
            theta = min(max(float(u[2]), -s.tilt_max), s.tilt_max)
            dfdu = np.zeros((6, 3))
            dfdu[3, 2] = s.a_g / math.cos(theta) ** 2
            dfdu[4, 1] = -s.a_g / math.cos(phi) ** 2
            dfdu[5, 0] = 1.0
            return dfdx, dfdu

        # the observation is the fixed goal position, so its dynamics
        # vanish identically
        return SystemModel(m=6, d=3, n=3, f_jacobians=f_jacobians, g_static=True)
