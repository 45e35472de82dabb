"""Closed-loop evaluation, covariate-shift protocols, and stability analysis.

Episodes are seeded per index, so two policies evaluated with the same
seed and protocol face identical start states and identical noise
realizations step for step — comparisons are paired by construction.

The stability analyzer inspects a trained policy at every dataset state:
the eigenvalues of the closed-loop error dynamics where the observation
model is known, or the decomposition into the robot-block eigenvalues
plus the coupling gain where it is not, together with the worst-case
drift bound those gains imply.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import policy as pol
from .datagen import Dataset
from .envs.base import Trajectory, episode_rng
from .errors import ConfigError
from .linalg import covariate_bound, eigvals_general, spectral_norm
from .stability import SystemModel, assemble_a1_a2_values, assemble_a_values

PROTOCOLS = {
    "driving": ("matched", "human_self_centered", "ood_start"),
    "quadrotor": ("matched", "action_noise"),
    "pointmass": ("matched",),
}

DIRECTION_THRESHOLD_DEG = 10.0
ZERO_ACTION_TOL = 1e-12


def validate_protocol(env_name: str, protocol: str) -> None:
    valid = PROTOCOLS.get(env_name)
    if valid is None:
        raise ConfigError(f"no evaluation protocols registered for {env_name!r}")
    if protocol not in valid:
        raise ConfigError(
            f"protocol {protocol!r} is not valid for {env_name}; "
            f"expected one of {', '.join(valid)}"
        )


# -- policy callables ---------------------------------------------------------


def policy_callable(policy: pol.PolicyNetwork, encoder=None):
    """Wrap a network as the (x, y) -> u function used by rollouts.

    ``encoder`` maps raw observations to the policy's observation space
    (image to latent code); identity when omitted.
    """
    if encoder is None:
        return lambda x, y: pol.act(policy, x, y)
    return lambda x, y: pol.act(policy, x, encoder(y))


def make_random_policy(n: int, scale: float = 1.0, seed: int = 0):
    """Baseline that ignores observations and samples u ~ N(0, scale^2 I)."""
    rng = np.random.default_rng([int(seed), 997])

    def fn(x, y):
        return rng.normal(0.0, scale, size=n)

    return fn


# -- rollout -------------------------------------------------------------------


def rollout(env, policy_fn, rng, protocol: str = "matched", action_noise: float = 0.1):
    """Run one closed-loop episode; returns (Trajectory, final_error).

    A non-finite action aborts the episode with status ``failed``. Under
    the ``action_noise`` protocol, zero-mean Gaussian noise is added to
    every executed action.
    """
    ep = env.init_episode(rng, protocol)
    x0, y0 = env.observation(ep)
    xs, us = [x0], []
    ys = [y0]
    status = "timeout"
    t = 0
    while True:
        st = env.status(ep, t)
        if st is not None:
            status = st
            break
        x, y = env.observation(ep)
        u = np.asarray(policy_fn(x, y), dtype=float)
        if not np.all(np.isfinite(u)):
            status = "failed"
            break
        if protocol == "action_noise":
            u = u + rng.normal(0.0, action_noise, size=u.shape)
        env.advance(ep, u, rng, protocol)
        us.append(u)
        xn, yn = env.observation(ep)
        xs.append(xn)
        if env.dynamic_observation:
            ys.append(yn)
        t += 1
    dt = env.spec.dt
    traj = Trajectory(
        ts=dt * np.arange(len(xs)),
        xs=np.array(xs),
        ys=np.array(ys),
        us=np.array(us).reshape(len(us), env.n),
        status=status,
    )
    return traj, env.final_error(ep)


def direction_changes(us: np.ndarray, threshold_deg: float = DIRECTION_THRESHOLD_DEG) -> int:
    """Count heading flips above ``threshold_deg`` between consecutive
    actions, ignoring zero-magnitude actions."""
    us = np.asarray(us, dtype=float)
    moves = [u for u in us if np.linalg.norm(u) > ZERO_ACTION_TOL]
    count = 0
    for a, b in zip(moves[:-1], moves[1:]):
        dot = float(np.dot(a, b))
        if a.shape == (2,):
            sin = abs(a[0] * b[1] - a[1] * b[0])
            angle = math.degrees(math.atan2(sin, dot))
        elif a.shape == (3,):
            sin = float(np.linalg.norm(np.cross(a, b)))
            angle = math.degrees(math.atan2(sin, dot))
        else:
            cos = dot / (np.linalg.norm(a) * np.linalg.norm(b))
            angle = math.degrees(math.acos(min(1.0, max(-1.0, cos))))
        if angle > threshold_deg:
            count += 1
    return count


def driving_episode_cost(traj: Trajectory, env) -> float:
    """Accumulated one-step driving cost of the robot over an episode."""
    from .envs.driving import driving_cost

    goal = env.spec.robot_goal
    total = 0.0
    for t in range(traj.steps):
        total += driving_cost(
            traj.xs[t], traj.xs[t + 1], traj.y_at(t), goal, env.spec.avoid_weight
        )
    return total


# -- metrics -------------------------------------------------------------------


def _sem(values) -> float:
    values = np.asarray(values, dtype=float)
    if len(values) < 2:
        return 0.0
    return float(np.std(values, ddof=1) / math.sqrt(len(values)))


@dataclass
class MetricsReport:
    env: str
    protocol: str
    policy_name: str
    seed: int
    rows: list = field(default_factory=list)
    aggregates: dict = field(default_factory=dict)

    def to_csv(self) -> str:
        cols = ("episode", "status", "steps", "success", "final_error", "cost",
                "direction_changes")
        out = io.StringIO()
        out.write(",".join(cols) + "\n")
        for r in self.rows:
            cells = []
            for c in cols:
                v = r[c]
                if v is None:
                    cells.append("")
                elif isinstance(v, float):
                    cells.append(repr(v))
                else:
                    cells.append(str(v))
            out.write(",".join(cells) + "\n")
        return out.getvalue()

    def to_json(self) -> str:
        payload = {
            "env": self.env,
            "protocol": self.protocol,
            "policy": self.policy_name,
            "seed": self.seed,
            "episodes": len(self.rows),
            "aggregates": self.aggregates,
        }
        return json.dumps(payload, sort_keys=True, indent=1) + "\n"


def evaluate(
    env,
    policy_fn,
    protocol: str,
    episodes: int,
    seed: int,
    policy_name: str = "policy",
    action_noise: float = 0.1,
) -> MetricsReport:
    """Roll ``episodes`` seeded episodes and aggregate the metrics."""
    validate_protocol(env.name, protocol)
    if episodes < 1:
        raise ConfigError("episodes must be at least 1")
    report = MetricsReport(
        env=env.name, protocol=protocol, policy_name=policy_name, seed=int(seed)
    )
    for i in range(episodes):
        rng = episode_rng(seed, i)
        traj, err = rollout(env, policy_fn, rng, protocol, action_noise)
        cost = driving_episode_cost(traj, env) if env.name == "driving" else None
        report.rows.append(
            {
                "episode": i,
                "status": traj.status,
                "steps": traj.steps,
                "success": traj.status == "success",
                "final_error": float(err),
                "cost": cost,
                "direction_changes": direction_changes(traj.us),
            }
        )
    rows = report.rows
    errors = [r["final_error"] for r in rows]
    succ = [r for r in rows if r["success"]]
    agg = {
        "success_rate": len(succ) / len(rows),
        "final_error_mean": float(np.mean(errors)),
        "final_error_sem": _sem(errors),
        "steps_mean": float(np.mean([r["steps"] for r in rows])),
    }
    if env.name == "driving":
        costs = [r["cost"] for r in rows]
        agg["cost_mean"] = float(np.mean(costs))
        agg["cost_sem"] = _sem(costs)
    if succ:
        dc = [r["direction_changes"] for r in succ]
        agg["direction_changes_mean"] = float(np.mean(dc))
    else:
        agg["direction_changes_mean"] = None
    report.aggregates = agg
    return report


def evaluate_many(env, policies: dict, protocol: str, episodes: int, seed: int,
                  action_noise: float = 0.1) -> dict:
    """Evaluate several policies on identical episode streams."""
    return {
        name: evaluate(env, fn, protocol, episodes, seed, name, action_noise)
        for name, fn in policies.items()
    }


# -- stability analysis ---------------------------------------------------------


@dataclass
class AnalysisReport:
    route: str  # "model_based" or "model_free"
    rows: list = field(default_factory=list)
    aggregates: dict = field(default_factory=dict)
    bound_curve: list = field(default_factory=list)

    def to_csv(self) -> str:
        cols = ("index", "max_real_part", "stable", "a1_norm", "a2_norm")
        out = io.StringIO()
        out.write(",".join(cols) + "\n")
        for r in self.rows:
            out.write(
                ",".join(
                    repr(r[c]) if isinstance(r[c], float) else str(r[c]) for c in cols
                )
                + "\n"
            )
        return out.getvalue()

    def bound_curve_csv(self) -> str:
        out = io.StringIO()
        out.write("t,bound\n")
        for point in self.bound_curve:
            out.write(f"{point['t']!r},{point['bound']!r}\n")
        return out.getvalue()

    def to_json(self) -> str:
        payload = {
            "route": self.route,
            "samples": len(self.rows),
            "aggregates": self.aggregates,
            "bound_curve": self.bound_curve,
        }
        return json.dumps(payload, sort_keys=True, indent=1) + "\n"


def analyze_stability(
    policy: pol.PolicyNetwork,
    dataset: Dataset,
    model: SystemModel,
    eps: float = 0.1,
    horizon_t: float = 1.0,
    curve_points: int = 20,
) -> AnalysisReport:
    """Per-sample spectra of the trained closed loop over the dataset.

    Where the observation model is known the spectrum is that of the full
    error-dynamics matrix; otherwise it is the robot block's. A static
    observation contributes one structurally zero eigenvalue per
    observation dimension — directions the error can never enter — so
    static environments are judged on the robot block as well (the rest
    of the full spectrum is identical). A sample is stable when every
    real part is negative. Both routes also report the robot-block gain
    and the observation-coupling gain, and the worst-case drift bound
    (observation error ``eps``, elapsed time up to ``horizon_t``)
    computed from the dataset-maximum gains.
    """
    if (model.m, model.d, model.n) != (dataset.m, dataset.d, dataset.n):
        raise ConfigError("model dims do not match dataset dims")
    if len(dataset) == 0:
        raise ConfigError("cannot analyze an empty dataset")
    report = AnalysisReport(route="model_based" if model.model_based else "model_free")
    a1_norms, a2_norms = [], []
    for i in range(len(dataset)):
        x, y = dataset.X[i], dataset.Y[i]
        if model.model_based and not model.g_static:
            spectrum_of = assemble_a_values(model, policy, x, y)
        else:
            spectrum_of = None
        a1, a2 = assemble_a1_a2_values(model, policy, x, y)
        if spectrum_of is None:
            spectrum_of = a1
        max_re = float(eigvals_general(spectrum_of).real.max())
        n1, n2 = spectral_norm(a1), spectral_norm(a2)
        a1_norms.append(n1)
        a2_norms.append(n2)
        report.rows.append(
            {
                "index": i,
                "max_real_part": max_re,
                "stable": max_re < 0.0,
                "a1_norm": n1,
                "a2_norm": n2,
            }
        )
    stable = [r for r in report.rows if r["stable"]]
    n1_max, n2_max = max(a1_norms), max(a2_norms)
    report.aggregates = {
        "stable_fraction": len(stable) / len(report.rows),
        "max_real_part_mean": float(np.mean([r["max_real_part"] for r in report.rows])),
        "max_real_part_worst": float(np.max([r["max_real_part"] for r in report.rows])),
        "a1_norm_max": n1_max,
        "a2_norm_max": n2_max,
    }
    if n1_max > 0.0:
        ts = np.linspace(0.0, horizon_t, curve_points + 1)[1:]
        report.bound_curve = [
            {"t": float(t), "bound": covariate_bound(n1_max, n2_max, eps, float(t))}
            for t in ts
        ]
    return report
