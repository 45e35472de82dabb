"""Policy networks: construction, inference, Jacobians and checkpoints.

A policy maps a robot state ``x`` (m,) and an environment observation ``y``
(d,) to an action ``u`` (n,) through a fully connected network on the
concatenated, standardized input. The differentiable path lives in
:mod:`stablebc.autodiff`; this module holds the plain-numpy container plus
fast non-differentiable forward/Jacobian evaluation and a JSON checkpoint
format.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import MlpGraph
from .errors import DimensionError, UnsupportedConfigError

ACTIVATIONS = ("tanh", "relu")


@dataclass
class PolicyNetwork:
    """Weights and metadata of one policy network.

    ``weights[l]`` has shape (out, in); the input is ``[x, y]`` standardized
    by ``in_mean``/``in_std`` (identity until a trainer installs dataset
    statistics).
    """

    m: int
    d: int
    n: int
    hidden: tuple[int, ...]
    activation: str
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    in_mean: np.ndarray
    in_std: np.ndarray
    seed: int = 0

    @property
    def n_inputs(self) -> int:
        return self.m + self.d


@dataclass
class Checkpoint:
    """A saved policy plus free-form training provenance."""

    policy: PolicyNetwork
    metadata: dict = field(default_factory=dict)


def init_policy(
    m: int,
    d: int,
    n: int,
    hidden: tuple[int, ...] = (64, 64),
    seed: int = 0,
    activation: str = "tanh",
) -> PolicyNetwork:
    """Fresh network with uniform Glorot weights and zero biases.

    Layer weights are drawn in order from ``default_rng(seed)``, so equal
    seeds give bit-identical networks.
    """
    if m < 1 or d < 1 or n < 1:
        raise DimensionError(f"dimensions must be positive, got m={m} d={d} n={n}")
    if not hidden or any(h < 1 for h in hidden):
        raise DimensionError(f"hidden sizes must be positive, got {hidden}")
    if activation not in ACTIVATIONS:
        raise UnsupportedConfigError(f"activation must be one of {ACTIVATIONS}")
    rng = np.random.default_rng(seed)
    sizes = [m + d, *hidden, n]
    weights = []
    biases = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return PolicyNetwork(
        m=m,
        d=d,
        n=n,
        hidden=tuple(int(h) for h in hidden),
        activation=activation,
        weights=weights,
        biases=biases,
        in_mean=np.zeros(m + d),
        in_std=np.ones(m + d),
        seed=int(seed),
    )


def _check_xy(policy: PolicyNetwork, x, y) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != (policy.m,):
        raise DimensionError(f"x must have shape ({policy.m},), got {x.shape}")
    if y.shape != (policy.d,):
        raise DimensionError(f"y must have shape ({policy.d},), got {y.shape}")
    return np.concatenate([x, y])


def forward_batch(policy: PolicyNetwork, z: np.ndarray) -> np.ndarray:
    """Plain-numpy forward pass over rows of ``z`` (B, m+d)."""
    z = np.asarray(z, dtype=float)
    if z.ndim != 2 or z.shape[1] != policy.n_inputs:
        raise DimensionError(
            f"batch must be (B, {policy.n_inputs}), got {z.shape}"
        )
    h = (z - policy.in_mean) / policy.in_std
    last = len(policy.weights) - 1
    for layer, (w, b) in enumerate(zip(policy.weights, policy.biases)):
        h = h @ w.T + b
        if layer < last:
            h = np.tanh(h) if policy.activation == "tanh" else np.maximum(h, 0.0)
    return h


def act(policy: PolicyNetwork, x, y) -> np.ndarray:
    """Action for a single (x, y) pair."""
    z = _check_xy(policy, x, y)
    return forward_batch(policy, z.reshape(1, -1))[0]


def graph(policy: PolicyNetwork) -> MlpGraph:
    """Differentiable view over the policy's parameter arrays."""
    return MlpGraph(
        policy.weights,
        policy.biases,
        activation=policy.activation,
        in_mean=policy.in_mean,
        in_std=policy.in_std,
    )


def input_jacobian_values(policy: PolicyNetwork, x, y) -> np.ndarray:
    """d u / d [x, y] at one input, as a plain (n, m+d) array.

    Analytic layer product for tanh networks; meant for analysis loops
    where no parameter gradient is needed.
    """
    if policy.activation != "tanh":
        raise UnsupportedConfigError(
            "input Jacobian requires a smooth activation, got "
            f"{policy.activation!r}"
        )
    z = _check_xy(policy, x, y)
    h = (z - policy.in_mean) / policy.in_std
    jac = policy.weights[0]
    last = len(policy.weights) - 1
    for layer in range(last):
        a = np.tanh(policy.weights[layer] @ h + policy.biases[layer])
        jac = policy.weights[layer + 1] @ ((1.0 - a * a)[:, None] * jac)
        h = a
    return jac / policy.in_std[None, :]


def save_policy(path, policy: PolicyNetwork, metadata: dict | None = None) -> None:
    """Write a checkpoint as deterministic JSON (sorted keys, no timestamps)."""
    payload = {
        "format": "stablebc-policy-v1",
        "m": policy.m,
        "d": policy.d,
        "n": policy.n,
        "hidden": list(policy.hidden),
        "activation": policy.activation,
        "seed": policy.seed,
        "in_mean": policy.in_mean.tolist(),
        "in_std": policy.in_std.tolist(),
        "weights": [w.tolist() for w in policy.weights],
        "biases": [b.tolist() for b in policy.biases],
        "metadata": metadata or {},
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=1) + "\n")


def load_policy(path) -> Checkpoint:
    """Read a checkpoint written by :func:`save_policy`."""
    payload = json.loads(Path(path).read_text())
    if payload.get("format") != "stablebc-policy-v1":
        raise UnsupportedConfigError(f"unrecognized checkpoint format in {path}")
    policy = PolicyNetwork(
        m=int(payload["m"]),
        d=int(payload["d"]),
        n=int(payload["n"]),
        hidden=tuple(int(h) for h in payload["hidden"]),
        activation=str(payload["activation"]),
        weights=[np.asarray(w, dtype=float) for w in payload["weights"]],
        biases=[np.asarray(b, dtype=float) for b in payload["biases"]],
        in_mean=np.asarray(payload["in_mean"], dtype=float),
        in_std=np.asarray(payload["in_std"], dtype=float),
        seed=int(payload["seed"]),
    )
    return Checkpoint(policy=policy, metadata=payload.get("metadata", {}))
