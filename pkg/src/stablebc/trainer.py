"""Policy training loop shared by plain cloning and both stabilized modes.

Losses are built per minibatch by :mod:`stablebc.stability` and
normalized by batch size before the backward sweep, so the learning rate
does not have to track batch size (the normalization is recorded in the
checkpoint provenance). Optimization is Adam with the conventional
bias-corrected moments. Penalty weights can be ramped linearly over the
first fraction of epochs; a zero effective weight builds the plain
cloning graph, so a zero-lambda stabilized run is bit-identical to
cloning with the same seed.
"""

from __future__ import annotations

import io
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import policy as pol
from .datagen import Dataset
from .errors import ConfigError, TrainingDivergedError
from .stability import (
    SystemModel,
    build_bc_loss,
    build_model_based_loss,
    build_model_free_loss,
)

METHODS = ("bc", "stable_mb", "stable_mf")

# constant input columns (one-hot image pixels, say) get unit scale
# instead of an exploding 1/std
STD_FLOOR = 1e-8


@dataclass(frozen=True)
class TrainConfig:
    method: str = "bc"
    hidden: tuple = (64, 64)
    activation: str = "tanh"
    epochs: int = 2000
    batch_size: int = 32
    learning_rate: float = 1e-3
    lam: float = 0.1        # model-based eigenvalue penalty weight
    lam1: float = 0.1       # model-free weight on ||A2||
    lam2: float = 0.1       # model-free weight on eig-penalty(A1)
    warmup_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(
                f"method must be one of {METHODS}, got {self.method!r}"
            )
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be at least 1")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if min(self.lam, self.lam1, self.lam2) < 0:
            raise ConfigError("penalty weights must be non-negative")
        if not 0.0 <= self.warmup_fraction <= 1.0:
            raise ConfigError("warmup_fraction must lie in [0, 1]")

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "hidden": list(self.hidden),
            "activation": self.activation,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "lam": self.lam,
            "lam1": self.lam1,
            "lam2": self.lam2,
            "warmup_fraction": self.warmup_fraction,
            "seed": self.seed,
        }


@dataclass
class TrainReport:
    """Per-epoch loss decomposition (unweighted sums over the epoch)."""

    method: str
    rows: list = field(default_factory=list)
    wall_time: float = float("nan")
    checkpoint_path: str = ""

    def append(self, epoch, bc, penalty_eig, penalty_norm, skipped) -> None:
        self.rows.append(
            {
                "epoch": int(epoch),
                "bc": float(bc),
                "penalty_eig": float(penalty_eig),
                "penalty_norm": float(penalty_norm),
                "skipped": int(skipped),
            }
        )

    @property
    def final_bc(self) -> float:
        return self.rows[-1]["bc"] if self.rows else float("nan")

    def to_csv(self) -> str:
        out = io.StringIO()
        out.write("epoch,bc,penalty_eig,penalty_norm,skipped\n")
        for r in self.rows:
            out.write(
                f"{r['epoch']},{r['bc']!r},{r['penalty_eig']!r},"
                f"{r['penalty_norm']!r},{r['skipped']}\n"
            )
        return out.getvalue()


# -- optimizer ---------------------------------------------------------------


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params) -> "AdamState":
        return cls(
            m=[np.zeros_like(p) for p in params],
            v=[np.zeros_like(p) for p in params],
        )


def adam_step(params, grads, state: AdamState, learning_rate: float) -> None:
    """One in-place Adam update of ``params`` given matching ``grads``."""
    state.t += 1
    c1 = 1.0 - state.beta1**state.t
    c2 = 1.0 - state.beta2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= learning_rate * (m / c1) / (np.sqrt(v / c2) + state.eps)


# -- training ----------------------------------------------------------------


def _input_stats(ds: Dataset):
    z = np.hstack([ds.X, ds.Y])
    mean = z.mean(axis=0)
    std = z.std(axis=0)
    std[std < STD_FLOOR] = 1.0
    return mean, std


def _check_model(config: TrainConfig, ds: Dataset, model: SystemModel | None):
    if config.method == "bc":
        return
    if model is None:
        raise ConfigError(f"method {config.method!r} needs a system model")
    if (model.m, model.d, model.n) != (ds.m, ds.d, ds.n):
        raise ConfigError(
            f"model dims ({model.m},{model.d},{model.n}) do not match "
            f"dataset dims ({ds.m},{ds.d},{ds.n})"
        )
    if config.method == "stable_mb" and not model.model_based:
        raise ConfigError(
            "stable_mb needs observation dynamics (g jacobians or a static "
            "environment); use stable_mf when only f is known"
        )


def train(
    config: TrainConfig,
    dataset: Dataset,
    model: SystemModel | None = None,
) -> tuple:
    """Fit a policy to ``dataset``; returns (Checkpoint, TrainReport)."""
    _check_model(config, dataset, model)
    if len(dataset) == 0:
        raise ConfigError("cannot train on an empty dataset")

    policy = pol.init_policy(
        dataset.m,
        dataset.d,
        dataset.n,
        hidden=tuple(config.hidden),
        seed=config.seed,
        activation=config.activation,
    )
    mean, std = _input_stats(dataset)
    policy.in_mean = mean
    policy.in_std = std

    flat_params = []
    for w, b in zip(policy.weights, policy.biases):
        flat_params.extend([w, b])
    adam = AdamState.for_params(flat_params)
    shuffle_rng = np.random.default_rng([int(config.seed), 1])

    n = len(dataset)
    n_warm = math.ceil(config.warmup_fraction * config.epochs)
    report = TrainReport(method=config.method)
    started = time.perf_counter()

    for epoch in range(config.epochs):
        ramp = 1.0 if epoch >= n_warm else (epoch + 1) / n_warm
        perm = shuffle_rng.permutation(n)
        ep_bc = ep_eig = ep_norm = 0.0
        ep_skipped = 0
        for start in range(0, n, config.batch_size):
            batch = perm[start : start + config.batch_size]
            xb, yb, ub = dataset.X[batch], dataset.Y[batch], dataset.U[batch]
            if config.method == "bc":
                bundle = build_bc_loss(policy, xb, yb, ub)
            elif config.method == "stable_mb":
                bundle = build_model_based_loss(
                    policy, model, xb, yb, ub, config.lam * ramp
                )
            else:
                bundle = build_model_free_loss(
                    policy, model, xb, yb, ub, config.lam1 * ramp, config.lam2 * ramp
                )
            scaled = ad.scale(bundle.total, 1.0 / len(batch))
            store = ad.backward(scaled)
            if not (np.isfinite(bundle.total_value) and store.all_finite()):
                pnorm = math.sqrt(sum(float(np.sum(p * p)) for p in flat_params))
                raise TrainingDivergedError(
                    f"non-finite loss or gradient at epoch {epoch}, batch "
                    f"{start // config.batch_size} (parameter norm {pnorm:.3g})",
                    epoch=epoch,
                    batch_index=start // config.batch_size,
                )
            grads = [
                store.of(node).reshape(p.shape)
                for node, p in zip(bundle.graph.params(), flat_params)
            ]
            adam_step(flat_params, grads, adam, config.learning_rate)
            ep_bc += bundle.bc_value
            ep_eig += bundle.penalty_eig_value
            ep_norm += bundle.penalty_norm_value
            ep_skipped += bundle.skipped
        report.append(epoch, ep_bc, ep_eig, ep_norm, ep_skipped)

    report.wall_time = time.perf_counter() - started
    metadata = {
        "train_config": config.to_dict(),
        "env": dataset.env_name,
        "dataset_fingerprint": dataset.fingerprint(),
        "samples": n,
        "normalization": "per_batch_mean",
        "final_bc": report.final_bc,
    }
    return pol.Checkpoint(policy=policy, metadata=metadata), report
