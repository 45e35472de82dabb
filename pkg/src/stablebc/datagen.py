"""Expert demonstration datasets: generation, JSONL persistence, fingerprints.

A dataset is a flat table of (x, y, u) samples pooled across expert
demonstrations, plus provenance describing how it was produced. On disk
it is JSON Lines: a header object on the first line, then one object per
sample, so files stream and diff cleanly.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .envs.base import DemoFailure
from .errors import ConfigError, ConvergenceError, DimensionError

DATASET_FORMAT = "stablebc-dataset-v1"

# a failed demonstration is resampled from a fresh stream; give up once
# total attempts reach this multiple of the requested count
ATTEMPT_CAP_FACTOR = 10


@dataclass
class Dataset:
    env_name: str
    m: int
    d: int
    n: int
    X: np.ndarray
    Y: np.ndarray
    U: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.Y = np.asarray(self.Y, dtype=float)
        self.U = np.asarray(self.U, dtype=float)
        if self.X.shape != (len(self.X), self.m):
            raise DimensionError(f"X must be (N, {self.m}), got {self.X.shape}")
        if self.Y.shape != (len(self.X), self.d):
            raise DimensionError(f"Y must be (N, {self.d}), got {self.Y.shape}")
        if self.U.shape != (len(self.X), self.n):
            raise DimensionError(f"U must be (N, {self.n}), got {self.U.shape}")

    def __len__(self) -> int:
        return len(self.X)

    def fingerprint(self) -> str:
        """sha256 over the canonical sample encoding; stable across a
        save/load round trip."""
        blob = json.dumps(
            {
                "env": self.env_name,
                "m": self.m,
                "d": self.d,
                "n": self.n,
                "samples": [
                    {"x": x.tolist(), "y": y.tolist(), "u": u.tolist()}
                    for x, y, u in zip(self.X, self.Y, self.U)
                ],
            },
            sort_keys=True,
            separators=(",", ":"),
        ).encode()
        return hashlib.sha256(blob).hexdigest()


def generate(env, demos: int, seed: int) -> Dataset:
    """Pool ``demos`` expert demonstrations from ``env`` into a dataset.

    Demonstration k draws from its own stream seeded by (seed, attempt
    index), so datasets are reproducible and demonstrations independent.
    Failed demonstrations are resampled from the next attempt index.
    """
    if demos < 1:
        raise ConfigError("demos must be at least 1")
    xs, ys, us = [], [], []
    collected = 0
    attempt = 0
    cap = ATTEMPT_CAP_FACTOR * demos
    failures = 0
    while collected < demos:
        if attempt >= cap:
            raise ConvergenceError(
                f"expert failed too often: {collected}/{demos} demonstrations "
                f"after {attempt} attempts"
            )
        rng = np.random.default_rng([int(seed), attempt])
        attempt += 1
        try:
            X, Y, U = env.demo(rng)
        except DemoFailure:
            failures += 1
            continue
        xs.append(X)
        ys.append(Y)
        us.append(U)
        collected += 1
    return Dataset(
        env_name=env.name,
        m=env.m,
        d=env.d,
        n=env.n,
        X=np.concatenate(xs, axis=0),
        Y=np.concatenate(ys, axis=0),
        U=np.concatenate(us, axis=0),
        provenance={
            "seed": int(seed),
            "demos": int(demos),
            "failed_attempts": failures,
        },
    )


def save_dataset(ds: Dataset, path: str) -> None:
    header = {
        "format": DATASET_FORMAT,
        "env": ds.env_name,
        "m": ds.m,
        "d": ds.d,
        "n": ds.n,
        "count": len(ds),
        "provenance": ds.provenance,
    }
    with open(path, "w") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for x, y, u in zip(ds.X, ds.Y, ds.U):
            row = {"x": x.tolist(), "y": y.tolist(), "u": u.tolist()}
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def load_dataset(path: str) -> Dataset:
    """Parse a JSONL dataset; malformed content is reported with its
    1-based line number."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ConfigError(f"{path}: empty file, expected a dataset header")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line 1: invalid JSON header: {exc}") from exc
    if not isinstance(header, dict) or header.get("format") != DATASET_FORMAT:
        raise ConfigError(
            f"{path}: line 1: not a {DATASET_FORMAT} header"
        )
    m, d, n = int(header["m"]), int(header["d"]), int(header["n"])
    count = int(header["count"])
    xs, ys, us = [], [], []
    for lineno, raw in enumerate(lines[1:], start=2):
        if not raw.strip():
            continue
        try:
            row = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: line {lineno}: invalid JSON: {exc}") from exc
        try:
            x, y, u = row["x"], row["y"], row["u"]
        except (TypeError, KeyError) as exc:
            raise ConfigError(
                f"{path}: line {lineno}: sample must have x, y, u"
            ) from exc
        if len(x) != m or len(y) != d or len(u) != n:
            raise ConfigError(
                f"{path}: line {lineno}: sample dims do not match header"
            )
        xs.append(x)
        ys.append(y)
        us.append(u)
    if len(xs) != count:
        raise ConfigError(
            f"{path}: header declares {count} samples but file has {len(xs)}"
        )
    return Dataset(
        env_name=str(header["env"]),
        m=m,
        d=d,
        n=n,
        X=np.array(xs, dtype=float).reshape(count, m),
        Y=np.array(ys, dtype=float).reshape(count, d),
        U=np.array(us, dtype=float).reshape(count, n),
        provenance=dict(header.get("provenance", {})),
    )


def encode_dataset(ds: Dataset, autoencoder) -> Dataset:
    """Replace image observations with their latent codes."""
    from .envs.pointmass import encode_batch

    Z = encode_batch(autoencoder, ds.Y)
    return Dataset(
        env_name=ds.env_name,
        m=ds.m,
        d=Z.shape[1],
        n=ds.n,
        X=ds.X.copy(),
        Y=Z,
        U=ds.U.copy(),
        provenance={**ds.provenance, "encoded": True, "latent_dim": Z.shape[1]},
    )
