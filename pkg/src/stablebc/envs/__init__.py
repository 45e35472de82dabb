"""Simulation environments and their scripted experts."""

from __future__ import annotations

import dataclasses

from ..errors import ConfigError
from .base import DemoFailure, Trajectory, episode_rng
from .driving import DrivingEnv, DrivingSpec, driving_cost
from .pointmass import (
    Autoencoder,
    PointMassEnv,
    PointMassSpec,
    autoencoder_from_dict,
    autoencoder_to_dict,
    decode,
    encode,
    encode_batch,
    train_autoencoder,
)
from .quadrotor import QuadrotorEnv, QuadrotorSpec

_REGISTRY = {
    "driving": (DrivingEnv, DrivingSpec),
    "quadrotor": (QuadrotorEnv, QuadrotorSpec),
    "pointmass": (PointMassEnv, PointMassSpec),
}


def env_names() -> tuple:
    return tuple(sorted(_REGISTRY))


def make_env(name: str, overrides: dict | None = None):
    """Build an environment by name, applying spec overrides from config.

    Unknown environment names and unknown spec keys are rejected rather
    than ignored so config typos fail loudly.
    """
    if name not in _REGISTRY:
        raise ConfigError(
            f"unknown environment {name!r}; expected one of {', '.join(env_names())}"
        )
    env_cls, spec_cls = _REGISTRY[name]
    overrides = dict(overrides or {})
    valid = {f.name for f in dataclasses.fields(spec_cls)}
    unknown = sorted(set(overrides) - valid)
    if unknown:
        raise ConfigError(
            f"unknown {name} spec keys: {', '.join(unknown)}"
        )
    # tuples in specs arrive as lists from JSON configs
    cleaned = {}
    for key, value in overrides.items():
        if isinstance(value, list):
            value = tuple(value)
        cleaned[key] = value
    return env_cls(spec_cls(**cleaned))


__all__ = [
    "Autoencoder",
    "DemoFailure",
    "DrivingEnv",
    "DrivingSpec",
    "PointMassEnv",
    "PointMassSpec",
    "QuadrotorEnv",
    "QuadrotorSpec",
    "Trajectory",
    "autoencoder_from_dict",
    "autoencoder_to_dict",
    "decode",
    "driving_cost",
    "encode",
    "encode_batch",
    "env_names",
    "episode_rng",
    "make_env",
    "train_autoencoder",
]
