"""Velocity-controlled point mass with an image-valued goal observation.

The robot state is a planar position, the action its commanded velocity,
and the goal is communicated only as a one-hot image: a square grid over
the workspace with 1.0 at the pixel containing the goal and 0.0
elsewhere, flattened row-major. Policies consume a low-dimensional
encoding of that image produced by an autoencoder trained on the
demonstration images, so the planner sees (x, encode(y)).

Each demonstration is a single (x, y, u) sample from the proportional
expert u = k (goal - x).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, DimensionError, DomainError
from ..stability import SystemModel


@dataclass(frozen=True)
class PointMassSpec:
    dt: float = 0.1
    horizon: int = 30
    workspace_low: tuple = (-10.0, -10.0)
    workspace_high: tuple = (10.0, 10.0)
    resolution: int = 21
    k_expert: float = 1.0
    latent_dim: int = 10
    success_radius: float = 0.5

    def __post_init__(self):
        if self.resolution < 1:
            raise ConfigError("resolution must be at least 1")
        if self.dt <= 0 or self.horizon < 1:
            raise ConfigError("dt must be positive and horizon at least 1")
        lo = np.asarray(self.workspace_low)
        hi = np.asarray(self.workspace_high)
        if np.any(hi <= lo):
            raise ConfigError("workspace_high must exceed workspace_low")


@dataclass
class PointMassEpisode:
    x: np.ndarray
    goal: np.ndarray
    image: np.ndarray


class PointMassEnv:
    name = "pointmass"
    m = 2
    n = 2
    dynamic_observation = False

    def __init__(self, spec: PointMassSpec | None = None):
        self.spec = spec if spec is not None else PointMassSpec()

    @property
    def d(self) -> int:
        return self.spec.resolution**2

    # -- observation ---------------------------------------------------

    def render_goal_image(self, goal) -> np.ndarray:
        """One-hot grid image of the goal cell, flattened row-major."""
        s = self.spec
        goal = np.asarray(goal, dtype=float)
        if goal.shape != (2,):
            raise DimensionError("goal must be a 2-vector")
        lo = np.asarray(s.workspace_low)
        hi = np.asarray(s.workspace_high)
        if np.any(goal < lo) or np.any(goal > hi):
            raise DomainError("goal outside the workspace")
        cell = (hi - lo) / s.resolution
        idx = np.floor((goal - lo) / cell).astype(int)
        idx = np.minimum(idx, s.resolution - 1)  # top edge closes the last cell
        img = np.zeros((s.resolution, s.resolution))
        img[idx[1], idx[0]] = 1.0  # row = y cell, column = x cell
        return img.ravel()

    # -- episode protocol ------------------------------------------------

    def init_episode(self, rng, protocol: str = "matched") -> PointMassEpisode:
        s = self.spec
        x = rng.uniform(s.workspace_low, s.workspace_high)
        goal = rng.uniform(s.workspace_low, s.workspace_high)
        return PointMassEpisode(x=x, goal=goal, image=self.render_goal_image(goal))

    def observation(self, ep: PointMassEpisode):
        return ep.x.copy(), ep.image.copy()

    def expert_action(self, ep: PointMassEpisode, rng) -> np.ndarray:
        return self.spec.k_expert * (ep.goal - ep.x)

    def advance(self, ep: PointMassEpisode, u, rng, protocol: str = "matched") -> None:
        ep.x = ep.x + np.asarray(u, dtype=float) * self.spec.dt

    def status(self, ep: PointMassEpisode, t: int):
        if np.linalg.norm(ep.x - ep.goal) < self.spec.success_radius:
            return "success"
        return "timeout" if t >= self.spec.horizon else None

    def final_error(self, ep: PointMassEpisode) -> float:
        return float(np.linalg.norm(ep.x - ep.goal))

    # -- demonstrations ---------------------------------------------------

    def demo(self, rng) -> tuple:
        ep = self.init_episode(rng, "matched")
        u = self.expert_action(ep, rng)
        return ep.x[None, :], ep.image[None, :], u[None, :]

    # -- model -------------------------------------------------------------

    def system_model(self, latent_dim: int | None = None) -> SystemModel:
        if latent_dim is None:
            latent_dim = self.spec.latent_dim
        dfdx = np.zeros((2, 2))
        dfdu = np.eye(2)

        def f_jacobians(x, u):
            return dfdx, dfdu

        # policies act on the fixed latent goal code, whose dynamics
        # vanish identically
        return SystemModel(
            m=2, d=latent_dim, n=2, f_jacobians=f_jacobians, g_static=True
        )


# -- autoencoder ------------------------------------------------------------


@dataclass
class Autoencoder:
    """Tanh-hidden MLP autoencoder over flattened goal images."""

    enc_weights: list
    enc_biases: list
    dec_weights: list
    dec_biases: list
    latent_dim: int
    recon_mse: float = field(default=float("nan"))


def _mlp_apply(weights, biases, h: np.ndarray) -> np.ndarray:
    for i, (w, b) in enumerate(zip(weights, biases)):
        h = h @ w.T + b
        if i < len(weights) - 1:
            h = np.tanh(h)
    return h


def encode_batch(ae: Autoencoder, images: np.ndarray) -> np.ndarray:
    images = np.asarray(images, dtype=float)
    if images.ndim != 2 or images.shape[1] != ae.enc_weights[0].shape[1]:
        raise DimensionError("image batch has the wrong width")
    return _mlp_apply(ae.enc_weights, ae.enc_biases, images)


def encode(ae: Autoencoder, image) -> np.ndarray:
    return encode_batch(ae, np.asarray(image, dtype=float)[None, :])[0]


def decode(ae: Autoencoder, z) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    return _mlp_apply(ae.dec_weights, ae.dec_biases, z[None, :])[0]


def train_autoencoder(
    images: np.ndarray,
    latent_dim: int = 10,
    hidden: int = 64,
    epochs: int = 500,
    learning_rate: float = 1e-3,
    seed: int = 0,
) -> Autoencoder:
    """Fit the autoencoder to ``images`` by full-batch reconstruction MSE."""
    from ..trainer import AdamState, adam_step

    images = np.asarray(images, dtype=float)
    if images.ndim != 2:
        raise DimensionError("images must be a 2-D batch")
    n, width = images.shape
    if n == 0:
        raise DimensionError("cannot train an autoencoder on zero images")
    sizes = [width, hidden, latent_dim, hidden, width]
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))

    params = []
    for w, b in zip(weights, biases):
        params.extend([w, b])
    adam = AdamState.for_params(params)

    def forward_backward():
        # manual forward with tanh hiddens, linear output of each half
        hs = [images]
        h = images
        for i, (w, b) in enumerate(zip(weights, biases)):
            z = h @ w.T + b
            h = np.tanh(z) if i < len(weights) - 1 else z
            hs.append(h)
        err = hs[-1] - images
        loss = float(np.sum(err * err)) / n
        grad_h = 2.0 * err / n
        grads = []
        for i in reversed(range(len(weights))):
            if i < len(weights) - 1:
                grad_h = grad_h * (1.0 - hs[i + 1] ** 2)
            grads.append(grad_h.sum(axis=0))   # dL/db
            grads.append(grad_h.T @ hs[i])     # dL/dW
            grad_h = grad_h @ weights[i]
        grads.reverse()  # yields [dW_0, db_0, dW_1, db_1, ...]
        return loss, grads

    loss = float("nan")
    for _ in range(epochs):
        loss, grads = forward_backward()
        adam_step(params, grads, adam, learning_rate)

    loss, _ = forward_backward()
    return Autoencoder(
        enc_weights=[w.copy() for w in weights[:2]],
        enc_biases=[b.copy() for b in biases[:2]],
        dec_weights=[w.copy() for w in weights[2:]],
        dec_biases=[b.copy() for b in biases[2:]],
        latent_dim=latent_dim,
        recon_mse=loss,
    )


def autoencoder_to_dict(ae: Autoencoder) -> dict:
    return {
        "latent_dim": ae.latent_dim,
        "recon_mse": ae.recon_mse,
        "enc_weights": [w.tolist() for w in ae.enc_weights],
        "enc_biases": [b.tolist() for b in ae.enc_biases],
        "dec_weights": [w.tolist() for w in ae.dec_weights],
        "dec_biases": [b.tolist() for b in ae.dec_biases],
    }


def autoencoder_from_dict(data: dict) -> Autoencoder:
    return Autoencoder(
        enc_weights=[np.array(w, dtype=float) for w in data["enc_weights"]],
        enc_biases=[np.array(b, dtype=float) for b in data["enc_biases"]],
        dec_weights=[np.array(w, dtype=float) for w in data["dec_weights"]],
        dec_biases=[np.array(b, dtype=float) for b in data["dec_biases"]],
        latent_dim=int(data["latent_dim"]),
        recon_mse=float(data["recon_mse"]),
    )
