"""Exception types shared across the package."""

from __future__ import annotations

import numpy as np


class StableBCError(Exception):
    """Base class for all package-specific errors."""


class DimensionError(StableBCError):
    """An array argument has the wrong shape or an unsupported size."""


class DomainError(StableBCError):
    """A scalar or array argument is outside the mathematical domain."""


class ConvergenceError(StableBCError):
    """An iterative routine hit its iteration cap before converging.

    ``partial_values`` holds whatever results were extracted before the
    stall (possibly empty) and ``complete`` is always False so callers can
    distinguish a partial answer from a converged one.
    """

    def __init__(self, message: str, partial_values: np.ndarray | None = None):
        super().__init__(message)
        self.partial_values = partial_values
        self.complete = False


class DegenerateGradientError(StableBCError):
    """A matrix function is not differentiable at the evaluation point.

    Raised when the top two singular values coincide (spectral norm) or an
    eigenpair is near-defective (eigenvalue penalty), so no reliable
    gradient exists.
    """


class UnsupportedConfigError(StableBCError):
    """A configuration combination is recognized but not supported."""


class ConfigError(StableBCError):
    """A user-supplied configuration document is malformed."""


class TrainingDivergedError(StableBCError):
    """A training loss became non-finite."""

    def __init__(self, message: str, epoch: int, batch_index: int):
        super().__init__(message)
        self.epoch = epoch
        self.batch_index = batch_index
