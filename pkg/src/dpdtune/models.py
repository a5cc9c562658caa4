"""Parametric response models.

Two models are supported, both with normal errors and a scalar response:

* ``gaussian()``: ``y ~ N(mu, sigma^2)`` with ``theta = (mu, sigma)``.
* ``regression(p)``: ``y ~ N(x @ beta, sigma^2)`` with
  ``theta = (beta_1, ..., beta_p, sigma)`` and no intercept column.

The scale ``sigma`` is always the last coordinate of ``theta`` and is stored
directly (not on the log scale). Either model can hold the scale fixed at a
known value (``known_scale``); ``theta`` keeps its shape and samplers simply
never move the pinned coordinate. Functions broadcast over a leading particle
axis of ``theta`` where that is convenient, but the documented contract is
for a single parameter point.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import MissingCovariates, NonPositiveGamma, NonPositiveScale

LOG_2PI = math.log(2.0 * math.pi)


class ModelKind(str, enum.Enum):
    GAUSSIAN = "gaussian"
    REGRESSION = "regression"


@dataclass(frozen=True)
class ModelSpec:
    kind: ModelKind
    covariate_dim: int = 0
    known_scale: Optional[float] = None

    def __post_init__(self):
        if self.known_scale is not None and not (
            math.isfinite(self.known_scale) and self.known_scale > 0
        ):
            raise NonPositiveScale(f"known scale must be positive, got {self.known_scale}")
        if self.kind is ModelKind.GAUSSIAN and self.covariate_dim != 0:
            raise ValueError("the Gaussian model takes no covariates")
        if self.kind is ModelKind.REGRESSION and self.covariate_dim < 1:
            raise ValueError("regression needs at least one covariate")

    @property
    def param_dim(self) -> int:
        if self.kind is ModelKind.GAUSSIAN:
            return 2
        return self.covariate_dim + 1

    @property
    def free_mask(self) -> np.ndarray:
        """Coordinates of ``theta`` that samplers update."""
        mask = np.ones(self.param_dim, dtype=bool)
        if self.known_scale is not None:
            mask[-1] = False
        return mask

    @property
    def free_dim(self) -> int:
        return int(self.free_mask.sum())

    @property
    def param_names(self) -> list[str]:
        if self.kind is ModelKind.GAUSSIAN:
            return ["mu", "sigma"]
        if self.covariate_dim == 1:
            return ["beta", "sigma"]
        return [f"beta{k + 1}" for k in range(self.covariate_dim)] + ["sigma"]

    def design(self, n: int, x=None) -> np.ndarray:
        """Return the ``(n, p)`` design matrix used by the particle kernels.

        The Gaussian model is treated as a regression on a column of ones, so
        ``loc = design @ theta[:-1]`` covers both cases.
        """
        if self.kind is ModelKind.GAUSSIAN:
            return np.ones((n, 1))
        if x is None:
            raise MissingCovariates("regression model requires covariates")
        x = np.asarray(x, dtype=float).reshape(n, -1)
        if x.shape[1] != self.covariate_dim:
            raise ValueError(
                f"expected {self.covariate_dim} covariate columns, got {x.shape[1]}"
            )
        return np.ascontiguousarray(x)


def gaussian(sigma: Optional[float] = None) -> ModelSpec:
    """Normal location-scale model; pass ``sigma`` to treat the scale as known."""
    return ModelSpec(ModelKind.GAUSSIAN, known_scale=sigma)


def regression(p: int = 1, sigma: Optional[float] = None) -> ModelSpec:
    return ModelSpec(ModelKind.REGRESSION, covariate_dim=p, known_scale=sigma)


def _check_gamma(gamma):
    if not np.all(np.asarray(gamma) > 0):
        raise NonPositiveGamma(f"gamma must be positive, got {gamma}")


def split_theta(model: ModelSpec, theta):
    """Return ``(coef, sigma)``; raises on a non-positive scale."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape[-1] != model.param_dim:
        raise ValueError(
            f"theta has {theta.shape[-1]} coordinates, model needs {model.param_dim}"
        )
    sigma = theta[..., -1]
    if not np.all(sigma > 0):
        raise NonPositiveScale("sigma must be strictly positive")
    return theta[..., :-1], sigma


def location(model: ModelSpec, theta, x=None):
    """Mean of the response: ``mu`` or ``x @ beta``."""
    coef, _ = split_theta(model, theta)
    if model.kind is ModelKind.GAUSSIAN:
        if x is not None:
            raise ValueError("the Gaussian model takes no covariates")
        return coef[..., 0]
    if x is None:
        raise MissingCovariates("regression model requires a covariate row")
    x = np.asarray(x, dtype=float)
    return np.sum(coef * x, axis=-1)


def log_density(model: ModelSpec, theta, y, x=None):
    loc = location(model, theta, x)
    sigma = np.asarray(theta, dtype=float)[..., -1]
    r = (np.asarray(y, dtype=float) - loc) / sigma
    return -0.5 * r * r - np.log(sigma) - 0.5 * LOG_2PI


def density(model: ModelSpec, theta, y, x=None):
    return np.exp(log_density(model, theta, y, x))


def d_density_dy(model: ModelSpec, theta, y, x=None):
    """First and second derivatives of the density in the response."""
    f = density(model, theta, y, x)
    loc = location(model, theta, x)
    s2 = np.asarray(theta, dtype=float)[..., -1] ** 2
    r = np.asarray(y, dtype=float) - loc
    return -f * r / s2, f * (r * r - s2) / (s2 * s2)


def power_integral(model: ModelSpec, theta, gamma):
    r"""Closed form of :math:`\int f_\theta(t)^{1+\gamma} dt` for normal errors."""
    _check_gamma(gamma)
    _, sigma = split_theta(model, theta)
    log2pis2 = LOG_2PI + 2.0 * np.log(sigma)
    return np.exp(-0.5 * gamma * log2pis2 - 0.5 * np.log1p(gamma))


def d_power_integral_dgamma(model: ModelSpec, theta, gamma):
    r"""Derivative of :func:`power_integral` in gamma, i.e. :math:`\int f^{1+\gamma}\log f`."""
    _check_gamma(gamma)
    _, sigma = split_theta(model, theta)
    log2pis2 = LOG_2PI + 2.0 * np.log(sigma)
    return power_integral(model, theta, gamma) * (-0.5 * log2pis2 - 0.5 / (1.0 + gamma))
