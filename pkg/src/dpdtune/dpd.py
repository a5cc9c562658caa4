"""Density power divergence log-potential and its derivatives.

For one observation the log-potential is

    D(y; theta) = f(y)^gamma / gamma - int f^(1+gamma) / (1 + gamma)

which, after adding the constant ``1 - 1/gamma``, tends to ``log f(y)`` as
gamma goes to zero. Powers of the density are formed as
``exp(gamma * log f)`` so nothing underflows before it has to.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import models
from .errors import EmptyDataset
from .models import LOG_2PI, ModelSpec


@dataclass(frozen=True)
class PotentialTerms:
    log_pot: float
    d1_y: float
    d2_y: float
    d_gamma: float


def _integral_term(model, theta, gamma):
    # int f^(1+gamma) / (1+gamma)
    return models.power_integral(model, theta, gamma) / (1.0 + gamma)


def log_potential(model: ModelSpec, theta, gamma, y, x=None):
    models._check_gamma(gamma)
    logf = models.log_density(model, theta, y, x)
    return np.exp(gamma * logf) / gamma - _integral_term(model, theta, gamma)


def log_potential_rescaled(model: ModelSpec, theta, gamma, y, x=None):
    """``log_potential + 1 - 1/gamma``; recovers the log-likelihood as gamma -> 0."""
    models._check_gamma(gamma)
    logf = models.log_density(model, theta, y, x)
    _, sigma = models.split_theta(model, theta)
    log2pis2 = LOG_2PI + 2.0 * np.log(sigma)
    # 1 - int f^(1+g)/(1+g) written with expm1 to survive tiny gamma
    tail = -np.expm1(-0.5 * gamma * log2pis2 - 1.5 * np.log1p(gamma))
    return np.expm1(gamma * logf) / gamma + tail


def potential_terms(model: ModelSpec, theta, gamma, y, x=None) -> PotentialTerms:
    """Log-potential with its response derivatives and its gamma derivative."""
    models._check_gamma(gamma)
    logf = models.log_density(model, theta, y, x)
    loc = models.location(model, theta, x)
    _, sigma = models.split_theta(model, theta)
    s2 = sigma * sigma
    r = np.asarray(y, dtype=float) - loc
    w = np.exp(gamma * logf)
    log2pis2 = LOG_2PI + 2.0 * np.log(sigma)
    a = np.exp(-0.5 * gamma * log2pis2)
    d_gamma = w * (gamma * logf - 1.0) / gamma**2 + 0.5 * a * (1.0 + gamma) ** -2.5 * (
        (1.0 + gamma) * log2pis2 + 3.0
    )
    return PotentialTerms(
        log_pot=w / gamma - _integral_term(model, theta, gamma),
        d1_y=-w * r / s2,
        d2_y=w * (gamma * r * r - s2) / (s2 * s2),
        d_gamma=d_gamma,
    )


def total_log_potential(model: ModelSpec, theta, gamma, dataset) -> float:
    y = np.asarray(dataset.y, dtype=float)
    if y.size == 0:
        raise EmptyDataset("dataset has no observations")
    x = None if dataset.x is None else np.asarray(dataset.x, dtype=float)
    return float(np.sum(log_potential(model, theta, gamma, y, x)))
