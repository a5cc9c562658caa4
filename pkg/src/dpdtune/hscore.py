"""Batch Hyvarinen score of the DPD pseudo-model and its gamma-gradient.

With ``c1 = d2D/dy2 + (dD/dy)^2`` and ``c2 = dD/dy`` for each observation,
the batch score against a weighted posterior sample is

    H(gamma) = sum_i 2 E[c1_i] - E[c2_i]^2

and differentiating the posterior expectations through the posterior's own
dependence on gamma gives

    dH/dgamma = 2 sum_i (E[dc1_i] + Cov(c1_i, D'))
                - 2 sum_i E[c2_i] (E[dc2_i] + Cov(c2_i, D'))

where ``D'`` is the gamma-derivative of the full-data potential. Expanding
the covariances yields the usual four-term expression.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _backend, dpd, models
from .errors import DegenerateSample, EmptyDataset
from .models import ModelSpec


@dataclass
class WeightedSample:
    thetas: np.ndarray
    weights: np.ndarray = None

    def __post_init__(self):
        self.thetas = np.atleast_2d(np.asarray(self.thetas, dtype=float))
        n = self.thetas.shape[0]
        if self.weights is None:
            self.weights = np.full(n, 1.0 / n)
        self.weights = np.asarray(self.weights, dtype=float)
        if self.weights.shape != (n,):
            raise ValueError("one weight per particle is required")
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > 1e-10:
            raise ValueError("weights must be nonnegative and sum to one")

    @property
    def size(self) -> int:
        return self.thetas.shape[0]


@dataclass
class HScoreReport:
    h_total: float
    dh_dgamma: float = float("nan")
    # columns: E[c1], E[c2], E[c2]^2 (the variance correction)
    per_obs: np.ndarray = field(default_factory=lambda: np.empty((0, 3)))


def c_terms(model: ModelSpec, theta, gamma, y, x=None):
    t = dpd.potential_terms(model, theta, gamma, y, x)
    return t.d2_y + t.d1_y**2, t.d1_y


def dc_terms_dgamma(model: ModelSpec, theta, gamma, y, x=None):
    logf = models.log_density(model, theta, y, x)
    loc = models.location(model, theta, x)
    _, sigma = models.split_theta(model, theta)
    s2 = sigma * sigma
    r = np.asarray(y, dtype=float) - loc
    w = np.exp(gamma * logf)
    dc1 = (w * (gamma * r * r - s2) * logf + w * r * r + 2.0 * w * w * r * r * logf) / (s2 * s2)
    dc2 = -(w * r / s2) * logf
    return dc1, dc2


def _moments(model, sample, gamma, dataset, require_spread):
    if dataset.n == 0:
        raise EmptyDataset("dataset has no observations")
    if require_spread and sample.size > 1 and np.max(sample.weights) >= 1.0 - 1e-12:
        raise DegenerateSample("all weight sits on one particle")
    models.split_theta(model, sample.thetas)
    X = model.design(dataset.n, dataset.x)
    return _backend.kernels().hscore_stats(
        np.ascontiguousarray(sample.thetas),
        np.ascontiguousarray(sample.weights),
        np.ascontiguousarray(dataset.y),
        X,
        float(gamma),
        _backend.threads(),
    )


def h_score(model, sample: WeightedSample, gamma, dataset, require_spread=False) -> HScoreReport:
    e_c1, e_c2, _, _ = _moments(model, sample, gamma, dataset, require_spread)
    e_c1, e_c2 = np.asarray(e_c1), np.asarray(e_c2)
    per_obs = np.column_stack([e_c1, e_c2, e_c2**2])
    return HScoreReport(h_total=float(np.sum(2.0 * e_c1 - e_c2**2)), per_obs=per_obs)


def h_score_gradient(model, sample: WeightedSample, gamma, dataset, require_spread=False) -> float:
    _, e_c2, g1, g2 = _moments(model, sample, gamma, dataset, require_spread)
    return float(2.0 * np.sum(g1) - 2.0 * np.sum(np.asarray(e_c2) * np.asarray(g2)))


def h_score_report(model, sample: WeightedSample, gamma, dataset, require_spread=False) -> HScoreReport:
    """Score and gradient from a single pass over the particles."""
    e_c1, e_c2, g1, g2 = (np.asarray(a) for a in _moments(model, sample, gamma, dataset, require_spread))
    return HScoreReport(
        h_total=float(np.sum(2.0 * e_c1 - e_c2**2)),
        dh_dgamma=float(2.0 * np.sum(g1) - 2.0 * np.sum(e_c2 * g2)),
        per_obs=np.column_stack([e_c1, e_c2, e_c2**2]),
    )
