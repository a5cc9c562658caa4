"""Pure numpy implementation of the particle kernels.

Mirrors ``_ckernels.pyx`` function for function; :mod:`dpdtune._backend`
picks one at import. All kernels work on a design matrix ``X`` of shape
``(n, p)`` with ``loc = X @ theta[:p]`` and ``sigma = theta[p]`` (the Gaussian
model uses a column of ones).

``gamma == 0`` is accepted internally and means the plain log-likelihood,
which is the gamma -> 0 limit of the rescaled potential.
"""
from __future__ import annotations

import math

import numpy as np

LOG_2PI = math.log(2.0 * math.pi)


def _log_dens(theta, y, X):
    loc = theta[:, :-1] @ X.T
    sigma = theta[:, -1]
    r = y[None, :] - loc
    logf = -0.5 * (r / sigma[:, None]) ** 2 - np.log(sigma)[:, None] - 0.5 * LOG_2PI
    return logf, r, sigma


def log_target(theta, y, X, gamma, num_threads=1):
    """Summed rescaled DPD log-potential for each row of ``theta``."""
    theta = np.atleast_2d(theta)
    logf, _, sigma = _log_dens(theta, y, X)
    if gamma == 0.0:
        return logf.sum(axis=1)
    n = y.shape[0]
    tail = -np.expm1(-0.5 * gamma * (LOG_2PI + 2.0 * np.log(sigma)) - 1.5 * math.log1p(gamma))
    return np.expm1(gamma * logf).sum(axis=1) / gamma + n * tail


def mh_chain(theta, logpot, steps, logu, y, X, gamma, lam, lower, upper, num_threads=1):
    """Run ``steps.shape[0]`` random-walk Metropolis steps on every particle.

    ``theta`` (N, d) and ``logpot`` (N,) are updated in place; ``logpot`` must
    hold ``lam * log_target(theta)``. Proposals outside the open box
    ``(lower, upper)`` are rejected. Returns per-particle acceptance counts.
    """
    n_particles = theta.shape[0]
    accepted = np.zeros(n_particles, dtype=np.int64)
    for m in range(steps.shape[0]):
        prop = theta + steps[m]
        inside = np.all((prop > lower) & (prop < upper), axis=1)
        lp = np.full(n_particles, -np.inf)
        if inside.any():
            lp[inside] = lam * log_target(prop[inside], y, X, gamma)
        acc = inside & (logu[m] < lp - logpot)
        theta[acc] = prop[acc]
        logpot[acc] = lp[acc]
        accepted += acc
    return accepted


def hscore_stats(theta, weights, y, X, gamma, num_threads=1):
    """Weighted per-observation moments for the H-score and its gradient.

    Returns ``(e_c1, e_c2, g1, g2)``, each of length n, where
    ``g_k = E[dc_k/dgamma] + Cov(c_k, dD/dgamma)``. The covariance is taken
    against the full-data gamma-derivative of the potential, shifted by the
    particle-independent constant ``n / gamma^2`` to avoid cancellation.
    """
    theta = np.atleast_2d(theta)
    logf, r, sigma = _log_dens(theta, y, X)
    s2 = (sigma * sigma)[:, None]
    n = y.shape[0]
    gl = gamma * logf
    w = np.exp(gl)
    r2 = r * r
    core = w * (gamma * r2 - s2)
    c2 = -w * r / s2
    c1 = (core + w * w * r2) / (s2 * s2)
    dc2 = c2 * logf
    dc1 = (core * logf + w * r2 + 2.0 * w * w * r2 * logf) / (s2 * s2)
    log2pis2 = LOG_2PI + 2.0 * np.log(sigma)
    a = np.exp(-0.5 * gamma * log2pis2)
    dpot = (gl * w - np.expm1(gl)).sum(axis=1) / gamma**2 + 0.5 * n * a * (
        1.0 + gamma
    ) ** -2.5 * ((1.0 + gamma) * log2pis2 + 3.0)
    dcen = weights * (dpot - weights @ dpot)
    return (
        weights @ c1,
        weights @ c2,
        weights @ dc1 + dcen @ c1,
        weights @ dc2 + dcen @ c2,
    )


def mh_trace(theta, logpot, steps, logu, y, X, gamma, lower, upper, chain):
    """Single-chain random-walk Metropolis, recording every state in ``chain``.

    ``theta`` has shape (1, d), ``steps`` (M, 1, d), ``logu`` (M, 1) and
    ``chain`` (M, d). ``theta`` and ``logpot`` are updated in place; returns
    the number of accepted proposals.
    """
    cur = theta[0].copy()
    lp_cur = float(logpot[0])
    accepted = 0
    for m in range(steps.shape[0]):
        prop = cur + steps[m, 0]
        if np.all(prop > lower) and np.all(prop < upper):
            lp = float(log_target(prop[None, :], y, X, gamma)[0])
            if logu[m, 0] < lp - lp_cur:
                cur = prop
                lp_cur = lp
                accepted += 1
        chain[m] = cur
    theta[0] = cur
    logpot[0] = lp_cur
    return accepted
