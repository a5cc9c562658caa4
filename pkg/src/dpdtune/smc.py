"""SMC sampler over a sequence of DPD posteriors indexed by gamma.

One step moves a particle approximation of ``Pi_{gamma_old}`` to
``Pi_{gamma_new}``: importance weights from the ratio of potentials at the
current particles, multinomial resampling, then random-walk Metropolis moves
whose covariance is ``2.38 / sqrt(d)`` times the weighted particle covariance.

Randomness comes from a single master seed. Every consumer draws from its
own ``numpy.random.SeedSequence(seed, spawn_key=(stage, step, purpose))`` so
a run is reproducible irrespective of the kernel backend's thread count.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.special import logsumexp

from . import _backend, models
from .errors import (
    DegenerateWeights,
    InvalidParticleCount,
    NonPositiveGamma,
    SingularCovariance,
)
from .models import ModelKind, ModelSpec

log = logging.getLogger(__name__)

GAMMA_MIN = 1e-4
GAMMA_MAX = 2.0
COV_JITTER = 1e-10

# spawn-key tags
_INIT, _WARMUP, _STEP, _TEMPER = 0, 1, 2, 3
_RESAMPLE, _MOVE = 0, 1


def stream(seed: int, *key: int) -> np.random.Generator:
    """Generator for the sub-stream ``key`` of master ``seed``."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(key)))


@dataclass
class FlatPrior:
    """Improper flat prior on the coefficients and on ``sigma > 0``.

    Sampling from it is undefined, so particles start from a data-driven box
    (``box_lower``, ``box_upper``); see :meth:`from_data`.
    """

    box_lower: np.ndarray
    box_upper: np.ndarray

    @property
    def dim(self) -> int:
        return self.box_lower.size

    @property
    def lower(self) -> np.ndarray:
        lo = np.full(self.dim, -np.inf)
        lo[-1] = 0.0
        return lo

    @property
    def upper(self) -> np.ndarray:
        return np.full(self.dim, np.inf)

    def log_density(self, theta) -> np.ndarray:
        theta = np.atleast_2d(theta)
        ok = np.all((theta > self.lower) & (theta < self.upper), axis=1)
        return np.where(ok, 0.0, -np.inf)

    def sample_init(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.uniform(self.box_lower, self.box_upper, size=(n, self.dim))

    def box_bounds(self):
        """Move bounds inside the box; pinned coordinates (zero width) are left open."""
        pinned = self.box_lower == self.box_upper
        return (np.where(pinned, self.lower, self.box_lower),
                np.where(pinned, self.upper, self.box_upper))

    @classmethod
    def from_data(cls, model: ModelSpec, dataset) -> "FlatPrior":
        """Initialisation box.

        Gaussian: ``mu ~ U(min y - 2 sd, max y + 2 sd)``. Regression: each
        ``beta_k`` uniform on the OLS estimate plus or minus twice the larger
        of ``|beta_ols|`` and ``sd(y) / rms(x_k)``. In both cases
        ``sigma ~ U(0.1 sd, 3 sd)`` with ``sd`` the sample sd of ``y``, or
        exactly the known scale when the model fixes it.
        """
        y = np.asarray(dataset.y, dtype=float)
        sd = float(np.std(y, ddof=1)) if y.size > 1 else 1.0
        if not sd > 0:
            sd = 1.0
        if model.kind is ModelKind.GAUSSIAN:
            lo = [y.min() - 2 * sd]
            hi = [y.max() + 2 * sd]
        else:
            X = model.design(y.size, dataset.x)
            beta, *_ = np.linalg.lstsq(X, y, rcond=None)
            rms = np.sqrt(np.mean(X * X, axis=0))
            half = 2.0 * np.maximum(np.abs(beta), sd / np.where(rms > 0, rms, 1.0))
            lo = list(beta - half)
            hi = list(beta + half)
        if model.known_scale is not None:
            s = float(model.known_scale)
            return cls(np.array(lo + [s]), np.array(hi + [s]))
        return cls(np.array(lo + [0.1 * sd]), np.array(hi + [3.0 * sd]))


@dataclass
class MhConfig:
    n_moves: int = 50
    fallback_scale: float = 0.1
    # fixed proposal covariance; None means adaptive
    fixed_cov: Optional[np.ndarray] = None
    # resample only when ESS < ess_threshold * N (None: every step)
    ess_threshold: Optional[float] = None

    def __post_init__(self):
        if self.n_moves < 1:
            raise ValueError("n_moves must be at least 1")
        if not self.fallback_scale > 0:
            raise ValueError("fallback_scale must be positive")


@dataclass
class ParticleSystem:
    step: int
    gamma: float
    particles: np.ndarray
    weights: np.ndarray
    ancestors: np.ndarray
    rng_seed: int
    logpot: Optional[np.ndarray] = None  # rescaled log-target at self.gamma
    ess: float = float("nan")
    accept_rate: float = float("nan")
    info: dict = field(default_factory=dict)

    @property
    def size(self) -> int:
        return self.particles.shape[0]

    def mean(self) -> np.ndarray:
        return self.weights @ self.particles

    def sd(self) -> np.ndarray:
        m = self.mean()
        return np.sqrt(self.weights @ (self.particles - m) ** 2)

    def quantiles(self, qs) -> np.ndarray:
        return np.stack([weighted_quantile(self.particles[:, k], self.weights, qs)
                         for k in range(self.particles.shape[1])], axis=1)


def weighted_quantile(values, weights, qs):
    """Equal-tailed quantiles of a weighted sample (inverse of the weighted CDF)."""
    order = np.argsort(values, kind="stable")
    v = np.asarray(values)[order]
    cw = np.cumsum(np.asarray(weights)[order])
    cw /= cw[-1]
    idx = np.searchsorted(cw, np.asarray(qs), side="left")
    return v[np.clip(idx, 0, v.size - 1)]


def ess(weights) -> float:
    return float(1.0 / np.sum(np.asarray(weights) ** 2))


def normalize_log_weights(logw) -> np.ndarray:
    logw = np.asarray(logw, dtype=float)
    if np.any(np.isnan(logw)):
        raise DegenerateWeights("NaN log-weight")
    top = logsumexp(logw)
    if not np.isfinite(top):
        raise DegenerateWeights("all weights are zero or infinite")
    w = np.exp(logw - top)
    return w / w.sum()


def check_gamma(gamma: float) -> float:
    gamma = float(gamma)
    if not gamma > 0:
        raise NonPositiveGamma(f"gamma must be positive, got {gamma}")
    if not GAMMA_MIN <= gamma <= GAMMA_MAX:
        raise ValueError(f"gamma {gamma} outside [{GAMMA_MIN}, {GAMMA_MAX}]")
    return gamma


def _design(model, dataset):
    return model.design(dataset.n, dataset.x), np.ascontiguousarray(dataset.y, dtype=float)


def log_target(model, particles, gamma, dataset) -> np.ndarray:
    """Rescaled full-data log-potential for each particle (log-likelihood at gamma=0)."""
    X, y = _design(model, dataset)
    return np.asarray(
        _backend.kernels().log_target(np.ascontiguousarray(particles), y, X, float(gamma),
                                      _backend.threads())
    )


def init_particles(model: ModelSpec, prior: FlatPrior, N: int, seed: int, gamma: float = float("nan")) -> ParticleSystem:
    if int(N) < 2:
        raise InvalidParticleCount(f"need at least 2 particles, got {N}")
    N = int(N)
    theta = prior.sample_init(stream(seed, _INIT), N)
    return ParticleSystem(
        step=0,
        gamma=gamma,
        particles=theta,
        weights=np.full(N, 1.0 / N),
        ancestors=np.arange(N),
        rng_seed=int(seed),
    )


def incremental_log_weights(model, system: ParticleSystem, gamma_new, dataset) -> np.ndarray:
    """``D_{gamma_new}(theta) - D_{gamma_old}(theta)`` at the current particles."""
    gamma_new = check_gamma(gamma_new)
    gamma_old = check_gamma(system.gamma)
    if gamma_new == gamma_old:
        return np.zeros(system.size)
    new = log_target(model, system.particles, gamma_new, dataset)
    old = system.logpot
    if old is None:
        old = log_target(model, system.particles, gamma_old, dataset)
    # undo the particle-independent rescaling so this is the raw potential ratio
    return new - old + dataset.n * (1.0 / gamma_new - 1.0 / gamma_old)


def resample_multinomial(system: ParticleSystem, rng: np.random.Generator) -> ParticleSystem:
    w = np.asarray(system.weights, dtype=float)
    if np.any(np.isnan(w)) or np.any(w < 0) or not w.sum() > 0:
        raise DegenerateWeights("weights contain NaN, negatives or sum to zero")
    w = w / w.sum()
    N = system.size
    anc = rng.choice(N, size=N, replace=True, p=w)
    return replace(
        system,
        particles=system.particles[anc].copy(),
        weights=np.full(N, 1.0 / N),
        ancestors=anc,
        logpot=None if system.logpot is None else system.logpot[anc].copy(),
    )


def weighted_moments(particles, weights):
    mean = weights @ particles
    dev = particles - mean
    return mean, (weights[:, None] * dev).T @ dev


def adaptive_proposal_cov(system: ParticleSystem, free=None):
    """Weighted mean and ``2.38 d^{-1/2}`` times the weighted covariance.

    ``free`` (boolean mask) restricts both to the coordinates that move, and
    ``d`` counts only those. Raises :class:`SingularCovariance` when the cloud
    has no spread at all or the jittered covariance still cannot be factorised.
    """
    if system.size < 2:
        raise InvalidParticleCount("need at least 2 particles")
    particles = system.particles if free is None else system.particles[:, free]
    mean, cov = weighted_moments(particles, system.weights)
    d = cov.shape[0]
    if not np.all(np.isfinite(cov)) or np.trace(cov) <= 0.0:
        raise SingularCovariance("particle cloud has zero spread")
    prop = 2.38 / math.sqrt(d) * cov + COV_JITTER * np.eye(d)
    try:
        np.linalg.cholesky(prop)
    except np.linalg.LinAlgError:
        raise SingularCovariance("proposal covariance is not positive definite") from None
    return mean, prop


def _proposal_chol(system, cfg: MhConfig, free=None):
    """Cholesky factor of the proposal; rows and columns of pinned coordinates are zero."""
    d = system.particles.shape[1]
    free = np.ones(d, dtype=bool) if free is None else np.asarray(free, dtype=bool)
    k = int(free.sum())
    if cfg.fixed_cov is not None:
        sub = np.linalg.cholesky(np.asarray(cfg.fixed_cov, dtype=float).reshape(k, k))
    else:
        try:
            _, cov = adaptive_proposal_cov(system, free)
            sub = np.linalg.cholesky(cov)
        except SingularCovariance:
            log.debug("degenerate particle cloud; using fallback proposal scale")
            sub = cfg.fallback_scale * np.eye(k)
    chol = np.zeros((d, d))
    chol[np.ix_(free, free)] = sub
    return chol


def _run_mh(model, system, gamma, lam, dataset, lower, upper, n_moves, chol, rng):
    """Advance every particle ``n_moves`` RW-MH steps targeting ``exp(lam * R_gamma)``."""
    X, y = _design(model, dataset)
    N, d = system.particles.shape
    theta = np.array(system.particles, dtype=float, order="C", copy=True)
    logpot = system.logpot
    if logpot is None:
        logpot = log_target(model, theta, gamma, dataset)
    logpot = lam * np.array(logpot, dtype=float, copy=True)
    steps = rng.standard_normal((n_moves, N, d)) @ chol.T
    logu = np.log(rng.random((n_moves, N)))
    acc = _backend.kernels().mh_chain(
        theta, logpot, np.ascontiguousarray(steps), np.ascontiguousarray(logu), y, X,
        float(gamma), float(lam), np.asarray(lower, dtype=float),
        np.asarray(upper, dtype=float), _backend.threads(),
    )
    rate = float(np.sum(acc)) / (n_moves * N)
    return theta, logpot / lam if lam != 0 else None, rate


def mh_move(model, system: ParticleSystem, gamma, dataset, prior: FlatPrior, cfg: MhConfig,
            rng: np.random.Generator, chol=None) -> ParticleSystem:
    """Random-walk Metropolis rejuvenation targeting ``Pi_gamma``.

    Proposals leaving the prior support (``sigma <= 0``) are rejected. With a
    flat prior the acceptance ratio is the potential ratio alone.
    """
    gamma = check_gamma(gamma)
    if chol is None:
        chol = _proposal_chol(system, cfg, model.free_mask)
    logpot = system.logpot if system.gamma == gamma else None
    theta, logpot, rate = _run_mh(
        model, replace(system, logpot=logpot), gamma, 1.0, dataset,
        prior.lower, prior.upper, cfg.n_moves, chol, rng,
    )
    return replace(system, particles=theta, logpot=logpot, gamma=gamma, accept_rate=rate)


def smc_step(model, system: ParticleSystem, gamma_new, dataset, prior: FlatPrior,
             cfg: MhConfig) -> ParticleSystem:
    """Reweight to ``gamma_new``, resample, then move. Returns step ``t + 1``."""
    t = system.step + 1
    logw = np.log(system.weights) + incremental_log_weights(model, system, gamma_new, dataset)
    W = normalize_log_weights(logw)
    step_ess = ess(W)
    weighted = replace(system, weights=W)
    chol = _proposal_chol(weighted, cfg, model.free_mask)
    if cfg.ess_threshold is None or step_ess < cfg.ess_threshold * system.size:
        rs = resample_multinomial(weighted, stream(system.rng_seed, _STEP, t, _RESAMPLE))
    else:
        rs = replace(weighted, ancestors=np.arange(system.size))
    rs = replace(rs, logpot=None, gamma=float(gamma_new))
    moved = mh_move(model, rs, gamma_new, dataset, prior, cfg,
                    stream(system.rng_seed, _STEP, t, _MOVE), chol=chol)
    return replace(moved, step=t, ess=step_ess)


def _next_lambda(delta_pot, lam, logw_prev, target_ess):
    """Largest increment keeping the ESS at ``target_ess`` (bisection)."""

    def ess_at(l):
        return ess(normalize_log_weights(logw_prev + (l - lam) * delta_pot))

    if ess_at(1.0) >= target_ess:
        return 1.0
    lo, hi = lam, 1.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if ess_at(mid) >= target_ess:
            lo = mid
        else:
            hi = mid
    return max(lo, lam + 1e-12)


def anneal(model, system: ParticleSystem, gamma, dataset, prior: FlatPrior, cfg: MhConfig,
           schedule=None, ess_fraction=0.5, tag=_WARMUP, max_stages=10_000):
    """Bridge particles from the initialisation box to ``Pi_gamma``.

    Intermediate targets are ``box(theta) * exp(lam * R_gamma(theta))`` with
    ``lam`` rising to one; at ``lam = 1`` the box is dropped and the target is
    the flat-prior posterior. ``gamma = 0`` gives the ordinary tempered
    posterior ``L^lam``. The ``lam`` sequence is either ``schedule`` or chosen
    adaptively so that each reweighting keeps ``ess_fraction * N`` effective
    particles. Returns the system and the list of exponents visited.
    """
    pot = log_target(model, system.particles, gamma, dataset)
    lam = 0.0
    lams = [0.0]
    logw = np.log(system.weights)
    targets = None if schedule is None else list(np.asarray(schedule, dtype=float)[1:])
    stage = 0
    rates = []
    while lam < 1.0 and stage < max_stages:
        stage += 1
        if targets is None:
            lam_new = _next_lambda(pot, lam, logw, ess_fraction * system.size)
        else:
            if not targets:
                break
            lam_new = float(targets.pop(0))
            if lam_new < lam:
                raise ValueError("tempering schedule must be nondecreasing")
        logw = logw + (lam_new - lam) * pot
        W = normalize_log_weights(logw)
        weighted = replace(system, weights=W)
        chol = _proposal_chol(weighted, cfg, model.free_mask)
        rs = resample_multinomial(weighted, stream(system.rng_seed, tag, stage, _RESAMPLE))
        lam = lam_new
        lams.append(lam)
        logw = np.log(rs.weights)
        if lam <= 0.0:
            system = replace(rs, logpot=None)
            pot = log_target(model, system.particles, gamma, dataset)
            continue
        lower, upper = (prior.lower, prior.upper) if lam >= 1.0 else prior.box_bounds()
        theta, logp, rate = _run_mh(
            model, replace(rs, logpot=pot[rs.ancestors]), gamma, lam, dataset, lower, upper,
            cfg.n_moves, chol, stream(system.rng_seed, tag, stage, _MOVE),
        )
        rates.append(rate)
        system = replace(rs, particles=theta, logpot=logp, accept_rate=rate, ess=ess(W))
        pot = logp
    info = dict(system.info)
    info["lambdas"] = lams
    return replace(system, info=info), lams
