"""Stochastic-gradient tuning of gamma inside the SMC sampler.

Each iteration estimates dH/dgamma from the current particle system, takes
one ADAM step downhill (the score is minimised), and moves the particles to
the new gamma with one SMC step.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import hscore, smc
from .errors import NonFiniteGradient
from .smc import GAMMA_MAX, GAMMA_MIN, FlatPrior, MhConfig

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AdamHyper:
    beta1: float = 0.9
    beta2: float = 0.999
    alpha: float = 0.003
    eps: float = 1e-8


@dataclass(frozen=True)
class GammaState:
    gamma: float
    m: float = 0.0
    v: float = 0.0
    t: int = 0


def clamp_gamma(gamma: float) -> float:
    return min(max(gamma, GAMMA_MIN), GAMMA_MAX)


def adam_step(state: GammaState, grad: float, hyper: AdamHyper = AdamHyper()) -> GammaState:
    if not math.isfinite(grad):
        raise NonFiniteGradient(f"gradient is {grad}")
    t = state.t + 1
    m = hyper.beta1 * state.m + (1.0 - hyper.beta1) * grad
    v = hyper.beta2 * state.v + (1.0 - hyper.beta2) * grad * grad
    m_hat = m / (1.0 - hyper.beta1**t)
    v_hat = v / (1.0 - hyper.beta2**t)
    gamma = clamp_gamma(state.gamma - hyper.alpha * m_hat / (math.sqrt(v_hat) + hyper.eps))
    return GammaState(gamma=gamma, m=m, v=v, t=t)


@dataclass
class AdaptiveConfig:
    N: int = 2000
    T: int = 300
    gamma0: float = 0.1
    mh: MhConfig = field(default_factory=MhConfig)
    adam: AdamHyper = field(default_factory=AdamHyper)

    def __post_init__(self):
        if self.T < 1:
            raise ValueError("T must be at least 1")
        if self.N < 2:
            raise ValueError("N must be at least 2")
        if not GAMMA_MIN <= self.gamma0 <= GAMMA_MAX:
            raise ValueError(f"gamma0 must lie in [{GAMMA_MIN}, {GAMMA_MAX}]")


@dataclass
class TraceRow:
    t: int
    gamma: float
    dH_dgamma: float
    h_score: float
    ess: float
    accept_rate: float
    mean: np.ndarray
    sd: np.ndarray


@dataclass
class GammaTrace:
    rows: list = field(default_factory=list)
    param_names: list = field(default_factory=list)

    @property
    def gammas(self) -> np.ndarray:
        return np.array([r.gamma for r in self.rows])

    def __len__(self):
        return len(self.rows)

    def converged(self, tol: float = 1e-5, window: int = 50) -> bool:
        g = self.gammas
        if g.size <= window:
            return False
        return bool(np.all(np.abs(np.diff(g[-window - 1:])) < tol))

    def write_csv(self, path, full: bool = False) -> None:
        """Gamma trace; ``full`` adds the score and posterior means and sds."""
        head = ["t", "gamma", "dH_dgamma", "ess", "accept_rate"]
        if full:
            head += ["h_score"] + [f"mean_{p}" for p in self.param_names] + [
                f"sd_{p}" for p in self.param_names]
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(head)
            for r in self.rows:
                row = [r.t, r.gamma, r.dH_dgamma, r.ess, r.accept_rate]
                if full:
                    row += [r.h_score, *r.mean, *r.sd]
                w.writerow([x if isinstance(x, int) else format(float(x), ".10g") for x in row])


def warm_start(model, dataset, prior: FlatPrior, cfg: AdaptiveConfig, seed: int) -> smc.ParticleSystem:
    """Particles from the initialisation box, annealed onto ``Pi_{gamma0}``."""
    system = smc.init_particles(model, prior, cfg.N, seed)
    system, _ = smc.anneal(model, system, cfg.gamma0, dataset, prior, cfg.mh)
    return replace(system, gamma=cfg.gamma0, step=0)


def run_adaptive(model, dataset, prior: Optional[FlatPrior] = None, cfg: AdaptiveConfig = None,
                 seed: int = 0, callback=None):
    """Estimate gamma and sample its posterior in one pass.

    Returns ``(trace, system)``; ``trace`` has ``T + 1`` rows (the starting
    gamma plus one per iteration) and ``system`` approximates
    ``Pi_{gamma_T}``.
    """
    cfg = cfg or AdaptiveConfig()
    prior = prior or FlatPrior.from_data(model, dataset)
    system = warm_start(model, dataset, prior, cfg, seed)
    state = GammaState(gamma=cfg.gamma0)
    trace = GammaTrace(param_names=model.param_names)
    for t in range(cfg.T):
        sample = hscore.WeightedSample(system.particles, system.weights)
        rep = hscore.h_score_report(model, sample, system.gamma, dataset)
        trace.rows.append(TraceRow(t, system.gamma, rep.dh_dgamma, rep.h_total, system.ess, system.accept_rate, system.mean(), system.sd()))
        state = adam_step(state, rep.dh_dgamma, cfg.adam)
        system = smc.smc_step(model, system, state.gamma, dataset, prior, cfg.mh)
        if callback is not None:
            callback(t + 1, state, system)
    sample = hscore.WeightedSample(system.particles, system.weights)
    rep = hscore.h_score_report(model, sample, system.gamma, dataset)
    trace.rows.append(TraceRow(cfg.T, system.gamma, rep.dh_dgamma, rep.h_total, system.ess,
                               system.accept_rate, system.mean(), system.sd()))
    return trace, system
