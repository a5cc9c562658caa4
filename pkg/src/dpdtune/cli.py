"""Command-line experiment runner.

Every subcommand shares one run configuration (model, data source, sampler
sizes, seed, output directory). Values come from built-in defaults, then an
optional JSON file (``--config``), then explicit flags. Outputs are CSV and
JSON files in ``--out``; figure data is written in tidy ``gamma,value,series``
form.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__, _backend, data, models, optimizer, oracle, smc
from .errors import ConfigError, DPDError

log = logging.getLogger("dpdtune")

SCHEMA_VERSION = 1
EXIT_ERROR = 1
EXIT_CONFIG = 2

BUILTIN = {
    "newcomb": (data.newcomb, "gaussian"),
    "stars": (data.stars_cyg, "regression"),
}


@dataclass
class RunConfig:
    model: Optional[str] = None
    sigma: Optional[float] = None
    data: Optional[str] = None
    response: Optional[str] = None
    covariates: list = field(default_factory=list)
    simulate: Optional[str] = None
    N: int = 2000
    T: int = 300
    gamma0: float = 0.1
    mh_moves: int = 50
    adam: dict = field(default_factory=lambda: asdict(optimizer.AdamHyper()))
    seed: int = 0
    threads: int = 1
    out: str = "."

    @classmethod
    def from_sources(cls, file_values: dict, flag_values: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(file_values) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        merged = {**file_values, **{k: v for k, v in flag_values.items() if k in known and v is not None}}
        cfg = cls(**merged)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.model not in (None, "gaussian", "regression"):
            raise ConfigError(f"unknown model {self.model!r}")
        if self.data is not None and self.simulate is not None:
            raise ConfigError("give either --data or --simulate, not both")
        if self.threads < 1:
            raise ConfigError("threads must be at least 1")
        unknown = set(self.adam) - {f.name for f in fields(optimizer.AdamHyper)}
        if unknown:
            raise ConfigError(f"unknown ADAM keys: {sorted(unknown)}")

    def adaptive(self) -> optimizer.AdaptiveConfig:
        try:
            return optimizer.AdaptiveConfig(
                N=int(self.N), T=int(self.T), gamma0=float(self.gamma0),
                mh=smc.MhConfig(n_moves=int(self.mh_moves)),
                adam=optimizer.AdamHyper(**self.adam),
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from None


def parse_simulate(spec: str) -> dict:
    parts = spec.split(",")
    if len(parts) != 5:
        raise ConfigError("--simulate expects n,mean,sd,tau,shift")
    try:
        n, mean, sd, tau, shift = int(parts[0]), *map(float, parts[1:])
    except ValueError:
        raise ConfigError(f"cannot parse --simulate {spec!r}") from None
    return dict(n=n, mean=mean, sd=sd, tau_percent=tau, shift=shift)


def load_dataset(cfg: RunConfig):
    """Resolve the data source and the model that goes with it."""
    default_model = "gaussian"
    if cfg.simulate is not None:
        ds = data.simulate_contaminated_gaussian(**parse_simulate(cfg.simulate), seed=cfg.seed)
    elif cfg.data is None:
        raise ConfigError("no data: pass --data PATH, --data builtin:NAME or --simulate")
    elif cfg.data.startswith("builtin:"):
        name = cfg.data.split(":", 1)[1]
        if name not in BUILTIN:
            raise ConfigError(f"unknown builtin dataset {name!r}; choose from {sorted(BUILTIN)}")
        loader, default_model = BUILTIN[name]
        ds = loader()
    else:
        if cfg.response is None:
            raise ConfigError("--response is required with --data PATH")
        ds = data.load_csv(cfg.data, cfg.response, cfg.covariates)
        default_model = "regression" if cfg.covariates else "gaussian"
    kind = cfg.model or default_model
    if kind == "gaussian":
        if ds.x is not None:
            raise ConfigError("the Gaussian model takes no covariates")
        model = models.gaussian(cfg.sigma)
    else:
        if ds.x is None:
            raise ConfigError("the regression model needs covariates")
        model = models.regression(ds.p, cfg.sigma)
    return model, ds


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_rows(path: Path, header, rows) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([format(v, ".10g") if isinstance(v, float) else v for v in row])


def _write_tidy(path: Path, rows) -> None:
    _write_rows(path, ["gamma", "value", "series"], rows)


def _write_samples(path: Path, model, particles, weights) -> None:
    rows = ([*map(float, th), float(w)] for th, w in zip(particles, weights))
    _write_rows(path, [*model.param_names, "weight"], rows)


def _param_table(model, summary: oracle.FitSummary) -> dict:
    return {
        name: {
            "mean": float(summary.mean[k]),
            "sd": float(summary.sd[k]),
            "ci_low": float(summary.ci_low[k]),
            "ci_high": float(summary.ci_high[k]),
        }
        for k, name in enumerate(model.param_names)
    }


def _model_block(model) -> dict:
    return {
        "kind": model.kind.value,
        "covariate_dim": model.covariate_dim,
        "known_scale": model.known_scale,
        "param_names": model.param_names,
    }


def build_summary(command: str, cfg: RunConfig, model, ds, fit: oracle.FitSummary, extra: dict) -> dict:
    """Versioned summary document; the key layout is pinned by a golden test."""
    ref = None
    if model.kind is models.ModelKind.REGRESSION:
        beta, sigma = oracle.ols(ds, model)
        ref = {"coef": [float(b) for b in beta], "sigma": float(sigma)}
    return {
        "schema_version": SCHEMA_VERSION,
        "dpdtune_version": __version__,
        "command": command,
        "model": _model_block(model),
        "data": {"source": cfg.data or f"simulate:{cfg.simulate}", "n": ds.n},
        "config": {"N": cfg.N, "T": cfg.T, "gamma0": cfg.gamma0, "mh_moves": cfg.mh_moves,
                   "adam": dict(cfg.adam), "seed": cfg.seed, "threads": cfg.threads,
                   "backend": _backend.backend_name()},
        "gamma_hat": fit.gamma,
        "parameters": _param_table(model, fit),
        "ols_reference": ref,
        **extra,
    }


def cmd_fit(cfg: RunConfig, args) -> int:
    model, ds = load_dataset(cfg)
    acfg = cfg.adaptive()
    out = _out_dir(cfg)
    trace, system = optimizer.run_adaptive(model, ds, cfg=acfg, seed=cfg.seed)
    trace.write_csv(out / "gamma_trace.csv", full=True)
    _write_samples(out / "posterior_samples.csv", model, system.particles, system.weights)
    fit = oracle.summarize_sample(system.particles, system.weights, system.gamma)
    summary = build_summary("fit", cfg, model, ds, fit, {
        "diagnostics": {
            "converged": trace.converged(),
            "final_ess": float(system.ess),
            "final_accept_rate": float(system.accept_rate),
            "final_dH_dgamma": float(trace.rows[-1].dH_dgamma),
        },
    })
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(f"gamma_hat={fit.gamma:.4f} " + " ".join(
        f"{p}={m:.4f}" for p, m in zip(model.param_names, fit.mean)))
    return 0


def _mcmc_cfg(args) -> oracle.McmcConfig:
    try:
        return oracle.McmcConfig(n_iters=args.mcmc_iters, burn_in=args.burn_in, thin=args.thin)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _grid(args) -> np.ndarray:
    if args.grid_points < 1 or not args.grid_min <= args.grid_max:
        raise ConfigError("grid needs at least one point and grid_min <= grid_max")
    return np.linspace(args.grid_min, args.grid_max, args.grid_points)


def cmd_grid(cfg: RunConfig, args) -> int:
    model, ds = load_dataset(cfg)
    res = oracle.grid_search_gamma(model, ds, _grid(args), _mcmc_cfg(args), seed=cfg.seed)
    rows = [(float(g), float(h), "h_score") for g, h in zip(res.grid, res.h_values)]
    for k, name in enumerate(model.param_names):
        rows += [(float(g), float(m[k]), f"posterior_mean_{name}")
                 for g, m in zip(res.grid, res.posterior_means)]
    _write_tidy(_out_dir(cfg) / "grid.csv", rows)
    print(f"argmin_gamma={res.argmin_gamma:.4f}")
    return 0


def cmd_evidence(cfg: RunConfig, args) -> int:
    model, ds = load_dataset(cfg)
    prior = oracle.NormalPrior(args.prior_mean, args.prior_sd,
                               cfg.sigma if cfg.sigma is not None else 1.0)
    curve = oracle.evidence_curve(model, ds, _grid(args), prior, args.mc_draws, seed=cfg.seed)
    _write_tidy(_out_dir(cfg) / "evidence.csv",
                [(float(g), float(v), "log_evidence") for g, v in zip(curve.grid, curve.log_evidence)])
    print(f"log_evidence[{curve.grid[0]:g}]={curve.log_evidence[0]:.4f} "
          f"log_evidence[{curve.grid[-1]:g}]={curve.log_evidence[-1]:.4f}")
    return 0


def cmd_compare_fixed(cfg: RunConfig, args) -> int:
    taus = [float(t) for t in args.taus.split(",")]
    gammas = [float(g) for g in args.fixed_gammas.split(",")]
    rows = oracle.compare_fixed(taus, gammas, args.reps, cfg.adaptive(), _mcmc_cfg(args),
                                seed=cfg.seed, known_scale=cfg.sigma)
    _write_rows(_out_dir(cfg) / "compare_fixed.csv",
                ["method", "tau", "mse_x100", "aci_low", "aci_high", "mean_gamma"],
                [(r.method, r.tau, r.mse_x100, r.aci_low, r.aci_high, r.mean_gamma) for r in rows])
    for r in rows:
        print(f"tau={r.tau:g} {r.method}: mse_x100={r.mse_x100:.2f} "
              f"aci=({r.aci_low:.2f}, {r.aci_high:.2f}) gamma={r.mean_gamma:.3f}")
    return 0


def cmd_tempered(cfg: RunConfig, args) -> int:
    model, ds = load_dataset(cfg)
    if args.phi_steps < 1:
        raise ConfigError("--phi-steps must be at least 1")
    mh = smc.MhConfig(n_moves=int(cfg.mh_moves))
    system = oracle.tempered_smc(model, ds, np.linspace(0.0, 1.0, args.phi_steps + 1),
                                 N=int(cfg.N), mh=mh, seed=cfg.seed)
    out = _out_dir(cfg)
    _write_samples(out / "posterior_samples.csv", model, system.particles, system.weights)
    fit = oracle.summarize_sample(system.particles, system.weights, 0.0)
    summary = build_summary("tempered", cfg, model, ds, fit, {"phi_steps": args.phi_steps})
    summary["gamma_hat"] = None
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(" ".join(f"{p}={m:.4f}" for p, m in zip(model.param_names, fit.mean)))
    return 0


def cmd_bootstrap(cfg: RunConfig, args) -> int:
    model, ds = load_dataset(cfg)
    res = oracle.bootstrap_study(model, ds, args.B, args.method, args.gamma, cfg.adaptive(),
                                 _mcmc_cfg(args), seed=cfg.seed)
    out = _out_dir(cfg)
    _write_rows(out / "bootstrap_replicates.csv", ["replicate", "gamma", *model.param_names],
                [(b, float(g), *map(float, m)) for b, (g, m) in enumerate(zip(res.gammas, res.means))])
    table = res.table()
    _write_rows(out / "bootstrap_summary.csv", list(table[0]), [list(r.values()) for r in table])
    print(" ".join(f"{k}={v:.5g}" if isinstance(v, float) else f"{k}={v}" for k, v in table[0].items()))
    return 0


def cmd_simulate(cfg: RunConfig, args) -> int:
    if cfg.simulate is None:
        raise ConfigError("simulate needs --simulate n,mean,sd,tau,shift")
    ds = data.simulate_contaminated_gaussian(**parse_simulate(cfg.simulate), seed=cfg.seed)
    path = _out_dir(cfg) / args.filename
    data.write_csv(ds, path)
    print(f"wrote {ds.n} rows ({len(ds.contamination.indices)} contaminated) to {path}")
    return 0


def _add_common(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("run configuration")
    g.add_argument("--config", help="JSON file with run configuration; flags override it")
    g.add_argument("--model", choices=["gaussian", "regression"])
    g.add_argument("--sigma", type=float, help="treat the error scale as known")
    g.add_argument("--data", help="CSV path or builtin:newcomb / builtin:stars")
    g.add_argument("--response", help="response column of the CSV")
    g.add_argument("--covariates", type=lambda s: [c for c in s.split(",") if c],
                   help="comma-separated covariate columns")
    g.add_argument("--simulate", metavar="n,mean,sd,tau,shift",
                   help="simulate contaminated Gaussian data instead of reading a file")
    g.add_argument("--N", type=int, help="number of particles")
    g.add_argument("--T", type=int, help="number of gamma updates")
    g.add_argument("--gamma0", type=float, help="initial gamma")
    g.add_argument("--mh-moves", dest="mh_moves", type=int, help="MH moves per SMC step")
    g.add_argument("--seed", type=int)
    g.add_argument("--threads", type=int, help="worker threads for the compiled kernels")
    g.add_argument("--out", help="output directory")


def _add_mcmc(p, iters=100_000, burn=20_000, thin=1) -> None:
    p.add_argument("--mcmc-iters", type=int, default=iters)
    p.add_argument("--burn-in", type=int, default=burn)
    p.add_argument("--thin", type=int, default=thin)


def _add_grid(p, lo, hi, points) -> None:
    p.add_argument("--grid-min", type=float, default=lo)
    p.add_argument("--grid-max", type=float, default=hi)
    p.add_argument("--grid-points", type=int, default=points)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dpdtune", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"dpdtune {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="adaptive gamma estimation and posterior sampling")
    _add_common(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("grid", help="H-score over a gamma grid from fixed-gamma MCMC")
    _add_common(p)
    _add_grid(p, 0.02, 1.2, 60)
    _add_mcmc(p, 22_000, 2_000, 10)
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("evidence", help="Monte Carlo evidence over a gamma grid")
    _add_common(p)
    _add_grid(p, 0.01, 1.0, 100)
    p.add_argument("--mc-draws", type=int, default=2000)
    p.add_argument("--prior-mean", type=float, default=0.0)
    p.add_argument("--prior-sd", type=float, default=10.0)
    p.set_defaults(func=cmd_evidence)

    p = sub.add_parser("compare-fixed", help="replicated adaptive vs fixed-gamma comparison")
    _add_common(p)
    p.add_argument("--taus", default="0,10,20,30")
    p.add_argument("--fixed-gammas", default="0.1,0.3,0.5,0.7,0.9")
    p.add_argument("--reps", type=int, default=100)
    _add_mcmc(p)
    p.set_defaults(func=cmd_compare_fixed)

    p = sub.add_parser("tempered", help="likelihood-tempered SMC posterior")
    _add_common(p)
    p.add_argument("--phi-steps", type=int, default=500)
    p.set_defaults(func=cmd_tempered)

    p = sub.add_parser("bootstrap", help="bootstrap variability of posterior means")
    _add_common(p)
    p.add_argument("--B", type=int, default=25)
    p.add_argument("--method", choices=["adaptive", "fixed"], default="adaptive")
    p.add_argument("--gamma", type=float, help="gamma for --method fixed")
    _add_mcmc(p)
    p.set_defaults(func=cmd_bootstrap)

    p = sub.add_parser("simulate", help="write a contaminated Gaussian data set")
    _add_common(p)
    p.add_argument("--filename", default="data.csv")
    p.set_defaults(func=cmd_simulate)
    return parser


def resolve_config(args) -> RunConfig:
    file_values = {}
    if args.config:
        try:
            file_values = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(file_values, dict):
            raise ConfigError("config file must hold a JSON object")
    return RunConfig.from_sources(file_values, vars(args))


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        _backend.set_threads(cfg.threads)
        return args.func(cfg, args)
    except ConfigError as exc:
        print(f"dpdtune: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DPDError, ValueError, OSError) as exc:
        print(f"dpdtune: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
