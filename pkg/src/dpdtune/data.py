"""Datasets: synthetic contamination, CSV ingestion and bootstrap resampling."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import EmptyDataset, InvalidTau, ParseError, SchemaError


@dataclass
class Contamination:
    tau_percent: float
    shift: float
    indices: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=int))


@dataclass
class Dataset:
    y: np.ndarray
    x: Optional[np.ndarray] = None
    provenance: str = "synthetic"
    contamination: Optional[Contamination] = None
    response_name: str = "y"
    covariate_names: tuple = ()

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float).ravel()
        if self.y.size == 0:
            raise EmptyDataset("a dataset needs at least one observation")
        if self.x is not None:
            self.x = np.asarray(self.x, dtype=float)
            if self.x.ndim == 1:
                self.x = self.x[:, None]
            if self.x.shape[0] != self.y.size:
                raise SchemaError(
                    f"{self.x.shape[0]} covariate rows for {self.y.size} responses"
                )

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def p(self) -> int:
        return 0 if self.x is None else self.x.shape[1]

    def take(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=int)
        return Dataset(
            y=self.y[idx],
            x=None if self.x is None else self.x[idx],
            provenance=self.provenance,
            response_name=self.response_name,
            covariate_names=self.covariate_names,
        )


def contaminated_count(n: int, tau_percent: float) -> int:
    """Number of shifted observations, ``n * tau / 100`` rounded half up."""
    return int(math.floor(n * tau_percent / 100.0 + 0.5))


def simulate_contaminated_gaussian(
    n: int = 100,
    mean: float = 1.0,
    sd: float = 1.0,
    tau_percent: float = 10.0,
    shift: float = 5.0,
    seed=None,
) -> Dataset:
    """Draw ``n`` normal observations and shift ``tau`` percent of them.

    The shifted indices are distinct and chosen uniformly at random.
    """
    if not 0.0 <= tau_percent <= 100.0:
        raise InvalidTau(f"tau must lie in [0, 100], got {tau_percent}")
    if n < 1:
        raise EmptyDataset("n must be at least 1")
    rng = np.random.default_rng(seed)
    y = rng.normal(mean, sd, size=n)
    k = contaminated_count(n, tau_percent)
    idx = np.sort(rng.choice(n, size=k, replace=False)) if k else np.empty(0, dtype=int)
    y[idx] += shift
    return Dataset(
        y=y,
        provenance="synthetic",
        contamination=Contamination(tau_percent, shift, idx),
    )


def load_csv(path, response_col: str, covariate_cols: Sequence[str] = ()) -> Dataset:
    """Read a headered CSV of reals.

    Regression data are used as given: no intercept column is added.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    rows = [r for r in rows if any(c.strip() for c in r)]
    if not rows:
        raise ParseError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    wanted = [response_col, *covariate_cols]
    missing = [c for c in wanted if c not in header]
    if missing:
        raise SchemaError(f"{path}: missing column(s) {missing}; header is {header}")
    cols = [header.index(c) for c in wanted]
    body = rows[1:]
    if not body:
        raise ParseError(f"{path}: header but no data rows")
    values = np.empty((len(body), len(cols)))
    for i, row in enumerate(body):
        if len(row) != len(header):
            raise ParseError(f"{path}: row {i + 2} has {len(row)} fields, expected {len(header)}")
        for k, c in enumerate(cols):
            try:
                values[i, k] = float(row[c])
            except ValueError:
                raise ParseError(
                    f"{path}: row {i + 2}, column {header[c]!r}: cannot parse {row[c]!r}"
                ) from None
    return Dataset(
        y=values[:, 0],
        x=values[:, 1:] if covariate_cols else None,
        provenance="file",
        response_name=response_col,
        covariate_names=tuple(covariate_cols),
    )


def write_csv(dataset: Dataset, path) -> None:
    """Write ``dataset`` so that :func:`load_csv` restores it bit for bit."""
    names = [dataset.response_name, *dataset.covariate_names]
    if dataset.x is not None and len(names) != 1 + dataset.p:
        names = [dataset.response_name] + [f"x{k + 1}" for k in range(dataset.p)]
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for i in range(dataset.n):
            row = [dataset.y[i]] + ([] if dataset.x is None else list(dataset.x[i]))
            w.writerow([format(v, ".17g") for v in row])


def bootstrap_resample(dataset: Dataset, seed=None) -> Dataset:
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, dataset.n, size=dataset.n)
    out = dataset.take(idx)
    out.provenance = dataset.provenance
    return out


def _bundled(name: str) -> Path:
    return Path(str(resources.files("dpdtune") / "datasets" / name))


def newcomb() -> Dataset:
    """Newcomb's 66 speed-of-light measurements (two gross outliers)."""
    return load_csv(_bundled("newcomb.csv"), "light")


def stars_cyg() -> Dataset:
    """CYG OB1 star cluster: log light intensity against log surface temperature."""
    return load_csv(_bundled("stars_cyg.csv"), "log_light", ["log_Te"])
