"""Latent-space generalization: spline interpolation of latents over a PDE
coefficient, and latent fitting from a partially observed field."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from os import PathLike
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .data import FieldSample
from .meta import fit_latent, resolve_mask
from .metrics import mse, peak, psnr_from_mse


class ExtrapolationError(ValueError):
    """Interpolation target outside the table's coefficient range."""


class LatentTable:
    """Latent codes keyed by a scalar coefficient, kept sorted."""

    def __init__(self, rows: Iterable[tuple[float, Sequence[float]]]):
        rows = sorted(((float(c), np.asarray(z, dtype=np.float64)) for c, z in rows), key=lambda r: r[0])
        if not rows:
            raise ValueError("latent table is empty")
        self.coefficients = np.array([c for c, _ in rows])
        self.latents = np.stack([z for _, z in rows])
        if self.latents.ndim != 2:
            raise ValueError("latents must be 1-D vectors of equal length")
        if np.any(np.diff(self.coefficients) <= 0):
            raise ValueError("coefficients must be strictly increasing (duplicate knot?)")

    @classmethod
    def from_functaset(cls, functaset, samples: Sequence[FieldSample], key: str) -> "LatentTable":
        return cls((s.coefficients[key], functaset[s.id]) for s in samples)

    def __len__(self) -> int:
        return len(self.coefficients)

    @property
    def latent_dim(self) -> int:
        return self.latents.shape[1]

    def rows(self) -> list[tuple[float, np.ndarray]]:
        return list(zip(self.coefficients.tolist(), self.latents))


def _thomas(lower: np.ndarray, diag: np.ndarray, upper: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Tridiagonal solve; ``rhs`` may carry extra trailing columns."""
    n = diag.size
    c = np.zeros(n)
    d = np.zeros_like(rhs)
    c[0] = upper[0] / diag[0]
    d[0] = rhs[0] / diag[0]
    for i in range(1, n):
        m = diag[i] - lower[i] * c[i - 1]
        c[i] = upper[i] / m if i < n - 1 else 0.0
        d[i] = (rhs[i] - lower[i] * d[i - 1]) / m
    x = np.zeros_like(rhs)
    x[-1] = d[-1]
    for i in range(n - 2, -1, -1):
        x[i] = d[i] - c[i] * x[i + 1]
    return x


def natural_spline_moments(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Second derivatives at the knots of the natural cubic spline (zero at both ends)."""
    n = x.size
    moments = np.zeros_like(y)
    if n < 3:
        return moments
    h = np.diff(x)
    slope = np.diff(y, axis=0) / h[:, None]
    rhs = 6.0 * (slope[1:] - slope[:-1])
    lower = np.concatenate([[0.0], h[1:-1]])
    upper = np.concatenate([h[1:-1], [0.0]])
    moments[1:-1] = _thomas(lower, 2.0 * (h[:-1] + h[1:]), upper, rhs)
    return moments


def natural_spline_eval(x: np.ndarray, y: np.ndarray, moments: np.ndarray, t: float) -> np.ndarray:
    i = int(np.clip(np.searchsorted(x, t, side="right") - 1, 0, x.size - 2))
    h = x[i + 1] - x[i]
    a, b = (x[i + 1] - t) / h, (t - x[i]) / h
    return (
        a * y[i]
        + b * y[i + 1]
        + ((a**3 - a) * moments[i] + (b**3 - b) * moments[i + 1]) * h * h / 6.0
    )


def lagrange4_eval(x: np.ndarray, y: np.ndarray, t: float) -> np.ndarray:
    """Cubic through the four knots nearest ``t`` (exact for cubic data)."""
    i = int(np.clip(np.searchsorted(x, t) - 2, 0, x.size - 4))
    xs, ys = x[i : i + 4], y[i : i + 4]
    out = np.zeros(y.shape[1])
    for j in range(4):
        others = np.delete(xs, j)
        out += ys[j] * np.prod((t - others) / (xs[j] - others))
    return out


def interpolate_latent(table: LatentTable, target: float, method: str = "natural") -> np.ndarray:
    """Per-dimension cubic interpolation of the table's latents at ``target``.

    ``method`` is ``"natural"`` (global natural spline) or ``"local"``
    (cubic through the four nearest knots).
    """
    x, y = table.coefficients, table.latents
    target = float(target)
    if not x[0] <= target <= x[-1]:
        raise ExtrapolationError(f"target {target:g} outside the knot range [{x[0]:g}, {x[-1]:g}]")
    if len(table) < 4:
        raise ValueError(f"cubic interpolation needs at least 4 knots, table has {len(table)}")
    hit = np.flatnonzero(x == target)
    if hit.size:
        return y[hit[0]].copy()
    if method == "natural":
        return natural_spline_eval(x, y, natural_spline_moments(x, y), target)
    if method == "local":
        return lagrange4_eval(x, y, target)
    raise ValueError(f"unknown interpolation method {method!r} (natural, local)")


@dataclass
class CoefficientResult:
    coefficient: float
    psnr: float
    mse: float
    setting: str


def setting1_eval(
    model,
    table: LatentTable,
    coefficients: Sequence[float],
    ground_truth: Callable[[float], FieldSample],
    method: str = "natural",
) -> list[CoefficientResult]:
    """Decode interpolated latents at unseen coefficients; nothing is optimized."""
    out = []
    for c in coefficients:
        truth = ground_truth(float(c))
        pred = model.reconstruct(interpolate_latent(table, c, method), truth.coords)
        err = mse(pred, truth.values)
        out.append(CoefficientResult(float(c), psnr_from_mse(err, peak(truth.values)), err, "interpolation"))
    return out


@dataclass
class PartialFit:
    latent: np.ndarray
    psnr_observed: float
    psnr_unobserved: Optional[float]  # None when every point was observed
    mse_observed: float
    mse_unobserved: Optional[float]


def _region_psnr(model, z, sample: FieldSample) -> tuple[float, float]:
    pred = model.reconstruct(z, sample.coords)
    err = mse(pred, sample.values)
    return psnr_from_mse(err, peak(sample.values)), err


def setting2_eval(
    model,
    sample: FieldSample,
    observed,
    steps: int = 500,
    eta: float = 0.01,
    init=None,
    optimizer: str = "sgd",
) -> PartialFit:
    """Fit a latent on the observed points only, then score both regions.

    ``observed`` is a boolean mask over the sample's points or a predicate
    returning one.  Unobserved values are never visited during the fit.
    """
    mask = resolve_mask(sample, observed)
    if not mask.any():
        raise ValueError("observed region is empty")
    fit = fit_latent(model, sample.subset(mask), init=init, steps=steps, eta=eta, optimizer=optimizer)
    ps_obs, mse_obs = _region_psnr(model, fit.latent, sample.subset(mask))
    if mask.all():
        return PartialFit(fit.latent, ps_obs, None, mse_obs, None)
    ps_un, mse_un = _region_psnr(model, fit.latent, sample.subset(~mask))
    return PartialFit(fit.latent, ps_obs, ps_un, mse_obs, mse_un)


def export_latent_trajectories(table: LatentTable, path: str | PathLike, extra: Sequence[float] = (),
                               method: str = "natural") -> None:
    """CSV of coefficient and latent components; ``extra`` adds interpolated rows in coefficient order."""
    rows = [(c, z) for c, z in table.rows()]
    rows += [(float(c), interpolate_latent(table, c, method)) for c in extra if float(c) not in table.coefficients]
    rows.sort(key=lambda r: r[0])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["coefficient"] + [f"z_{i}" for i in range(table.latent_dim)])
        for c, z in rows:
            w.writerow([repr(float(c))] + [repr(float(v)) for v in z])


def read_latent_trajectories(path: str | PathLike) -> LatentTable:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        next(r)
        return LatentTable((float(row[0]), [float(v) for v in row[1:]]) for row in r)


def write_results_csv(path: str | PathLike, results: Sequence[CoefficientResult]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["coefficient", "psnr", "mse", "setting"])
        for res in results:
            w.writerow([repr(res.coefficient), repr(res.psnr), repr(res.mse), res.setting])
