"""Reconstruction metrics and spectral diagnostics."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from os import PathLike
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .basis import BasisConfig, build_basis


def _pair(pred, truth) -> tuple[np.ndarray, np.ndarray]:
    pred, truth = np.asarray(pred, dtype=np.float64), np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ValueError(f"dims differ: {list(pred.shape)} vs {list(truth.shape)}")
    return pred, truth


def mse(pred, truth) -> float:
    pred, truth = _pair(pred, truth)
    return float(np.mean((pred - truth) ** 2))


def peak(truth) -> float:
    truth = np.asarray(truth)
    return float(truth.max() - truth.min())


def psnr_from_mse(err: float, peak_value: float) -> float:
    if peak_value <= 0:
        raise ValueError("PSNR undefined for constant ground truth (zero data range)")
    if err == 0:
        return float("inf")
    return float(10.0 * np.log10(peak_value**2 / err))


def psnr(pred, truth) -> float:
    """10 log10(range(truth)^2 / mse) for one sample."""
    pred, truth = _pair(pred, truth)
    return psnr_from_mse(mse(pred, truth), peak(truth))


def rel_l2(pred, truth) -> float:
    pred, truth = _pair(pred, truth)
    norm = np.linalg.norm(truth)
    if norm == 0:
        raise ValueError("relative L2 undefined for zero-norm ground truth")
    return float(np.linalg.norm(pred - truth) / norm)


@dataclass
class SampleMetrics:
    id: str
    mse: float
    psnr: float
    rel_l2: float
    peak: float


@dataclass
class MetricReport:
    samples: list[SampleMetrics] = field(default_factory=list)

    def add(self, sample_id: str, pred, truth) -> SampleMetrics:
        m = SampleMetrics(sample_id, mse(pred, truth), psnr(pred, truth), rel_l2(pred, truth), peak(truth))
        self.samples.append(m)
        return m

    def _stat(self, key: str, fn) -> float:
        vals = np.array([getattr(s, key) for s in self.samples])
        return float(fn(vals)) if vals.size else float("nan")

    @property
    def mean_mse(self) -> float:
        return self._stat("mse", np.mean)

    @property
    def mean_psnr(self) -> float:
        return self._stat("psnr", np.mean)

    @property
    def std_psnr(self) -> float:
        return self._stat("psnr", np.std)

    @property
    def mean_rel_l2(self) -> float:
        return self._stat("rel_l2", np.mean)

    def to_csv(self, path: str | PathLike) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["id", "mse", "psnr", "rel_l2", "peak"])
            for s in self.samples:
                w.writerow([s.id, repr(s.mse), repr(s.psnr), repr(s.rel_l2), repr(s.peak)])


def residual_spectrum(pred_field, truth_field, axis: int = 0, coords: np.ndarray | None = None) -> np.ndarray:
    """|DFT(pred - truth)|^2 / N along ``axis``, averaged over the other axes.

    Full two-sided spectrum of length N, so ``sum == N * mean(residual**2)``
    (Parseval).  When ``coords`` (positions along the axis) are given they
    must be uniformly spaced.
    """
    pred, truth = _pair(pred_field, truth_field)
    if coords is not None:
        steps = np.diff(np.asarray(coords, dtype=np.float64))
        if steps.size and not np.allclose(steps, steps[0], rtol=1e-9, atol=1e-12):
            raise ValueError("residual_spectrum needs a uniform grid along the axis")
    r = np.moveaxis(pred - truth, axis, 0)
    energy = np.abs(np.fft.fft(r, axis=0)) ** 2 / r.shape[0]
    return energy.reshape(energy.shape[0], -1).mean(axis=1)


def write_spectrum_csv(path: str | PathLike, spectrum: Sequence[float]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bin", "energy"])
        for i, e in enumerate(spectrum):
            w.writerow([i, repr(float(e))])


# gradient-frequency diagnostic ------------------------------------------------


@dataclass
class GradRatioReport:
    f1: float
    f2: float
    ratio_reparam: float
    ratio_standard: float
    per_seed: list[tuple[int, float, float]] = field(default_factory=list)


@dataclass
class RatioNetSpec:
    """One-hidden-layer sine network used for the frequency-gradient diagnostic."""

    width: int = 64
    omega0: float = 30.0
    num_points: int = 256
    basis: BasisConfig = field(default_factory=lambda: BasisConfig(n_low=4, n_high=16, n_phase=4, m_points=64))

    def __post_init__(self):
        if self.basis.m_points != self.width:
            self.basis = BasisConfig(self.basis.n_low, self.basis.n_high, self.basis.n_phase, self.width,
                                     self.basis.random_phases, self.basis.seed)


def two_tone(x: np.ndarray, f1: float, f2: float) -> np.ndarray:
    return np.sin(2 * np.pi * f1 * x) + np.sin(2 * np.pi * f2 * x)


def bin_energy(residual: ad.Tensor, freq: float, n: int) -> ad.Tensor:
    """|sum_n r_n exp(-2 pi i F n / N)|^2 written with real ops so it differentiates."""
    idx = np.arange(n)
    c = np.cos(2 * np.pi * freq * idx / n)
    s = np.sin(2 * np.pi * freq * idx / n)
    re = residual @ c
    im = residual @ s
    return re * re + im * im


class _RatioNet:
    def __init__(self, spec: RatioNetSpec, seed: int):
        rng = np.random.default_rng(seed)
        d = spec.width
        self.spec = spec
        self.phi = build_basis(spec.basis).matrix
        bound = np.sqrt(6.0 / d) / spec.omega0
        self.w0 = rng.uniform(-1.0, 1.0, size=(d, 1))
        self.b0 = np.zeros(d)
        col_energy = float(np.mean(np.sum(self.phi * self.phi, axis=0)))
        self.coeff = rng.uniform(-1.0, 1.0, size=(d, self.phi.shape[0])) * (bound / np.sqrt(col_energy))
        self.dense = self.coeff @ self.phi
        self.w_out = rng.uniform(-bound, bound, size=(1, d))

    def output(self, x: np.ndarray, weight) -> ad.Tensor:
        om = self.spec.omega0
        c = 2.0 * x[:, None] - 1.0  # network-space coordinate
        h = ad.sin(ad.scale(ad.as_tensor(c) @ self.w0.T + self.b0, om))
        h = ad.sin(ad.scale(h @ ad.as_tensor(weight).T, om))
        return (h @ self.w_out.T).reshape(-1)


def _component_grads(net: _RatioNet, x, target, freq, reparam: bool) -> np.ndarray:
    n = x.size
    if reparam:
        p = ad.Parameter("s", net.coeff)
        weight = p @ net.phi
    else:
        p = ad.Parameter("w", net.dense)
        weight = p
    resid = net.output(x, weight) - target
    ad.backward(bin_energy(resid, freq, n))
    return p.grad


def _ratio(g1: np.ndarray, g2: np.ndarray) -> float:
    return float(np.mean(np.abs(g1) / np.maximum(np.abs(g2), 1e-12)))


def grad_freq_ratio(spec: RatioNetSpec | None = None, f1: float = 8.0, f2: float = 1.0, seeds: Sequence[int] = range(20),
                    target=None) -> GradRatioReport:
    """Gradient of per-frequency residual energy, high vs low frequency, at init.

    For each seed one network is drawn with its hidden weight written as
    ``W = S @ Phi``; gradients are taken once with respect to the dense entries
    of W and once with respect to S, at the same function.  The statistic is
    the mean over entries of ``|dL(f1)/dp| / max(|dL(f2)/dp|, 1e-12)``.
    """
    if not f1 > f2 > 0:
        raise ValueError("need f1 > f2 > 0")
    spec = spec or RatioNetSpec()
    x = np.arange(spec.num_points) / spec.num_points
    tgt = two_tone(x, f1, f2) if target is None else np.asarray(target, dtype=np.float64)
    rows = []
    for seed in seeds:
        net = _RatioNet(spec, seed)
        resid = net.output(x, net.dense).data - tgt
        if not np.any(resid):
            raise ValueError("degenerate diagnostic: residual is identically zero")
        r_s = _ratio(_component_grads(net, x, tgt, f1, True), _component_grads(net, x, tgt, f2, True))
        r_w = _ratio(_component_grads(net, x, tgt, f1, False), _component_grads(net, x, tgt, f2, False))
        rows.append((int(seed), r_s, r_w))
    arr = np.array([(r[1], r[2]) for r in rows])
    return GradRatioReport(f1, f2, float(arr[:, 0].mean()), float(arr[:, 1].mean()), rows)
