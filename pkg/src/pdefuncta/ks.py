"""Kuramoto-Sivashinsky trajectories by Fourier pseudo-spectral ETDRK4.

    u_t + u u_x + u_xx + nu u_xxxx = 0,   x in [0, L) periodic

The linear part is integrated exactly in Fourier space; the nonlinear term is
formed in physical space and dealiased with the 2/3 rule.  ETDRK4
coefficients use the contour-integral evaluation of Kassam & Trefethen (2005).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .data import FieldSample, lattice, normalize

NUM_IC_MODES = 21


class KsBlowUpError(FloatingPointError):
    pass


@dataclass
class KsConfig:
    domain_length: float = 64.0
    nu: float = 1.0
    dt: float = 0.05
    record_nx: int = 256
    record_nt: int = 256
    t_end: float = 50.0
    ic_amplitudes: Optional[Sequence[float]] = None
    ic_wavenumbers: Optional[Sequence[float]] = None
    ic_phases: Optional[Sequence[float]] = None
    amplitude_range: float = 0.5
    max_wavenumber: int = 8
    seed: int = 0
    nonlinear: bool = True
    contour_points: int = 64

    def initial_modes(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(A_i, k_i, phi_i) for the 21 initial-condition modes; unset ones are drawn from ``seed``."""
        rng = np.random.default_rng(self.seed)
        a = rng.uniform(-self.amplitude_range, self.amplitude_range, NUM_IC_MODES)
        k = rng.integers(1, self.max_wavenumber + 1, NUM_IC_MODES).astype(np.float64)
        phi = rng.uniform(0.0, 2 * np.pi, NUM_IC_MODES)
        if self.ic_amplitudes is not None:
            a = np.asarray(self.ic_amplitudes, dtype=np.float64)
        if self.ic_wavenumbers is not None:
            k = np.asarray(self.ic_wavenumbers, dtype=np.float64)
        if self.ic_phases is not None:
            phi = np.asarray(self.ic_phases, dtype=np.float64)
        if not (a.size == k.size == phi.size == NUM_IC_MODES):
            raise ValueError(f"initial condition needs {NUM_IC_MODES} modes, got {a.size}/{k.size}/{phi.size}")
        return a, k, phi


def ks_initial_condition(x: np.ndarray, config: KsConfig) -> np.ndarray:
    a, k, phi = config.initial_modes()
    return np.sum(a[:, None] * np.sin(2 * np.pi * k[:, None] * x[None, :] / config.domain_length + phi[:, None]), axis=0)


class EtdRk4:
    """Fixed-step ETDRK4 for the KS equation on an ``n``-point periodic grid."""

    def __init__(self, n: int, length: float, nu: float, dt: float, nonlinear: bool = True, contour_points: int = 64):
        self.n, self.dt, self.nonlinear = n, dt, nonlinear
        q = 2 * np.pi * np.fft.rfftfreq(n, d=length / n)
        self.lin = q**2 - nu * q**4
        ik = 1j * q
        if n % 2 == 0:
            ik[-1] = 0.0
        self.ik_half = -0.5 * ik
        self.dealias = np.arange(q.size) <= n // 3
        h = dt
        self.e = np.exp(h * self.lin)
        self.e2 = np.exp(h * self.lin / 2)
        roots = np.exp(1j * np.pi * (np.arange(1, contour_points + 1) - 0.5) / contour_points)
        lr = h * self.lin[:, None] + roots[None, :]
        self.qc = h * np.real(np.mean((np.exp(lr / 2) - 1) / lr, axis=1))
        self.f1 = h * np.real(np.mean((-4 - lr + np.exp(lr) * (4 - 3 * lr + lr**2)) / lr**3, axis=1))
        self.f2 = h * np.real(np.mean((2 + lr + np.exp(lr) * (lr - 2)) / lr**3, axis=1))
        self.f3 = h * np.real(np.mean((-4 - 3 * lr - lr**2 + np.exp(lr) * (4 - lr)) / lr**3, axis=1))

    def nonlinear_term(self, v: np.ndarray) -> np.ndarray:
        if not self.nonlinear:
            return np.zeros_like(v)
        u = np.fft.irfft(v, n=self.n)
        return self.ik_half * np.fft.rfft(u * u) * self.dealias

    def step(self, v: np.ndarray) -> np.ndarray:
        nv = self.nonlinear_term(v)
        a = self.e2 * v + self.qc * nv
        na = self.nonlinear_term(a)
        b = self.e2 * v + self.qc * na
        nb = self.nonlinear_term(b)
        c = self.e2 * a + self.qc * (2 * nb - nv)
        nc = self.nonlinear_term(c)
        return self.e * v + self.f1 * nv + 2 * self.f2 * (na + nb) + self.f3 * nc


def integrate_ks(config: KsConfig, u0: Optional[np.ndarray] = None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (x, t, u[nx, nt]) sampled on the record lattice."""
    nx, nt = config.record_nx, config.record_nt
    if nt < 2:
        raise ValueError("record_nt must be >= 2")
    x = np.linspace(0.0, config.domain_length, nx, endpoint=False)
    t = np.linspace(0.0, config.t_end, nt)
    record_dt = config.t_end / (nt - 1)
    substeps = max(1, int(round(record_dt / config.dt)))
    dt = record_dt / substeps
    solver = EtdRk4(nx, config.domain_length, config.nu, dt, config.nonlinear, config.contour_points)
    u = ks_initial_condition(x, config) if u0 is None else np.asarray(u0, dtype=np.float64)
    v = np.fft.rfft(u)
    out = np.empty((nx, nt))
    out[:, 0] = u
    step = 0
    for j in range(1, nt):
        for _ in range(substeps):
            v = solver.step(v)
            step += 1
        u = np.fft.irfft(v, n=nx)
        if not np.isfinite(u).all() or np.abs(u).max() > 1e6:
            raise KsBlowUpError(f"KS solution blew up at step {step} (t={step * dt:.6g})")
        out[:, j] = u
    return x, t, out


def gen_ks(config: KsConfig, sample_id: Optional[str] = None) -> FieldSample:
    x, t, u = integrate_ks(config)
    phys = lattice([x, t])
    coords = np.stack([normalize(phys[:, 0], 0.0, config.domain_length), normalize(phys[:, 1], 0.0, config.t_end)], axis=1)
    coeffs = {"L": config.domain_length, "nu": config.nu, "seed": float(config.seed)}
    sid = sample_id or f"ks_seed={config.seed}"
    return FieldSample(sid, coords, u.reshape(-1, 1), (config.record_nx, config.record_nt), coeffs)
