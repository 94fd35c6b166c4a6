"""Fixed Fourier basis matrices for weight reparameterization."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class BasisConfig:
    n_low: int = 32
    n_high: int = 128
    n_phase: int = 32
    m_points: int = 256
    random_phases: bool = False
    seed: int = 0

    def __post_init__(self):
        for name in ("n_low", "n_high", "n_phase"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be a positive integer, got {getattr(self, name)}")
        if self.m_points < 2:
            raise ValueError(f"m_points must be >= 2, got {self.m_points}")

    @property
    def num_basis(self) -> int:
        """D = (n_low + n_high) * n_phase."""
        return (self.n_low + self.n_high) * self.n_phase

    @property
    def t_max(self) -> float:
        return 2.0 * np.pi * self.n_low


@dataclass(frozen=True, eq=False)
class FourierBasis:
    matrix: np.ndarray  # [D, M]
    frequencies: np.ndarray  # [D]
    phases: np.ndarray  # [D]
    t_max: float

    @property
    def grid(self) -> np.ndarray:
        m = self.matrix.shape[1]
        return np.linspace(-self.t_max / 2, self.t_max / 2, m)

    @property
    def shape(self) -> tuple:
        return self.matrix.shape


def basis_frequencies(n_low: int, n_high: int) -> np.ndarray:
    low = np.arange(1, n_low + 1) / n_low
    high = np.arange(1, n_high + 1, dtype=np.float64)
    return np.concatenate([low, high])


_TWO_PI_LD = 2 * np.longdouble("3.141592653589793238462643383279502884")


def _cos_turns(num: np.ndarray, den: int) -> np.ndarray:
    """cos(2*pi*num/den) for integer ``num``, rounded to float64.

    The argument is reduced to the first octant exactly in integers before an
    extended-precision sin/cos, so special values (0, +-1/2, +-1) come out exact.
    """
    num, den = 8 * np.asarray(num, dtype=np.int64), 8 * den
    r = np.mod(num, den)
    r = np.minimum(r, den - r)  # [0, pi]
    sign = np.where(r > den // 4, -1.0, 1.0)
    r = np.where(r > den // 4, den // 2 - r, r)  # [0, pi/2]
    use_sin = r > den // 8
    r = np.where(use_sin, den // 4 - r, r)  # [0, pi/4]
    theta = _TWO_PI_LD * r.astype(np.longdouble) / den
    val = np.where(use_sin, np.sin(theta), np.cos(theta))
    return (sign * val).astype(np.float64)


def build_basis(config: BasisConfig) -> FourierBasis:
    """Phase-shifted cosines ``cos(w * p_m + q)`` on a closed uniform grid.

    Rows are ordered frequency-major with the low block first; within a
    frequency the phases run over ``2*pi*j/n_phase`` (or seeded uniform draws
    on ``[0, 2*pi)`` when ``random_phases`` is set).
    """
    n_low, m = config.n_low, config.m_points
    freqs = basis_frequencies(n_low, config.n_high)
    omega = np.repeat(freqs, config.n_phase)
    t_max = config.t_max
    grid = np.linspace(-t_max / 2, t_max / 2, m)
    if config.random_phases:
        rng = np.random.default_rng(config.seed)
        q = rng.uniform(0.0, 2 * np.pi, size=omega.size)
        matrix = np.cos(omega[:, None] * grid[None, :] + q[:, None])
    else:
        # w * p_m = 2*pi * K * (2m - M + 1) / (2(M - 1)) with integer K = n_low * w
        k = np.rint(omega * n_low).astype(np.int64)
        j = np.tile(np.arange(config.n_phase, dtype=np.int64), freqs.size)
        q = 2 * np.pi * j / config.n_phase
        steps = 2 * np.arange(m, dtype=np.int64) - (m - 1)
        den = 2 * (m - 1) * config.n_phase
        num = (k[:, None] * steps[None, :]) * config.n_phase + (j * 2 * (m - 1))[:, None]
        matrix = _cos_turns(num, den)
    matrix.flags.writeable = False
    return FourierBasis(matrix=matrix, frequencies=omega, phases=q, t_max=t_max)


def layer_bases(config: BasisConfig, layer_input_dims: Sequence[int]) -> list[FourierBasis]:
    """One basis per modulated layer, with M matched to that layer's input width."""
    dims = list(layer_input_dims)
    if not dims:
        raise ValueError("layer_input_dims is empty")
    out = []
    for m in dims:
        if m < 2:
            raise ValueError(f"layer input dim must be >= 2, got {m}")
        out.append(build_basis(BasisConfig(config.n_low, config.n_high, config.n_phase, m, config.random_phases, config.seed)))
    return out
