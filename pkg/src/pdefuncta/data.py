"""Discretized solution fields, analytic PDE families and the GFMD dataset format."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from os import PathLike
from typing import Iterable, Sequence

import numpy as np

MAGIC = b"GFMD"
VERSION = 1


class DatasetFormatError(ValueError):
    """Malformed GFMD file."""


@dataclass(eq=False)
class FieldSample:
    id: str
    coords: np.ndarray  # [num_points, coord_dim], normalized to [-1, 1]
    values: np.ndarray  # [num_points, value_dim]
    grid_dims: tuple
    coefficients: dict = field(default_factory=dict)

    def __post_init__(self):
        self.coords = np.ascontiguousarray(self.coords, dtype=np.float64)
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        if self.values.ndim == 1:
            self.values = self.values[:, None]
        self.grid_dims = tuple(int(n) for n in self.grid_dims)
        n = int(np.prod(self.grid_dims))
        if self.coords.shape[0] != n or self.values.shape[0] != n:
            raise ValueError(
                f"sample {self.id!r}: grid {self.grid_dims} has {n} points but coords/values have "
                f"{self.coords.shape[0]}/{self.values.shape[0]} rows"
            )

    @property
    def num_points(self) -> int:
        return self.coords.shape[0]

    @property
    def coord_dim(self) -> int:
        return self.coords.shape[1]

    @property
    def value_dim(self) -> int:
        return self.values.shape[1]

    def grid_values(self) -> np.ndarray:
        """Values reshaped to the lattice, channel axis last."""
        return self.values.reshape(*self.grid_dims, self.value_dim)

    def subset(self, mask: np.ndarray) -> "FieldSample":
        """Points selected by a boolean mask (as an unstructured 1-D 'grid')."""
        mask = np.asarray(mask, dtype=bool)
        return FieldSample(self.id, self.coords[mask], self.values[mask], (int(mask.sum()),), dict(self.coefficients))


@dataclass(eq=False)
class PairedSample:
    id: str
    field_a: FieldSample
    field_u: FieldSample


def normalize(p, lo: float, hi: float):
    """Physical coordinate to network space: c = 2 (p - lo) / (hi - lo) - 1."""
    return 2.0 * (np.asarray(p, dtype=np.float64) - lo) / (hi - lo) - 1.0


def denormalize(c, lo: float, hi: float):
    return lo + (np.asarray(c, dtype=np.float64) + 1.0) * (hi - lo) / 2.0


def lattice(axes: Sequence[np.ndarray]) -> np.ndarray:
    """Row-major (``ij``) lattice of the given 1-D axes as [num_points, len(axes)]."""
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.reshape(-1) for m in mesh], axis=1)


def make_coord_grid(grid_dims: Sequence[int], axis_ranges: Sequence[tuple] | None = None) -> np.ndarray:
    """Inclusive uniform lattice; a single point on an axis sits at the range's low end."""
    grid_dims = [int(n) for n in grid_dims]
    if any(n < 1 for n in grid_dims):
        raise ValueError(f"grid dims must be >= 1, got {grid_dims}")
    if axis_ranges is None:
        axis_ranges = [(-1.0, 1.0)] * len(grid_dims)
    if len(axis_ranges) != len(grid_dims):
        raise ValueError("one axis range per grid dim required")
    axes = [np.linspace(lo, hi, n) if n > 1 else np.array([float(lo)]) for n, (lo, hi) in zip(grid_dims, axis_ranges)]
    return lattice(axes)


def grid_index(index: Sequence[int], grid_dims: Sequence[int]) -> int:
    return int(np.ravel_multi_index(tuple(index), tuple(grid_dims)))


# convection -----------------------------------------------------------------

CONVECTION_X = (0.0, 2 * np.pi)
CONVECTION_T = (0.0, 1.0)


def convection_solution(x, t, beta: float):
    """u(x, t) = 1 + sin(x - beta t), the transported initial profile 1 + sin(x)."""
    return 1.0 + np.sin(np.asarray(x) - beta * np.asarray(t))


def gen_convection(betas: Iterable[float], nx: int = 256, nt: int = 100) -> list[FieldSample]:
    """Periodic x in [0, 2 pi) (endpoint excluded), t in [0, 1] (inclusive).

    Coordinates are (x, t) normalized to [-1, 1]; grid order is x-major.
    """
    if nx < 2 or nt < 2:
        raise ValueError("nx and nt must be >= 2")
    x = np.linspace(*CONVECTION_X, nx, endpoint=False)
    t = np.linspace(*CONVECTION_T, nt)
    phys = lattice([x, t])
    coords = np.stack([normalize(phys[:, 0], *CONVECTION_X), normalize(phys[:, 1], *CONVECTION_T)], axis=1)
    out = []
    for beta in betas:
        beta = float(beta)
        u = convection_solution(phys[:, 0], phys[:, 1], beta)
        out.append(FieldSample(f"convection_beta={beta:g}", coords.copy(), u[:, None], (nx, nt), {"beta": beta}))
    return out


def convection_time_mask(sample: FieldSample, t_lo: float, t_hi: float) -> np.ndarray:
    """Points whose physical time lies in [t_lo, t_hi]."""
    t = denormalize(sample.coords[:, 1], *CONVECTION_T)
    eps = 1e-12
    return (t >= t_lo - eps) & (t <= t_hi + eps)


# helmholtz ------------------------------------------------------------------

HELMHOLTZ_DOMAIN = (-1.0, 1.0)


def helmholtz_solution(x, y, a1: float, a2: float, k: float = 1.0):
    return k**2 * np.sin(a1 * np.pi * np.asarray(x)) * np.sin(a2 * np.pi * np.asarray(y))


def helmholtz_source(x, y, a1: float, a2: float, k: float = 1.0):
    """q = u_xx + u_yy + k^2 u for the solution above (the k^2 factor of u carries through)."""
    return k**2 * (-((a1 * np.pi) ** 2) - (a2 * np.pi) ** 2 + k**2) * np.sin(a1 * np.pi * np.asarray(x)) * np.sin(
        a2 * np.pi * np.asarray(y)
    )


def gen_helmholtz_pair(a_pairs: Iterable[tuple], k: float = 1.0, n: int = 128) -> list[PairedSample]:
    """(q, u) pairs on an inclusive n x n lattice over [-1, 1]^2."""
    a_pairs = [(float(a1), float(a2)) for a1, a2 in a_pairs]
    for a1, a2 in a_pairs:
        if n < 4 * max(a1, a2):
            raise ValueError(f"grid n={n} under-resolves a=({a1:g}, {a2:g}); need n >= {4 * max(a1, a2):g}")
    coords = make_coord_grid((n, n), [HELMHOLTZ_DOMAIN] * 2)
    out = []
    for a1, a2 in a_pairs:
        coeff = {"a1": a1, "a2": a2, "k": float(k)}
        sid = f"helmholtz_a1={a1:g}_a2={a2:g}"
        q = helmholtz_source(coords[:, 0], coords[:, 1], a1, a2, k)
        u = helmholtz_solution(coords[:, 0], coords[:, 1], a1, a2, k)
        out.append(
            PairedSample(
                sid,
                FieldSample(sid + "/q", coords.copy(), q[:, None], (n, n), dict(coeff)),
                FieldSample(sid + "/u", coords.copy(), u[:, None], (n, n), dict(coeff)),
            )
        )
    return out


def gen_helmholtz(a_pairs: Iterable[tuple], k: float = 1.0, n: int = 128) -> list[FieldSample]:
    """Single-field Helmholtz dataset (solutions u only)."""
    out = []
    for pair in gen_helmholtz_pair(a_pairs, k, n):
        u = pair.field_u
        out.append(FieldSample(pair.id, u.coords, u.values, u.grid_dims, u.coefficients))
    return out


# GFMD format ----------------------------------------------------------------


def _encode_sample(s: FieldSample) -> bytes:
    sid = s.id.encode("utf-8")
    parts = [
        struct.pack("<H", len(sid)),
        sid,
        struct.pack("<BBB", s.coord_dim, s.value_dim, len(s.grid_dims)),
        struct.pack(f"<{len(s.grid_dims)}I", *s.grid_dims),
        struct.pack("<H", len(s.coefficients)),
    ]
    for name, value in s.coefficients.items():
        raw = name.encode("utf-8")
        parts += [struct.pack("<H", len(raw)), raw, struct.pack("<d", float(value))]
    parts.append(s.coords.astype("<f8").tobytes())
    parts.append(s.values.astype("<f8").tobytes())
    return b"".join(parts)


def dumps_dataset(samples: Sequence[FieldSample]) -> bytes:
    return MAGIC + struct.pack("<II", VERSION, len(samples)) + b"".join(_encode_sample(s) for s in samples)


def save_dataset(path: str | PathLike, samples: Sequence[FieldSample]) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps_dataset(list(samples)))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise DatasetFormatError(
                f"truncated file: need {n} bytes for {what} at offset {self.pos}, only {len(self.buf) - self.pos} left"
            )
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def loads_dataset(buf: bytes) -> list[FieldSample]:
    r = _Reader(buf)
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise DatasetFormatError(f"bad magic {magic!r} at offset 0, expected {MAGIC!r}")
    version, count = r.unpack("<II", "header")
    if version != VERSION:
        raise DatasetFormatError(f"unsupported version {version} at offset 4")
    samples = []
    for i in range(count):
        (n_id,) = r.unpack("<H", f"sample {i} id length")
        sid = r.take(n_id, f"sample {i} id").decode("utf-8")
        cdim, vdim, rank = r.unpack("<BBB", f"sample {i} dims")
        dims = r.unpack(f"<{rank}I", f"sample {i} grid dims")
        (n_coef,) = r.unpack("<H", f"sample {i} coefficient count")
        coeffs = {}
        for _ in range(n_coef):
            (n_name,) = r.unpack("<H", f"sample {i} coefficient name length")
            name = r.take(n_name, f"sample {i} coefficient name").decode("utf-8")
            (coeffs[name],) = r.unpack("<d", f"sample {i} coefficient value")
        npts = int(np.prod(dims))
        coords = np.frombuffer(r.take(8 * npts * cdim, f"sample {i} coords"), dtype="<f8").reshape(npts, cdim)
        values = np.frombuffer(r.take(8 * npts * vdim, f"sample {i} values"), dtype="<f8").reshape(npts, vdim)
        samples.append(FieldSample(sid, coords.astype(np.float64), values.astype(np.float64), dims, coeffs))
    if r.pos != len(buf):
        raise DatasetFormatError(f"{len(buf) - r.pos} trailing bytes at offset {r.pos}")
    return samples


def load_dataset(path: str | PathLike) -> list[FieldSample]:
    with open(path, "rb") as fh:
        return loads_dataset(fh.read())


def pairs_to_samples(pairs: Sequence[PairedSample]) -> list[FieldSample]:
    """Flatten pairs as [a_0, u_0, a_1, u_1, ...] for storage."""
    out = []
    for p in pairs:
        out += [p.field_a, p.field_u]
    return out


def samples_to_pairs(samples: Sequence[FieldSample]) -> list[PairedSample]:
    if len(samples) % 2:
        raise DatasetFormatError("paired dataset must hold an even number of fields")
    out = []
    for a, u in zip(samples[0::2], samples[1::2]):
        pid = a.id.rsplit("/", 1)[0]
        out.append(PairedSample(pid, a, u))
    return out
