"""SIREN backbone with per-layer modulation (Shift, Scale, FiLM, GFM) and the
latent-to-modulation network."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, ShapeError, Tensor
from .basis import BasisConfig, FourierBasis, layer_bases


class ModulationKind(str, enum.Enum):
    SHIFT = "shift"
    SCALE = "scale"
    FILM = "film"
    GFM = "gfm"

    @classmethod
    def parse(cls, value) -> "ModulationKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise ValueError(f"unknown modulation kind {value!r}; expected one of {[k.value for k in cls]}") from None


@dataclass
class InrConfig:
    input_dim: int = 2
    output_dim: int = 1
    hidden_dim: int = 256
    num_hidden_layers: int = 4
    omega0: float = 30.0
    # frequency scale inside the hidden sines; None means omega0 (standard SIREN)
    hidden_omega0: Optional[float] = None
    modulation: ModulationKind = ModulationKind.GFM
    basis: Optional[BasisConfig] = None
    latent_dim: int = 20
    map_hidden: int = 512
    map_linear: bool = False
    # multiplier on the GFM coefficient offset alpha_w; None means 1/sqrt(hidden_dim)
    gfm_gain: Optional[float] = None
    # scale each basis to unit mean column energy so R starts like a dense SIREN weight
    normalize_basis: bool = True

    def __post_init__(self):
        self.modulation = ModulationKind.parse(self.modulation)
        if self.num_hidden_layers < 1 or self.hidden_dim < 1:
            raise ValueError("num_hidden_layers and hidden_dim must be >= 1")
        if self.modulation is ModulationKind.GFM and self.basis is None:
            raise ValueError("GFM modulation requires a basis config")

    @property
    def gamma_hidden(self) -> float:
        return self.omega0 if self.hidden_omega0 is None else self.hidden_omega0

    @property
    def num_basis(self) -> int:
        return self.basis.num_basis if self.basis is not None else 0


@dataclass
class ModulationVector:
    """Per-layer modulation. ``alpha_w`` is absent for Shift, ``alpha_b`` for Scale."""

    alpha_w: Optional[Tensor] = None
    alpha_b: Optional[Tensor] = None


def modulation_sizes(config: InrConfig) -> list[tuple[int, int]]:
    """(len(alpha_w), len(alpha_b)) for every modulated layer."""
    d = config.hidden_dim
    per = {
        ModulationKind.SHIFT: (0, d),
        ModulationKind.SCALE: (d, 0),
        ModulationKind.FILM: (d, d),
        ModulationKind.GFM: (config.num_basis, d),
    }[config.modulation]
    return [per] * config.num_hidden_layers


def gfm_effective_weight(R, alpha_w, basis, gain: float = 1.0) -> Tensor:
    """(R + gain 1 alpha_w^T) Phi: ``alpha_w`` (length D) is added to every row of ``R``."""
    phi = basis.matrix if isinstance(basis, FourierBasis) else np.asarray(basis)
    R = ad.as_tensor(R)
    if R.shape[-1] != phi.shape[0]:
        raise ShapeError(f"gfm weight: R has {R.shape[-1]} columns but basis has {phi.shape[0]} rows")
    S = R
    if alpha_w is not None:
        alpha_w = ad.as_tensor(alpha_w)
        if alpha_w.shape != (phi.shape[0],):
            raise ShapeError(f"gfm weight: alpha_w dims {list(alpha_w.shape)} != [{phi.shape[0]}]")
        offset = alpha_w.reshape(1, -1)
        S = R + (offset if gain == 1.0 else ad.scale(offset, gain))
    return S @ phi


def _check_mod(mod: ModulationVector, kind: ModulationKind, d: int, D: int) -> None:
    want_w = {ModulationKind.SHIFT: None, ModulationKind.SCALE: d, ModulationKind.FILM: d, ModulationKind.GFM: D}[kind]
    want_b = None if kind is ModulationKind.SCALE else d
    for label, arr, want in (("alpha_w", mod.alpha_w, want_w), ("alpha_b", mod.alpha_b, want_b)):
        if want is None:
            if arr is not None:
                raise ShapeError(f"{kind.value} modulation takes no {label}")
        elif arr is None or arr.shape != (want,):
            got = None if arr is None else list(arr.shape)
            raise ShapeError(f"{kind.value} modulation: {label} dims {got} != [{want}]")


def apply_modulation(
    kind, h, weight, bias, mod: Optional[ModulationVector], basis=None, gain: float = 1.0
) -> Tensor:
    """Modulated pre-activation of one hidden layer for a batch of rows ``h``.

    ``weight`` is the dense W (Shift/Scale/FiLM) or the base matrix R (GFM).
    ``mod=None`` gives the unmodulated layer (plain Fourier reparameterization
    for GFM).
    """
    kind = ModulationKind.parse(kind)
    h = ad.as_tensor(h)
    if kind is ModulationKind.GFM:
        alpha_w = None
        if mod is not None:
            phi = basis.matrix if isinstance(basis, FourierBasis) else np.asarray(basis)
            _check_mod(mod, kind, weight.shape[0], phi.shape[0])
            alpha_w = mod.alpha_w
        W = gfm_effective_weight(weight, alpha_w, basis, gain)
        out = h @ W.T + bias
        return out if mod is None else out + mod.alpha_b
    pre = h @ ad.as_tensor(weight).T + bias
    if mod is None:
        return pre
    _check_mod(mod, kind, weight.shape[0], 0)
    if kind is ModulationKind.SHIFT:
        return pre + mod.alpha_b
    if kind is ModulationKind.SCALE:
        return pre * mod.alpha_w
    return pre * mod.alpha_w + mod.alpha_b


def column_scale(phi: np.ndarray) -> float:
    """1 / sqrt(mean squared column norm) of a basis matrix."""
    return float(1.0 / np.sqrt(np.mean(np.sum(phi * phi, axis=0))))


def layer_basis_matrix(config: InrConfig, basis: FourierBasis) -> np.ndarray:
    """The fixed matrix multiplying the GFM coefficients of one layer."""
    return basis.matrix * column_scale(basis.matrix) if config.normalize_basis else basis.matrix


def offset_gain(config: InrConfig) -> float:
    return 1.0 / np.sqrt(config.hidden_dim) if config.gfm_gain is None else float(config.gfm_gain)


def init_params(config: InrConfig, seed: int, bases: Optional[Sequence[FourierBasis]] = None) -> dict[str, np.ndarray]:
    """SIREN-style initialisation; GFM base matrices are scaled so R @ Phi has
    the dense hidden-layer variance (with a normalized basis R and W share a
    distribution)."""
    rng = np.random.default_rng(seed)
    d, L = config.hidden_dim, config.num_hidden_layers
    bound0 = 1.0 / config.input_dim
    bound = np.sqrt(6.0 / d) / config.gamma_hidden
    p = {
        "W0": rng.uniform(-bound0, bound0, size=(d, config.input_dim)),
        "b0": np.zeros(d),
    }
    gfm = config.modulation is ModulationKind.GFM
    if gfm and bases is None:
        bases = layer_bases(config.basis, [d] * L)
    for k in range(1, L + 1):
        if gfm:
            phi = layer_basis_matrix(config, bases[k - 1])
            p[f"R{k}"] = rng.uniform(-1.0, 1.0, size=(d, phi.shape[0])) * (bound * column_scale(phi))
        else:
            p[f"W{k}"] = rng.uniform(-bound, bound, size=(d, d))
        p[f"b{k}"] = np.zeros(d)
    p["W_out"] = rng.uniform(-bound, bound, size=(config.output_dim, d))
    p["b_out"] = np.zeros(config.output_dim)
    return p


class ModulatedInr:
    """Shared coordinate network; samples differ only through the modulations."""

    def __init__(self, config: InrConfig, seed: int = 0, name: str = "inr"):
        self.config = config
        self.name = name
        d, L = config.hidden_dim, config.num_hidden_layers
        self.bases: list[FourierBasis] = []
        if config.modulation is ModulationKind.GFM:
            self.bases = layer_bases(config.basis, [d] * L)
        values = init_params(config, seed, self.bases or None)
        self.phis = [layer_basis_matrix(config, b) for b in self.bases]
        # alpha_w is shared by every row of R, so its effect on a pre-activation
        # grows like sqrt(width); the gain brings it in line with a bias shift
        self.gain = offset_gain(config)
        self.params: dict[str, Parameter] = {k: Parameter(f"{name}/{k}", v) for k, v in values.items()}

    @property
    def kind(self) -> ModulationKind:
        return self.config.modulation

    def parameters(self) -> list[Parameter]:
        return list(self.params.values())

    def layer_weight(self, k: int) -> Parameter:
        return self.params[f"R{k}" if self.kind is ModulationKind.GFM else f"W{k}"]

    def effective_weight(self, k: int, mod: Optional[ModulationVector] = None) -> np.ndarray:
        """Dense hidden weight of layer ``k`` (reconstructed for GFM)."""
        if self.kind is not ModulationKind.GFM:
            return self.params[f"W{k}"].data
        alpha_w = None if mod is None else mod.alpha_w
        R = ad.as_tensor(self.params[f"R{k}"].data)
        return gfm_effective_weight(R, alpha_w, self.phis[k - 1], self.gain).data

    def forward(self, coords, mods: Optional[Sequence[ModulationVector]] = None) -> Tensor:
        cfg, p = self.config, self.params
        L = cfg.num_hidden_layers
        if mods is not None and len(mods) != L:
            raise ShapeError(f"expected {L} modulation vectors, got {len(mods)}")
        x = ad.as_tensor(coords)
        if x.ndim != 2 or x.shape[1] != cfg.input_dim:
            raise ShapeError(f"coords dims {list(x.shape)} do not match input_dim {cfg.input_dim}")
        h = ad.sin(ad.scale(x @ p["W0"].T + p["b0"], cfg.omega0))
        gamma = cfg.gamma_hidden
        for k in range(1, L + 1):
            mod = None if mods is None else mods[k - 1]
            phi = self.phis[k - 1] if self.phis else None
            pre = apply_modulation(self.kind, h, self.layer_weight(k), p[f"b{k}"], mod, phi, self.gain)
            h = ad.sin(ad.scale(pre, gamma))
        return h @ p["W_out"].T + p["b_out"]

    __call__ = forward


class ModulationMap:
    """g(z; pi): latent code to the concatenated per-layer modulations.

    Two affine layers with a sine in between by default; ``linear=True`` gives
    the single affine map.  Output order is layer-major with ``alpha_w`` before
    ``alpha_b`` inside each layer.
    """

    def __init__(
        self,
        latent_dim: int,
        sizes: Sequence[tuple[int, int]],
        kind: ModulationKind,
        hidden: int = 512,
        linear: bool = False,
        seed: int = 0,
        name: str = "map",
        zero_init: bool = False,
    ):
        self.latent_dim = latent_dim
        self.sizes = [tuple(s) for s in sizes]
        self.kind = ModulationKind.parse(kind)
        self.linear = linear
        self.name = name
        total = self.total_dim
        rng = np.random.default_rng(seed)
        # scale/FiLM multiplicative parts start at the identity
        bias_out = np.zeros(total)
        if self.kind in (ModulationKind.SCALE, ModulationKind.FILM):
            for start, n_w, _ in self._offsets():
                bias_out[start : start + n_w] = 1.0
        if zero_init:
            bias_out[:] = 0.0
        if linear:
            bw = 0.0 if zero_init else 1.0 / np.sqrt(latent_dim)
            values = {"W": rng.uniform(-bw, bw, size=(total, latent_dim)), "b": bias_out}
        else:
            b1 = 0.0 if zero_init else 1.0 / np.sqrt(latent_dim)
            b2 = 0.0 if zero_init else 1.0 / np.sqrt(hidden)
            values = {
                "W1": rng.uniform(-b1, b1, size=(hidden, latent_dim)),
                "b1": np.zeros(hidden),
                "W2": rng.uniform(-b2, b2, size=(total, hidden)),
                "b2": bias_out,
            }
        self.params: dict[str, Parameter] = {k: Parameter(f"{name}/{k}", v) for k, v in values.items()}

    @property
    def total_dim(self) -> int:
        return sum(a + b for a, b in self.sizes)

    def _offsets(self):
        start = 0
        for n_w, n_b in self.sizes:
            yield start, n_w, n_b
            start += n_w + n_b

    def parameters(self) -> list[Parameter]:
        return list(self.params.values())

    def flat(self, z) -> Tensor:
        z = ad.as_tensor(z)
        if z.shape != (self.latent_dim,):
            raise ShapeError(f"latent dims {list(z.shape)} != [{self.latent_dim}]")
        p = self.params
        if self.linear:
            return p["W"] @ z + p["b"]
        hid = ad.sin(p["W1"] @ z + p["b1"])
        return p["W2"] @ hid + p["b2"]

    def split(self, flat) -> list[ModulationVector]:
        flat = ad.as_tensor(flat)
        if flat.shape != (self.total_dim,):
            raise ShapeError(f"modulation vector dims {list(flat.shape)} != [{self.total_dim}]")
        out = []
        for start, n_w, n_b in self._offsets():
            aw = flat[start : start + n_w] if n_w else None
            ab = flat[start + n_w : start + n_w + n_b] if n_b else None
            out.append(ModulationVector(aw, ab))
        return out

    def forward(self, z) -> list[ModulationVector]:
        return self.split(self.flat(z))

    __call__ = forward


def concat_modulations(mods: Sequence[ModulationVector]) -> np.ndarray:
    parts = []
    for m in mods:
        for a in (m.alpha_w, m.alpha_b):
            if a is not None:
                parts.append(np.asarray(a.data if isinstance(a, Tensor) else a))
    return np.concatenate(parts) if parts else np.zeros(0)


def modulation_map_forward(pi: ModulationMap, z) -> list[ModulationVector]:
    return pi.forward(z)


def inr_forward(inr: ModulatedInr, mods, coords) -> Tensor:
    return inr.forward(coords, mods)
