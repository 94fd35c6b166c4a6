"""Sectioned ``key = value`` run configuration.

Sections are [model], [basis], [train], [data] and [paths].  Unknown
sections or keys are rejected so a typo never silently falls back to a
default.  Basis sizes, batch size and epoch count default per dataset.
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field
from typing import Callable, Optional

from .basis import BasisConfig
from .inr import InrConfig, ModulationKind
from .meta import TrainConfig

SEED_ENV = "GFM_SEED"


class ConfigError(ValueError):
    pass


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt(parse: Callable) -> Callable:
    return lambda text: None if text.strip().lower() in ("", "none") else parse(text)


def parse_range(text: str) -> list[float]:
    """``"1:10"`` (inclusive, unit step), ``"1.5:9.5:1"`` or a comma list."""
    text = text.strip()
    if ":" in text:
        parts = [float(p) for p in text.split(":")]
        if len(parts) == 2:
            parts.append(1.0)
        if len(parts) != 3 or parts[2] <= 0:
            raise ValueError(f"bad range {text!r}; expected start:stop[:step]")
        start, stop, step = parts
        n = int(round((stop - start) / step))
        if n < 0 or abs(start + n * step - stop) > 1e-9 * max(1.0, abs(stop)):
            raise ValueError(f"range {text!r} does not land on its end point")
        return [start + i * step for i in range(n + 1)]
    return [float(p) for p in text.split(",") if p.strip()]


def parse_window(text: str) -> list[float]:
    """``"lo:hi"`` (or ``"lo,hi"``) closed interval."""
    parts = [float(p) for p in text.replace(",", ":").split(":")]
    if len(parts) != 2 or parts[0] >= parts[1]:
        raise ValueError(f"bad window {text!r}; expected lo:hi with lo < hi")
    return parts


SCHEMA: dict[str, dict[str, Callable]] = {
    "model": {
        "modulation": ModulationKind.parse,
        "hidden_dim": int,
        "num_hidden_layers": int,
        "omega0": float,
        "hidden_omega0": _opt(float),
        "latent_dim": int,
        "map_hidden": int,
        "map_linear": _bool,
        "gfm_gain": _opt(float),
        "normalize_basis": _bool,
    },
    "basis": {"n_low": int, "n_high": int, "n_phase": int, "random_phases": _bool, "seed": int},
    "train": {
        "eta_inner": float,
        "eta_outer": float,
        "batch_size": int,
        "inner_k": _opt(int),
        "inner_steps_per_sample": int,
        "epochs": int,
        "seed": int,
        "outer_optimizer": str,
        "checkpoint_every": int,
        "fit_steps": int,
        "fit_eta": _opt(float),
        "fit_optimizer": str,
        "partial_steps": int,
        "interp_method": str,
        "weight_a": float,
        "weight_u": float,
    },
    "data": {
        "dataset": str,
        "nx": int,
        "nt": int,
        "betas": parse_range,
        "unseen": parse_range,
        "a_range": parse_range,
        "k": float,
        "n": int,
        "observed_t": parse_window,
        "ks_count": int,
        "ks_length": float,
        "ks_nu": float,
        "ks_dt": float,
        "ks_t_end": float,
        "ks_nx": int,
        "ks_nt": int,
    },
    "paths": {"dataset": str, "out_dir": str, "checkpoint": str},
}

DATASETS = ("convection", "helmholtz", "helmholtz-pair", "ks")

# (n_low, n_high, batch_size, epochs) per dataset
PRESETS = {
    "convection": (32, 128, 32, 1000),
    "helmholtz": (128, 128, 16, 5000),
    "helmholtz-pair": (128, 128, 16, 5000),
    "ks": (16, 64, 32, 5000),
}


@dataclass
class DataConfig:
    dataset: str = "convection"
    nx: int = 256
    nt: int = 100
    betas: list = field(default_factory=lambda: [float(b) for b in range(1, 51)])
    unseen: list = field(default_factory=lambda: [b + 0.5 for b in range(1, 50)])
    a_range: list = field(default_factory=lambda: [1.0, 2.0, 3.0, 4.0, 5.0])
    k: float = 1.0
    n: int = 128
    observed_t: list = field(default_factory=lambda: [0.0, 0.5])
    ks_count: int = 8
    ks_length: float = 64.0
    ks_nu: float = 1.0
    ks_dt: float = 0.05
    ks_t_end: float = 50.0
    ks_nx: int = 256
    ks_nt: int = 256


@dataclass
class PathsConfig:
    dataset: str = ""
    out_dir: str = "."
    checkpoint: str = ""


@dataclass
class ExtraTrain:
    fit_steps: int = 100
    fit_eta: Optional[float] = None  # None: eta_inner
    fit_optimizer: str = "sgd"
    partial_steps: int = 500
    interp_method: str = "natural"
    weight_a: float = 1.0
    weight_u: float = 1.0


@dataclass
class RunConfig:
    model: InrConfig
    train: TrainConfig
    extra: ExtraTrain
    data: DataConfig
    paths: PathsConfig
    text: str = ""

    @property
    def fit_eta(self) -> float:
        return self.train.eta_inner if self.extra.fit_eta is None else self.extra.fit_eta

    def model_for(self, input_dim: int, output_dim: int = 1) -> InrConfig:
        cfg = self.model
        return InrConfig(
            input_dim, output_dim, cfg.hidden_dim, cfg.num_hidden_layers, cfg.omega0, cfg.hidden_omega0,
            cfg.modulation, cfg.basis, cfg.latent_dim, cfg.map_hidden, cfg.map_linear, cfg.gfm_gain,
            cfg.normalize_basis,
        )


def _read_sections(text: str) -> dict[str, dict[str, object]]:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str  # keys are case sensitive
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config syntax: {exc}".replace("\n", " ")) from None
    out: dict[str, dict[str, object]] = {}
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]; expected one of {sorted(SCHEMA)}")
        out[section] = {}
        for key, raw in parser.items(section):
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown key '{key}' in [{section}]")
            try:
                out[section][key] = SCHEMA[section][key](raw)
            except ValueError as exc:
                raise ConfigError(f"[{section}] {key} = {raw!r}: {exc}") from None
    return out


def parse_config(text: str = "", env: Optional[dict] = None) -> RunConfig:
    """Build a RunConfig from config text; ``GFM_SEED`` in ``env`` overrides the seed."""
    env = os.environ if env is None else env
    sec = _read_sections(text)
    data = DataConfig(**sec.get("data", {}))
    if data.dataset not in DATASETS:
        raise ConfigError(f"unknown dataset {data.dataset!r}; expected one of {list(DATASETS)}")
    n_low, n_high, batch, epochs = PRESETS[data.dataset]

    model_kw = dict(sec.get("model", {}))
    hidden = int(model_kw.get("hidden_dim", 256))
    basis_kw = {"n_low": n_low, "n_high": n_high, "n_phase": 32, **sec.get("basis", {})}
    try:
        basis = BasisConfig(m_points=hidden, **basis_kw)
        model = InrConfig(basis=basis, **model_kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[model]/[basis]: {exc}") from None

    train_kw = dict(sec.get("train", {}))
    extra_kw = {k: train_kw.pop(k) for k in list(train_kw) if k in ExtraTrain.__dataclass_fields__}
    train_kw.setdefault("batch_size", batch)
    train_kw.setdefault("epochs", epochs)
    if env.get(SEED_ENV):
        try:
            train_kw["seed"] = int(env[SEED_ENV])
        except ValueError:
            raise ConfigError(f"{SEED_ENV}={env[SEED_ENV]!r} is not an integer") from None
    try:
        train = TrainConfig(**train_kw)
        if train.outer_optimizer not in ("sgd", "adam"):
            raise ValueError(f"outer_optimizer must be sgd or adam, got {train.outer_optimizer!r}")
    except ValueError as exc:
        raise ConfigError(f"[train]: {exc}") from None
    extra = ExtraTrain(**extra_kw)
    if extra.interp_method not in ("natural", "local"):
        raise ConfigError(f"[train] interp_method must be natural or local, got {extra.interp_method!r}")
    return RunConfig(model, train, extra, data, PathsConfig(**sec.get("paths", {})), text)


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())
