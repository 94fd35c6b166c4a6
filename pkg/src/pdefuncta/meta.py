"""Functaset training: per-sample latent inner loop, shared-weight outer loop,
and test-time latent fitting (auto-decoding)."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from os import PathLike
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import NonFiniteError, Parameter, Tensor
from .data import FieldSample
from .inr import InrConfig, ModulatedInr, ModulationMap, ModulationVector, modulation_sizes
from .metrics import peak, psnr_from_mse
from .optim import SGD, make_optimizer


@dataclass
class TrainConfig:
    eta_inner: float = 0.01
    eta_outer: float = 1e-4
    batch_size: int = 32
    inner_k: Optional[int] = None  # None: adapt the whole batch
    inner_steps_per_sample: int = 1
    epochs: int = 1000
    seed: int = 0
    outer_optimizer: str = "sgd"
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        k = self.batch_size if self.inner_k is None else self.inner_k
        if not 0 < k <= self.batch_size:
            raise ValueError(f"inner_k must satisfy 0 < K <= batch_size, got K={k}, B={self.batch_size}")
        if self.eta_inner < 0 or self.eta_outer < 0:
            raise ValueError("learning rates must be non-negative")

    @property
    def k(self) -> int:
        return self.batch_size if self.inner_k is None else self.inner_k


class Functaset:
    """Per-sample latent codes, zero-initialised on registration."""

    def __init__(self, latent_dim: int, ids: Iterable[str] = ()):
        self.latent_dim = int(latent_dim)
        self.latents: dict[str, np.ndarray] = {}
        for sid in ids:
            self.register(sid)

    def register(self, sample_id: str) -> np.ndarray:
        if sample_id not in self.latents:
            self.latents[sample_id] = np.zeros(self.latent_dim)
        return self.latents[sample_id]

    def __contains__(self, sample_id) -> bool:
        return sample_id in self.latents

    def __getitem__(self, sample_id: str) -> np.ndarray:
        try:
            return self.latents[sample_id]
        except KeyError:
            raise KeyError(f"sample {sample_id!r} is not registered in the functaset") from None

    def __setitem__(self, sample_id: str, z) -> None:
        z = np.asarray(z, dtype=np.float64)
        if z.shape != (self.latent_dim,):
            raise ValueError(f"latent dims {list(z.shape)} != [{self.latent_dim}]")
        self.latents[sample_id] = z

    def __len__(self) -> int:
        return len(self.latents)

    def ids(self) -> list[str]:
        return list(self.latents)

    def copy(self) -> "Functaset":
        out = Functaset(self.latent_dim)
        out.latents = {k: v.copy() for k, v in self.latents.items()}
        return out


def _seed(seed, *path) -> list[int]:
    """Entropy path for a sub-generator; accepted by ``np.random.default_rng``."""
    base = [int(v) for v in seed] if isinstance(seed, (list, tuple)) else [int(seed)]
    return base + list(path)


class FunctaModel:
    """One modulated INR plus its modulation map.

    ``output_scale`` is a fixed multiplier on the network output so fields of
    large magnitude are fitted by a unit-scale network.
    """

    def __init__(self, config: InrConfig, seed=0, name: str = "f", output_scale: float = 1.0):
        self.config = config
        self.name = name
        self.output_scale = float(output_scale)
        self.inr = ModulatedInr(config, seed=_seed(seed, 0), name=f"{name}/inr")
        self.map = ModulationMap(
            config.latent_dim,
            modulation_sizes(config),
            config.modulation,
            hidden=config.map_hidden,
            linear=config.map_linear,
            seed=_seed(seed, 1),
            name=f"{name}/map",
        )

    @property
    def latent_dim(self) -> int:
        return self.config.latent_dim

    def parameters(self) -> list[Parameter]:
        return self.inr.parameters() + self.map.parameters()

    def buffers(self) -> dict[str, np.ndarray]:
        """Fixed, non-trained state that a checkpoint must carry."""
        return {f"{self.name}/output_scale": np.array([self.output_scale])}

    def load_buffers(self, values: dict) -> None:
        key = f"{self.name}/output_scale"
        if key in values:
            self.output_scale = float(np.asarray(values[key]).reshape(-1)[0])

    def modulations(self, z) -> list[ModulationVector]:
        return self.map(z)

    def predict(self, z, coords) -> Tensor:
        out = self.inr(coords, self.map(z))
        return out if self.output_scale == 1.0 else ad.scale(out, self.output_scale)

    def reconstruct(self, z, coords) -> np.ndarray:
        """Plain evaluation, no gradient recording."""
        with ad.frozen(self.parameters()):
            return self.predict(ad.as_tensor(np.asarray(z, dtype=np.float64)), coords).data

    def field_loss(self, z, sample: FieldSample) -> Tensor:
        return ad.mse(self.predict(z, sample.coords), sample.values)

    def sample_loss(self, z, sample: FieldSample) -> tuple[Tensor, float]:
        """(MSE loss, PSNR) for one field."""
        loss = self.field_loss(z, sample)
        return loss, _psnr_or_nan(loss.item(), sample.values)


def _psnr_or_nan(err: float, values: np.ndarray) -> float:
    pk = peak(values)
    return psnr_from_mse(err, pk) if pk > 0 else float("nan")


@dataclass
class AdaptResult:
    latent: np.ndarray
    losses: list[float]  # loss before each step

    @property
    def loss(self) -> float:
        return self.losses[-1] if self.losses else float("nan")


def _latent_grad(model, z: np.ndarray, sample, loss_fn=None) -> tuple[np.ndarray, float]:
    zp = Parameter("z", z)
    with ad.frozen(model.parameters()):
        loss = (loss_fn or (lambda zz, s: model.sample_loss(zz, s)[0]))(zp, sample)
        ad.backward(loss)
    return zp.grad, loss.item()


def inner_adapt(model, functaset: Functaset, sample, steps: int = 1, eta_inner: float = 0.01) -> AdaptResult:
    """Plain gradient steps on one sample's latent; network weights stay frozen."""
    z = functaset[sample.id].copy()
    losses = []
    for step in range(steps):
        try:
            g, loss = _latent_grad(model, z, sample)
        except NonFiniteError as exc:
            raise NonFiniteError(f"inner loop: sample {sample.id!r} step {step}: {exc}") from exc
        losses.append(loss)
        z = z - eta_inner * g
    functaset[sample.id] = z
    return AdaptResult(z, losses)


@dataclass
class BatchResult:
    loss: float  # sum over the batch
    losses: list[float]
    psnrs: list[float]


def outer_step(model, functaset: Functaset, batch: Sequence, eta_outer: float = 1e-4, optimizer=None) -> BatchResult:
    """One update of the shared weights on the summed batch loss, latents fixed."""
    params = model.parameters()
    ad.zero_gradients(params)
    losses, psnrs = [], []
    for sample in batch:
        z = ad.as_tensor(functaset[sample.id])
        try:
            loss, ps = model.sample_loss(z, sample)
        except NonFiniteError as exc:
            raise NonFiniteError(f"outer loop: sample {sample.id!r}: {exc}") from exc
        ad.backward(loss)
        losses.append(loss.item())
        psnrs.append(ps)
    (optimizer or SGD(params, eta_outer)).step()
    return BatchResult(float(np.sum(losses)), losses, psnrs)


@dataclass
class EpochLog:
    epoch: int
    mean_mse: float
    mean_psnr: float
    wall_seconds: float


def epoch_rng(seed: int, epoch: int) -> np.random.Generator:
    """Per-epoch generator, so a resumed run draws the same batches."""
    return np.random.default_rng([int(seed), int(epoch)])


def train(
    model,
    functaset: Functaset,
    dataset: Sequence,
    config: TrainConfig,
    optimizer=None,
    start_epoch: int = 0,
    on_epoch: Optional[Callable[[int, EpochLog], None]] = None,
    verbose: bool = False,
) -> list[EpochLog]:
    """Bilevel training over the dataset for epochs ``start_epoch .. config.epochs - 1``."""
    dataset = list(dataset)
    if not dataset:
        raise ValueError("dataset is empty")
    for s in dataset:
        functaset.register(s.id)
    if optimizer is None:
        optimizer = make_optimizer(config.outer_optimizer, model.parameters(), config.eta_outer)
    log = []
    for epoch in range(start_epoch, config.epochs):
        t0 = time.perf_counter()
        rng = epoch_rng(config.seed, epoch)
        order = rng.permutation(len(dataset))
        losses, psnrs = [], []
        for start in range(0, len(order), config.batch_size):
            batch_idx = order[start : start + config.batch_size]
            chosen = rng.choice(batch_idx, size=min(config.k, len(batch_idx)), replace=False)
            for j in chosen:
                inner_adapt(model, functaset, dataset[j], config.inner_steps_per_sample, config.eta_inner)
            res = outer_step(model, functaset, [dataset[j] for j in batch_idx], config.eta_outer, optimizer)
            losses += res.losses
            psnrs += res.psnrs
        entry = EpochLog(epoch, float(np.mean(losses)), float(np.mean(psnrs)), time.perf_counter() - t0)
        log.append(entry)
        if verbose:
            print(f"epoch {epoch:5d}  mse {entry.mean_mse:.6g}  psnr {entry.mean_psnr:.3f}  ({entry.wall_seconds:.2f}s)")
        if on_epoch is not None:
            on_epoch(epoch, entry)
    return log


def append_log_csv(path: str | PathLike, entries: Sequence[EpochLog]) -> None:
    import os

    new = not os.path.exists(path) or os.path.getsize(path) == 0
    with open(path, "a", newline="") as fh:
        w = csv.writer(fh)
        if new:
            w.writerow(["epoch", "mean_mse", "mean_psnr", "wall_seconds"])
        for e in entries:
            w.writerow([e.epoch, repr(e.mean_mse), repr(e.mean_psnr), f"{e.wall_seconds:.6f}"])


@dataclass
class FitResult:
    latent: np.ndarray
    mse_observed: float
    mse_full: float
    losses: list[float] = field(default_factory=list)


def resolve_mask(field_: FieldSample, coordinate_mask) -> Optional[np.ndarray]:
    if coordinate_mask is None:
        return None
    mask = coordinate_mask(field_) if callable(coordinate_mask) else coordinate_mask
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (field_.num_points,):
        raise ValueError(f"mask has shape {mask.shape}, expected ({field_.num_points},)")
    return mask


def fit_latent(
    model,
    field_: FieldSample,
    init=None,
    steps: int = 100,
    eta: float = 0.01,
    coordinate_mask=None,
    optimizer: str = "sgd",
    loss_weight: float = 1.0,
) -> FitResult:
    """Auto-decode a latent for ``field_`` with the network frozen.

    Only the points selected by ``coordinate_mask`` (a boolean array or a
    predicate on the sample) enter the objective.  ``loss_weight`` scales the
    objective the way training weighted this field; reported MSEs are unweighted.
    """
    mask = resolve_mask(field_, coordinate_mask)
    observed = field_ if mask is None else field_.subset(mask)
    z = np.zeros(model.latent_dim) if init is None else np.array(init, dtype=np.float64)
    zp = Parameter("z", z)
    opt = make_optimizer(optimizer, [zp], eta)
    losses = []
    params = model.parameters()
    with ad.frozen(params):
        for step in range(steps):
            zp.zero_grad()
            try:
                loss = model.field_loss(zp, observed)
            except NonFiniteError as exc:
                raise NonFiniteError(f"latent fit diverged at step {step}: {exc}") from exc
            ad.backward(loss if loss_weight == 1.0 else ad.scale(loss, loss_weight))
            losses.append(loss.item())
            opt.step()
    z = zp.data.copy()
    with ad.frozen(params):
        mse_obs = model.field_loss(ad.as_tensor(z), observed).item()
        mse_full = mse_obs if mask is None else model.field_loss(ad.as_tensor(z), field_).item()
    return FitResult(z, mse_obs, mse_full, losses)
