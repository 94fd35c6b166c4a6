"""Two modulated INRs driven by one shared latent per sample, for paired
function spaces (a, u), with forward (a -> u) and inverse (u -> a) inference."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .data import FieldSample, PairedSample
from .inr import InrConfig
from .meta import FitResult, FunctaModel, _psnr_or_nan, _seed, fit_latent
from .optim import make_optimizer


class PdefunctaModel:
    """Branch ``a`` and branch ``u`` each own an INR and a modulation map;
    the latent is the only thing they share."""

    def __init__(
        self,
        config_a: InrConfig,
        config_u: InrConfig,
        seed=0,
        weights: tuple[float, float] = (1.0, 1.0),
        output_scales: tuple[float, float] = (1.0, 1.0),
    ):
        if config_a.latent_dim != config_u.latent_dim:
            raise ValueError(f"branches disagree on latent_dim: {config_a.latent_dim} vs {config_u.latent_dim}")
        self.a = FunctaModel(config_a, seed=_seed(seed, 0), name="a", output_scale=output_scales[0])
        self.u = FunctaModel(config_u, seed=_seed(seed, 1), name="u", output_scale=output_scales[1])
        self.weights = (float(weights[0]), float(weights[1]))

    @property
    def latent_dim(self) -> int:
        return self.a.latent_dim

    def branch(self, which: str) -> FunctaModel:
        if which not in ("a", "u"):
            raise ValueError(f"branch must be 'a' or 'u', got {which!r}")
        return self.a if which == "a" else self.u

    def parameters(self) -> list[Parameter]:
        return self.a.parameters() + self.u.parameters()

    def buffers(self) -> dict[str, np.ndarray]:
        return {**self.a.buffers(), **self.u.buffers(), "pair/weights": np.array(self.weights)}

    def load_buffers(self, values: dict) -> None:
        self.a.load_buffers(values)
        self.u.load_buffers(values)
        if "pair/weights" in values:
            self.weights = tuple(float(w) for w in values["pair/weights"])

    def branch_losses(self, z, pair: PairedSample) -> tuple[Tensor, Tensor]:
        return self.a.field_loss(z, pair.field_a), self.u.field_loss(z, pair.field_u)

    def sample_loss(self, z, pair: PairedSample) -> tuple[Tensor, float]:
        """(weighted joint loss, mean of the two branch PSNRs)."""
        la, lu = self.branch_losses(z, pair)
        loss = joint_from(la, lu, self.weights)
        ps = 0.5 * (_psnr_or_nan(la.item(), pair.field_a.values) + _psnr_or_nan(lu.item(), pair.field_u.values))
        return loss, ps

    def reconstruct(self, z, pair: PairedSample) -> tuple[np.ndarray, np.ndarray]:
        return self.a.reconstruct(z, pair.field_a.coords), self.u.reconstruct(z, pair.field_u.coords)


def joint_from(loss_a: Tensor, loss_u: Tensor, weights=(1.0, 1.0)) -> Tensor:
    wa, wu = weights
    if wa == 1.0 and wu == 1.0:
        return loss_a + loss_u
    return ad.scale(loss_a, wa) + ad.scale(loss_u, wu)


def joint_loss(model: PdefunctaModel, z, pair: PairedSample, weights: Optional[tuple[float, float]] = None) -> Tensor:
    """MSE of the a-field plus MSE of the u-field under the same latent."""
    la, lu = model.branch_losses(z, pair)
    return joint_from(la, lu, model.weights if weights is None else weights)


def balanced_setup(pairs: Sequence[PairedSample]) -> dict:
    """Output scales and loss weights that put both branches on a unit footing."""
    peak_a = max(float(np.abs(p.field_a.values).max()) for p in pairs)
    peak_u = max(float(np.abs(p.field_u.values).max()) for p in pairs)
    peak_a, peak_u = peak_a or 1.0, peak_u or 1.0
    return {"output_scales": (peak_a, peak_u), "weights": (1.0 / peak_a**2, 1.0 / peak_u**2)}


def train_pdefuncta(model: PdefunctaModel, functaset, pairs: Sequence[PairedSample], config, **kwargs):
    """Bilevel training with the joint loss; same loop as single-field training."""
    from .meta import train

    return train(model, functaset, pairs, config, **kwargs)


@dataclass
class Inference:
    latent: np.ndarray
    prediction: np.ndarray  # on the requested coordinates
    fit: FitResult


def _infer(model: PdefunctaModel, observed: FieldSample, source: str, coords, steps, eta, init, optimizer) -> Inference:
    src = model.branch(source)
    dst = model.branch("u" if source == "a" else "a")
    # same per-branch weight as the joint training loss, so eta means the same thing
    weight = model.weights[0 if source == "a" else 1]
    fit = fit_latent(src, observed, init=init, steps=steps, eta=eta, optimizer=optimizer, loss_weight=weight)
    return Inference(fit.latent, dst.reconstruct(fit.latent, np.asarray(coords, dtype=np.float64)), fit)


def infer_forward(model: PdefunctaModel, field_a: FieldSample, coords_u, steps: int = 100, eta: float = 0.01,
                  init=None, optimizer: str = "sgd") -> Inference:
    """Fit z against the a-field alone, then decode the u-branch at ``coords_u``."""
    return _infer(model, field_a, "a", coords_u, steps, eta, init, optimizer)


def infer_inverse(model: PdefunctaModel, field_u: FieldSample, coords_a, steps: int = 100, eta: float = 0.01,
                  init=None, optimizer: str = "sgd") -> Inference:
    """Fit z against the u-field alone, then decode the a-branch at ``coords_a``."""
    return _infer(model, field_u, "u", coords_a, steps, eta, init, optimizer)


def fit_joint(model: PdefunctaModel, pair: PairedSample, init=None, steps: int = 100, eta: float = 0.01,
              optimizer: str = "sgd") -> np.ndarray:
    """Fit one latent against both fields (seen-pair reconstruction)."""
    z = np.zeros(model.latent_dim) if init is None else np.array(init, dtype=np.float64)
    zp = Parameter("z", z)
    opt = make_optimizer(optimizer, [zp], eta)
    with ad.frozen(model.parameters()):
        for _ in range(steps):
            zp.zero_grad()
            ad.backward(joint_loss(model, zp, pair))
            opt.step()
    return zp.data.copy()
