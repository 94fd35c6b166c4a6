"""Fourier-modulated implicit neural representations for families of PDE
solutions, with a dual-network variant for paired function spaces."""

from .autodiff import Parameter, Tensor, backward, grad_check
from .basis import BasisConfig, FourierBasis, build_basis, layer_bases
from .data import FieldSample, PairedSample, gen_convection, gen_helmholtz, gen_helmholtz_pair, load_dataset, save_dataset
from .inr import InrConfig, ModulatedInr, ModulationKind, ModulationMap, ModulationVector, apply_modulation
from .ks import KsConfig, gen_ks, integrate_ks
from .latent import LatentTable, interpolate_latent, setting1_eval, setting2_eval
from .meta import Functaset, FunctaModel, TrainConfig, fit_latent, inner_adapt, outer_step, train
from .metrics import grad_freq_ratio, mse, psnr, rel_l2, residual_spectrum
from .pdefuncta import PdefunctaModel, infer_forward, infer_inverse, joint_loss, train_pdefuncta

__all__ = [
    "Parameter", "Tensor", "backward", "grad_check",
    "BasisConfig", "FourierBasis", "build_basis", "layer_bases",
    "FieldSample", "PairedSample", "gen_convection", "gen_helmholtz", "gen_helmholtz_pair",
    "load_dataset", "save_dataset",
    "InrConfig", "ModulatedInr", "ModulationKind", "ModulationMap", "ModulationVector", "apply_modulation",
    "KsConfig", "gen_ks", "integrate_ks",
    "LatentTable", "interpolate_latent", "setting1_eval", "setting2_eval",
    "Functaset", "FunctaModel", "TrainConfig", "fit_latent", "inner_adapt", "outer_step", "train",
    "grad_freq_ratio", "mse", "psnr", "rel_l2", "residual_spectrum",
    "PdefunctaModel", "infer_forward", "infer_inverse", "joint_loss", "train_pdefuncta",
]
