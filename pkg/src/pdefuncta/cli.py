"""Command-line entry point.

Exit codes: 0 success, 2 configuration or usage error, 3 I/O or file-format
error, 4 numerical failure.  Failures print one line to stderr of the form
``error[<code>] <kind>: <reason>``.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import checkpoint as ck
from .basis import BasisConfig
from .autodiff import NonFiniteError
from .config import ConfigError, RunConfig, load_config, parse_config, parse_range, parse_window
from .data import (
    DatasetFormatError,
    FieldSample,
    convection_time_mask,
    gen_convection,
    gen_helmholtz,
    gen_helmholtz_pair,
    load_dataset,
    pairs_to_samples,
    samples_to_pairs,
    save_dataset,
)
from .ks import KsBlowUpError, KsConfig, gen_ks
from .latent import LatentTable, export_latent_trajectories, setting1_eval, setting2_eval, write_results_csv
from .meta import Functaset, FunctaModel, append_log_csv, fit_latent, train
from .metrics import MetricReport, RatioNetSpec, grad_freq_ratio, residual_spectrum, write_spectrum_csv
from .optim import make_optimizer
from .pdefuncta import PdefunctaModel, balanced_setup, infer_forward, infer_inverse


class CliError(Exception):
    def __init__(self, code: int, kind: str, reason: str):
        super().__init__(reason)
        self.code, self.kind, self.reason = code, kind, reason


def _config(args) -> RunConfig:
    if getattr(args, "config", None):
        try:
            return load_config(args.config)
        except OSError as exc:
            raise CliError(3, "io", f"cannot read config {args.config}: {exc.strerror or exc}") from None
    return parse_config("")


def _out_dir(args, cfg: RunConfig) -> Path:
    out = Path(getattr(args, "out_dir", None) or cfg.paths.out_dir or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _dataset_path(args, cfg: RunConfig) -> str:
    path = getattr(args, "dataset", None) or cfg.paths.dataset
    if not path:
        raise CliError(2, "config", "no dataset path given (--dataset or [paths] dataset)")
    return path


def _checkpoint_path(args, cfg: RunConfig, out: Path) -> str:
    return getattr(args, "checkpoint", None) or cfg.paths.checkpoint or str(out / "model.gfmc")


# gen-data ---------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    cfg = _config(args)
    d = cfg.data
    name = args.name
    if name == "convection":
        betas = parse_range(args.betas) if args.betas else d.betas
        samples = gen_convection(betas, args.nx or d.nx, args.nt or d.nt)
    elif name in ("helmholtz", "helmholtz-pair"):
        a_vals = parse_range(args.a_range) if args.a_range else d.a_range
        a_pairs = [(a1, a2) for a1 in a_vals for a2 in a_vals]
        n = args.n or d.n
        if name == "helmholtz":
            samples = gen_helmholtz(a_pairs, d.k, n)
        else:
            samples = pairs_to_samples(gen_helmholtz_pair(a_pairs, d.k, n))
    else:  # ks
        count = args.count or d.ks_count
        base_seed = cfg.train.seed
        samples = []
        for i in range(count):
            kc = KsConfig(d.ks_length, d.ks_nu, d.ks_dt, d.ks_nx, d.ks_nt, d.ks_t_end, seed=base_seed + i)
            samples.append(gen_ks(kc))
    save_dataset(args.output, samples)
    dims = sorted({"x".join(str(n) for n in s.grid_dims) for s in samples})
    print(f"wrote {len(samples)} samples to {args.output} (grid {', '.join(dims)})")
    return 0


# model construction --------------------------------------------------------------


def _is_paired(cfg: RunConfig) -> bool:
    return cfg.data.dataset == "helmholtz-pair"


def build(cfg: RunConfig, samples: Sequence[FieldSample]):
    """(model, training items) for the configured dataset."""
    if not samples:
        raise CliError(2, "config", "dataset is empty")
    seed = cfg.train.seed
    if _is_paired(cfg):
        pairs = samples_to_pairs(samples)
        a0, u0 = pairs[0].field_a, pairs[0].field_u
        setup = balanced_setup(pairs)
        w = (cfg.extra.weight_a * setup["weights"][0], cfg.extra.weight_u * setup["weights"][1])
        model = PdefunctaModel(
            cfg.model_for(a0.coord_dim, a0.value_dim), cfg.model_for(u0.coord_dim, u0.value_dim), seed=seed,
            weights=w, output_scales=setup["output_scales"],
        )
        return model, pairs
    s0 = samples[0]
    scale = max(float(np.abs(s.values).max()) for s in samples) or 1.0
    model = FunctaModel(cfg.model_for(s0.coord_dim, s0.value_dim), seed=seed, output_scale=scale)
    return model, list(samples)


def _load_items(args, cfg):
    samples = load_dataset(_dataset_path(args, cfg))
    return build(cfg, samples)


def _stored_session(args) -> tuple[RunConfig, ck.Checkpoint, Path]:
    """Config, checkpoint and output dir for commands that consume a trained model.

    The architecture and run settings come from the config text stored in the
    checkpoint; ``--config`` and the command line only contribute paths.
    """
    given = _config(args)
    out = _out_dir(args, given)
    path = _checkpoint_path(args, given, out)
    ckpt = ck.load_checkpoint(path)
    cfg = parse_config(ckpt.config_text)
    for key in ("dataset", "out_dir", "checkpoint"):
        if getattr(given.paths, key):
            setattr(cfg.paths, key, getattr(given.paths, key))
    return cfg, ckpt, out


# train ------------------------------------------------------------------------


def cmd_train(args) -> int:
    resumed = ck.load_checkpoint(args.resume) if args.resume else None
    cfg = parse_config(resumed.config_text) if resumed is not None and not args.config else _config(args)
    if args.modulation:
        cfg = parse_config(_override(cfg.text, "model", "modulation", args.modulation))
    if args.epochs is not None:
        cfg = parse_config(_override(cfg.text, "train", "epochs", str(args.epochs)))
    out = _out_dir(args, cfg)
    model, items = _load_items(args, cfg)
    fs = Functaset(model.latent_dim, [s.id for s in items])
    opt = make_optimizer(cfg.train.outer_optimizer, model.parameters(), cfg.train.eta_outer)
    ckpt_path = _checkpoint_path(args, cfg, out)
    start = 0
    if resumed is not None:
        ck.restore(resumed, model, fs, opt)
        start = resumed.epoch
    log_path = out / "train_log.csv"
    if start == 0 and log_path.exists():
        log_path.unlink()

    def on_epoch(epoch, entry):
        append_log_csv(log_path, [entry])
        every = cfg.train.checkpoint_every
        if every and (epoch + 1) % every == 0:
            ck.save_checkpoint(ckpt_path, ck.capture(model, fs, opt, cfg.text, epoch + 1))

    log = train(model, fs, items, cfg.train, opt, start_epoch=start, on_epoch=on_epoch, verbose=args.verbose)
    ck.save_checkpoint(ckpt_path, ck.capture(model, fs, opt, cfg.text, max(start, cfg.train.epochs)))
    last = f"; final mean PSNR {log[-1].mean_psnr:.3f} dB" if log else ""
    print(f"trained epochs {start}..{cfg.train.epochs}{last}; checkpoint {ckpt_path}")
    return 0


def _override(text: str, section: str, key: str, value: str) -> str:
    """Set ``key`` in ``section`` of config text, keeping everything else."""
    import configparser

    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    parser.read_string(text)
    if not parser.has_section(section):
        parser.add_section(section)
    parser.set(section, key, value)
    lines = []
    for sec in parser.sections():
        lines.append(f"[{sec}]")
        lines += [f"{k} = {v}" for k, v in parser.items(sec)]
        lines.append("")
    return "\n".join(lines)


# eval / fit-latent / interp ------------------------------------------------------


def cmd_eval(args) -> int:
    cfg, ckpt, out = _stored_session(args)
    model, items = _load_items(args, cfg)
    fs = Functaset(model.latent_dim)
    ck.restore(ckpt, model, fs)
    report = MetricReport()
    spectra = []
    for item in items:
        z = fs[item.id] if item.id in fs else None
        if _is_paired(cfg):
            if z is None:
                raise CliError(2, "config", f"no stored latent for pair {item.id!r}; use infer")
            pa, pu = model.reconstruct(z, item)
            report.add(item.field_a.id, pa, item.field_a.values)
            report.add(item.field_u.id, pu, item.field_u.values)
            continue
        if z is None:
            z = fit_latent(model, item, steps=cfg.extra.fit_steps, eta=cfg.fit_eta,
                           optimizer=cfg.extra.fit_optimizer).latent
        pred = model.reconstruct(z, item.coords)
        report.add(item.id, pred, item.values)
        if len(item.grid_dims) >= 1 and item.grid_dims[0] > 1:
            grid = item.grid_dims + (item.value_dim,)
            spectra.append(residual_spectrum(pred.reshape(grid), item.values.reshape(grid), axis=0))
    report.to_csv(out / "eval_metrics.csv")
    if spectra and all(s.shape == spectra[0].shape for s in spectra):
        write_spectrum_csv(out / "residual_spectrum.csv", np.mean(spectra, axis=0))
    print(f"evaluated {len(report.samples)} fields: mean PSNR {report.mean_psnr:.3f} dB, "
          f"mean MSE {report.mean_mse:.6g}")
    return 0


def _observed_mask(cfg: RunConfig, sample: FieldSample, spec: Optional[str]):
    lo, hi = parse_window(spec) if spec else cfg.data.observed_t
    if cfg.data.dataset != "convection":
        # generic: observe the first fraction of the last coordinate axis in [-1, 1]
        t = sample.coords[:, -1]
        return (t >= 2 * lo - 1 - 1e-12) & (t <= 2 * hi - 1 + 1e-12)
    return convection_time_mask(sample, lo, hi)


def cmd_fit_latent(args) -> int:
    cfg, ckpt, out = _stored_session(args)
    if _is_paired(cfg):
        raise CliError(2, "config", "fit-latent works on single-field datasets; use infer for pairs")
    model, items = _load_items(args, cfg)
    ck.restore(ckpt, model)
    rows = []
    for s in items:
        res = setting2_eval(model, s, _observed_mask(cfg, s, args.observed), steps=cfg.extra.partial_steps,
                            eta=cfg.fit_eta, optimizer=cfg.extra.fit_optimizer)
        rows.append((s.id, res.psnr_observed, res.psnr_unobserved, res.mse_observed, res.mse_unobserved))
    with open(out / "partial_fit.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "psnr_observed", "psnr_unobserved", "mse_observed", "mse_unobserved"])
        for sid, po, pu, mo, mu in rows:
            w.writerow([sid, repr(po), "" if pu is None else repr(pu), repr(mo), "" if mu is None else repr(mu)])
    obs = np.mean([r[1] for r in rows])
    un = [r[2] for r in rows if r[2] is not None]
    tail = f", unobserved {np.mean(un):.3f} dB" if un else ""
    print(f"fitted {len(rows)} latents: observed {obs:.3f} dB{tail}")
    return 0


def cmd_interp(args) -> int:
    cfg, ckpt, out = _stored_session(args)
    if cfg.data.dataset != "convection":
        raise CliError(2, "config", "interp needs a one-coefficient family (convection)")
    model, items = _load_items(args, cfg)
    fs = Functaset(model.latent_dim)
    ck.restore(ckpt, model, fs)
    missing = [s.id for s in items if s.id not in fs]
    if missing:
        raise CliError(2, "config", f"checkpoint has no latent for {missing[0]!r}")
    table = LatentTable.from_functaset(fs, items, "beta")
    unseen = parse_range(args.unseen) if args.unseen else cfg.data.unseen
    nx, nt = items[0].grid_dims
    results = setting1_eval(model, table, unseen, lambda b: gen_convection([b], nx, nt)[0], cfg.extra.interp_method)
    write_results_csv(out / "interp_results.csv", results)
    export_latent_trajectories(table, out / "latent_trajectories.csv", extra=unseen, method=cfg.extra.interp_method)
    print(f"interpolated {len(results)} coefficients: mean PSNR {np.mean([r.psnr for r in results]):.3f} dB")
    return 0


# infer / diagnose ------------------------------------------------------------------


def cmd_infer(args) -> int:
    cfg, ckpt, out = _stored_session(args)
    if not _is_paired(cfg):
        raise CliError(2, "config", "infer needs a paired dataset (helmholtz-pair)")
    model, pairs = _load_items(args, cfg)
    ck.restore(ckpt, model)
    report = MetricReport()
    predicted = []
    for p in pairs:
        if args.direction == "forward":
            res = infer_forward(model, p.field_a, p.field_u.coords, cfg.extra.fit_steps, cfg.fit_eta,
                                optimizer=cfg.extra.fit_optimizer)
            target = p.field_u
        else:
            res = infer_inverse(model, p.field_u, p.field_a.coords, cfg.extra.fit_steps, cfg.fit_eta,
                                optimizer=cfg.extra.fit_optimizer)
            target = p.field_a
        report.add(target.id, res.prediction, target.values)
        predicted.append(FieldSample(target.id, target.coords, res.prediction, target.grid_dims, target.coefficients))
    report.to_csv(out / f"infer_{args.direction}.csv")
    save_dataset(out / f"infer_{args.direction}.gfmd", predicted)
    print(f"{args.direction} inference on {len(pairs)} pairs: mean rel L2 {report.mean_rel_l2:.4g}, "
          f"mean PSNR {report.mean_psnr:.3f} dB")
    return 0


def cmd_diagnose(args) -> int:
    cfg = _config(args)
    out = _out_dir(args, cfg)
    b = cfg.model.basis
    width = args.width
    spec = RatioNetSpec(width=width, omega0=cfg.model.omega0,
                        basis=BasisConfig(args.n_low or b.n_low, args.n_high or b.n_high, args.n_phase or b.n_phase, width))
    rep = grad_freq_ratio(spec, args.f1, args.f2, range(args.seeds))
    with open(out / "grad_ratio.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["seed", "ratio_reparam", "ratio_dense"])
        for seed, rs, rw in rep.per_seed:
            w.writerow([seed, repr(rs), repr(rw)])
    print(f"mean gradient ratio f1={args.f1:g}/f2={args.f2:g}: reparameterized {rep.ratio_reparam:.4g}, "
          f"dense {rep.ratio_standard:.4g}")
    return 0


# parser ---------------------------------------------------------------------------


def make_parser() -> argparse.ArgumentParser:
    top = argparse.ArgumentParser(prog="pdefuncta", description="Fourier-modulated neural fields for PDE families.")
    top.add_argument("--threads", type=int, default=None, help="cap numeric worker threads")
    sub = top.add_subparsers(dest="command", required=True)

    def common(p, dataset=True, ckpt=True):
        p.add_argument("--config", help="run configuration file")
        p.add_argument("--out-dir", dest="out_dir", help="directory for CSV/checkpoint outputs")
        if dataset:
            p.add_argument("--dataset", help="GFMD dataset file")
        if ckpt:
            p.add_argument("--checkpoint", help="GFMC checkpoint file")

    g = sub.add_parser("gen-data", help="generate a dataset file")
    g.add_argument("name", choices=["convection", "helmholtz", "helmholtz-pair", "ks"])
    g.add_argument("-o", "--output", required=True, help="output .gfmd path")
    g.add_argument("--config")
    g.add_argument("--betas", help="convection coefficients, e.g. 1:10")
    g.add_argument("--a-range", dest="a_range", help="Helmholtz a1/a2 values, e.g. 1:5")
    g.add_argument("--nx", type=int)
    g.add_argument("--nt", type=int)
    g.add_argument("--n", type=int, help="Helmholtz grid size per axis")
    g.add_argument("--count", type=int, help="number of KS trajectories")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train shared weights and latents")
    common(t)
    t.add_argument("--modulation", choices=["shift", "scale", "film", "gfm"])
    t.add_argument("--epochs", type=int)
    t.add_argument("--resume", help="checkpoint to continue from")
    t.add_argument("-v", "--verbose", action="store_true")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="per-sample reconstruction metrics")
    common(e)
    e.set_defaults(func=cmd_eval)

    f = sub.add_parser("fit-latent", help="fit latents on a partial observation")
    common(f)
    f.add_argument("--observed", help="observed time window, e.g. 0:0.5")
    f.set_defaults(func=cmd_fit_latent)

    i = sub.add_parser("interp", help="decode spline-interpolated latents at unseen coefficients")
    common(i)
    i.add_argument("--unseen", help="coefficients, e.g. 1.5:9.5")
    i.set_defaults(func=cmd_interp)

    n = sub.add_parser("infer", help="forward or inverse inference on paired data")
    common(n)
    n.add_argument("--direction", choices=["forward", "inverse"], required=True)
    n.set_defaults(func=cmd_infer)

    d = sub.add_parser("diagnose", help="high/low frequency gradient ratio at initialization")
    common(d, dataset=False, ckpt=False)
    d.add_argument("--f1", type=float, default=8.0)
    d.add_argument("--f2", type=float, default=1.0)
    d.add_argument("--seeds", type=int, default=20)
    d.add_argument("--width", type=int, default=128)
    d.add_argument("--n-low", dest="n_low", type=int)
    d.add_argument("--n-high", dest="n_high", type=int)
    d.add_argument("--n-phase", dest="n_phase", type=int)
    d.set_defaults(func=cmd_diagnose)
    return top


def _limit_threads(n: Optional[int]):
    if n is None:
        return contextlib.nullcontext()
    if n < 1:
        raise CliError(2, "usage", "--threads must be >= 1")
    from threadpoolctl import threadpool_limits

    try:
        import torch

        torch.set_num_threads(n)
    except ImportError:
        pass
    return threadpool_limits(limits=n)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse already printed usage
        return int(exc.code or 0)
    try:
        with _limit_threads(args.threads):
            return args.func(args)
    except CliError as exc:
        err = exc
    except ConfigError as exc:
        err = CliError(2, "config", str(exc))
    except (DatasetFormatError, ck.CheckpointFormatError) as exc:
        err = CliError(3, "format", str(exc))
    except OSError as exc:
        err = CliError(3, "io", f"{exc.filename or ''}: {exc.strerror or exc}".strip(": "))
    except (NonFiniteError, KsBlowUpError, FloatingPointError) as exc:
        err = CliError(4, "numerical", str(exc))
    reason = " ".join(err.reason.split())
    print(f"error[{err.code}] {err.kind}: {reason}", file=sys.stderr)
    return err.code


if __name__ == "__main__":
    sys.exit(main())
