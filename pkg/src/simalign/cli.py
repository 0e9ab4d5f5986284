"""Command-line entry point: ``simalign <subcommand> ...``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import yaml

from . import bench
from .equalize import build_ppfe, fit_linear, load_aligner, save_aligner
from .errors import InvalidConfig, SimAlignError
from .latentio import (
    SyntheticConfig,
    apply_psi,
    fit_whitener,
    generate_synthetic,
    load_latents,
    save_latents,
)
from .matops import RngStream
from .simopt import OptimizerConfig, optimize
from .simsurface import StackConfig, save_phases, stack_layout

log = logging.getLogger("simalign")

# flag dest -> dotted config key
EXPERIMENT_FLAGS = {
    "seed": "seeds",
    "out": "output",
    "snr_db": "snr_db",
    "layers": "stack.layers",
    "atoms": "stack.atoms",
    "s_layer_mult": "stack.s_layer_mult",
    "phi0": "stack.phi0",
    "learning_rate": "optimizer.learning_rate",
    "iterations": "optimizer.iterations",
    "gamma": "aligner.gamma",
    "kappa": "aligner.kappa",
    "rho": "aligner.rho",
    "latent_file": "latent_file",
    "methods": "methods",
    "sweep_var": "sweep.var",
    "sweep_values": "sweep.values",
}


def _csv_list(text: str) -> list:
    return [t.strip() for t in text.split(",") if t.strip()]


def _parse_set(items) -> dict:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise InvalidConfig(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        out[key.strip()] = yaml.safe_load(value)
    return out


def _add_experiment_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="YAML experiment config")
    p.add_argument("--seed", help="comma-separated seed list")
    p.add_argument("--out", help="results CSV path")
    p.add_argument("--snr-db", dest="snr_db", type=_csv_list, help="comma list, 'inf' allowed")
    p.add_argument("--layers", type=int)
    p.add_argument("--atoms", type=int)
    p.add_argument("--s-layer-mult", dest="s_layer_mult", type=float)
    p.add_argument("--phi0", type=float)
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--iterations", type=int)
    p.add_argument("--gamma", type=float)
    p.add_argument("--kappa", type=int)
    p.add_argument("--rho", type=int)
    p.add_argument("--latent-file", dest="latent_file")
    p.add_argument("--methods", type=_csv_list)
    p.add_argument("--timing", action="store_true", help="record wall time per row")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any dotted config key")


def _experiment_config(args, require_sweep: bool) -> bench.ExperimentConfig:
    raw = yaml.safe_load(args.config.read_text()) if args.config else {}
    raw = raw or {}
    overrides = {}
    for dest, key in EXPERIMENT_FLAGS.items():
        value = getattr(args, dest, None)
        if value is not None:
            overrides[key] = value
    if overrides.get("latent_file") is not None:
        overrides["synthetic"] = None
    if args.timing:
        overrides["record_timing"] = True
    overrides.update(_parse_set(args.set))
    raw = bench.merge_overrides(raw, overrides)
    if not require_sweep:
        raw.pop("sweep", None)
    cfg = bench.ExperimentConfig.from_dict(raw)
    if require_sweep and cfg.sweep_var is None:
        raise InvalidConfig("sweep needs a sweep section or --sweep-var/--sweep-values")
    return cfg


def cmd_gen_data(args) -> int:
    raw = yaml.safe_load(args.config.read_text()) if args.config else {}
    raw = (raw or {}).get("synthetic", raw) or {}
    raw.update(_parse_set(args.set))
    for key in ("num_classes", "samples_per_class", "class_separation", "latent_noise_std", "nonlinearity"):
        if getattr(args, key) is not None:
            raw[key] = getattr(args, key)
    cfg = bench._build(SyntheticConfig, raw, "synthetic")
    ds = generate_synthetic(cfg, RngStream(args.seed).fork("dataset"))
    save_latents(ds, args.out)
    log.info("wrote %d records (tx %d, rx %d) to %s", len(ds), ds.tx_dim, ds.rx_dim, args.out)
    return 0


def _whitened_train(data_path, eps):
    ds = load_latents(data_path)
    train = ds.part("train")
    psi_tx, psi_rx = fit_whitener(train.tx, eps), fit_whitener(train.rx, eps)
    return ds, apply_psi(psi_tx, train.tx), apply_psi(psi_rx, train.rx)


def cmd_fit_aligner(args) -> int:
    ds, X, Y = _whitened_train(args.data, args.eps)
    if args.kind == "linear":
        aligner = fit_linear(X.T, Y.T, args.gamma)
    else:
        kappa = args.kappa or 2 * ds.num_classes
        aligner = build_ppfe(X, Y, kappa, args.rho, RngStream(args.seed).fork("anchors"))
    save_aligner(aligner, args.out)
    log.info("wrote %s aligner %s to %s", aligner.kind, aligner.shape, args.out)
    return 0


def cmd_train_sim(args) -> int:
    aligner = load_aligner(args.aligner)
    rows, cols = aligner.shape
    if args.stack:
        stack_cfg = StackConfig.load(args.stack)
    else:
        stack_cfg = StackConfig(stack_layout(cols, rows, args.layers, args.atoms), s_layer_mult=args.s_layer_mult)
    stack = stack_cfg.build()
    opt = OptimizerConfig(learning_rate=args.learning_rate, iterations=args.iterations, seed=args.seed)
    trace = optimize(stack, aligner.matrix, opt)
    save_phases(stack, args.out)
    if args.trace:
        trace.write_csv(args.trace)
    nmse = trace.final_loss / float((abs(aligner.matrix) ** 2).sum())
    log.info("trained %d layers in %.2fs, emulation NMSE %.4g, beta %s",
             stack.num_layers, trace.wall_time, nmse, trace.beta)
    print(f"emulation_nmse={nmse:.9g} beta_re={trace.beta.real:.9g} beta_im={trace.beta.imag:.9g}")
    return 0


def _run_experiment(args, require_sweep: bool) -> int:
    cfg = _experiment_config(args, require_sweep)
    failures = []
    rows = bench.evaluate(cfg, failures)
    out = cfg.output or "results.csv"
    bench.emit_csv(rows, out)
    log.info("wrote %d rows to %s (%d failures)", len(rows), out, len(failures))
    for method in cfg.methods:
        for var, value in cfg.points():
            acc = bench.mean_accuracy(rows, method, var, value)
            print(f"{var}={value:g} {method}: mean accuracy {acc:.4f}")
    return 1 if failures else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="simalign", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="synthetic latents -> SIMLAT1 file")
    p.add_argument("--config", type=Path)
    p.add_argument("--seed", type=int, default=27)
    p.add_argument("--out", required=True)
    p.add_argument("--num-classes", dest="num_classes", type=int)
    p.add_argument("--samples-per-class", dest="samples_per_class", type=int)
    p.add_argument("--class-separation", dest="class_separation", type=float)
    p.add_argument("--latent-noise-std", dest="latent_noise_std", type=float)
    p.add_argument("--nonlinearity", choices=("none", "tanh"))
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("fit-aligner", help="latent file -> SIMALN1 aligner")
    p.add_argument("--data", required=True)
    p.add_argument("--kind", choices=("linear", "ppfe"), default="linear")
    p.add_argument("--gamma", type=float, default=0.0)
    p.add_argument("--kappa", type=int)
    p.add_argument("--rho", type=int, default=50)
    p.add_argument("--eps", type=float, default=1e-6, help="whitening ridge")
    p.add_argument("--seed", type=int, default=27)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit_aligner)

    p = sub.add_parser("train-sim", help="aligner + stack config -> SIMPHS1 phases and loss CSV")
    p.add_argument("--aligner", required=True)
    p.add_argument("--stack", type=Path, help="YAML stack config (layer sizes, spacing, gains)")
    p.add_argument("--layers", type=int, default=6)
    p.add_argument("--atoms", type=int, default=36)
    p.add_argument("--s-layer-mult", dest="s_layer_mult", type=float, default=5.0)
    p.add_argument("--learning-rate", dest="learning_rate", type=float, default=0.1)
    p.add_argument("--iterations", type=int, default=500)
    p.add_argument("--seed", type=int, default=27)
    p.add_argument("--out", required=True)
    p.add_argument("--trace", help="loss trace CSV path")
    p.set_defaults(func=cmd_train_sim)

    p = sub.add_parser("evaluate", help="config -> results CSV over the SNR grid")
    _add_experiment_flags(p)
    p.set_defaults(func=lambda a: _run_experiment(a, False))

    p = sub.add_parser("sweep", help="multi-point config -> results CSV")
    _add_experiment_flags(p)
    p.add_argument("--sweep-var", dest="sweep_var", choices=bench.SWEEP_VARS)
    p.add_argument("--sweep-values", dest="sweep_values", type=_csv_list)
    p.set_defaults(func=lambda a: _run_experiment(a, True))
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (SimAlignError, OSError) as exc:
        log.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
