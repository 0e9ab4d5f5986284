"""Experiment harness: datasets, classifier head, method runners and CSV output."""
from __future__ import annotations

import copy
import csv
import dataclasses
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .channel import (
    ChannelRealization,
    Pipeline,
    calibrate_noise,
    run_digital_baseline,
    run_pipeline,
)
from .equalize import Aligner, build_ppfe, fit_linear, identity_aligner
from .errors import InvalidConfig, MissingClass, SimAlignError, ZeroResponse
from .latentio import (
    LatentDataset,
    SyntheticConfig,
    apply_psi,
    fit_whitener,
    generate_synthetic,
    load_latents,
)
from .matops import RngStream
from .simopt import OptimizerConfig, optimize
from .simsurface import DEFAULT_WAVELENGTH, StackConfig, stack_layout

log = logging.getLogger(__name__)

DEFAULT_SEEDS = (27, 42, 100, 123, 144, 200)
METHODS = ("no-mismatch", "original-linear", "original-ppfe", "sim-linear", "sim-ppfe", "no-alignment")
SWEEP_VARS = ("L", "atoms", "snr_db", "s_layer_mult", "phi0")
CSV_HEADER = ("sweep_var", "sweep_value", "seed", "method", "accuracy", "emulation_nmse", "wall_ms")


@dataclass
class CentroidClassifier:
    centroids: np.ndarray
    classes: np.ndarray

    def predict(self, latents) -> np.ndarray:
        latents = np.atleast_2d(np.asarray(latents, dtype=float))
        c = self.centroids
        d = (latents**2).sum(1)[:, None] - 2.0 * latents @ c.T + (c**2).sum(1)[None, :]
        # argmin returns the first minimum, i.e. the lowest class id on ties
        return self.classes[np.argmin(d, axis=1)]

    def accuracy(self, latents, labels) -> float:
        return float(np.mean(self.predict(latents) == np.asarray(labels)))


def fit_classifier(rx_latents, labels, num_classes: int | None = None) -> CentroidClassifier:
    """Nearest-centroid head on clean rx latents."""
    rx_latents = np.asarray(rx_latents, dtype=float)
    labels = np.asarray(labels)
    present = np.unique(labels)
    classes = present if num_classes is None else np.arange(num_classes)
    missing = np.setdiff1d(classes, present)
    if missing.size:
        raise MissingClass(f"no training samples for classes {missing.tolist()}")
    centroids = np.stack([rx_latents[labels == c].mean(axis=0) for c in classes])
    return CentroidClassifier(centroids, classes)


@dataclass
class StackSpec:
    layers: int = 6
    atoms: int = 36
    s_layer_mult: float = 5.0
    phi0: float = 1.0
    wavelength: float = DEFAULT_WAVELENGTH
    phase_sign: int = 1

    def stack_config(self, input_dim: int, output_dim: int) -> StackConfig:
        sizes = stack_layout(input_dim, output_dim, self.layers, self.atoms)
        phi = [self.phi0] + [1.0] * self.layers
        return StackConfig(sizes, self.wavelength, self.s_layer_mult, phi, self.phase_sign)


@dataclass
class AlignerSpec:
    gamma: float = 0.0
    kappa: int | None = None
    rho: int = 50


@dataclass
class ExperimentConfig:
    synthetic: SyntheticConfig | None = field(default_factory=SyntheticConfig)
    latent_file: str | None = None
    aligner: AlignerSpec = field(default_factory=AlignerSpec)
    stack: StackSpec = field(default_factory=StackSpec)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    snr_db: list = field(default_factory=lambda: [math.inf])
    seeds: list = field(default_factory=lambda: list(DEFAULT_SEEDS))
    methods: list = field(default_factory=lambda: list(METHODS))
    sweep_var: str | None = None
    sweep_values: list = field(default_factory=list)
    whitening_eps: float = 1e-6
    record_timing: bool = False
    output: str | None = None

    def validate(self) -> None:
        if not self.seeds:
            raise InvalidConfig("seed list is empty")
        if not self.snr_db:
            raise InvalidConfig("snr grid is empty")
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise InvalidConfig(f"unknown methods {sorted(unknown)}")
        if self.sweep_var is not None:
            if self.sweep_var not in SWEEP_VARS:
                raise InvalidConfig(f"sweep variable must be one of {SWEEP_VARS}")
            if not self.sweep_values:
                raise InvalidConfig("sweep needs at least one value")
            if self.sweep_var != "snr_db" and len(self.snr_db) != 1:
                raise InvalidConfig("a non-SNR sweep needs a single snr_db value")
        if (self.synthetic is None) == (self.latent_file is None):
            raise InvalidConfig("give exactly one of a synthetic config or a latent file")

    def points(self) -> list:
        """``(sweep_var, value)`` pairs; without an explicit sweep, the SNR grid."""
        if self.sweep_var is None:
            return [("snr_db", float(v)) for v in self.snr_db]
        return [(self.sweep_var, float(v)) for v in self.sweep_values]

    def at(self, var: str, value: float) -> tuple:
        """``(StackSpec, snr_db)`` for one sweep point."""
        spec = dataclasses.replace(self.stack)
        snr = float(self.snr_db[0])
        if var == "snr_db":
            snr = value
        elif var in ("L", "atoms"):
            setattr(spec, "layers" if var == "L" else "atoms", int(value))
        else:
            setattr(spec, var, value)
        return spec, snr

    # --- structured-text (YAML) round trip ---------------------------------

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        raw = copy.deepcopy(raw or {})
        kwargs = {}
        nested = {"aligner": AlignerSpec, "stack": StackSpec, "optimizer": OptimizerConfig}
        for key, typ in nested.items():
            if key in raw:
                kwargs[key] = _build(typ, raw.pop(key) or {}, key)
        if "synthetic" in raw:
            syn = raw.pop("synthetic")
            kwargs["synthetic"] = None if syn is None else _build(SyntheticConfig, syn, "synthetic")
        if raw.get("latent_file") is not None and "synthetic" not in kwargs:
            kwargs["synthetic"] = None
        if "sweep" in raw:
            sweep = raw.pop("sweep") or {}
            kwargs["sweep_var"] = sweep.get("var")
            kwargs["sweep_values"] = [_to_float(v) for v in sweep.get("values", [])]
        if "snr_db" in raw:
            snr = raw.pop("snr_db")
            kwargs["snr_db"] = [_to_float(v) for v in (snr if isinstance(snr, list) else [snr])]
        if "seeds" in raw:
            kwargs["seeds"] = parse_seeds(raw.pop("seeds"))
        unknown = set(raw) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise InvalidConfig(f"unknown config keys: {sorted(unknown)}")
        kwargs.update(raw)
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path, overrides: dict | None = None) -> "ExperimentConfig":
        raw = yaml.safe_load(Path(path).read_text()) or {}
        return cls.from_dict(merge_overrides(raw, overrides or {}))


def _to_float(v) -> float:
    if isinstance(v, str):
        v = v.strip().lower()
        if v in ("inf", "+inf", "infinity"):
            return math.inf
    return float(v)


def _build(typ, raw: dict, name: str):
    allowed = {f.name for f in dataclasses.fields(typ)}
    unknown = set(raw) - allowed
    if unknown:
        raise InvalidConfig(f"unknown keys in {name}: {sorted(unknown)}")
    try:
        return typ(**raw)
    except (TypeError, ValueError) as exc:
        raise InvalidConfig(f"bad {name} section: {exc}") from exc


def parse_seeds(value) -> list:
    if isinstance(value, str):
        return [int(s) for s in value.split(",") if s.strip()]
    if isinstance(value, int):
        return [value]
    return [int(s) for s in value]


def merge_overrides(raw: dict, overrides: dict) -> dict:
    """Apply dotted-key overrides (``{"stack.layers": 4}``) onto a nested dict."""
    out = copy.deepcopy(raw)
    for dotted, value in overrides.items():
        node = out
        parts = dotted.split(".")
        for part in parts[:-1]:
            if node.get(part) is None:
                node[part] = {}
            node = node[part]
        node[parts[-1]] = value
    return out


@dataclass(frozen=True)
class ResultRow:
    sweep_var: str
    sweep_value: float
    seed: int
    method: str
    accuracy: float
    emulation_nmse: float
    wall_ms: float = 0.0


class _SeedContext:
    """Everything that depends on the experiment seed only, built lazily and reused across points."""

    def __init__(self, cfg: ExperimentConfig, seed: int, dataset: LatentDataset | None):
        self.cfg = cfg
        self.seed = seed
        self.root = RngStream(seed)
        if dataset is None:
            dataset = generate_synthetic(cfg.synthetic, self.root.fork("dataset"))
        self.ds = dataset
        train, test = dataset.part("train"), dataset.part("test")
        self.psi_tx = fit_whitener(train.tx, cfg.whitening_eps)
        self.psi_rx = fit_whitener(train.rx, cfg.whitening_eps)
        self.x_train = apply_psi(self.psi_tx, train.tx)
        self.y_train = apply_psi(self.psi_rx, train.rx)
        self.test = test
        self.classifier = fit_classifier(train.rx, train.labels, dataset.num_classes)
        n_ant = self.psi_rx.dim
        self.channel = ChannelRealization.rayleigh(n_ant, n_ant, self.root.fork("channel"), seed=seed)
        self._aligners = {}
        self._trained = {}

    def aligner(self, kind: str) -> Aligner:
        if kind not in self._aligners:
            spec = self.cfg.aligner
            if kind == "linear":
                a = fit_linear(self.x_train.T, self.y_train.T, spec.gamma)
            elif kind == "ppfe":
                kappa = spec.kappa or 2 * self.ds.num_classes
                a = build_ppfe(self.x_train, self.y_train, kappa, spec.rho, self.root.fork("anchors"))
            else:
                a = identity_aligner(self.psi_rx.dim, self.psi_tx.dim)
            self._aligners[kind] = a
        return self._aligners[kind]

    def trained_stack(self, kind: str, spec: StackSpec):
        # phi0 only scales the input layer and does not change the fitted phases
        key = (kind, spec.layers, spec.atoms, spec.s_layer_mult, spec.wavelength, spec.phase_sign)
        if key not in self._trained:
            A = self.aligner(kind).matrix
            stack = spec.stack_config(self.psi_tx.dim, self.psi_rx.dim).build()
            opt = dataclasses.replace(self.cfg.optimizer, seed=self.seed, init="uniform")
            trace = optimize(stack, A, opt)
            nmse = trace.final_loss / float(np.vdot(A, A).real)
            self._trained[key] = (stack, trace, nmse)
        stack, trace, nmse = self._trained[key]
        stack = stack.copy()
        stack.phi[0] = spec.phi0
        return stack, trace, nmse

    def run(self, method: str, var: str, value: float) -> ResultRow:
        spec, snr_db = self.cfg.at(var, value)
        rng = self.root.fork("noise", var, repr(value), method)
        test = self.test
        nmse = 0.0
        if method == "no-mismatch":
            acc = self.classifier.accuracy(test.rx, test.labels)
        elif method.startswith("sim-"):
            stack, trace, nmse = self.trained_stack(method[4:], spec)
            if stack.phi0 == 0:
                raise ZeroResponse("input gain phi0 = 0, the SIM radiates nothing")
            noise = calibrate_noise(self.channel.H, stack, self.x_train, snr_db)
            # the rx undoes the beta fit on G and the input gain phi0
            pipe = Pipeline.assemble(self.psi_tx, self.psi_rx, stack, trace.beta / stack.phi0, self.channel, noise)
            acc = self.classifier.accuracy(run_pipeline(pipe, test.tx, rng), test.labels)
        else:
            kind = {"original-linear": "linear", "original-ppfe": "ppfe", "no-alignment": "identity"}[method]
            A = self.aligner(kind).matrix
            noise = calibrate_noise(self.channel.H, A, self.x_train, snr_db)
            out = run_digital_baseline(A, self.psi_tx, self.psi_rx, self.channel.H, noise, test.tx, rng)
            acc = self.classifier.accuracy(out, test.labels)
        return ResultRow(var, value, self.seed, method, acc, float(nmse))


def evaluate(config: ExperimentConfig, failures: list | None = None) -> list:
    """Run every seed x sweep point x method; deterministic per seed.

    Rows whose computation raises a library error are logged and, when
    ``failures`` is given, appended to it as ``(var, value, seed, method, error)``
    instead of aborting the run.
    """
    config.validate()
    dataset = load_latents(config.latent_file) if config.latent_file else None
    points = config.points()
    rows = []
    for seed in config.seeds:
        ctx = _SeedContext(config, seed, dataset)
        for var, value in points:
            for method in config.methods:
                start = time.perf_counter()
                try:
                    row = ctx.run(method, var, value)
                except (SimAlignError, np.linalg.LinAlgError) as exc:
                    log.warning("seed %s %s=%s %s failed: %s", seed, var, value, method, exc)
                    if failures is not None:
                        failures.append((var, value, seed, method, exc))
                    continue
                if config.record_timing:
                    row = dataclasses.replace(row, wall_ms=1e3 * (time.perf_counter() - start))
                rows.append(row)
    return sort_rows(rows, points, config.methods)


def sort_rows(rows, points=None, methods=METHODS) -> list:
    point_rank = {p: i for i, p in enumerate(points or [])}
    method_rank = {m: i for i, m in enumerate(methods)}
    return sorted(
        rows,
        key=lambda r: (point_rank.get((r.sweep_var, r.sweep_value), 0), r.sweep_var, r.sweep_value,
                       r.seed, method_rank.get(r.method, len(method_rank))),
    )


def _fmt(x: float) -> str:
    return f"{x:.9g}"


def emit_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in rows:
            w.writerow([r.sweep_var, _fmt(r.sweep_value), r.seed, r.method,
                        _fmt(r.accuracy), _fmt(r.emulation_nmse), _fmt(r.wall_ms)])


def read_csv(path) -> list:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        return [
            ResultRow(d["sweep_var"], float(d["sweep_value"]), int(d["seed"]), d["method"],
                      float(d["accuracy"]), float(d["emulation_nmse"]), float(d["wall_ms"]))
            for d in reader
        ]


def mean_accuracy(rows, method: str, var: str | None = None, value: float | None = None) -> float:
    sel = [r.accuracy for r in rows if r.method == method
           and (var is None or r.sweep_var == var) and (value is None or r.sweep_value == value)]
    return float(np.mean(sel)) if sel else float("nan")
