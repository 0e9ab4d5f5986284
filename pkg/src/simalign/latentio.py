"""Latent datasets, the complex pairing map and per-agent whitening.

Real latents are stored row-per-sample (``N x 2k``). The complex map pairs the
first half of a row with the second half: ``x[i] = s[i] + j*s[k+i]``.
"""
from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    DegenerateCovariance,
    DimMismatch,
    InvalidConfig,
    InvariantViolation,
    MalformedFile,
    OddLength,
)
from .matops import DEFAULT_REL_TOL, as_rng

TRAIN, VAL, TEST = 0, 1, 2
SPLIT_NAMES = {"train": TRAIN, "val": VAL, "test": TEST}

# Paper's 70 / 7.5 / 12.5 proportions, renormalized to cover every record.
SPLIT_WEIGHTS = (70.0, 7.5, 12.5)

LATENT_MAGIC = b"SIMLAT1\0"
_HEADER = struct.Struct("<8s4I")


def pair_to_complex(s) -> np.ndarray:
    """Pair the two halves of the last axis into complex symbols."""
    s = np.asarray(s, dtype=float)
    n = s.shape[-1]
    if n % 2:
        raise OddLength(f"latent length {n} is odd")
    k = n // 2
    return s[..., :k] + 1j * s[..., k:]


def complex_to_pair(x) -> np.ndarray:
    x = np.asarray(x)
    return np.concatenate([x.real, x.imag], axis=-1)


@dataclass(frozen=True)
class Whitener:
    """Complex mapping plus ZCA whitening for one agent (``psi`` and its inverse)."""

    mean: np.ndarray
    whiten: np.ndarray
    color: np.ndarray

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    @classmethod
    def identity(cls, k: int) -> "Whitener":
        eye = np.eye(k, dtype=complex)
        return cls(np.zeros(k, dtype=complex), eye, eye.copy())


def fit_whitener(latents, eps: float = 1e-6, rel_tol: float = DEFAULT_REL_TOL) -> Whitener:
    """Fit complex ZCA whitening on real latents (rows are samples).

    The whitening matrix is ``(C + eps I)^(-1/2)`` restricted to its numerical
    range; ``color`` is the matching square root so ``color`` undoes ``whiten``.
    """
    latents = np.asarray(latents, dtype=float)
    if latents.ndim != 2 or latents.shape[0] < 2:
        raise InvalidConfig("need at least two latent rows to fit a whitener")
    x = pair_to_complex(latents)
    mean = x.mean(axis=0)
    xc = x - mean
    cov = xc.T @ xc.conj() / x.shape[0]
    cov = 0.5 * (cov + cov.conj().T) + eps * np.eye(cov.shape[0])
    evals, evecs = np.linalg.eigh(cov)
    top = evals[-1]
    keep = evals > rel_tol * top if top > 0 else np.zeros_like(evals, dtype=bool)
    if eps == 0 and not keep.all():
        raise DegenerateCovariance("covariance is singular and eps = 0")
    U = evecs[:, keep]
    root = np.sqrt(evals[keep])
    whiten = (U / root) @ U.conj().T
    color = (U * root) @ U.conj().T
    return Whitener(mean, whiten, color)


def apply_psi(w: Whitener, s) -> np.ndarray:
    """Real latent(s) of length 2k -> whitened complex vector(s) of length k."""
    s = np.asarray(s, dtype=float)
    if s.shape[-1] != 2 * w.dim:
        raise DimMismatch(f"expected latent length {2 * w.dim}, got {s.shape[-1]}")
    return (pair_to_complex(s) - w.mean) @ w.whiten.T


def invert_psi(w: Whitener, x) -> np.ndarray:
    """Re-color complex vector(s) and unpair them back into real latents."""
    x = np.asarray(x, dtype=complex)
    if x.shape[-1] != w.dim:
        raise DimMismatch(f"expected complex length {w.dim}, got {x.shape[-1]}")
    return complex_to_pair(x @ w.color.T + w.mean)


@dataclass(frozen=True, eq=False)
class LatentDataset:
    tx: np.ndarray
    rx: np.ndarray
    labels: np.ndarray
    split: np.ndarray
    num_classes: int

    def __post_init__(self):
        n = self.tx.shape[0]
        if self.tx.ndim != 2 or self.rx.ndim != 2:
            raise InvariantViolation("latent arrays must be two-dimensional")
        if self.rx.shape[0] != n or self.labels.shape != (n,) or self.split.shape != (n,):
            raise InvariantViolation("row counts of tx, rx, labels and split disagree")
        if self.tx.shape[1] % 2 or self.rx.shape[1] % 2:
            raise InvariantViolation(
                f"latent dims must be even, got tx={self.tx.shape[1]} rx={self.rx.shape[1]}"
            )
        if n and (self.labels.max() >= self.num_classes or self.labels.min() < 0):
            raise InvariantViolation("label outside [0, num_classes)")
        if n and not np.isin(self.split, (TRAIN, VAL, TEST)).all():
            raise InvariantViolation("split tags must be 0, 1 or 2")

    @property
    def tx_dim(self) -> int:
        return self.tx.shape[1]

    @property
    def rx_dim(self) -> int:
        return self.rx.shape[1]

    def __len__(self) -> int:
        return self.tx.shape[0]

    def part(self, which) -> "LatentDataset":
        tag = SPLIT_NAMES.get(which, which)
        m = self.split == tag
        return LatentDataset(self.tx[m], self.rx[m], self.labels[m], self.split[m], self.num_classes)


@dataclass(frozen=True)
class SyntheticConfig:
    """Heterogeneous-agent stand-in for pretrained encoders.

    A class-conditional Gaussian ground signal ``z`` in R^p is pushed through
    two independent random affine encoders. The encoders act complex-linearly
    on the paired representation, so the best TX->RX aligner is a complex
    matrix exactly (up to the added noise).
    """

    num_classes: int = 10
    ground_dim: int = 16
    tx_dim: int = 32
    rx_dim: int = 64
    class_separation: float = 5.0
    latent_noise_std: float = 0.1
    nonlinearity: str = "none"
    samples_per_class: int = 500

    def validate(self) -> None:
        counts = (self.num_classes, self.ground_dim, self.tx_dim, self.rx_dim, self.samples_per_class)
        if any(int(c) < 1 for c in counts):
            raise InvalidConfig("counts must be positive")
        if self.tx_dim % 2 or self.rx_dim % 2 or self.ground_dim % 2:
            raise InvalidConfig("ground, tx and rx dims must be even")
        if self.class_separation < 0 or self.latent_noise_std < 0:
            raise InvalidConfig("separation and noise std must be non-negative")
        if self.nonlinearity not in ("none", "tanh"):
            raise InvalidConfig(f"unknown nonlinearity {self.nonlinearity!r}")


def _random_encoder(gen, ground_k: int, out_k: int):
    draws = gen.standard_normal((2, out_k, ground_k))
    weight = (draws[0] + 1j * draws[1]) / np.sqrt(2 * ground_k)
    b = gen.standard_normal((2, out_k))
    bias = (b[0] + 1j * b[1]) / np.sqrt(2)
    return weight, bias


def _encode(gen, zc, weight, bias, cfg: SyntheticConfig) -> np.ndarray:
    s = complex_to_pair(zc @ weight.T + bias)
    if cfg.nonlinearity == "tanh":
        scale = s.std()
        s = scale * np.tanh(s / scale)
    if cfg.latent_noise_std > 0:
        s = s + cfg.latent_noise_std * gen.standard_normal(s.shape)
    return s


def assign_splits(n: int, gen) -> np.ndarray:
    weights = np.asarray(SPLIT_WEIGHTS) / sum(SPLIT_WEIGHTS)
    counts = np.floor(weights * n).astype(int)
    counts[0] += n - counts.sum()
    tags = np.repeat(np.arange(3, dtype=np.uint8), counts)
    return tags[gen.permutation(n)]


def generate_synthetic(cfg: SyntheticConfig, rng) -> LatentDataset:
    """Draw a labelled TX/RX latent dataset; a pure function of ``(cfg, seed)``."""
    cfg.validate()
    gen = as_rng(rng)
    p, C = cfg.ground_dim, cfg.num_classes
    directions = gen.standard_normal((C, p))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    means = cfg.class_separation * directions
    tx_w, tx_b = _random_encoder(gen, p // 2, cfg.tx_dim // 2)
    rx_w, rx_b = _random_encoder(gen, p // 2, cfg.rx_dim // 2)

    labels = np.repeat(np.arange(C), cfg.samples_per_class)
    z = means[labels] + gen.standard_normal((labels.size, p))
    zc = pair_to_complex(z)
    tx = _encode(gen, zc, tx_w, tx_b, cfg)
    rx = _encode(gen, zc, rx_w, rx_b, cfg)
    split = assign_splits(labels.size, gen)
    return LatentDataset(
        tx.astype(np.float32), rx.astype(np.float32), labels.astype(np.uint16), split, C
    )


def save_latents(ds: LatentDataset, path) -> None:
    """Write ``SIMLAT1`` binary, or the CSV fixture layout when ``path`` ends in ``.csv``."""
    path = Path(path)
    if path.suffix.lower() == ".csv":
        _save_csv(ds, path)
        return
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(LATENT_MAGIC, len(ds), ds.tx_dim, ds.rx_dim, ds.num_classes))
        fh.write(np.ascontiguousarray(ds.tx, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(ds.rx, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(ds.labels, dtype="<u2").tobytes())
        fh.write(np.ascontiguousarray(ds.split, dtype="u1").tobytes())


def load_latents(path) -> LatentDataset:
    path = Path(path)
    if path.suffix.lower() == ".csv":
        return _load_csv(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise MalformedFile("file shorter than the SIMLAT1 header")
    magic, n, tdim, rdim, classes = _HEADER.unpack_from(raw)
    if magic != LATENT_MAGIC:
        raise MalformedFile("bad magic bytes, not a SIMLAT1 file")
    sizes = (4 * n * tdim, 4 * n * rdim, 2 * n, n)
    if len(raw) != _HEADER.size + sum(sizes):
        raise MalformedFile(f"expected {_HEADER.size + sum(sizes)} bytes, found {len(raw)}")
    off = _HEADER.size
    tx = np.frombuffer(raw, "<f4", n * tdim, off).reshape(n, tdim)
    off += sizes[0]
    rx = np.frombuffer(raw, "<f4", n * rdim, off).reshape(n, rdim)
    off += sizes[1]
    labels = np.frombuffer(raw, "<u2", n, off)
    off += sizes[2]
    split = np.frombuffer(raw, "u1", n, off)
    return LatentDataset(
        tx.astype(np.float32), rx.astype(np.float32), labels.astype(np.uint16),
        split.astype(np.uint8), int(classes),
    )


def _save_csv(ds: LatentDataset, path: Path) -> None:
    names = {v: k for k, v in SPLIT_NAMES.items()}
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(
            [f"tx_{i}" for i in range(ds.tx_dim)] + [f"rx_{i}" for i in range(ds.rx_dim)] + ["label", "split"]
        )
        for t, r, lab, sp in zip(ds.tx, ds.rx, ds.labels, ds.split):
            w.writerow([repr(float(v)) for v in t] + [repr(float(v)) for v in r] + [int(lab), names[int(sp)]])


def _load_csv(path: Path) -> LatentDataset:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise MalformedFile("empty CSV")
    header = rows[0]
    tcols = [i for i, h in enumerate(header) if h.startswith("tx_")]
    rcols = [i for i, h in enumerate(header) if h.startswith("rx_")]
    try:
        lcol, scol = header.index("label"), header.index("split")
    except ValueError as exc:
        raise MalformedFile("CSV header lacks label/split columns") from exc
    tx, rx, labels, split = [], [], [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise MalformedFile(f"line {lineno}: expected {len(header)} fields, got {len(row)}")
        try:
            tx.append([float(row[i]) for i in tcols])
            rx.append([float(row[i]) for i in rcols])
            labels.append(int(row[lcol]))
            tag = row[scol].strip()
            split.append(SPLIT_NAMES[tag] if tag in SPLIT_NAMES else int(tag))
        except (ValueError, KeyError) as exc:
            raise MalformedFile(f"line {lineno}: {exc}") from exc
    n = len(labels)
    labels = np.asarray(labels, dtype=np.int64)
    return LatentDataset(
        np.asarray(tx, dtype=np.float32).reshape(n, len(tcols)),
        np.asarray(rx, dtype=np.float32).reshape(n, len(rcols)),
        labels.astype(np.uint16),
        np.asarray(split, dtype=np.uint8),
        int(labels.max()) + 1 if n else 0,
    )
