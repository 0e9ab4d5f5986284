"""Target alignment matrices: supervised least squares and Parseval-frame equalizers.

Pilot matrices ``X`` (tx) and ``Y`` (rx) are column-per-sample. Anchor and
prototype matrices are row-per-anchor. Both layouts follow the math they
implement; the helpers check shapes at the boundary.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    AnchorCountMismatch,
    EmptyCluster,
    MalformedFile,
    ShapeMismatch,
    SingularGram,
    TooFewPoints,
)
from .matops import DEFAULT_REL_TOL, as_rng, partial_isometry

KINDS = ("supervised-linear", "pfe", "ppfe", "identity")

ALIGNER_MAGIC = b"SIMALN1\0"
_ALN_HEADER = struct.Struct("<8sB3xII")


@dataclass(frozen=True, eq=False)
class Aligner:
    """A target map ``A`` from tx complex latents (dim ``cols``) to rx (dim ``rows``)."""

    matrix: np.ndarray
    kind: str
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown aligner kind {self.kind!r}")
        if not np.all(np.isfinite(self.matrix)):
            raise ValueError("aligner matrix has non-finite entries")

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape

    def apply(self, x) -> np.ndarray:
        """Map row-per-sample complex latents."""
        return np.asarray(x) @ self.matrix.T


@dataclass(frozen=True, eq=False)
class FrameOperator:
    F: np.ndarray
    source: str = "tx"

    @property
    def num_anchors(self) -> int:
        return self.F.shape[0]


@dataclass(frozen=True, eq=False)
class PrototypeSet:
    groups: list
    prototypes: np.ndarray

    @property
    def kappa(self) -> int:
        return len(self.groups)


def fit_linear(X, Y, gamma: float = 0.0) -> Aligner:
    """Regularized least squares ``A = Y X^H (X X^H + gamma I)^-1``, solved not inverted."""
    X = np.asarray(X, dtype=complex)
    Y = np.asarray(Y, dtype=complex)
    if X.ndim != 2 or Y.ndim != 2 or X.shape[1] != Y.shape[1]:
        raise ShapeMismatch(f"pilot matrices disagree: X {X.shape}, Y {Y.shape}")
    if gamma < 0:
        raise ValueError("gamma must be non-negative")
    gram = X @ X.conj().T
    gram = 0.5 * (gram + gram.conj().T) + gamma * np.eye(gram.shape[0])
    if gamma == 0:
        s = np.linalg.svd(gram, compute_uv=False)
        if s[-1] <= gram.shape[0] * np.finfo(float).eps * s[0]:
            raise SingularGram("X X^H is rank deficient and gamma = 0")
    cross = Y @ X.conj().T
    # A gram = cross  <=>  gram A^H = cross^H  (gram Hermitian)
    A = np.linalg.solve(gram, cross.conj().T).conj().T
    return Aligner(A, "supervised-linear", {"gamma": float(gamma), "num_pilots": X.shape[1]})


def anchor_matrix(latents) -> np.ndarray:
    """Row-per-anchor analysis matrix: row ``i`` is ``x_i^H`` so that ``X_A x`` lists ``<x_i, x>``."""
    return np.conj(np.asarray(latents, dtype=complex))


def build_frame(anchors, source: str = "tx", rel_tol: float = DEFAULT_REL_TOL) -> FrameOperator:
    """Parseval frame ``X_A (X_A^H X_A)^(-1/2)`` of row-per-anchor latents."""
    return FrameOperator(partial_isometry(anchors, rel_tol), source)


def compose_pfe(F_T: FrameOperator, F_R: FrameOperator, kind: str = "pfe", metadata=None) -> Aligner:
    if F_T.num_anchors != F_R.num_anchors:
        raise AnchorCountMismatch(f"{F_T.num_anchors} tx anchors vs {F_R.num_anchors} rx anchors")
    return Aligner(F_R.F.conj().T @ F_T.F, kind, dict(metadata or {}))


def _real_view(points) -> np.ndarray:
    points = np.asarray(points)
    if np.iscomplexobj(points):
        return np.concatenate([points.real, points.imag], axis=1)
    return points.astype(float)


def _kmeanspp(pts, k, gen) -> np.ndarray:
    n = pts.shape[0]
    chosen = [int(gen.integers(n))]
    d2 = np.sum((pts - pts[chosen[0]]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = int(gen.choice(n, p=d2 / total))
        else:
            pool = np.setdiff1d(np.arange(n), chosen)
            idx = int(gen.choice(pool))
        chosen.append(idx)
        d2 = np.minimum(d2, np.sum((pts - pts[idx]) ** 2, axis=1))
    return pts[chosen].copy()


def _sq_dists(pts, centers) -> np.ndarray:
    d = (pts**2).sum(1)[:, None] - 2.0 * pts @ centers.T + (centers**2).sum(1)[None, :]
    return np.maximum(d, 0.0)


def kmeans(points, k: int, rng, max_iter: int = 300, tol: float = 1e-8):
    """Lloyd's algorithm with k-means++ seeding on the real embedding of ``points``.

    Returns ``(assignments, centroids)``; centroids are complex when the input
    is. An empty cluster keeps its previous centroid.
    """
    pts = _real_view(points)
    n = pts.shape[0]
    if k < 1 or n < k:
        raise TooFewPoints(f"need at least k={k} points, got {n}")
    gen = as_rng(rng)
    centers = _kmeanspp(pts, k, gen)
    assign = np.argmin(_sq_dists(pts, centers), axis=1)
    for _ in range(max_iter):
        counts = np.bincount(assign, minlength=k)
        sums = np.zeros_like(centers)
        np.add.at(sums, assign, pts)
        new = centers.copy()
        nz = counts > 0
        new[nz] = sums[nz] / counts[nz, None]
        shift = np.sqrt(np.max(np.sum((new - centers) ** 2, axis=1)))
        centers = new
        assign = np.argmin(_sq_dists(pts, centers), axis=1)
        if shift < tol:
            break
    if np.iscomplexobj(points):
        half = centers.shape[1] // 2
        centers = centers[:, :half] + 1j * centers[:, half:]
    return assign, centers


def prototypical_anchors(latents, kappa: int, rho: int, rng, preset=None) -> PrototypeSet:
    """Cluster, sample up to ``rho`` members per cluster and average them.

    ``latents`` are already psi-mapped (row per sample). With ``preset`` index
    groups the clustering and sampling are skipped.
    """
    latents = np.asarray(latents)
    if kappa < 1 or rho < 1:
        raise ValueError("kappa and rho must be at least 1")
    if preset is None:
        gen = as_rng(rng)
        for attempt in range(2):
            assign, _ = kmeans(latents, kappa, gen)
            sizes = np.bincount(assign, minlength=kappa)
            if sizes.min() > 0:
                break
        else:
            raise EmptyCluster(f"k-means left {int((sizes == 0).sum())} empty clusters after re-seeding")
        groups = []
        for c in range(kappa):
            members = np.flatnonzero(assign == c)
            take = min(rho, members.size)
            groups.append(np.sort(gen.choice(members, size=take, replace=False)))
    else:
        groups = [np.asarray(g, dtype=int) for g in preset]
    prototypes = np.stack([latents[g].mean(axis=0) for g in groups])
    return PrototypeSet(groups, prototypes)


def build_ppfe(tx_latents, rx_latents, kappa: int, rho: int, rng, preset=None) -> Aligner:
    """Zero-shot aligner from prototypical anchors clustered on the tx side only.

    The sampled index groups are reused verbatim for the rx prototypes.
    """
    tx_latents = np.asarray(tx_latents)
    rx_latents = np.asarray(rx_latents)
    if tx_latents.shape[0] != rx_latents.shape[0]:
        raise ShapeMismatch("tx and rx latents must cover the same samples")
    tx_set = prototypical_anchors(tx_latents, kappa, rho, rng, preset)
    rx_set = prototypical_anchors(rx_latents, kappa, rho, None, tx_set.groups)
    F_T = build_frame(anchor_matrix(tx_set.prototypes), "tx")
    F_R = build_frame(anchor_matrix(rx_set.prototypes), "rx")
    meta = {"kappa": kappa, "rho": rho, "anchors": [g.tolist() for g in tx_set.groups]}
    return compose_pfe(F_T, F_R, kind="ppfe", metadata=meta)


def identity_aligner(rx_dim: int, tx_dim: int) -> Aligner:
    """Truncating / zero-padding identity, the 'no alignment' control."""
    return Aligner(np.eye(rx_dim, tx_dim, dtype=complex), "identity")


def save_aligner(aligner: Aligner, path) -> None:
    rows, cols = aligner.shape
    kind = KINDS.index(aligner.kind)
    inter = np.empty((rows, cols, 2), dtype="<f8")
    inter[..., 0] = aligner.matrix.real
    inter[..., 1] = aligner.matrix.imag
    with open(path, "wb") as fh:
        fh.write(_ALN_HEADER.pack(ALIGNER_MAGIC, kind, rows, cols))
        fh.write(inter.tobytes())


def load_aligner(path) -> Aligner:
    raw = Path(path).read_bytes()
    if len(raw) < _ALN_HEADER.size:
        raise MalformedFile("file shorter than the SIMALN1 header")
    magic, kind, rows, cols = _ALN_HEADER.unpack_from(raw)
    if magic != ALIGNER_MAGIC:
        raise MalformedFile("bad magic bytes, not a SIMALN1 file")
    if kind >= len(KINDS):
        raise MalformedFile(f"unknown kind tag {kind}")
    if len(raw) != _ALN_HEADER.size + 16 * rows * cols:
        raise MalformedFile("payload size does not match header dims")
    vals = np.frombuffer(raw, "<f8", 2 * rows * cols, _ALN_HEADER.size).reshape(rows, cols, 2)
    return Aligner(vals[..., 0] + 1j * vals[..., 1], KINDS[kind])
