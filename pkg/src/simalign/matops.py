"""Complex linear-algebra kernel shared by every other module.

Matrices are plain ``numpy`` arrays of dtype ``complex128``. Samples stored as
matrices follow the convention of the calling module; this module is agnostic.
"""
from __future__ import annotations

import zlib

import numpy as np

from .errors import NegativeEigenvalue, NonHermitian, ZeroMatrix

DEFAULT_REL_TOL = 1e-10

_MASK64 = (1 << 64) - 1


def _key_to_int(key) -> int:
    if isinstance(key, (int, np.integer)):
        return int(key) & 0xFFFFFFFF
    return zlib.crc32(str(key).encode("utf-8"))


class RngStream:
    """Seeded PCG64 stream that can be forked into independent named children.

    The output sequence is the one documented by numpy for
    ``Generator(PCG64(SeedSequence(seed, spawn_key=key)))`` and is identical
    across platforms. A stream is owned by one consumer; use :meth:`fork` to
    hand out streams to parallel work instead of sharing one.
    """

    algorithm = "PCG64"

    def __init__(self, seed: int, key: tuple[int, ...] = ()):
        self.seed = int(seed) & _MASK64
        self.key = tuple(int(k) for k in key)
        seq = np.random.SeedSequence(self.seed, spawn_key=self.key)
        self.generator = np.random.Generator(np.random.PCG64(seq))

    def fork(self, *names) -> "RngStream":
        """Child stream keyed by ``names`` (ints or strings); independent of draw history."""
        return RngStream(self.seed, self.key + tuple(_key_to_int(n) for n in names))

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, key={self.key})"


def as_rng(rng) -> np.random.Generator:
    if isinstance(rng, RngStream):
        return rng.generator
    if isinstance(rng, np.random.Generator):
        return rng
    return RngStream(rng).generator


def hermitian_pinv_sqrt(M, rel_tol: float = DEFAULT_REL_TOL) -> np.ndarray:
    """Pseudo-inverse square root of a Hermitian PSD matrix.

    Eigenpairs with eigenvalue at or below ``rel_tol * lambda_max`` are dropped,
    so for rank-deficient ``M`` the result ``S`` satisfies ``S M S = P`` with
    ``P`` the orthogonal projector onto ``range(M)``.
    """
    M = np.asarray(M, dtype=complex)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise NonHermitian(f"expected a square matrix, got shape {M.shape}")
    scale = np.linalg.norm(M)
    if np.linalg.norm(M - M.conj().T) > 1e-10 * max(scale, np.finfo(float).tiny):
        raise NonHermitian("matrix is not Hermitian within 1e-10 relative")
    if scale == 0.0:
        return np.zeros_like(M)
    evals, evecs = np.linalg.eigh(0.5 * (M + M.conj().T))
    if evals[0] < -1e-10 * scale:
        raise NegativeEigenvalue(f"eigenvalue {evals[0]:.3e} below tolerance band")
    keep = evals > rel_tol * evals[-1]
    U = evecs[:, keep]
    return (U * (1.0 / np.sqrt(evals[keep]))) @ U.conj().T


def partial_isometry(X, rel_tol: float = DEFAULT_REL_TOL) -> np.ndarray:
    """Polar factor ``U_r V_r^H`` of the thin SVD of ``X``.

    Equal to ``X @ hermitian_pinv_sqrt(X^H X)`` but computed without squaring
    the condition number. Singular values at or below ``rel_tol * s_max**2``
    (relative on the Gram eigenvalue scale) are treated as zero.
    """
    X = np.asarray(X, dtype=complex)
    if X.size == 0 or not np.any(X):
        raise ZeroMatrix("cannot normalize an all-zero matrix")
    U, s, Vh = np.linalg.svd(X, full_matrices=False)
    keep = s**2 > rel_tol * s[0] ** 2
    return U[:, keep] @ Vh[keep, :]


def sample_complex_gaussian(rows: int, cols: int, variance: float, rng) -> np.ndarray:
    """I.i.d. CN(0, variance) entries; real and imaginary parts each carry variance/2."""
    if variance < 0:
        raise ValueError("variance must be non-negative")
    gen = as_rng(rng)
    draws = gen.standard_normal((2, rows, cols))
    return np.sqrt(variance / 2.0) * (draws[0] + 1j * draws[1])


def vec_stack(M) -> np.ndarray:
    """Column-major vectorization."""
    return np.asarray(M).reshape(-1, order="F")


def unvec(v, rows: int, cols: int) -> np.ndarray:
    return np.asarray(v).reshape((rows, cols), order="F")
