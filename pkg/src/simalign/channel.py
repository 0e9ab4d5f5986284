"""Rayleigh MIMO channel, SNR-calibrated noise, MMSE equalization and the full chain.

Signals are row-per-sample: a batch of ``n`` transmit vectors is ``n x N_T``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimMismatch, EmptyPilotSet, SingularAtInfiniteSnr
from .latentio import Whitener, apply_psi, invert_psi
from .matops import as_rng, sample_complex_gaussian
from .simsurface import SimStack, forward


@dataclass(frozen=True, eq=False)
class ChannelRealization:
    H: np.ndarray
    seed: int | None = None
    variance: float = 1.0

    @classmethod
    def rayleigh(cls, n_rx: int, n_tx: int, rng, variance: float = 1.0, seed: int | None = None):
        return cls(sample_complex_gaussian(n_rx, n_tx, variance, rng), seed, variance)


@dataclass(frozen=True)
class NoiseModel:
    variance: float
    snr_db: float
    reference_power: float

    @property
    def snr(self) -> float:
        return math.inf if math.isinf(self.snr_db) and self.snr_db > 0 else 10.0 ** (self.snr_db / 10.0)


def mmse_equalizer(H, snr: float) -> np.ndarray:
    """``(H^H H + I/snr)^-1 H^H``; at ``snr = inf`` the pseudo-inverse limit."""
    H = np.asarray(H, dtype=complex)
    if not np.any(H):
        raise ValueError("channel matrix is all zero")
    if snr <= 0:
        raise ValueError("snr must be positive")
    gram = H.conj().T @ H
    if math.isinf(snr):
        s = np.linalg.svd(H, compute_uv=False)
        if s.size < H.shape[1] or s[-1] <= max(H.shape) * np.finfo(float).eps * s[0]:
            raise SingularAtInfiniteSnr("H lacks full column rank; no zero-forcing limit")
    else:
        gram = gram + np.eye(gram.shape[0]) / snr
    return np.linalg.solve(gram, H.conj().T)


def calibrate_noise(H, source, pilot_x, snr_db: float) -> NoiseModel:
    """Noise variance such that mean received per-antenna pilot power / σ² = 10^(snr_db/10).

    ``source`` is a :class:`SimStack` (pilots go through :func:`forward`) or a
    complex matrix applied digitally; ``pilot_x`` is row-per-pilot.
    """
    pilot_x = np.atleast_2d(np.asarray(pilot_x, dtype=complex))
    if pilot_x.shape[0] == 0 or pilot_x.size == 0:
        raise EmptyPilotSet("no pilots to calibrate against")
    H = np.asarray(H)
    tx = forward(source, pilot_x) if isinstance(source, SimStack) else pilot_x @ np.asarray(source).T
    rx = tx @ H.T
    power = float(np.mean(np.sum(np.abs(rx) ** 2, axis=1)) / H.shape[0])
    if math.isinf(snr_db) and snr_db > 0:
        return NoiseModel(0.0, math.inf, power)
    return NoiseModel(power * 10.0 ** (-snr_db / 10.0), float(snr_db), power)


def transmit(y_bar, H, noise: NoiseModel, rng) -> np.ndarray:
    """``H y + v`` with ``v ~ CN(0, σ² I)`` drawn per sample."""
    y_bar = np.asarray(y_bar, dtype=complex)
    H = np.asarray(H)
    if y_bar.shape[-1] != H.shape[1]:
        raise DimMismatch(f"signal length {y_bar.shape[-1]} vs {H.shape[1]} tx antennas")
    out = y_bar @ H.T
    if noise.variance > 0:
        rows = 1 if out.ndim == 1 else out.shape[0]
        v = sample_complex_gaussian(rows, H.shape[0], noise.variance, rng)
        out = out + (v[0] if out.ndim == 1 else v)
    return out


@dataclass(frozen=True, eq=False)
class Pipeline:
    """psi_T -> SIM -> channel + noise -> Q -> x rx_scale -> psi_R^-1."""

    psi_tx: Whitener
    psi_rx: Whitener
    stack: SimStack
    rx_scale: complex
    channel: ChannelRealization
    noise: NoiseModel
    Q: np.ndarray

    def __post_init__(self):
        chain = [
            (self.psi_tx.dim, self.stack.input_dim),
            (self.stack.output_dim, self.channel.H.shape[1]),
            (self.channel.H.shape[0], self.Q.shape[1]),
            (self.Q.shape[0], self.psi_rx.dim),
        ]
        for a, b in chain:
            if a != b:
                raise DimMismatch(f"pipeline dimensions do not chain: {chain}")

    @classmethod
    def assemble(cls, psi_tx, psi_rx, stack, rx_scale, channel, noise) -> "Pipeline":
        return cls(psi_tx, psi_rx, stack, rx_scale, channel, noise, mmse_equalizer(channel.H, noise.snr))


def _receive(Q, received, scale, psi_rx) -> np.ndarray:
    return invert_psi(psi_rx, scale * (received @ Q.T))


def run_pipeline(p: Pipeline, s_tx, rng) -> np.ndarray:
    """Real tx latent(s) to reconstructed rx latent(s) over the air."""
    x = apply_psi(p.psi_tx, s_tx)
    received = transmit(forward(p.stack, x), p.channel.H, p.noise, as_rng(rng))
    return _receive(p.Q, received, p.rx_scale, p.psi_rx)


def run_digital_baseline(aligner, psi_tx, psi_rx, H, noise: NoiseModel, s_tx, rng) -> np.ndarray:
    """Same chain with the aligner applied digitally at the tx instead of the SIM."""
    A = getattr(aligner, "matrix", aligner)
    x = apply_psi(psi_tx, s_tx)
    received = transmit(x @ np.asarray(A).T, H, noise, as_rng(rng))
    Q = mmse_equalizer(H, noise.snr)
    return _receive(Q, received, 1.0, psi_rx)
