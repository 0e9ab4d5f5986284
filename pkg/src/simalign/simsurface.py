"""Stacked intelligent metasurface: geometry, inter-layer propagation and response.

Layer 0 is the input modulation layer (``M_0`` = tx complex latent dim), layers
1..L carry tunable phases, and layer L feeds the transmit antennas.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from .errors import (
    DegenerateDistance,
    DimMismatch,
    InvalidConfig,
    InvalidSize,
    MalformedFile,
    ShapeMismatch,
)
from .matops import as_rng

TWO_PI = 2.0 * np.pi
DEFAULT_WAVELENGTH = 0.005

PHASE_MAGIC = b"SIMPHS1\0"


def grid_positions(count: int, pitch: float) -> np.ndarray:
    """Planar (x, y) centres of ``count`` cells packed row-major, centroid at the origin."""
    if count < 1:
        raise InvalidSize(f"layer size must be positive, got {count}")
    width = math.isqrt(count)
    if width * width < count:
        width += 1
    idx = np.arange(count)
    xy = np.stack([idx % width, idx // width], axis=1).astype(float) * pitch
    return xy - xy.mean(axis=0)


@dataclass(frozen=True, eq=False)
class SimGeometry:
    wavelength: float
    s_layer: float
    layer_sizes: tuple
    cell_width: float
    positions: tuple

    @property
    def num_layers(self) -> int:
        return len(self.layer_sizes) - 1

    @property
    def cell_area(self) -> float:
        return self.cell_width**2


def build_geometry(wavelength: float, s_layer: float, layer_sizes, cell_width: float | None = None) -> SimGeometry:
    """Parallel square-ish layers at ``z = l * s_layer`` with pitch ``cell_width`` (default λ/2)."""
    sizes = tuple(int(m) for m in layer_sizes)
    if len(sizes) < 2 or any(m < 1 for m in sizes):
        raise InvalidSize(f"need an input layer and at least one metasurface layer, got {sizes}")
    if wavelength <= 0 or s_layer <= 0:
        raise InvalidSize("wavelength and layer spacing must be positive")
    width = wavelength / 2.0 if cell_width is None else float(cell_width)
    positions = []
    for l, m in enumerate(sizes):
        xy = grid_positions(m, width)
        positions.append(np.column_stack([xy, np.full(m, l * s_layer)]))
    return SimGeometry(float(wavelength), float(s_layer), sizes, width, tuple(positions))


def propagation_matrix(geom: SimGeometry, l: int, phase_sign: int = 1) -> np.ndarray:
    """``W_l`` (``M_l x M_{l-1}``) from the geometric-optics near-field formula.

    Entry: ``(s A / d^2) (1/(2 pi d) - j/λ) exp(sign * j 2 pi d / λ)``.
    """
    if not 1 <= l <= geom.num_layers:
        raise InvalidSize(f"layer index {l} outside 1..{geom.num_layers}")
    diff = geom.positions[l][:, None, :] - geom.positions[l - 1][None, :, :]
    d = np.sqrt(np.sum(diff**2, axis=-1))
    if np.any(d <= 0):
        raise DegenerateDistance("coincident elements in consecutive layers")
    lam = geom.wavelength
    amp = geom.s_layer * geom.cell_area / d**2
    return amp * (1.0 / (TWO_PI * d) - 1j / lam) * np.exp(phase_sign * 1j * TWO_PI * d / lam)


def wrap_phase(xi) -> np.ndarray:
    return np.mod(xi, TWO_PI)


class SimStack:
    """Geometry, per-layer phases and amplifications, and the cached response ``G``.

    ``phi[0]`` scales the input modulation layer; ``phi[l]`` (l >= 1) is the
    per-element gain of layer ``l``. The stack is mutated by the optimizer only,
    via :meth:`set_phases`; :meth:`copy` gives a cheap snapshot.
    """

    def __init__(self, geometry: SimGeometry, phases=None, phi=None, phase_sign: int = 1, W=None):
        self.geometry = geometry
        self.phase_sign = int(phase_sign)
        L = geometry.num_layers
        self.phi = np.ones(L + 1) if phi is None else np.asarray(phi, dtype=float).copy()
        if self.phi.shape != (L + 1,) or np.any(self.phi < 0):
            raise InvalidConfig(f"need {L + 1} non-negative amplification values")
        if W is None:
            W = [propagation_matrix(geometry, l, self.phase_sign) for l in range(1, L + 1)]
        self.W = list(W)
        if phases is None:
            phases = [np.zeros(m) for m in geometry.layer_sizes[1:]]
        self._G = None
        self.set_phases(phases)

    @property
    def num_layers(self) -> int:
        return self.geometry.num_layers

    @property
    def input_dim(self) -> int:
        return self.geometry.layer_sizes[0]

    @property
    def output_dim(self) -> int:
        return self.geometry.layer_sizes[-1]

    @property
    def phi0(self) -> float:
        return float(self.phi[0])

    @property
    def phases(self) -> list:
        return self._phases

    def set_phases(self, phases) -> None:
        phases = [wrap_phase(np.asarray(p, dtype=float)) for p in phases]
        sizes = self.geometry.layer_sizes[1:]
        if len(phases) != len(sizes) or any(p.shape != (m,) for p, m in zip(phases, sizes)):
            raise ShapeMismatch(f"phase vectors must have sizes {sizes}")
        self._phases = phases
        self._G = None

    def layer_response(self, l: int) -> np.ndarray:
        """Diagonal of ``Υ_l`` (1-based layer index)."""
        return self.phi[l] * np.exp(1j * self._phases[l - 1])

    def randomize(self, rng) -> "SimStack":
        gen = as_rng(rng)
        self.set_phases([gen.uniform(0.0, TWO_PI, m) for m in self.geometry.layer_sizes[1:]])
        return self

    def copy(self) -> "SimStack":
        return SimStack(self.geometry, [p.copy() for p in self._phases], self.phi, self.phase_sign, self.W)


def assemble_response(stack: SimStack) -> np.ndarray:
    """``G = Υ_L W_L ... Υ_1 W_1``, evaluated right to left and cached."""
    if stack._G is None:
        G = stack.W[0]
        for l in range(1, stack.num_layers + 1):
            if l > 1:
                if stack.W[l - 1].shape[1] != G.shape[0]:
                    raise ShapeMismatch("propagation matrices do not chain")
                G = stack.W[l - 1] @ G
            G = stack.layer_response(l)[:, None] * G
        stack._G = G
    return stack._G


def forward(stack: SimStack, x, phi0: float | None = None) -> np.ndarray:
    """``phi0 * G x`` for one vector or a row-per-sample batch."""
    x = np.asarray(x, dtype=complex)
    if x.shape[-1] != stack.input_dim:
        raise DimMismatch(f"expected input length {stack.input_dim}, got {x.shape[-1]}")
    scale = stack.phi0 if phi0 is None else phi0
    return scale * (x @ assemble_response(stack).T)


@dataclass
class StackConfig:
    """Structured-text description of a stack (YAML on disk)."""

    layer_sizes: list
    wavelength: float = DEFAULT_WAVELENGTH
    s_layer_mult: float = 5.0
    phi: list | None = None
    phase_sign: int = 1
    cell_width: float | None = None

    @property
    def s_layer(self) -> float:
        return self.s_layer_mult * self.wavelength

    def build(self) -> SimStack:
        geom = build_geometry(self.wavelength, self.s_layer, self.layer_sizes, self.cell_width)
        return SimStack(geom, phi=self.phi, phase_sign=self.phase_sign)

    @classmethod
    def from_dict(cls, raw: dict) -> "StackConfig":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(raw) - known
        if extra:
            raise InvalidConfig(f"unknown stack config keys: {sorted(extra)}")
        if "layer_sizes" not in raw:
            raise InvalidConfig("stack config needs layer_sizes")
        return cls(**raw)

    @classmethod
    def load(cls, path) -> "StackConfig":
        return cls.from_dict(yaml.safe_load(Path(path).read_text()) or {})


def stack_layout(input_dim: int, output_dim: int, layers: int, atoms: int) -> list:
    """``[M_0, atoms, ..., atoms, M_L]`` with ``layers - 1`` intermediate layers."""
    if layers < 1:
        raise InvalidSize("need at least one metasurface layer")
    return [input_dim] + [atoms] * (layers - 1) + [output_dim]


def save_phases(stack: SimStack, path) -> None:
    sizes = stack.geometry.layer_sizes[1:]
    with open(path, "wb") as fh:
        fh.write(PHASE_MAGIC)
        fh.write(struct.pack(f"<I{len(sizes)}I", len(sizes), *sizes))
        fh.write(np.concatenate(stack.phases).astype("<f8").tobytes())


def load_phases(path) -> list:
    raw = Path(path).read_bytes()
    if raw[:8] != PHASE_MAGIC or len(raw) < 12:
        raise MalformedFile("not a SIMPHS1 file")
    (L,) = struct.unpack_from("<I", raw, 8)
    if len(raw) < 12 + 4 * L:
        raise MalformedFile("truncated layer-size table")
    sizes = struct.unpack_from(f"<{L}I", raw, 12)
    off = 12 + 4 * L
    if len(raw) != off + 8 * sum(sizes):
        raise MalformedFile("payload size does not match layer sizes")
    flat = np.frombuffer(raw, "<f8", sum(sizes), off).astype(float)
    return np.split(flat, np.cumsum(sizes)[:-1])
