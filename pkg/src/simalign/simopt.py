"""Fit SIM phases so that ``beta * G`` emulates a target aligner ``A``."""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import NonFiniteLoss, ShapeMismatch, ZeroResponse
from .matops import RngStream, vec_stack
from .simsurface import SimStack, assemble_response

log = logging.getLogger(__name__)


def emulation_loss(G, A, beta) -> float:
    """``||beta G - A||_F^2``."""
    G = np.asarray(G)
    A = np.asarray(A)
    if G.shape != A.shape:
        raise ShapeMismatch(f"response {G.shape} vs target {A.shape}")
    R = beta * G - A
    return float(np.vdot(R, R).real)


def optimal_beta(G, A) -> complex:
    """Closed-form least-squares scale ``(g^H g)^-1 g^H a`` with ``g = vec(G)``."""
    g = vec_stack(G)
    a = vec_stack(A)
    if g.shape != a.shape:
        raise ShapeMismatch("response and target sizes differ")
    gg = np.vdot(g, g).real
    if gg == 0.0:
        raise ZeroResponse("SIM response is identically zero")
    return complex(np.vdot(g, a) / gg)


def phase_gradient(stack: SimStack, A, beta) -> list:
    """Real gradient of the emulation loss w.r.t. every phase, two sweeps over the layers.

    With ``S_l = W_l Υ_{l-1} ... W_1`` (forward sweep) and
    ``D_l = (Υ_L W_L ... W_{l+1})^H conj(beta) R`` (backward sweep),
    ``dL/dξ_{l,m} = -2 Im(v_{l,m} * sum_i S_l[m,i] conj(D_l[m,i]))``.
    """
    A = np.asarray(A)
    G = assemble_response(stack)
    if G.shape != A.shape:
        raise ShapeMismatch(f"response {G.shape} vs target {A.shape}")
    L = stack.num_layers
    v = [stack.layer_response(l) for l in range(1, L + 1)]
    suffix = [stack.W[0]]
    for l in range(1, L):
        suffix.append(stack.W[l] @ (v[l - 1][:, None] * suffix[-1]))
    D = np.conj(beta) * (beta * G - A)
    grads = [None] * L
    for l in range(L - 1, -1, -1):
        z = np.einsum("mi,mi->m", suffix[l], D.conj())
        grads[l] = -2.0 * np.imag(v[l] * z)
        if l:
            D = stack.W[l].conj().T @ (v[l].conj()[:, None] * D)
    return grads


class Adam:
    """Adam over a list of per-layer arrays."""

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = None
        self.v = None
        self.t = 0

    def step(self, params: list, grads: list) -> list:
        if self.m is None:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        out = []
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            out.append(p - (self.lr / bc1) * m / (np.sqrt(v / bc2) + self.eps))
        return out


class GradientDescent:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, params: list, grads: list) -> list:
        return [p - self.lr * g for p, g in zip(params, grads)]


@dataclass
class OptimizerConfig:
    learning_rate: float = 0.1
    iterations: int = 500
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    method: str = "adam"
    init: str = "uniform"
    seed: int = 0
    early_stop_window: int = 20
    early_stop_tol: float = 1e-8

    def __post_init__(self):
        if self.learning_rate <= 0 or self.iterations < 1:
            raise ValueError("learning rate must be positive and iterations >= 1")
        if self.method not in ("adam", "gd"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.init not in ("uniform", "keep"):
            raise ValueError(f"unknown init policy {self.init!r}")


@dataclass
class TrainTrace:
    losses: list = field(default_factory=list)
    betas: list = field(default_factory=list)
    beta: complex = 0j
    final_loss: float = float("nan")
    phases: list = field(default_factory=list)
    wall_time: float = 0.0
    stopped_early: bool = False

    def __len__(self) -> int:
        return len(self.losses)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iter", "loss", "beta_re", "beta_im"])
            for i, (loss, b) in enumerate(zip(self.losses, self.betas)):
                w.writerow([i, f"{loss:.9g}", f"{b.real:.9g}", f"{b.imag:.9g}"])


def optimize(stack: SimStack, A, cfg: OptimizerConfig | None = None) -> TrainTrace:
    """Alternate closed-form ``beta`` refreshes with first-order phase steps.

    Each iteration refreshes ``beta`` for the current phases, records the loss,
    then steps every phase. Stops after ``cfg.iterations`` or once the relative
    loss change over ``early_stop_window`` iterations drops below
    ``early_stop_tol``, or once the residual is at round-off level (a few ulps
    per entry of ``A``), where the gradient is noise that Adam would amplify
    into full-size steps. ``stack`` is updated in place.
    """
    cfg = cfg or OptimizerConfig()
    A = np.asarray(A, dtype=complex)
    if assemble_response(stack).shape != A.shape:
        raise ShapeMismatch(f"SIM response {assemble_response(stack).shape} vs target {A.shape}")
    if cfg.init == "uniform":
        stack.randomize(RngStream(cfg.seed).fork("phase-init"))
    if cfg.method == "adam":
        opt = Adam(cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    else:
        opt = GradientDescent(cfg.learning_rate)

    trace = TrainTrace()
    start = time.perf_counter()
    window = cfg.early_stop_window
    floor = A.size * (4 * np.finfo(float).eps * np.abs(A).max()) ** 2
    for t in range(cfg.iterations):
        G = assemble_response(stack)
        beta = optimal_beta(G, A)
        loss = emulation_loss(G, A, beta)
        if not np.isfinite(loss):
            raise NonFiniteLoss(f"emulation loss became {loss} at iteration {t}")
        trace.losses.append(loss)
        trace.betas.append(beta)
        if loss <= floor:
            trace.stopped_early = True
            break
        if window and t >= window:
            ref = trace.losses[t - window]
            if abs(ref - loss) <= cfg.early_stop_tol * max(ref, np.finfo(float).tiny):
                trace.stopped_early = True
                log.debug("early stop at iteration %d, loss %.3e", t, loss)
                break
        grads = phase_gradient(stack, A, beta)
        stack.set_phases(opt.step(stack.phases, grads))

    G = assemble_response(stack)
    trace.beta = optimal_beta(G, A)
    trace.final_loss = emulation_loss(G, A, trace.beta)
    trace.phases = [p.copy() for p in stack.phases]
    trace.wall_time = time.perf_counter() - start
    return trace
