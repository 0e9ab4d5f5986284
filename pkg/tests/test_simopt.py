import csv

import numpy as np
import pytest
from conftest import crandn
from hypothesis import given, settings
from hypothesis import strategies as st

from simalign.errors import NonFiniteLoss, ShapeMismatch, ZeroResponse
from simalign.simopt import (
    Adam,
    OptimizerConfig,
    emulation_loss,
    optimal_beta,
    optimize,
    phase_gradient,
)
from simalign.simsurface import StackConfig, assemble_response


def loop_loss(G, A, beta):
    total = 0.0
    for i in range(G.shape[0]):
        for j in range(G.shape[1]):
            r = beta * G[i, j] - A[i, j]
            total += r.real * r.real + r.imag * r.imag
    return total


def fd_gradient(stack, A, beta, h=1e-5):
    base = [p.copy() for p in stack.phases]
    out = []
    for l, p in enumerate(base):
        g = np.zeros_like(p)
        for m in range(p.size):
            vals = []
            for sign in (1, -1):
                ph = [q.copy() for q in base]
                ph[l][m] += sign * h
                stack.set_phases(ph)
                vals.append(emulation_loss(assemble_response(stack), A, beta))
            g[m] = (vals[0] - vals[1]) / (2 * h)
        out.append(g)
    stack.set_phases(base)
    return out


def scaled_target(stack, gen):
    G = assemble_response(stack)
    return crandn(gen, *G.shape) * np.abs(G).mean()


def test_loss_examples(gen):
    G = crandn(gen, 3, 4)
    assert emulation_loss(G, G, 1.0) == 0.0
    assert emulation_loss(G, np.zeros_like(G), 1.0) == pytest.approx(np.linalg.norm(G) ** 2, rel=1e-14)


def test_loss_matches_scalar_loop(gen):
    G, A = crandn(gen, 3, 3), crandn(gen, 3, 3)
    beta = complex(*gen.standard_normal(2))
    ref = loop_loss(G, A, beta)
    assert abs(emulation_loss(G, A, beta) - ref) <= 1e-12 * ref


def test_loss_shape_mismatch(gen):
    with pytest.raises(ShapeMismatch):
        emulation_loss(crandn(gen, 2, 3), crandn(gen, 3, 2), 1.0)


def test_beta_examples(gen):
    G = crandn(gen, 4, 3)
    assert optimal_beta(G, 2 * G) == pytest.approx(2.0, abs=1e-14)
    # make A orthogonal to G under the Frobenius inner product
    A = crandn(gen, 4, 3)
    A -= np.vdot(G, A) / np.vdot(G, G) * G
    assert abs(optimal_beta(G, A)) <= 1e-14


def test_beta_is_stationary_and_optimal(gen):
    G, A = crandn(gen, 5, 4), crandn(gen, 5, 4)
    beta = optimal_beta(G, A)
    # d L / d conj(beta) = g^H (beta g - a)
    assert abs(np.vdot(G, beta * G - A)) <= 1e-10 * np.linalg.norm(G) * np.linalg.norm(A)
    base = emulation_loss(G, A, beta)
    for d in 1e-3 * crandn(gen, 100):
        assert emulation_loss(G, A, beta + d) >= base


def test_beta_zero_response():
    with pytest.raises(ZeroResponse):
        optimal_beta(np.zeros((2, 2)), np.ones((2, 2)))


def test_gradient_matches_finite_differences(small_stack, gen):
    A = scaled_target(small_stack, gen)
    beta = optimal_beta(assemble_response(small_stack), A) * (1 + 0.3j)
    ana = np.concatenate(phase_gradient(small_stack, A, beta))
    num = np.concatenate(fd_gradient(small_stack, A, beta))
    rel = np.abs(ana - num) / np.maximum(np.abs(num), np.abs(ana))
    assert rel.max() <= 1e-6


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), sizes=st.lists(st.integers(1, 5), min_size=2, max_size=5))
def test_gradient_matches_fd_property(seed, sizes):
    g = np.random.default_rng(seed)
    stack = StackConfig(sizes, s_layer_mult=1.0).build().randomize(g)
    A = scaled_target(stack, g)
    beta = complex(*g.standard_normal(2))
    ana = np.concatenate(phase_gradient(stack, A, beta))
    num = np.concatenate(fd_gradient(stack, A, beta))
    scale = np.abs(num).max()
    assert np.abs(ana - num).max() <= 1e-6 * scale


def test_gradient_zero_beta(small_stack, gen):
    A = scaled_target(small_stack, gen)
    assert all(not np.any(g) for g in phase_gradient(small_stack, A, 0.0))


def test_gradient_zero_at_exact_fit(small_stack):
    beta = 0.5 - 2j
    A = beta * assemble_response(small_stack)
    grads = np.concatenate(phase_gradient(small_stack, A, beta))
    assert np.abs(grads).max() <= 1e-12 * np.linalg.norm(A) ** 2


def test_gradient_shape_mismatch(small_stack):
    with pytest.raises(ShapeMismatch):
        phase_gradient(small_stack, np.zeros((3, 3)), 1.0)


def test_gauge_invariance(small_stack, gen):
    A = scaled_target(small_stack, gen)
    G = assemble_response(small_stack)
    beta = optimal_beta(G, A)
    before = emulation_loss(G, A, beta)
    delta = 1.3
    ph = [p.copy() for p in small_stack.phases]
    ph[0] = ph[0] + delta
    small_stack.set_phases(ph)
    after = emulation_loss(assemble_response(small_stack), A, beta * np.exp(-1j * delta))
    assert abs(after - before) <= 1e-10 * before


def test_beta_refresh_never_increases_loss(small_stack, gen):
    A = scaled_target(small_stack, gen)
    beta = complex(*gen.standard_normal(2))
    for _ in range(20):
        G = assemble_response(small_stack)
        new = optimal_beta(G, A)
        assert emulation_loss(G, A, new) <= emulation_loss(G, A, beta)
        beta = new
        small_stack.set_phases([p + 0.05 * gen.standard_normal(p.size) for p in small_stack.phases])


def test_small_step_gradient_descent_is_monotone(small_stack, gen):
    G = assemble_response(small_stack)
    A = crandn(gen, *G.shape)
    A *= np.linalg.norm(G) / np.linalg.norm(A)
    # rescale so the phase gradient is O(1) and eta = 1e-3 is a small step
    small_stack.phi[0] = 1.0 / np.linalg.norm(G)
    A = A / np.linalg.norm(G)
    trace = optimize(small_stack, A, OptimizerConfig(learning_rate=1e-3, iterations=50, method="gd", init="keep"))
    assert len(trace) == 50
    assert np.all(np.diff(trace.losses) <= 0)


def test_reachable_target_from_optimum_stays_at_zero(small_stack):
    A = (0.3 + 1j) * assemble_response(small_stack)
    A = A / np.linalg.norm(A)
    trace = optimize(small_stack, A, OptimizerConfig(init="keep", iterations=50))
    assert max(trace.losses) <= 1e-24


def test_optimize_reduces_loss_and_records_trace(tmp_path):
    stack = StackConfig([4, 9, 9, 4], s_layer_mult=1.0).build()
    A = crandn(np.random.default_rng(3), 4, 4)
    trace = optimize(stack, A, OptimizerConfig(iterations=200, seed=11))
    assert trace.final_loss < trace.losses[0]
    assert len(trace.betas) == len(trace.losses) == 200
    assert [p.tobytes() for p in trace.phases] == [p.tobytes() for p in stack.phases]
    trace.write_csv(tmp_path / "t.csv")
    with open(tmp_path / "t.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["iter", "loss", "beta_re", "beta_im"]
    assert len(rows) == 201 and float(rows[1][1]) == pytest.approx(trace.losses[0], rel=1e-8)


def test_optimize_deterministic():
    A = crandn(np.random.default_rng(4), 4, 4)
    runs = []
    for _ in range(2):
        stack = StackConfig([4, 9, 4]).build()
        runs.append(optimize(stack, A, OptimizerConfig(iterations=30, seed=5)))
    assert runs[0].losses == runs[1].losses
    assert all(a.tobytes() == b.tobytes() for a, b in zip(runs[0].phases, runs[1].phases))


def test_optimize_early_stop_on_plateau():
    stack = StackConfig([2, 3, 2]).build()
    A = crandn(np.random.default_rng(6), 2, 2)
    cfg = OptimizerConfig(iterations=500, early_stop_window=5, early_stop_tol=10.0)
    trace = optimize(stack, A, cfg)
    assert trace.stopped_early and len(trace) == 6


def test_optimize_stops_at_roundoff_floor():
    stack = StackConfig([2, 2]).build()
    trace = optimize(stack, 2 * assemble_response(stack), OptimizerConfig(init="keep"))
    assert trace.stopped_early and len(trace) == 1


def test_optimize_non_finite():
    stack = StackConfig([2, 2]).build()
    A = np.full((2, 2), np.nan, complex)
    with pytest.raises(NonFiniteLoss):
        optimize(stack, A, OptimizerConfig(iterations=3))


def test_optimize_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        optimize(StackConfig([2, 3]).build(), np.ones((2, 2)), OptimizerConfig(iterations=3))


@pytest.mark.parametrize(
    "kwargs", [dict(learning_rate=0.0), dict(iterations=0), dict(method="sgd"), dict(init="zeros")]
)
def test_optimizer_config_validation(kwargs):
    with pytest.raises(ValueError):
        OptimizerConfig(**kwargs)


def test_optimizer_defaults():
    cfg = OptimizerConfig()
    assert (cfg.learning_rate, cfg.iterations, cfg.method) == (0.1, 500, "adam")
    assert (cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps) == (0.9, 0.999, 1e-8)


def test_adam_first_step_is_signed_learning_rate():
    opt = Adam(0.1)
    out = opt.step([np.zeros(3)], [np.array([2.0, -5.0, 1e-3])])
    assert np.allclose(out[0], [-0.1, 0.1, -0.1], atol=1e-6)
