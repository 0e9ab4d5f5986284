import itertools

import numpy as np
import pytest
from conftest import crandn
from hypothesis import given, settings
from hypothesis import strategies as st

from simalign.errors import (
    DegenerateDistance,
    DimMismatch,
    InvalidConfig,
    InvalidSize,
    MalformedFile,
    ShapeMismatch,
)
from simalign.simsurface import (
    TWO_PI,
    SimGeometry,
    SimStack,
    StackConfig,
    assemble_response,
    build_geometry,
    forward,
    grid_positions,
    load_phases,
    propagation_matrix,
    save_phases,
    stack_layout,
    wrap_phase,
)

LAM = 0.005


def entry(d, s, area, lam=LAM):
    # scalar transcription of the propagation formula, evaluated by hand
    return (s * area / d**2) * complex(1.0 / (2 * np.pi * d), -1.0 / lam) * np.exp(1j * 2 * np.pi * d / lam)


def test_grid_two_by_two():
    g = build_geometry(LAM, 5 * LAM, [4, 4])
    xy = g.positions[0][:, :2]
    assert np.allclose(xy.mean(axis=0), 0)
    d = np.linalg.norm(xy[:, None] - xy[None], axis=-1)
    assert np.isclose(np.min(d[d > 0]), LAM / 2)
    assert np.allclose(xy, [[-LAM / 4, -LAM / 4], [LAM / 4, -LAM / 4], [-LAM / 4, LAM / 4], [LAM / 4, LAM / 4]])


def test_layer_gap():
    g = build_geometry(LAM, 5 * LAM, [1, 1])
    assert np.isclose(g.positions[1][0, 2] - g.positions[0][0, 2], 0.025)
    assert np.isclose(g.cell_area, LAM**2 / 4)


def test_non_square_layout_centered():
    xy = grid_positions(3, 1.0)
    # rows of width 2: (0,0), (1,0), (0,1) before centering
    assert np.allclose(xy, np.array([[0, 0], [1, 0], [0, 1]]) - [1 / 3, 1 / 3])
    assert np.allclose(xy.mean(axis=0), 0)


@pytest.mark.parametrize("sizes", [[], [4], [4, 0]])
def test_geometry_invalid_sizes(sizes):
    with pytest.raises(InvalidSize):
        build_geometry(LAM, LAM, sizes)


def test_single_element_entry_by_hand():
    s = 5 * LAM
    g = build_geometry(LAM, s, [1, 1])
    w = propagation_matrix(g, 1)[0, 0]
    ref = entry(s, s, g.cell_area)
    assert abs(abs(w) - abs(ref)) <= 1e-12 * abs(ref)
    assert abs(w - ref) <= 1e-12 * abs(ref)


def test_doubling_distance_decays_faster_than_square():
    s = 2 * LAM
    pos = (np.zeros((1, 3)), np.array([[0, 0, s], [np.sqrt(3) * s, 0, s]]))
    g = SimGeometry(LAM, s, (1, 2), LAM / 2, pos)
    w = np.abs(propagation_matrix(g, 1)[:, 0])
    assert w[0] > 4 * w[1]


def test_propagation_reproducible():
    g = build_geometry(LAM, 5 * LAM, [9, 16, 4])
    assert propagation_matrix(g, 2).tobytes() == propagation_matrix(g, 2).tobytes()
    assert propagation_matrix(g, 1).shape == (16, 9)


def test_propagation_sign_flag():
    g = build_geometry(LAM, 5 * LAM, [4, 4])
    assert np.allclose(
        np.abs(propagation_matrix(g, 1, -1)), np.abs(propagation_matrix(g, 1, 1))
    )
    assert not np.allclose(propagation_matrix(g, 1, -1), propagation_matrix(g, 1, 1))


def test_propagation_errors():
    g = build_geometry(LAM, LAM, [2, 2])
    with pytest.raises(InvalidSize):
        propagation_matrix(g, 2)
    same = SimGeometry(LAM, LAM, (1, 1), LAM / 2, (np.zeros((1, 3)), np.zeros((1, 3))))
    with pytest.raises(DegenerateDistance):
        propagation_matrix(same, 1)


def test_single_layer_zero_phase_is_w1():
    stack = StackConfig([4, 9]).build()
    assert np.array_equal(assemble_response(stack), stack.W[0])


def test_zero_gain_gives_zero_response():
    stack = StackConfig([4, 9, 4], phi=[1.0, 0.0, 0.0]).build()
    assert not np.any(assemble_response(stack))


def test_global_phase_equivariance(small_stack):
    G = assemble_response(small_stack).copy()
    delta = 0.7
    ph = [p.copy() for p in small_stack.phases]
    ph[1] = ph[1] + delta
    small_stack.set_phases(ph)
    assert np.max(np.abs(assemble_response(small_stack) - np.exp(1j * delta) * G)) <= 1e-10 * np.abs(G).max()


def test_response_cache_invalidated(small_stack):
    G1 = assemble_response(small_stack)
    small_stack.set_phases([p + 0.1 for p in small_stack.phases])
    assert assemble_response(small_stack) is not G1


def test_constant_modulus(small_stack):
    small_stack.phi[2] = 0.5
    for l in (1, 2, 3):
        assert np.allclose(np.abs(small_stack.layer_response(l)), small_stack.phi[l])


def path_sum(stack):
    """[G]_pq by explicit summation over every inter-layer path."""
    sizes = stack.geometry.layer_sizes
    L = stack.num_layers
    v = [stack.layer_response(l) for l in range(1, L + 1)]
    G = np.zeros((sizes[-1], sizes[0]), complex)
    for p in range(sizes[-1]):
        for q in range(sizes[0]):
            total = 0j
            for mid in itertools.product(*[range(m) for m in sizes[1:-1]]):
                path = (q,) + mid + (p,)
                term = 1 + 0j
                for l in range(1, L + 1):
                    term *= v[l - 1][path[l]] * stack.W[l - 1][path[l], path[l - 1]]
                total += term
            G[p, q] = total
    return G


def test_response_matches_path_sum(gen):
    stack = StackConfig([3, 3, 2], s_layer_mult=1.0).build().randomize(gen)
    G = assemble_response(stack)
    assert np.max(np.abs(G - path_sum(stack))) <= 1e-10 * np.abs(G).max()


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), sizes=st.lists(st.integers(1, 9), min_size=2, max_size=5))
def test_response_norm_bounded_by_propagation(seed, sizes):
    stack = StackConfig(sizes).build().randomize(np.random.default_rng(seed))
    bound = np.prod([np.linalg.norm(W, 2) for W in stack.W])
    assert np.linalg.norm(assemble_response(stack), 2) <= bound * (1 + 1e-12)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 2 * np.pi, exclude_max=True), min_size=1, max_size=9))
def test_phase_wrap_invariance(xi):
    xi = np.array(xi)
    shifted = xi + TWO_PI
    # the claim holds whenever xi + 2pi is exactly representable
    exact = (shifted - TWO_PI) == xi
    assert np.all(wrap_phase(xi) == xi)
    assert np.array_equal(wrap_phase(shifted)[exact], xi[exact])
    assert np.allclose(np.exp(1j * wrap_phase(shifted)), np.exp(1j * xi), atol=1e-14)


def test_wrap_into_range():
    w = wrap_phase(np.array([-0.1, 7.0, TWO_PI, -TWO_PI * 3]))
    assert np.all((w >= 0) & (w < TWO_PI))


def test_forward_basis_vector(small_stack):
    G = assemble_response(small_stack)
    x = np.zeros(4)
    x[2] = 1.0
    assert np.allclose(forward(small_stack, x, phi0=2.0), 2.0 * G[:, 2])


def test_forward_phi0_scaling(small_stack, gen):
    x = crandn(gen, 4)
    small_stack.phi[0] = 4 / 3
    assert np.allclose(forward(small_stack, x), 4 / 3 * forward(small_stack, x, phi0=1.0), rtol=1e-14)


def test_forward_linear_and_batched(small_stack, gen):
    x1, x2 = crandn(gen, 4), crandn(gen, 4)
    lhs = forward(small_stack, x1 + x2)
    assert np.max(np.abs(lhs - forward(small_stack, x1) - forward(small_stack, x2))) <= 1e-10 * np.abs(lhs).max()
    batch = forward(small_stack, np.stack([x1, x2]))
    assert np.allclose(batch[1], forward(small_stack, x2))


def test_forward_dim_mismatch(small_stack):
    with pytest.raises(DimMismatch):
        forward(small_stack, np.ones(5))


def test_set_phases_shape_checked(small_stack):
    with pytest.raises(ShapeMismatch):
        small_stack.set_phases([np.zeros(9), np.zeros(6)])


def test_stack_rejects_bad_gains():
    g = build_geometry(LAM, LAM, [2, 2])
    with pytest.raises(InvalidConfig):
        SimStack(g, phi=[1.0])
    with pytest.raises(InvalidConfig):
        SimStack(g, phi=[1.0, -1.0])


def test_copy_is_independent(small_stack):
    c = small_stack.copy()
    c.set_phases([p + 1 for p in c.phases])
    assert not np.allclose(assemble_response(c), assemble_response(small_stack))


def test_stack_layout():
    assert stack_layout(16, 32, 3, 36) == [16, 36, 36, 32]
    assert stack_layout(16, 32, 1, 36) == [16, 32]
    with pytest.raises(InvalidSize):
        stack_layout(16, 32, 0, 36)


def test_stack_config_yaml(tmp_path):
    path = tmp_path / "stack.yaml"
    path.write_text("layer_sizes: [4, 9, 4]\ns_layer_mult: 2\nphi: [1.5, 1, 1]\nphase_sign: -1\n")
    cfg = StackConfig.load(path)
    stack = cfg.build()
    assert stack.geometry.s_layer == pytest.approx(2 * LAM)
    assert stack.phi0 == 1.5 and stack.phase_sign == -1
    path.write_text("layer_sizes: [4, 4]\nspacing: 3\n")
    with pytest.raises(InvalidConfig):
        StackConfig.load(path)
    path.write_text("s_layer_mult: 3\n")
    with pytest.raises(InvalidConfig):
        StackConfig.load(path)


def test_phase_file_roundtrip(tmp_path, small_stack):
    save_phases(small_stack, tmp_path / "p.phs")
    back = load_phases(tmp_path / "p.phs")
    assert all(a.tobytes() == b.tobytes() for a, b in zip(back, small_stack.phases))
    raw = (tmp_path / "p.phs").read_bytes()
    assert raw[:8] == b"SIMPHS1\0" and len(raw) == 8 + 4 + 3 * 4 + 8 * (9 + 6 + 5)


def test_phase_file_errors(tmp_path, small_stack):
    path = tmp_path / "p.phs"
    save_phases(small_stack, path)
    raw = path.read_bytes()
    for bad in (raw[:-8], b"SIMPHS2\0" + raw[8:], raw[:10]):
        path.write_bytes(bad)
        with pytest.raises(MalformedFile):
            load_phases(path)
