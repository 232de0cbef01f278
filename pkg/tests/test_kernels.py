import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hyperstep.kernels import (SEG_A, SEG_B, SEG_C, SEG_DIAG, comparison_function,
                               compute_sa_bounds, minimal_gamma, phi_table, solve_2x2_kernels,
                               solve_continuum_kernels_ps, solve_continuum_kernels_sa,
                               solve_nm_kernels, total_degree_indices)
from hyperstep.kernels.diagnostics import boundary_residuals, k_jump, kernel_gap
from hyperstep.model import AveragedParams, ContinuumParams, EnsembleGrid, NmParams
from hyperstep.systems import example1_continuum


def one_plus_one(c, q):
    return NmParams.from_index_functions(
        1, 1, lam=lambda x, i, n, m: 1 + 0 * x, mu=lambda x, j, n, m: 1 + 0 * x,
        sigma=lambda x, i, j, n, m: 0 * x, w=lambda x, i, j, n, m: 0 * x,
        theta=lambda x, i, j, n, m: c + 0 * x, psi=lambda x, i, j, n, m: 0 * x,
        q=lambda i, j, n, m: q + 0 * i, r=lambda i, j, n, m: 0 * i)


@given(st.floats(-2, 2), st.floats(-1, 1))
@settings(max_examples=10)
def test_transport_only_kernels_closed_form(c, q):
    # lam = mu = 1 and only theta = c coupling: L is constant along x - xi = s with
    # L(s, 0) = q K(s, 0), and K_x - K_xi = c L along x + xi = const from K(x, x) = -c/2,
    # which gives K = -(c/2) exp(c q (x - xi)/2) and L = q K
    k = solve_nm_kernels(one_plus_one(c, q), nx=65, tol=1e-12)
    x = k.x
    s = x[:, None] - x[None, :]
    tri = s >= 0
    K = -(c / 2) * np.exp(c * q * s / 2)
    np.testing.assert_allclose(k.K[:, :, 0, 0][tri], K[tri], atol=2e-5)
    np.testing.assert_allclose(k.L[:, :, 0, 0][tri], q * K[tri], atol=2e-5)


def test_transport_only_kernels_converge():
    errs = []
    for nx in (17, 33, 65):
        k = solve_nm_kernels(one_plus_one(1.0, 1.0), nx=nx, tol=1e-13)
        errs.append(abs(k.K[-1, 0, 0, 0] + 0.5 * np.exp(0.5)))
    assert errs[2] < errs[1] < errs[0]
    assert errs[1] / errs[2] > 3.5     # second order


def test_2x2_kernels_match_transport_solution():
    av = AveragedParams(lam=1.0, mu=1.0, sigma=0.0, w=0.0, theta=0.6, q=0.5, r=0.0)
    k = solve_2x2_kernels(av, nx=65)
    s = k.x[:, None] - k.x[None, :]
    tri = s >= 0
    K = -0.3 * np.exp(0.15 * s)
    np.testing.assert_allclose(k.K[tri], K[tri], atol=1e-5)
    np.testing.assert_allclose(k.L[tri], 0.5 * K[tri], atol=1e-5)


def test_sa_boundary_conditions_hold(ex1_small, ex1_small_kernels):
    br = boundary_residuals(ex1_small_kernels, ex1_small)
    assert br.max < 1e-4


def test_sa_history_converges(ex1_small_kernels):
    h = ex1_small_kernels.history
    assert h.total[-1] < 1e-6
    assert h.iterations < 60


def test_sa_updates_dominated_by_envelope(ex1_small, ex1_small_kernels):
    b = compute_sa_bounds(ex1_small)
    upd = np.asarray(ex1_small_kernels.history.total)
    assert np.all(upd <= b.envelope(np.arange(upd.size)))


def test_envelope_is_factorial():
    b = compute_sa_bounds(example1_continuum(EnsembleGrid(nx=17, ne=6)))
    e = b.envelope(np.arange(6))
    np.testing.assert_allclose(e[1:] / e[:-1], b.rate / np.arange(1, 6), rtol=1e-12)


@given(st.floats(1.01, 1e4))
def test_minimal_gamma_is_minimal(ratio):
    g = minimal_gamma(ratio)
    assert np.log(ratio) < 2 * g - np.exp(-g)
    g0 = g - 1e-3
    assert g0 <= 0 or np.log(ratio) >= 2 * g0 - np.exp(-g0)


@given(st.floats(0.01, 3), st.floats(0, 1), st.floats(0, 1), st.floats(0, 1), st.floats(0, 1))
def test_comparison_function_positive_on_triangle(gamma, a, b, eta, zeta):
    x, xi = max(a, b), min(a, b)
    assert comparison_function(gamma, x, xi, eta, zeta) > 0


def test_segment_labels(ex1_small_kernels):
    lab = ex1_small_kernels.labels
    nx, ne = lab.shape[0], lab.shape[2]
    strict = np.tri(nx, k=-1, dtype=bool)
    idx = np.arange(nx)
    for r in range(ne):
        for c in range(ne):
            vals = set(np.unique(lab[:, :, r, c][strict]).tolist())
            if r == c:
                assert vals == {SEG_A}
                assert np.all(lab[idx, idx, r, c] == SEG_DIAG)
            elif r < c:
                assert vals <= {SEG_A, SEG_B}
            else:
                assert vals == {SEG_C}


def test_phi_is_increasing(ex1_small):
    phi = phi_table(ex1_small.grid.x, ex1_small.mu)
    assert np.all(np.diff(phi, axis=0) > 0)


def test_k_jump_converges_with_grid():
    jumps = []
    for nx in (17, 33):
        p = example1_continuum(EnsembleGrid(nx=nx, ne=6))
        jumps.append(k_jump(solve_continuum_kernels_sa(p, workers=1), p)[0])
    assert jumps[1] < jumps[0]


def test_total_degree_indices():
    idx = total_degree_indices(3)
    assert len(idx) == 20            # C(3 + 3, 3)
    assert np.all(idx.sum(axis=1) <= 3)
    assert np.all(total_degree_indices(4, zmax=1)[:, 2] <= 1)


def test_power_series_agrees_with_successive_approximations():
    # two independent routes to the same kernels
    p = example1_continuum(EnsembleGrid(nx=33, ne=10))
    ks = solve_continuum_kernels_sa(p, workers=1)
    kp = solve_continuum_kernels_ps(p, order=8)
    gK, gL = kernel_gap(ks, kp)
    assert gK < 5e-3
    assert gL < 0.1
    assert boundary_residuals(kp, p).K_diag < 1e-3


def test_kernel_gap_requires_nested_grids(ex1_small_kernels):
    other = solve_continuum_kernels_sa(example1_continuum(EnsembleGrid(nx=20, ne=10)), workers=1)
    with pytest.raises(ValueError):
        kernel_gap(ex1_small_kernels, other)


def test_workers_do_not_change_kernels(ex1_small):
    a = solve_continuum_kernels_sa(ex1_small, workers=1)
    b = solve_continuum_kernels_sa(ex1_small, workers=2)
    assert np.array_equal(a.Kt, b.Kt) and np.array_equal(a.Lt, b.Lt)
