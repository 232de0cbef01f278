import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hyperstep.acceptance import decreasing_beyond_band, nondecreasing_with_tie
from hyperstep.control import ControllerSpec, backstep_transform, target_coeffs
from hyperstep.model import EnsembleGrid
from hyperstep.sim import SimConfig, simulate_continuum
from hyperstep.stability import (convergence_study, decay_fit, lyapunov_params, lyapunov_value,
                                 norm_equivalence, strictly_decreasing, weight_margin)
from hyperstep.systems import example1_continuum, example1_initial, example1_nm


@given(st.floats(0.01, 5), st.floats(0.1, 10))
def test_decay_fit_recovers_rate(omega, M):
    t = np.linspace(0, 5, 101)
    f = decay_fit((t, M * np.exp(-omega * t)))
    assert f.omega == pytest.approx(omega, rel=1e-9)
    assert f.M == pytest.approx(M, rel=1e-8)
    assert f.classification == "ExpStable"


def test_decay_fit_classes():
    t = np.linspace(0, 5, 101)
    assert decay_fit((t, np.exp(t))).classification == "Unstable"
    assert decay_fit((t, np.ones_like(t))).classification == "Bounded"
    # slow growth below the growth limit is not called unstable
    assert decay_fit((t, np.exp(0.1 * t))).classification == "Bounded"
    assert decay_fit((t, np.zeros_like(t))).classification == "ExpStable"
    with pytest.raises(ValueError):
        decay_fit((t[:3], np.ones(3)))


@given(st.floats(1.0, 5.0), st.floats(0.0, 60.0), st.floats(0.0, 0.99))
@settings(max_examples=15)
def test_weight_margin_closed_form(c, k, MQ):
    # D - k int_z^1 D = c exp(k(1-z)) - c (exp(k(1-z)) - 1) = c exactly
    z = np.array([0.0, 0.3, 1.0])
    np.testing.assert_allclose(weight_margin(c, k, z, MQ), c - MQ ** 2, rtol=1e-9, atol=1e-9)


def test_lyapunov_functional_decreases_on_closed_loop():
    g = EnsembleGrid(nx=33, ne=10, T=5.0, n_out=26)
    p = example1_continuum(g)
    from hyperstep.kernels import solve_continuum_kernels_sa

    k = solve_continuum_kernels_sa(p, workers=1)
    cfg = lyapunov_params(target_coeffs(k, p), p)
    assert cfg.admissible
    u0, v0 = example1_initial(g)
    tr = simulate_continuum(p, u0, v0, ControllerSpec("continuum_exact", kernels=k, R=p.R),
                            SimConfig(grid=g))
    targets = [backstep_transform(k, s) for s in tr.states]
    V = np.array([lyapunov_value(cfg, s, p) for s in targets])
    assert decreasing_beyond_band(V)[0]
    c1, c2 = norm_equivalence(cfg, p)
    xw = g.xw
    n2 = np.array([np.sum(xw[:, None] * (s.u ** 2 + s.v ** 2)) / g.ne for s in targets])
    assert np.all(c1 * n2 <= V * (1 + 1e-12)) and np.all(V <= c2 * n2 * (1 + 1e-12))


def test_band_and_tie_helpers():
    assert decreasing_beyond_band([1.0, 0.5, 1e-6, 2e-6, 1e-7])[0]
    assert not decreasing_beyond_band([1.0, 0.5, 0.6])[0]
    assert nondecreasing_with_tie([1, 2, 1.95, 3])
    assert not nondecreasing_with_tie([1, 2, 1.5, 3])
    assert not nondecreasing_with_tie([1, 0.99, 2, 1.99])
    assert strictly_decreasing([3, 2, 1]) and not strictly_decreasing([3, 3, 1])


def test_solution_gap_study_decreases():
    g = EnsembleGrid(nx=33, ne=16)
    rep = convergence_study(lambda n: example1_nm(n, n), (4, 8, 16), "solution_gap",
                            example1_continuum(g), init=example1_initial(g), T=1.0, workers=1)
    assert rep.decreasing
    assert rep.summary()["strictly_decreasing"]


def test_kernel_gap_study_decreases(ex1_small, ex1_small_kernels):
    rep = convergence_study(lambda n: example1_nm(n, n), (2, 5, 10), "kernel_gap", ex1_small,
                            kernels=ex1_small_kernels, workers=2)
    assert rep.decreasing
