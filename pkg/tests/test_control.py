import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hyperstep.control import (ControllerSpec, backstep_transform, inverse_transform,
                               target_coeffs)
from hyperstep.experiments import example2_study
from hyperstep.model import EnsembleGrid, StateField, StructuralError
from hyperstep.sim import SimConfig, simulate_continuum
from hyperstep.systems import example1_initial


@given(st.integers(0, 2 ** 31 - 1), st.floats(0.1, 10))
@settings(max_examples=15)
def test_inverse_undoes_backstepping(ex1_small_kernels, seed, scale):
    g = ex1_small_kernels.grid
    rng = np.random.default_rng(seed)
    s = StateField(kind="continuum", u=scale * rng.standard_normal((g.nx, g.ne)),
                   v=scale * rng.standard_normal((g.nx, g.ne)))
    back = inverse_transform(ex1_small_kernels, backstep_transform(ex1_small_kernels, s))
    err = np.linalg.norm(back.v - s.v) / np.linalg.norm(s.v)
    assert err < 1e-8
    assert np.array_equal(back.u, s.u)


def test_backstepping_is_linear(ex1_small_kernels):
    g = ex1_small_kernels.grid
    rng = np.random.default_rng(1)
    a = StateField(kind="continuum", u=rng.random((g.nx, g.ne)), v=rng.random((g.nx, g.ne)))
    b = StateField(kind="continuum", u=rng.random((g.nx, g.ne)), v=rng.random((g.nx, g.ne)))
    ab = StateField(kind="continuum", u=a.u + 2 * b.u, v=a.v + 2 * b.v)
    ta, tb, tab = (backstep_transform(ex1_small_kernels, s) for s in (a, b, ab))
    np.testing.assert_allclose(tab.v, ta.v + 2 * tb.v, atol=1e-12)


def test_continuum_law_stabilises(ex1_small, ex1_small_kernels, small_grid):
    u0, v0 = example1_initial(small_grid)
    spec = ControllerSpec("continuum_exact", kernels=ex1_small_kernels, R=ex1_small.R)
    tr = simulate_continuum(ex1_small, u0, v0, spec, SimConfig(grid=small_grid))
    assert tr.norms[-1] < 1e-2 * tr.norms[0]
    cn = tr.control_norms
    assert cn[-1] < 1e-2 * cn[0]


def test_zero_state_gives_zero_control(ex1_small, ex1_small_kernels, small_grid):
    spec = ControllerSpec("continuum_exact", kernels=ex1_small_kernels, R=ex1_small.R)
    z = np.zeros((small_grid.nx, small_grid.ne))
    tr = simulate_continuum(ex1_small, z, z, spec, SimConfig(grid=small_grid.with_(T=0.5,
                                                                                    n_out=6)))
    assert np.all(tr.controls == 0)


def test_controller_checks_kernel_type(ex1_small_kernels):
    with pytest.raises(StructuralError):
        ControllerSpec("micro_exact", kernels=ex1_small_kernels, n=2, m=2)
    with pytest.raises(StructuralError):
        ControllerSpec("unknown", kernels=ex1_small_kernels)


def test_averaged_controls_are_identical_and_stabilising():
    r = example2_study(EnsembleGrid(nx=33, ne=10, T=5.0, n_out=51), workers=1)
    assert r.controls_spread == 0.0
    e = r.at_end()
    assert e["averaged_macro"] < e["autonomous"]
    assert e["macro_kernels_macro_meas"] < e["autonomous"]


def test_target_coefficients_are_lower_triangular(ex1_small, ex1_small_kernels):
    tc = target_coeffs(ex1_small_kernels, ex1_small, stride=2)
    ne = ex1_small.grid.ne
    upper = np.triu(np.ones((ne, ne), bool))
    assert np.all(tc.G[:, upper] == 0)
