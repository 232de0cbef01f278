import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from hyperstep.lift import (ResolutionError, average_continuum, build_averaged, lift, lift_matrix,
                            project, projection_matrix, weighted_norm)
from hyperstep.model import EnsembleGrid
from hyperstep.systems import example2_continuum, example2_nm

finite = st.floats(-1e6, 1e6, allow_nan=False)


@pytest.mark.parametrize("ne,k", [(50, 1), (50, 2), (50, 5), (50, 25), (48, 16), (10, 10)])
def test_projection_of_lift_is_identity(ne, k):
    assert np.array_equal(project(lift_matrix(ne, k), k, axis=0), np.eye(k))


def test_projection_of_identity_field_gives_cell_means():
    h = (np.arange(50) + 0.5) / 50
    np.testing.assert_allclose(project(h, 2), [0.25, 0.75], atol=1e-15)


def test_projection_rejects_unresolved_cells():
    with pytest.raises(ResolutionError):
        projection_matrix(4, 5)


@given(st.integers(1, 12).flatmap(lambda k: arrays(float, k, elements=finite)))
def test_lift_norm_identity(b):
    ne = 60 * b.size
    Fb = lift(b, EnsembleGrid(nx=2, ne=ne))
    assert np.sqrt(np.mean(Fb ** 2)) == pytest.approx(weighted_norm(b), rel=1e-12, abs=1e-300)


@given(st.integers(1, 6), st.integers(1, 5), st.data())
def test_projection_is_adjoint_of_lift(k, r, data):
    ne = k * r
    b = data.draw(arrays(float, k, elements=finite))
    f = data.draw(arrays(float, ne, elements=finite))
    lhs = np.mean(lift(b, EnsembleGrid(nx=2, ne=ne)) * f)
    rhs = np.mean(b * project(f, k))
    assert lhs == pytest.approx(rhs, rel=1e-9, abs=1e-6)


@given(st.integers(1, 7), st.integers(1, 7))
def test_uneven_projection_rows_are_averages(k, extra):
    P = projection_matrix(k + extra, k)
    np.testing.assert_allclose(P @ np.ones(k + extra), np.ones(k), atol=1e-12)


def test_declared_average_of_example2_matches_closed_form():
    a = average_continuum(example2_continuum(EnsembleGrid(nx=33, ne=50)))
    x = np.linspace(0, 1, 7)
    np.testing.assert_allclose(a.mu(x), 0.75, atol=1e-14)
    np.testing.assert_allclose(a.sigma(x), x / 2, atol=1e-14)
    np.testing.assert_allclose(a.theta(x), x / 2, atol=1e-14)
    assert a.q == 1.0 and a.r == 0.0


def test_index_average_of_example2():
    a = build_averaged(example2_nm(), mean="index", x=np.linspace(0, 1, 5))
    # mean of 1 - j/20 over j = 1..10
    np.testing.assert_allclose(a.mu(0.3), 1 - 5.5 / 20, atol=1e-14)
