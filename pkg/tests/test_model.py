import numpy as np
import pytest

from hyperstep.model import (ContinuumParams, EnsembleGrid, NmParams, StructuralError,
                             ratio_quadrature, trapezoid_weights, validate_continuum, validate_nm)
from hyperstep.systems import example1_continuum, example1_nm, example2_nm


def test_grid_nodes_are_cell_centred():
    g = EnsembleGrid(nx=5, ne=4)
    np.testing.assert_allclose(g.nodes, [0.125, 0.375, 0.625, 0.875])
    np.testing.assert_allclose(g.x, np.linspace(0, 1, 5))
    assert g.with_(ne=8).ne == 8


def test_trapezoid_weights_integrate_linear_exactly():
    x = np.linspace(0, 1, 17)
    w = trapezoid_weights(17, x[1] - x[0])
    assert w @ (3 * x + 1) == pytest.approx(2.5, abs=1e-14)


def test_example_systems_validate():
    assert validate_nm(example1_nm(5, 5)).ok
    assert validate_nm(example2_nm()).ok
    rep = validate_continuum(example1_continuum(EnsembleGrid(nx=9, ne=10)))
    assert rep.ok
    # ratio is 1 off the diagonal cells, which are skipped: (ne^2 - ne)/ne^2
    assert rep.ratio_value == pytest.approx(0.9, rel=1e-12)


def test_mu_ordering_violation_is_reported():
    p = NmParams.from_index_functions(
        2, 2, lam=lambda x, i, n, m: 1 + 0 * x, mu=lambda x, j, n, m: 1 + j / m + 0 * x,
        sigma=lambda x, i, j, n, m: 0 * x, w=lambda x, i, j, n, m: 0 * x,
        theta=lambda x, i, j, n, m: 0 * x, psi=lambda x, i, j, n, m: 0 * x,
        q=lambda i, j, n, m: 0.0 * i, r=lambda i, j, n, m: 0.0 * i)
    rep = validate_nm(p)
    assert not rep.ok
    assert any(v.rule == "mu ordering" for v in rep.violations)


def test_divergent_ratio_quadrature_is_flagged():
    # psi nonzero on the diagonal limit makes the squared ratio non-integrable
    g = EnsembleGrid(nx=5, ne=20)
    p = ContinuumParams.from_functions(
        g, lam=lambda x, y: 1 + 0 * x * y, mu=lambda x, e: 2 - e + 0 * x,
        sigma=lambda x, a, b: 0 * x * a * b, W=lambda x, a, b: 0 * x * a * b,
        theta=lambda x, a, b: 0 * x * a * b, psi=lambda x, e, z: 1 + 0 * x * e * z,
        Q=lambda y, z: 0 * y * z, R=lambda e, z: 0 * e * z)
    rep = validate_continuum(p)
    assert any("diverges" in v.rule for v in rep.violations)


def test_ratio_quadrature_closed_form():
    mu = np.array([[2.0, 1.0]])
    psi = np.array([[[0.0, 3.0], [5.0, 0.0]]])
    # (3/(2-1))^2 + (5/(1-2))^2 over ne^2 = 4 cells
    assert ratio_quadrature(psi, mu) == pytest.approx((9 + 25) / 4)


def test_diag_ratio_uses_psi_tilde_and_zero_datum():
    g = EnsembleGrid(nx=3, ne=4)
    p = example1_continuum(g)
    np.testing.assert_allclose(p.diag_ratio(), 1.0)
    flat = ContinuumParams.from_functions(
        g, lam=lambda x, y: 1 + 0 * x * y, mu=lambda x, e: 1 + 0 * x * e,
        sigma=lambda x, a, b: 0 * x * a * b, W=lambda x, a, b: 0 * x * a * b,
        theta=lambda x, a, b: 0 * x * a * b, psi=lambda x, e, z: 0 * x * e * z,
        Q=lambda y, z: 0 * y * z, R=lambda e, z: 0 * e * z)
    assert np.all(flat.diag_ratio() == 0.0)


def test_nonfinite_fields_raise():
    g = EnsembleGrid(nx=3, ne=2)
    with pytest.raises(StructuralError):
        validate_continuum(ContinuumParams.from_functions(
            g, lam=lambda x, y: np.nan + 0 * x * y, mu=lambda x, e: 2 - e + 0 * x,
            sigma=lambda x, a, b: 0 * x * a * b, W=lambda x, a, b: 0 * x * a * b,
            theta=lambda x, a, b: 0 * x * a * b, psi=lambda x, e, z: 0 * x * e * z,
            Q=lambda y, z: 0 * y * z, R=lambda e, z: 0 * e * z))
