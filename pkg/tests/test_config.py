from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, strategies as st

from hyperstep.cli import bundled_config
from hyperstep.config import (ConfigError, continuum_from_spec, continuum_initial, load_config,
                              nm_family_from_spec, nm_initial, parse_config)
from hyperstep.expr import ExprError, parse_expr
from hyperstep.model import EnsembleGrid
from hyperstep.systems import (example1_continuum, example1_initial, example1_nm,
                               example2_continuum, example2_nm)


def test_expression_evaluates_and_broadcasts():
    f = parse_expr("(x + 1) * y^2 - pi", ("x", "y"))
    out = f(np.array([0.0, 1.0])[:, None], np.array([1.0, 2.0])[None, :])
    np.testing.assert_allclose(out, [[1 - np.pi, 4 - np.pi], [2 - np.pi, 8 - np.pi]])
    assert parse_expr(3, ("x",))(np.zeros(4)).shape == (4,)


def test_expression_derivative():
    f = parse_expr("x^3 + y", ("x", "y"))
    np.testing.assert_allclose(f.diff("x")(2.0, 5.0), 12.0)
    assert parse_expr("0", ("x",)).is_zero


@pytest.mark.parametrize("text", ["__import__('os')", "x.real", "[x]", "x if y else 1",
                                  "z + 1", "lambda: 1", "f(x)", "True"])
def test_expression_whitelist_rejects(text):
    with pytest.raises(ExprError):
        parse_expr(text, ("x", "y"))


@given(st.floats(-5, 5), st.floats(-5, 5))
def test_expression_matches_python(a, b):
    f = parse_expr("x * y - 2 * x + y / 4", ("x", "y"))
    assert f(a, b) == pytest.approx(a * b - 2 * a + b / 4, abs=1e-12)


@pytest.mark.parametrize("name", ["example1_continuum", "example1_sweep", "example2"])
def test_bundled_configs_parse(name):
    cfg = load_config(bundled_config(name))
    assert cfg.suite in ("example1", "example2")
    assert len(cfg.digest) == 64


def test_config_system_matches_hand_coded_example1():
    cfg = load_config(bundled_config("example1_sweep"))
    g = EnsembleGrid(nx=9, ne=6)
    a, b = continuum_from_spec(cfg.continuum, g), example1_continuum(g)
    for name in ("lam", "lam_x", "mu", "mu_x", "sigma", "W", "theta", "psi", "Q", "R"):
        np.testing.assert_allclose(getattr(a, name), getattr(b, name), atol=1e-14, err_msg=name)
    np.testing.assert_allclose(a.diag_ratio(), b.diag_ratio(), atol=1e-14)
    x = np.linspace(0, 1, 5)
    sa, sb = nm_family_from_spec(cfg.nm)(4).sample(x), example1_nm(4, 4).sample(x)
    for name in ("lam", "mu", "Sigma", "W", "Theta", "Psi", "Q", "R"):
        np.testing.assert_allclose(getattr(sa, name), getattr(sb, name), atol=1e-14, err_msg=name)
    np.testing.assert_allclose(continuum_initial(load_config(
        bundled_config("example1_continuum")).initial, g)[0], example1_initial(g)[0])
    u0, v0 = nm_initial(cfg.initial, 4, 4, 5)
    np.testing.assert_allclose(u0[0], (np.arange(1, 5) / 4 + 0.5) / 2)


def test_config_system_matches_hand_coded_example2():
    cfg = load_config(bundled_config("example2"))
    x = np.linspace(0, 1, 5)
    sa, sb = nm_family_from_spec(cfg.nm)(10, 10).sample(x), example2_nm().sample(x)
    for name in ("lam", "mu", "Sigma", "W", "Theta", "Psi", "Q", "R"):
        np.testing.assert_allclose(getattr(sa, name), getattr(sb, name), atol=1e-14, err_msg=name)
    g = EnsembleGrid(nx=9, ne=6)
    np.testing.assert_allclose(continuum_from_spec(cfg.continuum, g).theta,
                               example2_continuum(g).theta, atol=1e-14)


@pytest.mark.parametrize("text,msg", [
    ("scenario: nonsense", "unknown scenario"),
    ("bogus: 1", "unknown top-level"),
    ("[1, 2]", "mapping"),
    ("scenario: single\nsystem: {}", "system needs"),
    ("scenario: single\nsim: {scheme: weno}\nsystem: {continuum: {}}", "unknown scheme"),
    ("grid: {nx: abc}", "grid"),
    ("scenario: sweep\nsystem: {continuum: {lam: '1'}}", "missing"),
])
def test_config_errors(text, msg):
    with pytest.raises(ConfigError, match=msg):
        parse_config(text)


def test_config_rejects_bad_expression():
    text = Path(bundled_config("example1_continuum")).read_text().replace('mu: "2 - eta"',
                                                                          'mu: "2 - open(eta)"')
    with pytest.raises(ConfigError, match="mu"):
        parse_config(text)


def test_overrides():
    cfg = load_config(bundled_config("example1_continuum")).with_overrides((16, 4), "sa")
    assert (cfg.grid.nx, cfg.grid.ne, cfg.kernel_method) == (16, 4, "sa")
