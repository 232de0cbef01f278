"""Experiment configs: YAML text with closed-form parameter expressions.

A config declares a continuum system and/or an n+m family, a grid, a
controller, initial data and the scenario to run. Continuum expressions use
the variables (x, y, zeta) for sigma and W, (x, eta, zeta) for theta, psi
and psi_tilde, (x, y) for lam, (x, eta) for mu, (y, zeta) for Q and
(eta, zeta) for R. n+m expressions use x, the 1-based indices i (row) and
j (column) and the sizes n, m; lam is indexed by i and mu by j.

Example::

    scenario: single
    grid: {nx: 128, ne: 50, T: 5.0, n_out: 101}
    kernels: {method: ps, order: 10}
    controller: continuum_exact
    system:
      continuum:
        lam: "1"
        mu: "2 - eta"
        ...
    initial:
      u: "(y + 1/2)/2"
      v: "1"
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from .control import VARIANTS
from .expr import ExprError, parse_expr
from .model import ContinuumParams, EnsembleGrid, NmParams
from .sim import SCHEMES

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "load_config",
    "parse_config",
    "SCENARIOS",
    "SUITES",
    "continuum_from_spec",
    "nm_family_from_spec",
    "continuum_initial",
    "nm_initial",
]

SCENARIOS = ("single", "sweep", "convergence", "bounds", "macro_compare")
SUITES = ("example1", "example2")

_CONT_VARS = {
    "lam": ("x", "y"), "mu": ("x", "eta"),
    "lam_x": ("x", "y"), "mu_x": ("x", "eta"),
    "sigma": ("x", "y", "zeta"), "W": ("x", "y", "zeta"),
    "theta": ("x", "eta", "zeta"), "psi": ("x", "eta", "zeta"),
    "psi_tilde": ("x", "eta", "zeta"),
    "Q": ("y", "zeta"), "R": ("eta", "zeta"),
}
_CONT_REQUIRED = ("lam", "mu", "sigma", "W", "theta", "psi", "Q", "R")
_NM_VARS = {
    "lam": ("x", "i", "n", "m"), "mu": ("x", "j", "n", "m"),
    "Sigma": ("x", "i", "j", "n", "m"), "W": ("x", "i", "j", "n", "m"),
    "Theta": ("x", "i", "j", "n", "m"), "Psi": ("x", "i", "j", "n", "m"),
    "Q": ("i", "j", "n", "m"), "R": ("i", "j", "n", "m"),
}
_TOP = {"name", "seed", "scenario", "grid", "sim", "kernels", "controller", "system",
        "initial", "sweep", "convergence", "check", "averaged"}


class ConfigError(ValueError):
    """Unreadable or inconsistent config (CLI exit code 2)."""


@dataclass
class ExperimentConfig:
    """Parsed experiment description; ``raw`` keeps the YAML mapping."""

    name: str
    scenario: str
    grid: EnsembleGrid
    scheme: str = "upwind1"
    rtol: float = 1e-6
    atol: float = 1e-6
    kernel_method: str = "sa"
    order: int = 10
    tol: float = 1e-6
    max_iter: int = 60
    controller: str = "continuum_exact"
    continuum: dict | None = None
    nm: dict | None = None
    initial: dict = field(default_factory=dict)
    companion_initial: dict = field(default_factory=dict)
    averaged: str = "continuum"
    ns: tuple = ()
    study: str = "solution_gap"
    suite: str | None = None
    seed: int = 0
    text: str = ""
    raw: dict = field(default_factory=dict, repr=False)

    @property
    def digest(self) -> str:
        """sha256 of the config text."""
        return hashlib.sha256(self.text.encode()).hexdigest()

    def with_overrides(self, grid=None, kernel_method=None) -> "ExperimentConfig":
        cfg = self
        if grid is not None:
            nx, ne = grid
            cfg = replace(cfg, grid=cfg.grid.with_(nx=int(nx), ne=int(ne)))
        if kernel_method is not None:
            cfg = replace(cfg, kernel_method=kernel_method)
        return cfg


def _need(d, key, where):
    if key not in d:
        raise ConfigError(f"missing '{key}' in {where}")
    return d[key]


def _exprs(spec, table, required, where):
    if not isinstance(spec, dict):
        raise ConfigError(f"{where} must be a mapping")
    unknown = set(spec) - set(table) - {"n", "m", "label"}
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")
    out = {}
    for key in table:
        if key not in spec:
            if key in required:
                raise ConfigError(f"missing '{key}' in {where}")
            continue
        try:
            out[key] = parse_expr(spec[key], table[key])
        except ExprError as exc:
            raise ConfigError(f"{where}.{key}: {exc}") from exc
    return out


def continuum_from_spec(spec: dict, grid: EnsembleGrid) -> ContinuumParams:
    """ContinuumParams sampled from validated expressions.

    Velocity derivatives are differentiated symbolically unless given.
    """
    e = _exprs(spec, _CONT_VARS, _CONT_REQUIRED, "system.continuum")
    lam_x = e.get("lam_x", e["lam"].diff("x"))
    mu_x = e.get("mu_x", e["mu"].diff("x"))
    return ContinuumParams.from_functions(
        grid, lam=e["lam"], mu=e["mu"], sigma=e["sigma"], W=e["W"], theta=e["theta"],
        psi=e["psi"], Q=e["Q"], R=e["R"], lam_x=lam_x, mu_x=mu_x,
        psi_tilde=e.get("psi_tilde"), label=str(spec.get("label", "config")),
    )


def nm_family_from_spec(spec: dict):
    """``family(n, m=None) -> NmParams`` from index expressions."""
    e = _exprs(spec, _NM_VARS, tuple(_NM_VARS), "system.nm")

    def wrap(f, k):
        if k == 3:
            return lambda x, i, n, m: f(x, i, n, m)
        if k == 4:
            return lambda x, i, j, n, m: f(x, i, j, n, m)
        return lambda i, j, n, m: f(i, j, n, m)

    def family(n, m=None):
        m = n if m is None else m
        return NmParams.from_index_functions(
            n, m, lam=wrap(e["lam"], 3), mu=wrap(e["mu"], 3),
            sigma=wrap(e["Sigma"], 4), w=wrap(e["W"], 4), theta=wrap(e["Theta"], 4),
            psi=wrap(e["Psi"], 4), q=wrap(e["Q"], 2), r=wrap(e["R"], 2),
            lam_x=wrap(e["lam"].diff("x"), 3), mu_x=wrap(e["mu"].diff("x"), 3),
            label=f"{spec.get('label', 'config')} n={n} m={m}",
        )

    return family


def continuum_initial(spec: dict, grid: EnsembleGrid):
    """(u0, v0) on (x, ensemble) from expressions in (x, y) and (x, eta)."""
    try:
        u = parse_expr(spec.get("u", 0), ("x", "y"))
        v = parse_expr(spec.get("v", 0), ("x", "eta"))
    except ExprError as exc:
        raise ConfigError(f"initial: {exc}") from exc
    X, E = grid.x[:, None], grid.nodes[None, :]
    shape = (grid.nx, grid.ne)
    return np.broadcast_to(u(X, E), shape).copy(), np.broadcast_to(v(X, E), shape).copy()


def nm_initial(spec: dict, n: int, m: int, nx: int):
    """(u0, v0) for n+m states from expressions in (x, i, n, m) and (x, j, n, m)."""
    try:
        u = parse_expr(spec.get("u_nm", 0), ("x", "i", "n", "m"))
        v = parse_expr(spec.get("v_nm", 0), ("x", "j", "n", "m"))
    except ExprError as exc:
        raise ConfigError(f"initial: {exc}") from exc
    x = np.linspace(0.0, 1.0, nx)[:, None]
    u0 = np.broadcast_to(u(x, np.arange(1, n + 1)[None, :], n, m), (nx, n)).copy()
    v0 = np.broadcast_to(v(x, np.arange(1, m + 1)[None, :], n, m), (nx, m)).copy()
    return u0, v0


def parse_config(text: str) -> ExperimentConfig:
    try:
        d = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML: {exc}") from exc
    if not isinstance(d, dict):
        raise ConfigError("config must be a mapping")
    unknown = set(d) - _TOP
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    scenario = d.get("scenario", "single")
    if scenario not in SCENARIOS:
        raise ConfigError(f"unknown scenario {scenario!r}; use one of {SCENARIOS}")
    g = d.get("grid", {}) or {}
    try:
        grid = EnsembleGrid(nx=int(g.get("nx", 128)), ne=int(g.get("ne", 50)),
                            T=float(g.get("T", 5.0)), n_out=int(g.get("n_out", 101)))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"grid: {exc}") from exc
    sim = d.get("sim", {}) or {}
    scheme = sim.get("scheme", "upwind1")
    if scheme not in SCHEMES:
        raise ConfigError(f"unknown scheme {scheme!r}")
    ker = d.get("kernels", {}) or {}
    method = ker.get("method", "sa")
    if method not in ("sa", "ps"):
        raise ConfigError(f"unknown kernel method {method!r}")
    controller = d.get("controller", "continuum_exact")
    if controller not in VARIANTS + ("open_loop",):
        raise ConfigError(f"unknown controller {controller!r}")
    system = d.get("system", {}) or {}
    if not isinstance(system, dict) or not ({"continuum", "nm"} & set(system)):
        if d.get("check") is None:
            raise ConfigError("system needs a 'continuum' and/or 'nm' block")
    cont = system.get("continuum")
    nm = system.get("nm")
    if cont is not None:
        _exprs(cont, _CONT_VARS, _CONT_REQUIRED, "system.continuum")
    if nm is not None:
        _exprs(nm, _NM_VARS, tuple(_NM_VARS), "system.nm")
    initial = d.get("initial", {}) or {}
    if not isinstance(initial, dict):
        raise ConfigError("initial must be a mapping")
    comp = initial.get("companion", {}) or {}
    checks = [(initial, "u", ("x", "y")), (initial, "v", ("x", "eta")),
              (initial, "u_nm", ("x", "i", "n", "m")), (initial, "v_nm", ("x", "j", "n", "m")),
              (comp, "u", ("x", "y")), (comp, "v", ("x", "eta"))]
    for blk, k, names in checks:
        if k in blk:
            try:
                parse_expr(blk[k], names)
            except ExprError as exc:
                raise ConfigError(f"initial.{k}: {exc}") from exc
    ns = ()
    study = "solution_gap"
    if scenario == "sweep":
        ns = tuple(int(n) for n in _need(d.get("sweep") or {}, "ns", "sweep"))
    if scenario == "convergence":
        c = d.get("convergence") or {}
        ns = tuple(int(n) for n in _need(c, "ns", "convergence"))
        study = c.get("study", "solution_gap")
    if scenario in ("sweep", "convergence", "macro_compare") and nm is None:
        raise ConfigError(f"scenario {scenario} needs system.nm")
    if scenario in ("single", "bounds", "convergence", "sweep", "macro_compare") and cont is None \
            and not (scenario == "single" and nm is not None):
        raise ConfigError(f"scenario {scenario} needs system.continuum")
    if scenario == "single" and cont is None and controller not in ("micro_exact", "open_loop"):
        raise ConfigError(f"controller {controller} needs system.continuum")
    averaged = str(d.get("averaged", "continuum"))
    if averaged not in ("continuum", "index", "declared"):
        raise ConfigError(f"unknown averaging {averaged!r}; use continuum, index or declared")
    check = d.get("check") or {}
    suite = check.get("suite") if isinstance(check, dict) else None
    if suite is not None and suite not in SUITES:
        raise ConfigError(f"unknown check suite {suite!r}")
    try:
        return ExperimentConfig(
            name=str(d.get("name", "experiment")), scenario=scenario, grid=grid, scheme=scheme,
            rtol=float(sim.get("rtol", 1e-6)), atol=float(sim.get("atol", 1e-6)),
            kernel_method=method, order=int(ker.get("order", 10)), tol=float(ker.get("tol", 1e-6)),
            max_iter=int(ker.get("max_iter", 60)), controller=controller,
            continuum=cont, nm=nm, initial=initial,
            companion_initial=comp,
            averaged=averaged, ns=ns, study=study, suite=suite,
            seed=int(d.get("seed", 0)), text=text, raw=d,
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    return parse_config(text)
