"""Domain types, grids and validation for n+m and continuum hyperbolic systems.

The n+m system has n rightward states ``u`` and m leftward states ``v`` on
x in [0, 1],

    u_t + Lambda u_x = (1/n) Sigma u + (1/m) W v
    v_t - M v_x      = (1/n) Theta u + (1/m) Psi v
    u(t, 0) = (1/m) Q v(t, 0),   v(t, 1) = (1/n) R u(t, 1) + U(t),

and the continuum system replaces the component indices with ensemble
variables y, eta in [0, 1] and the sums with integrals.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

__all__ = [
    "EnsembleGrid",
    "NmParams",
    "NmSample",
    "ContinuumParams",
    "AveragedParams",
    "StateField",
    "Violation",
    "ValidationReport",
    "StructuralError",
    "validate_nm",
    "validate_continuum",
    "ratio_quadrature",
    "trapezoid_weights",
]


class StructuralError(ValueError):
    """Raised when inputs are malformed (shapes, NaN), as opposed to
    well-formed inputs that violate a modelling assumption."""


def trapezoid_weights(npts: int, h: float) -> np.ndarray:
    """Composite trapezoid weights for ``npts`` equispaced nodes."""
    w = np.full(npts, h)
    if npts == 1:
        return np.zeros(1)
    w[0] = w[-1] = 0.5 * h
    return w


@dataclass(frozen=True)
class EnsembleGrid:
    """Uniform x-grid with endpoints plus a cell-centered ensemble grid.

    Ensemble node k (1-based) sits at (k - 1/2)/ne so that mean values over
    the intervals ((i-1)/n, i/n] are exact whenever n divides ne.
    """

    nx: int = 128
    ne: int = 50
    T: float = 5.0
    n_out: int = 201

    def __post_init__(self):
        if self.nx < 2 or self.ne < 1:
            raise StructuralError("grid needs nx >= 2 and ne >= 1")
        if not self.T > 0:
            raise StructuralError("grid needs T > 0")
        if self.n_out < 2:
            raise StructuralError("grid needs at least two output times")

    @property
    def x(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.nx)

    @property
    def h(self) -> float:
        return 1.0 / (self.nx - 1)

    @property
    def nodes(self) -> np.ndarray:
        return (np.arange(self.ne) + 0.5) / self.ne

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.n_out)

    @property
    def xw(self) -> np.ndarray:
        return trapezoid_weights(self.nx, self.h)

    def with_(self, **kw) -> "EnsembleGrid":
        d = dict(nx=self.nx, ne=self.ne, T=self.T, n_out=self.n_out)
        d.update(kw)
        return EnsembleGrid(**d)


def _as_callable(f, shape):
    """Wrap constants so every parameter is a function of x."""
    if callable(f):
        return f
    arr = np.asarray(f, dtype=float)

    def g(x, arr=arr):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        return np.broadcast_to(arr.reshape(arr.shape + (1,)), arr.shape + x.shape).copy()

    return g


@dataclass(frozen=True)
class NmSample:
    """All n+m parameters sampled on an x-grid (last axis is x)."""

    x: np.ndarray
    lam: np.ndarray  # (n, nx)
    lam_x: np.ndarray
    mu: np.ndarray  # (m, nx)
    mu_x: np.ndarray
    Sigma: np.ndarray  # (n, n, nx)
    W: np.ndarray  # (n, m, nx)
    Theta: np.ndarray  # (m, n, nx)
    Psi: np.ndarray  # (m, m, nx)
    Q: np.ndarray  # (n, m)
    R: np.ndarray  # (m, n)


@dataclass(frozen=True)
class NmParams:
    """Parameters of an n+m system.

    Every x-dependent entry is a vectorised callable ``f(x)`` returning an
    array whose trailing axis matches ``x``: ``lam(x)`` has shape (n, nx),
    ``Sigma(x)`` has shape (n, n, nx) and so on. Constant arrays are accepted
    and promoted. ``lam_x``/``mu_x`` may be omitted, in which case sampling
    falls back to central differences.
    """

    n: int
    m: int
    lam: Callable
    mu: Callable
    Sigma: Callable
    W: Callable
    Theta: Callable
    Psi: Callable
    Q: np.ndarray
    R: np.ndarray
    lam_x: Optional[Callable] = None
    mu_x: Optional[Callable] = None
    label: str = ""

    def __post_init__(self):
        n, m = self.n, self.m
        object.__setattr__(self, "lam", _as_callable(self.lam, (n,)))
        object.__setattr__(self, "mu", _as_callable(self.mu, (m,)))
        for name in ("Sigma", "W", "Theta", "Psi"):
            object.__setattr__(self, name, _as_callable(getattr(self, name), None))
        for name in ("lam_x", "mu_x"):
            f = getattr(self, name)
            if f is not None:
                object.__setattr__(self, name, _as_callable(f, None))
        object.__setattr__(self, "Q", np.array(self.Q, dtype=float, copy=True))
        object.__setattr__(self, "R", np.array(self.R, dtype=float, copy=True))

    @classmethod
    def from_index_functions(cls, n, m, lam, mu, sigma, w, theta, psi, q, r,
                             lam_x=None, mu_x=None, label=""):
        """Build from scalar formulas in (x, i, j) with 1-based indices.

        Each formula receives broadcastable arrays and the counts n, m as
        keyword arguments, e.g. ``mu=lambda x, j, n, m: 2 - j / m``.
        """
        iu = np.arange(1, n + 1, dtype=float)
        iv = np.arange(1, m + 1, dtype=float)

        def vec(f, rows):
            def g(x):
                x = np.atleast_1d(np.asarray(x, dtype=float))
                val = f(x[None, :], rows[:, None], n=n, m=m)
                return np.broadcast_to(val, (rows.size, x.size)).astype(float)
            return g

        def mat(f, rows, cols):
            def g(x):
                x = np.atleast_1d(np.asarray(x, dtype=float))
                val = f(x[None, None, :], rows[:, None, None], cols[None, :, None], n=n, m=m)
                return np.broadcast_to(val, (rows.size, cols.size, x.size)).astype(float)
            return g

        Q = np.broadcast_to(q(iu[:, None], iv[None, :], n=n, m=m), (n, m))
        R = np.broadcast_to(r(iv[:, None], iu[None, :], n=n, m=m), (m, n))
        return cls(
            n=n, m=m,
            lam=vec(lam, iu), mu=vec(mu, iv),
            Sigma=mat(sigma, iu, iu), W=mat(w, iu, iv),
            Theta=mat(theta, iv, iu), Psi=mat(psi, iv, iv),
            Q=Q, R=R,
            lam_x=None if lam_x is None else vec(lam_x, iu),
            mu_x=None if mu_x is None else vec(mu_x, iv),
            label=label,
        )

    def sample(self, x) -> NmSample:
        x = np.asarray(x, dtype=float)
        lam = np.asarray(self.lam(x), dtype=float)
        mu = np.asarray(self.mu(x), dtype=float)
        if self.lam_x is not None:
            lam_x = np.asarray(self.lam_x(x), dtype=float)
        else:
            lam_x = _central_diff(lam, x)
        if self.mu_x is not None:
            mu_x = np.asarray(self.mu_x(x), dtype=float)
        else:
            mu_x = _central_diff(mu, x)
        return NmSample(
            x=x, lam=lam, lam_x=lam_x, mu=mu, mu_x=mu_x,
            Sigma=np.asarray(self.Sigma(x), dtype=float),
            W=np.asarray(self.W(x), dtype=float),
            Theta=np.asarray(self.Theta(x), dtype=float),
            Psi=np.asarray(self.Psi(x), dtype=float),
            Q=self.Q, R=self.R,
        )


def _central_diff(f, x):
    if x.size < 2:
        return np.zeros_like(f)
    return np.gradient(f, x, axis=-1)


@dataclass(frozen=True)
class ContinuumParams:
    """Continuum parameter fields sampled on ``grid``.

    Shapes (x first, ensemble axes after):
    lam, lam_x: (nx, ne) over (x, y); mu, mu_x: (nx, ne) over (x, eta);
    sigma: (nx, ne, ne) over (x, y, zeta); W: (x, y, zeta);
    theta: (x, eta, zeta); psi: (x, eta, zeta); Q: (y, zeta); R: (eta, zeta).

    ``psi_tilde`` optionally stores the factor with
    psi = psi_tilde * (mu(x, eta) - mu(x, zeta)); it fixes the diagonal
    value of the L boundary datum. ``resample`` rebuilds the fields on a
    different grid when the parameters came from formulas.
    """

    grid: EnsembleGrid
    lam: np.ndarray
    lam_x: np.ndarray
    mu: np.ndarray
    mu_x: np.ndarray
    sigma: np.ndarray
    W: np.ndarray
    theta: np.ndarray
    psi: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    psi_tilde: Optional[np.ndarray] = None
    builder: Optional[Callable] = field(default=None, compare=False, repr=False)
    label: str = ""

    def __post_init__(self):
        nx, ne = self.grid.nx, self.grid.ne
        shapes = {
            "lam": (nx, ne), "lam_x": (nx, ne), "mu": (nx, ne), "mu_x": (nx, ne),
            "sigma": (nx, ne, ne), "W": (nx, ne, ne), "theta": (nx, ne, ne),
            "psi": (nx, ne, ne), "Q": (ne, ne), "R": (ne, ne),
        }
        for name, shp in shapes.items():
            arr = np.asarray(getattr(self, name), dtype=float)
            try:
                arr = np.broadcast_to(arr, shp).copy()
            except ValueError as exc:
                raise StructuralError(f"{name} has shape {arr.shape}, expected {shp}") from exc
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.psi_tilde is not None:
            arr = np.broadcast_to(np.asarray(self.psi_tilde, dtype=float), (nx, ne, ne)).copy()
            arr.setflags(write=False)
            object.__setattr__(self, "psi_tilde", arr)

    @classmethod
    def from_functions(cls, grid, lam, mu, sigma, W, theta, psi, Q, R,
                       lam_x=None, mu_x=None, psi_tilde=None, label=""):
        """Sample formulas ``f(x, a, b)`` on ``grid``.

        Velocities take (x, y); three-argument fields take (x, a, b); Q and R
        take (a, b). Missing derivatives use central differences.
        """
        def build(g):
            x = g.x
            e = g.nodes
            X2, E2 = x[:, None], e[None, :]
            X3, A3, B3 = x[:, None, None], e[None, :, None], e[None, None, :]

            def ev(f, *args, shape):
                return np.broadcast_to(np.asarray(f(*args), dtype=float), shape).copy()

            s2, s3 = (g.nx, g.ne), (g.nx, g.ne, g.ne)
            lam_v = ev(lam, X2, E2, shape=s2)
            mu_v = ev(mu, X2, E2, shape=s2)
            lx = ev(lam_x, X2, E2, shape=s2) if lam_x is not None else _central_diff(lam_v.T, x).T
            mx = ev(mu_x, X2, E2, shape=s2) if mu_x is not None else _central_diff(mu_v.T, x).T
            pt = ev(psi_tilde, X3, A3, B3, shape=s3) if psi_tilde is not None else None
            return cls(
                grid=g, lam=lam_v, lam_x=lx, mu=mu_v, mu_x=mx,
                sigma=ev(sigma, X3, A3, B3, shape=s3), W=ev(W, X3, A3, B3, shape=s3),
                theta=ev(theta, X3, A3, B3, shape=s3), psi=ev(psi, X3, A3, B3, shape=s3),
                Q=ev(Q, e[:, None], e[None, :], shape=(g.ne, g.ne)),
                R=ev(R, e[:, None], e[None, :], shape=(g.ne, g.ne)),
                psi_tilde=pt, builder=build, label=label,
            )

        return build(grid)

    def resample(self, grid: EnsembleGrid) -> "ContinuumParams":
        if grid == self.grid:
            return self
        if self.builder is None:
            raise StructuralError("parameters were given as samples; cannot resample")
        return self.builder(grid)

    def diag_ratio(self) -> np.ndarray:
        """psi/(mu(x,zeta) - mu(x,eta)) on (x, eta, zeta), diagonal filled.

        This is the L boundary value on the face xi = x. On eta = zeta it uses
        psi_tilde when available and otherwise the mean of the two adjacent
        off-diagonal values in the same row.
        """
        return _diag_ratio(self.psi, self.mu, self.psi_tilde)


def _diag_ratio(psi, mu, psi_tilde=None):
    ne = mu.shape[1]
    den = mu[:, None, :] - mu[:, :, None]
    off = ~np.eye(ne, dtype=bool)
    out = np.zeros_like(psi)
    # pairs without coupling carry a zero datum even when the speeds coincide
    P, D = psi[:, off], den[:, off]
    out[:, off] = np.divide(P, D, out=np.zeros_like(P), where=P != 0)
    if ne == 1:
        if psi_tilde is not None:
            out[:, 0, 0] = -psi_tilde[:, 0, 0]
        return out
    idx = np.arange(ne)
    if psi_tilde is not None:
        # psi = psi_tilde (mu_eta - mu_zeta)  =>  ratio = -psi_tilde
        out[:, idx, idx] = -psi_tilde[:, idx, idx]
    else:
        left = np.where(idx > 0, idx - 1, idx + 1)
        right = np.where(idx < ne - 1, idx + 1, idx - 1)
        out[:, idx, idx] = 0.5 * (out[:, idx, left] + out[:, idx, right])
    return out


@dataclass(frozen=True)
class AveragedParams:
    """Scalar averaged parameters of the 2x2 approximation (psi_bar = 0)."""

    lam: Callable
    mu: Callable
    sigma: Callable
    w: Callable
    theta: Callable
    q: float
    r: float
    lam_x: Optional[Callable] = None
    mu_x: Optional[Callable] = None
    eps_bar: float = float("nan")

    def __post_init__(self):
        for name in ("lam", "mu", "sigma", "w", "theta", "lam_x", "mu_x"):
            f = getattr(self, name)
            if f is None:
                continue
            if not callable(f):
                c = float(f)
                object.__setattr__(self, name, lambda x, c=c: np.full(np.shape(x), c))

    def to_nm(self) -> NmParams:
        """The averaged system written as a 1+1 system (n = m = 1)."""
        def one(f):
            return lambda x: np.asarray(f(np.asarray(x, float)), float)[None, :]

        def one2(f):
            return lambda x: np.asarray(f(np.asarray(x, float)), float)[None, None, :]

        return NmParams(
            n=1, m=1, lam=one(self.lam), mu=one(self.mu),
            Sigma=one2(self.sigma), W=one2(self.w), Theta=one2(self.theta),
            Psi=np.zeros((1, 1)), Q=[[self.q]], R=[[self.r]],
            lam_x=None if self.lam_x is None else one(self.lam_x),
            mu_x=None if self.mu_x is None else one(self.mu_x),
            label="averaged",
        )


@dataclass
class StateField:
    """Snapshot of (u, v). ``u`` has shape (nx, nu), ``v`` shape (nx, nv).

    ``kind`` is "nm" for an n+m state and "continuum" for a state sampled on
    the ensemble grid (also used for target states alpha, beta).
    """

    kind: str
    u: np.ndarray
    v: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=float)
        self.v = np.asarray(self.v, dtype=float)
        if self.kind not in ("nm", "continuum"):
            raise StructuralError(f"unknown state kind {self.kind!r}")
        if self.u.ndim != 2 or self.v.ndim != 2 or self.u.shape[0] != self.v.shape[0]:
            raise StructuralError("u, v must be (nx, nu) and (nx, nv) arrays")
        if not (np.all(np.isfinite(self.u)) and np.all(np.isfinite(self.v))):
            raise StructuralError("state has non-finite entries")

    def norm(self, xw=None) -> float:
        """E-norm (component-averaged L2); equals the E_c norm on ensemble grids."""
        nx = self.u.shape[0]
        if xw is None:
            xw = trapezoid_weights(nx, 1.0 / (nx - 1))
        val = xw @ np.mean(self.u ** 2, axis=1) + xw @ np.mean(self.v ** 2, axis=1)
        return float(np.sqrt(val))


@dataclass(frozen=True)
class Violation:
    rule: str
    where: str

    def __str__(self):
        return f"{self.rule} at {self.where}"


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple = ()
    ratio_value: Optional[float] = None
    ratio_growth: Optional[float] = None

    @property
    def ok(self) -> bool:
        return not self.violations

    def render(self) -> str:
        lines = [str(v) for v in self.violations]
        if self.ratio_value is not None:
            lines.append(f"ratio_quadrature={self.ratio_value:.12g}")
        if self.ratio_growth is not None:
            lines.append(f"ratio_growth={self.ratio_growth:.12g}")
        return "\n".join(lines)


def validate_nm(params: NmParams, x=None) -> ValidationReport:
    """Check positivity and ordering of the velocities and the zero Psi diagonal."""
    if x is None:
        x = EnsembleGrid().x
    n, m = params.n, params.m
    s = params.sample(x)
    nx = len(x)
    expect = {
        "lam": (n, nx), "mu": (m, nx), "Sigma": (n, n, nx), "W": (n, m, nx),
        "Theta": (m, n, nx), "Psi": (m, m, nx), "Q": (n, m), "R": (m, n),
    }
    for name, shp in expect.items():
        arr = getattr(s, name)
        if arr.shape != shp:
            raise StructuralError(f"{name} has shape {arr.shape}, expected {shp}")
        if not np.all(np.isfinite(arr)):
            raise StructuralError(f"{name} has non-finite entries")
    out = []
    for i in range(n):
        bad = np.nonzero(s.lam[i] <= 0)[0]
        if bad.size:
            out.append(Violation("lambda positivity", f"i={i + 1}, x-index={bad[0]}"))
    bad = np.nonzero(s.mu[m - 1] <= 0)[0]
    if bad.size:
        out.append(Violation("mu positivity", f"j={m}, x-index={bad[0]}"))
    for j in range(m - 1):
        bad = np.nonzero(s.mu[j] <= s.mu[j + 1])[0]
        if bad.size:
            out.append(Violation("mu ordering", f"j={j + 1}, x-index={bad[0]}"))
    for j in range(m):
        bad = np.nonzero(s.Psi[j, j] != 0)[0]
        if bad.size:
            out.append(Violation("Psi diagonal nonzero", f"j={j + 1}, x-index={bad[0]}"))
    return ValidationReport(violations=tuple(out))


def ratio_quadrature(psi, mu) -> float:
    """max over x of the midpoint quadrature of (psi/(mu_eta - mu_zeta))^2,
    skipping the diagonal cells."""
    ne = mu.shape[1]
    den = mu[:, :, None] - mu[:, None, :]
    off = ~np.eye(ne, dtype=bool)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(off[None], psi / np.where(off[None], den, 1.0), 0.0)
    return float(np.max(np.sum(r ** 2, axis=(1, 2))) / ne ** 2)


def validate_continuum(params: ContinuumParams, refine: Optional[ContinuumParams] = None,
                       growth_limit: float = 1.25) -> ValidationReport:
    """Check positivity, monotonicity in eta and the squared-ratio bound.

    The ratio bound is reported as a grid quadrature. When ``refine`` (the
    same parameters on a finer ensemble grid) is given, or the parameters can
    resample themselves, the quadrature is repeated at twice the ensemble
    resolution; growth beyond ``growth_limit`` flags a divergent integral.
    """
    for name in ("lam", "lam_x", "mu", "mu_x", "sigma", "W", "theta", "psi", "Q", "R"):
        if not np.all(np.isfinite(getattr(params, name))):
            raise StructuralError(f"{name} has non-finite entries")
    out = []
    bad = np.argwhere(params.lam <= 0)
    if bad.size:
        out.append(Violation("lambda positivity", f"x-index={bad[0][0]}, y-index={bad[0][1]}"))
    bad = np.argwhere(params.mu <= 0)
    if bad.size:
        out.append(Violation("mu positivity", f"x-index={bad[0][0]}, eta-index={bad[0][1]}"))
    dm = params.mu[:, :-1] - params.mu[:, 1:]
    bad = np.argwhere(dm <= 0)
    if bad.size:
        out.append(Violation("mu monotonicity", f"x-index={bad[0][0]}, eta-index={bad[0][1]}"))
        return ValidationReport(violations=tuple(out))
    val = ratio_quadrature(params.psi, params.mu)
    growth = None
    if refine is None and params.builder is not None:
        refine = params.resample(params.grid.with_(ne=2 * params.grid.ne))
    if refine is not None:
        val2 = ratio_quadrature(refine.psi, refine.mu)
        growth = val2 / val if val > 0 else (np.inf if val2 > 0 else 1.0)
        if growth > growth_limit:
            out.append(Violation("psi ratio quadrature diverges",
                                 f"ne={params.grid.ne}->{refine.grid.ne}, growth={growth:.3g}"))
    if not np.isfinite(val):
        out.append(Violation("psi ratio quadrature infinite", "grid"))
    return ValidationReport(violations=tuple(out), ratio_value=val, ratio_growth=growth)
