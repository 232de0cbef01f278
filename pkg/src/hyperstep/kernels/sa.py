"""Successive approximations for the continuum, n+m and 2x2 kernel equations.

The kernel equations are integrated along their characteristics: K from
the diagonal xi = x, L from xi = 0, the diagonal or the artificial datum on
x = 1 depending on the segment. Coupling integrals only mix columns, so
each row (eta node or component index) is an independent subsystem; rows
are processed in chunks, optionally in a process pool.
"""
from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..model import ContinuumParams, EnsembleGrid, NmParams, AveragedParams
from . import _march
from .geometry import SEG_A, SEG_B, SEG_C, SEG_DIAG, phi_table, segment_labels

__all__ = [
    "KernelConvergenceError",
    "SaHistory",
    "ContinuumKernels",
    "NmKernels",
    "Kernel2x2",
    "solve_continuum_kernels_sa",
    "solve_nm_kernels",
    "solve_2x2_kernels",
    "resolve_workers",
]


class KernelConvergenceError(RuntimeError):
    """Successive approximations did not reach the tolerance."""

    def __init__(self, msg, last_update):
        super().__init__(msg)
        self.last_update = last_update


def resolve_workers(workers=None) -> int:
    """Worker count from the argument, else HYPERSTEP_WORKERS, else 1."""
    if workers is None:
        workers = os.environ.get("HYPERSTEP_WORKERS", "1")
    try:
        w = int(workers)
    except (TypeError, ValueError) as exc:
        raise ValueError(f"invalid worker count {workers!r}") from exc
    if w < 1:
        raise ValueError("worker count must be >= 1")
    return w


@dataclass
class SaHistory:
    """Per-iteration sup over (x, xi) of the L2-over-(row, col) update norms."""

    dK: list = field(default_factory=list)
    dL: list = field(default_factory=list)
    total: list = field(default_factory=list)

    @property
    def iterations(self) -> int:
        return len(self.total)


@dataclass
class _Problem:
    """Everything a row chunk needs, as plain arrays (picklable)."""

    h: float
    lam: np.ndarray     # (nx, C_K) column speeds of K
    lam_x: np.ndarray
    mu: np.ndarray      # (nx, C_L) row and column speeds of L
    mu_x: np.ndarray
    phi: np.ndarray     # (nx, C_L) travel-time tables of mu
    sigma: np.ndarray   # (nx, C_K, C_K)  K -> K coupling, indexed [xi, chi, c]
    theta: np.ndarray   # (nx, C_L, C_K)  L -> K
    W: np.ndarray       # (nx, C_K, C_L)  K -> L
    psi: np.ndarray     # (nx, C_L, C_L)  L -> L
    Q: np.ndarray       # (C_K, C_L)
    wk: float           # quadrature weight of sums over K columns
    wl: float
    bcK: np.ndarray     # (nx, R, C_K) diagonal datum of K
    diagL: np.ndarray   # (nx, R, C_L) diagonal datum of L
    lart: np.ndarray    # (nx, R, C_L) datum of L on x = 1, indexed by xi
    diag_special: bool


def _couple(A, B, w):
    """out[k, i, r, c] = w * sum_chi A[k, i, r, chi] B[k, chi, c]."""
    nk, nx, R, C1 = A.shape
    out = np.matmul(A.reshape(nk, nx * R, C1), B)
    out *= w
    return out.reshape(nk, nx, R, B.shape[2])


def _tri_mask(nx):
    return np.tri(nx, dtype=bool).T  # [k, i] True where k <= i


def _solve_rows(prob: _Problem, rows, tol, max_iter, wK, wL):
    rows = np.asarray(rows, dtype=np.int64)
    nx = prob.lam.shape[0]
    R = rows.size
    CK, CL = prob.lam.shape[1], prob.mu.shape[1]
    lab = segment_labels(prob.phi, prob.phi, rows, np.arange(CL), prob.diag_special)
    lab = np.ascontiguousarray(lab.transpose(1, 0, 2, 3))
    K = np.zeros((nx, nx, R, CK))
    L = np.zeros((nx, nx, R, CL))
    Kn = np.zeros_like(K)
    Ln = np.zeros_like(L)
    bcK = np.ascontiguousarray(prob.bcK[:, rows])
    diagL = np.ascontiguousarray(prob.diagL[:, rows])
    lart = np.ascontiguousarray(prob.lart[:, rows])
    tri = _tri_mask(nx)
    lamx = prob.lam_x[:, None, None, :]
    mux = prob.mu_x[:, None, None, :]
    coefB0 = (prob.lam[0][:, None] * prob.Q) * (prob.wk / prob.mu[0][None, :])  # (CK, CL)
    ssK, ssL = [], []
    it = 0
    while True:
        GK = lamx * K
        GK += _couple(K, prob.sigma, prob.wk)
        GK += _couple(L, prob.theta, prob.wl)
        HL = mux * L
        HL -= _couple(K, prob.W, prob.wk)
        HL -= _couple(L, prob.psi, prob.wl)
        B0 = K[0] @ coefB0  # (nx, R, CL): L(x, 0) from K(x, 0)
        _march.march_K(prob.h, prob.lam, prob.mu, prob.phi, rows, bcK, GK, Kn)
        _march.march_L(prob.h, prob.mu, prob.phi, rows, diagL, lart, B0, HL, lab, Ln)
        dK = np.where(tri, np.sum((Kn - K) ** 2, axis=(2, 3)), 0.0)
        dL = np.where(tri, np.sum((Ln - L) ** 2, axis=(2, 3)), 0.0)
        ssK.append(dK)
        ssL.append(dL)
        K, Kn = Kn, K
        L, Ln = Ln, L
        it += 1
        upd = np.sqrt(np.max(wK * dK + wL * dL))
        if upd < tol or it >= max_iter:
            break
    return rows, K, L, np.array(ssK), np.array(ssL), lab, bool(upd < tol)


def _run(prob: _Problem, n_rows, tol, max_iter, workers, chunk, row_weight):
    """Solve all rows; returns K, L (xi, x, row, col), labels and history."""
    workers = resolve_workers(workers)
    nx = prob.lam.shape[0]
    CK, CL = prob.lam.shape[1], prob.mu.shape[1]
    if chunk is None:
        # about 48 MB of state per kernel array
        chunk = max(1, int(6e6 // (nx * nx * max(CK, CL))))
    chunks = [np.arange(s, min(s + chunk, n_rows)) for s in range(0, n_rows, chunk)]
    # each chunk gets a share of the squared tolerance so the global
    # update norm is below tol when every chunk has stopped
    share = tol * np.sqrt(np.array([len(c) for c in chunks]) / n_rows)
    wK, wL = row_weight / CK, row_weight / CL
    K = np.zeros((nx, nx, n_rows, CK))
    L = np.zeros((nx, nx, n_rows, CL))
    lab = np.zeros((nx, nx, n_rows, CL), dtype=np.int8)
    results = []
    if workers == 1 or len(chunks) == 1:
        for c, s in zip(chunks, share):
            results.append(_solve_rows(prob, c, s, max_iter, wK, wL))
    else:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            futs = [ex.submit(_solve_rows, prob, c, s, max_iter, wK, wL) for c, s in zip(chunks, share)]
            results = [f.result() for f in futs]
    n_it = max(r[3].shape[0] for r in results)
    totK = np.zeros((n_it, nx, nx))
    totL = np.zeros((n_it, nx, nx))
    converged = True
    for rows, k, l, sK, sL, lb, ok in results:
        K[:, :, rows] = k
        L[:, :, rows] = l
        lab[:, :, rows] = lb
        totK[: sK.shape[0]] += sK
        totL[: sL.shape[0]] += sL
        converged = converged and ok
    hist = SaHistory(
        dK=[float(np.sqrt(np.max(a) * wK)) for a in totK],
        dL=[float(np.sqrt(np.max(a) * wL)) for a in totL],
    )
    hist.total = [float(np.hypot(a, b)) for a, b in zip(hist.dK, hist.dL)]
    if not converged:
        raise KernelConvergenceError(
            f"successive approximations stalled after {n_it} iterations "
            f"(last update {hist.total[-1]:.3e}, tol {tol:.1e})", hist.total[-1])
    return K, L, lab, hist


def _tri_nan(A):
    """Copy with the unused upper part (xi > x) set to NaN, layout (x, xi, ...)."""
    B = np.array(A, dtype=float, copy=True)
    nx = B.shape[0]
    B[~np.tri(nx, dtype=bool)] = np.nan
    return B


@dataclass
class ContinuumKernels:
    """Continuum kernels on a grid over T x [0, 1]^2.

    ``Kt`` and ``Lt`` are stored as (xi, x, eta, zeta); the views ``K`` and
    ``L`` are (x, xi, eta, zeta). Entries with xi > x are unused (zero).
    ``labels`` uses the same (x, xi, eta, zeta) order with codes
    SEG_A, SEG_B, SEG_C and SEG_DIAG (diagonal of eta = zeta cells).
    """

    grid: EnsembleGrid
    Kt: np.ndarray
    Lt: np.ndarray
    labels_t: np.ndarray
    method: str
    order: int = 0
    history: SaHistory = field(default_factory=SaHistory)
    info: dict = field(default_factory=dict)

    @property
    def x(self):
        return self.grid.x

    @property
    def K(self):
        return self.Kt.transpose(1, 0, 2, 3)

    @property
    def L(self):
        return self.Lt.transpose(1, 0, 2, 3)

    @property
    def labels(self):
        return self.labels_t.transpose(1, 0, 2, 3)

    @property
    def K1(self):
        """K(1, xi, eta, zeta) with shape (nx, ne, ne)."""
        return self.Kt[:, -1]

    @property
    def L1(self):
        return self.Lt[:, -1]

    def rho_table(self, params: ContinuumParams) -> np.ndarray:
        """rho(x, eta, zeta) on the grid (NaN where zeta < eta)."""
        x = self.grid.x
        phi = phi_table(x, params.resample(self.grid).mu)
        ne = self.grid.ne
        out = np.full((x.size, ne, ne), np.nan)
        for r in range(ne):
            for c in range(r, ne):
                out[:, r, c] = np.interp(phi[:, r], phi[:, c], x)
        return out


@dataclass
class NmKernels:
    """Exact n+m kernels: K (x, xi, m, n), L (x, xi, m, m) and the x = 1 datum."""

    x: np.ndarray
    Kt: np.ndarray
    Lt: np.ndarray
    lart: np.ndarray
    history: SaHistory
    labels_t: np.ndarray

    @property
    def K(self):
        return self.Kt.transpose(1, 0, 2, 3)

    @property
    def L(self):
        return self.Lt.transpose(1, 0, 2, 3)

    @property
    def K1(self):
        """K(1, xi) with shape (nx, m, n)."""
        return self.Kt[:, -1]

    @property
    def L1(self):
        return self.Lt[:, -1]


@dataclass
class Kernel2x2:
    """Averaged kernels K_bar, L_bar on (x, xi) with xi <= x."""

    x: np.ndarray
    K: np.ndarray
    L: np.ndarray
    history: SaHistory

    @property
    def K1(self):
        return self.K[-1]

    @property
    def L1(self):
        return self.L[-1]


def continuum_problem(params: ContinuumParams) -> _Problem:
    g = params.grid
    lam, mu = params.lam, params.mu
    ratio = params.diag_ratio()
    bcK = -params.theta / (lam[:, None, :] + mu[:, :, None])
    return _Problem(
        h=g.h, lam=np.ascontiguousarray(lam), lam_x=np.ascontiguousarray(params.lam_x),
        mu=np.ascontiguousarray(mu), mu_x=np.ascontiguousarray(params.mu_x),
        phi=phi_table(g.x, mu),
        sigma=np.asarray(params.sigma), theta=np.asarray(params.theta),
        W=np.asarray(params.W), psi=np.asarray(params.psi), Q=np.asarray(params.Q),
        wk=1.0 / g.ne, wl=1.0 / g.ne,
        bcK=np.ascontiguousarray(bcK), diagL=np.ascontiguousarray(ratio),
        lart=np.ascontiguousarray(ratio), diag_special=True,
    )


def solve_continuum_kernels_sa(params: ContinuumParams, grid: EnsembleGrid | None = None,
                               tol: float = 1e-6, max_iter: int = 60, workers=None,
                               chunk=None) -> ContinuumKernels:
    """Continuum kernels by successive approximations along characteristics.

    Parameters
    ----------
    params : ContinuumParams
        Parameter fields; resampled onto ``grid`` when it differs.
    grid : EnsembleGrid, optional
        Kernel grid (x nodes and ensemble nodes). Defaults to ``params.grid``.
    tol : float
        Stop when the sup over (x, xi) of the L2 update norm is below ``tol``.
    max_iter : int
        Iteration cap; exceeding it raises ``KernelConvergenceError``.
    workers : int, optional
        Process count for independent eta rows (``HYPERSTEP_WORKERS``).
    """
    grid = params.grid if grid is None else grid
    p = params.resample(grid)
    prob = continuum_problem(p)
    K, L, lab, hist = _run(prob, grid.ne, tol, max_iter, workers, chunk,
                           row_weight=1.0 / grid.ne)
    return ContinuumKernels(grid=grid, Kt=K, Lt=L, labels_t=lab, method="sa",
                            history=hist, info={"tol": tol})


def nm_problem(params: NmParams, nx: int) -> _Problem:
    x = np.linspace(0.0, 1.0, nx)
    s = params.sample(x)
    n, m = params.n, params.m
    lam, mu = s.lam.T.copy(), s.mu.T.copy()
    Th = s.Theta.transpose(2, 0, 1)  # (nx, m, n)
    Ps = s.Psi.transpose(2, 0, 1)    # (nx, m, m)
    bcK = -Th / (lam[:, None, :] + mu[:, :, None])
    den = mu[:, None, :] - mu[:, :, None]  # mu_c - mu_r
    ratio = np.zeros_like(Ps)
    off = ~np.eye(m, dtype=bool)
    ratio[:, off] = Ps[:, off] / den[:, off]
    return _Problem(
        h=1.0 / (nx - 1), lam=np.ascontiguousarray(lam), lam_x=s.lam_x.T.copy(),
        mu=np.ascontiguousarray(mu), mu_x=s.mu_x.T.copy(), phi=phi_table(x, mu),
        sigma=np.ascontiguousarray(s.Sigma.transpose(2, 0, 1)),
        theta=np.ascontiguousarray(Th),
        W=np.ascontiguousarray(s.W.transpose(2, 0, 1)),
        psi=np.ascontiguousarray(Ps), Q=np.asarray(s.Q, float),
        wk=1.0 / n, wl=1.0 / m, bcK=np.ascontiguousarray(bcK),
        diagL=np.ascontiguousarray(ratio), lart=np.ascontiguousarray(ratio),
        diag_special=False,
    )


def solve_nm_kernels(params: NmParams, nx: int = 128, tol: float = 1e-6,
                     max_iter: int = 60, workers=None) -> NmKernels:
    """Exact n+m kernels by successive approximations.

    Diagonal entries L_ii have no datum on xi = x; they are marched from
    xi = 0 like the lower segment.
    """
    if isinstance(nx, EnsembleGrid):
        nx = nx.nx
    prob = nm_problem(params, nx)
    K, L, lab, hist = _run(prob, params.m, tol, max_iter, workers, None,
                           row_weight=1.0 / params.m)
    return NmKernels(x=np.linspace(0, 1, nx), Kt=K, Lt=L, lart=prob.lart,
                     history=hist, labels_t=lab)


def solve_2x2_kernels(params: AveragedParams, nx: int = 128, tol: float = 1e-8,
                      max_iter: int = 60) -> Kernel2x2:
    """Averaged kernels: the n = m = 1 case of the n+m solver."""
    if isinstance(nx, EnsembleGrid):
        nx = nx.nx
    ker = solve_nm_kernels(params.to_nm(), nx=nx, tol=tol, max_iter=max_iter, workers=1)
    return Kernel2x2(x=ker.x, K=ker.K[:, :, 0, 0].copy(), L=ker.L[:, :, 0, 0].copy(),
                     history=ker.history)
