"""Lyapunov functional, decay-rate fits and convergence studies.

The Lyapunov functional of the target system is

    V = int int exp(-delta x) alpha^2 / lam + exp(delta x) D(zeta) beta^2 / mu

with delta and the weight D built from sup-bounds of the target
coefficients. ``decay_fit`` estimates an exponential rate from a norm
curve and classifies it, ``convergence_study`` measures how the n+m
system approaches its continuum counterpart as n = m grows.
"""
from __future__ import annotations

import multiprocessing as mp
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .control import ControllerSpec, TargetCoeffs
from .kernels.sa import ContinuumKernels, resolve_workers, solve_continuum_kernels_sa, solve_nm_kernels
from .lift import lift_matrix, project
from .model import ContinuumParams, StateField, StructuralError, trapezoid_weights
from .sim import SimConfig, Trajectory, simulate_continuum, simulate_nm, solution_gap

__all__ = [
    "LyapunovConfig",
    "lyapunov_params",
    "lyapunov_value",
    "norm_equivalence",
    "weight_margin",
    "DecayFit",
    "decay_fit",
    "StudyReport",
    "convergence_study",
    "strictly_decreasing",
    "SCENARIOS",
]

EXP_STABLE, BOUNDED, UNSTABLE = "ExpStable", "Bounded", "Unstable"
SCENARIOS = ("solution_gap", "kernel_gap", "control_gap")


@dataclass
class LyapunovConfig:
    """Parameters of the Lyapunov functional.

    ``D`` is sampled at the ensemble nodes ``zeta``; ``bounds`` holds
    m_lam, m_mu, M_sigma, M_W, M_Cplus, M_Cminus, M_G and M_Q.
    ``growth`` is the exponent k in D = c exp(k (1 - zeta)) and
    ``eq_margin`` the minimum over the grid of
    D - k int_zeta^1 D - M_Q^2 (positive when the weight is admissible).
    """

    delta: float
    D: np.ndarray
    zeta: np.ndarray
    c: float
    growth: float
    bounds: dict
    delta_min: float
    eq_margin: float = float("nan")

    @property
    def admissible(self) -> bool:
        return bool(self.delta > self.delta_min and np.all(self.D >= 1.0) and self.eq_margin > 0.0)


def _row_mean_norm(A):
    """sqrt(mean over the first ensemble axis of (mean over the last)^2).

    ``A`` has shape (..., ne, ne); the result keeps the leading axes.
    """
    return np.sqrt(np.mean(np.mean(A, axis=-1) ** 2, axis=-1))


def weight_margin(c: float, k: float, zeta, M_Q: float) -> np.ndarray:
    """D(zeta) - k int_zeta^1 D - M_Q^2 for D = c exp(k (1 - zeta)).

    D grows like exp(k) while the margin is of order c, so the integral is
    evaluated by adaptive quadrature in extended precision.
    """
    import mpmath

    dps = 30 + int(abs(k) / np.log(10.0))
    out = []
    with mpmath.workdps(dps):
        cm, km, q2 = mpmath.mpf(c), mpmath.mpf(k), mpmath.mpf(M_Q) ** 2
        f = lambda s: cm * mpmath.exp(km * (1 - s))  # noqa: E731
        for z in np.asarray(zeta, float):
            zm = mpmath.mpf(z)
            out.append(float(f(zm) - km * mpmath.quad(f, [zm, 1]) - q2))
    return np.array(out)


def lyapunov_params(coeffs: TargetCoeffs, params: ContinuumParams, Q=None,
                    factor: float = 1.01) -> LyapunovConfig:
    """delta, D and the sup-bounds of the target system.

    ``delta`` and ``c`` are ``factor`` times their lower limits:
    delta > max{(2 m_lam (M_sigma + M_C+) + 2)/m_lam^2, (M_W^2 + M_C-^2)/m_mu + M_G},
    c > max{M_Q^2, 1}, and D(zeta) = c exp(M_G e^delta / (delta m_mu) (1 - zeta)).
    ``Q`` overrides the boundary coupling of ``params``.
    """
    g = params.grid
    zeta = g.nodes
    Qm = np.asarray(params.Q if Q is None else Q, float)
    tri = np.tril(np.ones((coeffs.x.size,) * 2, bool))
    b = {
        "m_lam": float(np.min(params.lam)),
        "m_mu": float(np.min(params.mu)),
        "M_sigma": float(np.max(_row_mean_norm(params.sigma))),
        "M_W": float(np.max(_row_mean_norm(params.W))),
        "M_Cplus": float(np.max(_row_mean_norm(coeffs.C_plus)[tri])),
        "M_Cminus": float(np.max(_row_mean_norm(coeffs.C_minus)[tri])),
        "M_G": float(np.max(_row_mean_norm(coeffs.G))),
        "M_Q": float(_row_mean_norm(Qm)),
    }
    if b["m_lam"] <= 0 or b["m_mu"] <= 0:
        raise StructuralError("transport speeds must be positive")
    ml, mm = b["m_lam"], b["m_mu"]
    dmin = max((2 * ml * (b["M_sigma"] + b["M_Cplus"]) + 2) / ml ** 2,
               (b["M_W"] ** 2 + b["M_Cminus"] ** 2) / mm + b["M_G"])
    delta = factor * dmin
    c = factor * max(b["M_Q"] ** 2, 1.0)
    k = b["M_G"] * np.exp(delta) / (delta * mm)
    D = c * np.exp(k * (1.0 - zeta))
    margin = float(np.min(weight_margin(c, k, zeta, b["M_Q"])))
    return LyapunovConfig(delta=float(delta), D=D, zeta=zeta, c=float(c), growth=float(k),
                          bounds=b, delta_min=float(dmin), eq_margin=margin)


def lyapunov_value(cfg: LyapunovConfig, target_state: StateField, params: ContinuumParams) -> float:
    """V for a target state (alpha, beta) on the grid of ``params``."""
    a, bt = target_state.u, target_state.v
    g = params.grid
    if a.shape != (g.nx, g.ne) or bt.shape != (g.nx, g.ne):
        raise StructuralError("target state and parameter grid differ")
    x = g.x
    xw = trapezoid_weights(g.nx, g.h)
    ia = np.mean(a ** 2 / params.lam, axis=1)
    ib = np.mean(cfg.D[None, :] * bt ** 2 / params.mu, axis=1)
    return float(xw @ (np.exp(-cfg.delta * x) * ia + np.exp(cfg.delta * x) * ib))


def norm_equivalence(cfg: LyapunovConfig, params: ContinuumParams):
    """Constants (c1, c2) with c1 ||(a, b)||^2 <= V <= c2 ||(a, b)||^2."""
    M_lam, M_mu = float(np.max(params.lam)), float(np.max(params.mu))
    m_lam, m_mu = float(np.min(params.lam)), float(np.min(params.mu))
    c1 = min(np.exp(-cfg.delta) / M_lam, float(np.min(cfg.D)) / M_mu)
    c2 = max(1.0 / m_lam, np.exp(cfg.delta) * float(np.max(cfg.D)) / m_mu)
    return c1, c2


@dataclass
class DecayFit:
    """Log-linear fit ``norm ~ M exp(-omega t)`` on ``window``."""

    window: tuple
    omega: float
    M: float
    classification: str
    growth: float
    blowup: bool = False

    @property
    def stable(self) -> bool:
        return self.classification == EXP_STABLE


def decay_fit(traj, window=None, growth_limit: float = 10.0, rate_tol: float = 1e-9) -> DecayFit:
    """Fit an exponential rate to a norm curve.

    Parameters
    ----------
    traj : Trajectory or (times, norms)
    window : (t0, t1), optional
        Fit window, default the second half of the time span.
    growth_limit : float
        A negative rate only counts as unstable once the norm has grown by
        this factor relative to its initial value.
    rate_tol : float
        Rates within this distance of zero are classified Bounded.

    Returns
    -------
    DecayFit
        ExpStable when omega > rate_tol, Unstable on blow-up or when
        omega < 0 with growth above ``growth_limit``, Bounded otherwise.
    """
    if isinstance(traj, Trajectory):
        t, nrm, blow = np.asarray(traj.times), np.asarray(traj.norms), traj.status == "blowup"
        if traj.status == "failed":
            blow = True
    else:
        t, nrm = (np.asarray(a, float) for a in traj)
        blow = False
    if np.all(nrm == 0):
        w = (float(t[0]), float(t[-1])) if window is None else tuple(window)
        return DecayFit(window=w, omega=float("inf"), M=0.0, classification=EXP_STABLE, growth=0.0)
    finite = np.isfinite(nrm)
    t, nrm = t[finite], nrm[finite]
    if window is None:
        window = (0.5 * (t[0] + t[-1]), float(t[-1]))
    sel = (t >= window[0] - 1e-12) & (t <= window[1] + 1e-12)
    if blow and np.count_nonzero(sel) < 5:
        sel = t >= 0.5 * (t[0] + t[-1])
    if np.count_nonzero(sel) < 5:
        raise ValueError("decay_fit needs at least 5 samples in the window")
    if np.any(nrm[sel] <= 0):
        raise ValueError("decay_fit needs positive norms in the window")
    slope, icpt = np.polyfit(t[sel], np.log(nrm[sel]), 1)
    omega = float(-slope)
    growth = float(np.max(nrm[sel]) / nrm[0]) if nrm[0] > 0 else float("inf")
    if blow or (omega < 0 and growth > growth_limit):
        cls = UNSTABLE
    elif omega > rate_tol:
        cls = EXP_STABLE
    else:
        cls = BOUNDED
    return DecayFit(window=(float(window[0]), float(window[1])), omega=omega, M=float(np.exp(icpt)),
                    classification=cls, growth=growth, blowup=bool(blow))


def strictly_decreasing(seq) -> bool:
    seq = np.asarray(seq, float)
    return bool(seq.size < 2 or np.all(np.diff(seq) < 0))


@dataclass
class StudyReport:
    """Gap sequence of a convergence study over n = m."""

    scenario: str
    ns: list
    gaps: list
    decreasing: bool
    details: list = field(default_factory=list)

    def summary(self) -> dict:
        return {"scenario": self.scenario, "ns": list(map(int, self.ns)),
                "gaps": [float(g) for g in self.gaps], "strictly_decreasing": self.decreasing}

    def rows(self):
        return [(int(n), float(g)) for n, g in zip(self.ns, self.gaps)]


# study context shared with forked workers
_CTX: dict = {}


def _kernel_gap(n):
    c = _CTX
    nk = solve_nm_kernels(c["family"](n), nx=c["kernels"].grid.nx, tol=c["tol"])
    ck = c["kernels"]
    ne = ck.grid.ne
    Fn = lift_matrix(ne, n)
    tri = np.tril(np.ones((ck.grid.nx,) * 2, bool))
    # lifted K^{m,n}(x, xi, eta, zeta) = K_jl(x, xi) on cell (j, l)
    dK = np.einsum("aj,kijl,bl->kiab", Fn, nk.Kt, Fn, optimize=True) - ck.Kt
    dL = np.einsum("aj,kijl,bl->kiab", Fn, nk.Lt, Fn, optimize=True) - ck.Lt
    gK = np.sqrt(np.mean(dK ** 2, axis=(2, 3))).T[tri]
    gL = np.sqrt(np.mean(dL ** 2, axis=(2, 3))).T[tri]
    return max(float(gK.max()), float(gL.max())), {"K": float(gK.max()), "L": float(gL.max())}


def _solution_gap(n):
    c = _CTX
    g = c["grid"]
    u0c, v0c = c["init"]
    cfg = SimConfig(grid=g.with_(T=c["T"], n_out=c["n_out"]), scheme=c["scheme"])
    tr = simulate_nm(c["family"](n), project(u0c, n), project(v0c, n), None, cfg)
    gap = solution_gap(tr, c["traj_c"])
    return gap.delta_T, {"status": tr.status}


def _control_gap(n):
    c = _CTX
    g = c["grid"]
    ck = c["kernels"]
    params = c["family"](n)
    nk = solve_nm_kernels(params, nx=g.nx, tol=c["tol"])
    R = params.R
    approx = ControllerSpec("macro_kernels_micro_meas", kernels=ck, R=R, n=n, m=n).feedback(g.x)
    exact = ControllerSpec("micro_exact", kernels=nk, R=R, n=n, m=n).feedback(g.x)
    u0c, v0c = c["init"]
    cfg = SimConfig(grid=g.with_(T=c["T"], n_out=c["n_out"]), scheme=c["scheme"])
    tr = simulate_nm(params, project(u0c, n), project(v0c, n), approx, cfg)
    xw = g.xw
    num = max(np.sqrt(np.mean((approx.evaluate(xw, s.u, s.v) - exact.evaluate(xw, s.u, s.v)) ** 2))
              for s in tr.states)
    den = max(float(np.max(tr.norms)), 1e-300)
    return float(num / den), {"status": tr.status}


_MEMBERS = {"solution_gap": _solution_gap, "kernel_gap": _kernel_gap, "control_gap": _control_gap}


def convergence_study(family: Callable, ns, scenario: str, continuum: ContinuumParams,
                      init=None, kernels: Optional[ContinuumKernels] = None, T: float = 1.0,
                      n_out: int = 41, scheme: str = "upwind1", tol: float = 1e-6,
                      workers=None) -> StudyReport:
    """Gap between the n+m family and its continuum counterpart over ``ns``.

    Parameters
    ----------
    family : callable
        ``family(n)`` returns the n+m system with n = m.
    ns : sequence of int
    scenario : {"solution_gap", "kernel_gap", "control_gap"}
        solution_gap: sup over [0, T] of the E_c distance between the lifted
        open-loop n+m solution and the continuum solution.
        kernel_gap: sup over (x, xi) of the L2 distance between lifted exact
        n+m kernels and the continuum kernels (max of K and L).
        control_gap: sup over the closed-loop trajectory of the difference
        between the sampled-kernel law and the exact n+m law, relative to
        the sup of the state norm.
    continuum : ContinuumParams
        Continuum counterpart on the study grid.
    init : (u0, v0), optional
        Continuum initial data on the grid; n+m data are its cell means.
    kernels : ContinuumKernels, optional
        Precomputed continuum kernels (solved by successive approximations
        otherwise).
    workers : int, optional
        Process count for the family members (HYPERSTEP_WORKERS fallback).
    """
    if scenario not in SCENARIOS:
        raise StructuralError(f"unknown scenario {scenario!r}")
    g = continuum.grid
    ns = [int(n) for n in ns]
    if init is None:
        init = (np.ones((g.nx, g.ne)), np.ones((g.nx, g.ne)))
    ctx = {"family": family, "grid": g, "init": init, "T": T, "n_out": n_out,
           "scheme": scheme, "tol": tol}
    if scenario in ("kernel_gap", "control_gap"):
        ctx["kernels"] = kernels if kernels is not None else solve_continuum_kernels_sa(continuum, tol=tol)
    if scenario == "solution_gap":
        cfg = SimConfig(grid=g.with_(T=T, n_out=n_out), scheme=scheme)
        ctx["traj_c"] = simulate_continuum(continuum, init[0], init[1], None, cfg)
    _CTX.clear()
    _CTX.update(ctx)
    fn = _MEMBERS[scenario]
    nw = min(resolve_workers(workers), len(ns))
    try:
        if nw > 1:
            with ProcessPoolExecutor(max_workers=nw, mp_context=mp.get_context("fork")) as ex:
                out = list(ex.map(fn, ns))
        else:
            out = [fn(n) for n in ns]
    finally:
        _CTX.clear()
    gaps = [o[0] for o in out]
    return StudyReport(scenario=scenario, ns=ns, gaps=gaps, decreasing=strictly_decreasing(gaps),
                       details=[o[1] for o in out])
