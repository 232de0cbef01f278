"""Method-of-lines simulation of n+m and continuum hyperbolic systems.

Both systems are reduced to one discrete form: states u (nx, nu) moving
right and v (nx, nv) moving left, in-domain coupling matrices with the
quadrature weights folded in, and boundary conditions

    u(t, 0) = Q v(t, 0),    v(t, 1) = R u(t, 1) + B U(t).

The continuum system on an ensemble grid with ne nodes is the ne+ne
system obtained from the midpoint rule. Space is discretised by upwind
differences, time by an adaptive embedded Runge-Kutta 4(5) pair.
Boundary feedback is evaluated at every stage.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.integrate import solve_ivp

from .lift import lift_matrix
from .model import (ContinuumParams, EnsembleGrid, NmParams, StateField,
                    StructuralError, trapezoid_weights)

__all__ = [
    "SimConfig",
    "Trajectory",
    "DiscreteSystem",
    "LinearFeedback",
    "Companion",
    "SimulationError",
    "simulate",
    "simulate_nm",
    "simulate_continuum",
    "solution_gap",
    "GapCurve",
]

SCHEMES = ("upwind1", "upwind2")


class SimulationError(RuntimeError):
    """Integrator failure; ``t_fail`` is the time reached."""

    def __init__(self, msg, t_fail):
        super().__init__(msg)
        self.t_fail = t_fail


@dataclass(frozen=True)
class SimConfig:
    """Simulation settings.

    ``scheme`` is "upwind1" (first-order upwind) or "upwind2" (second-order
    upwind with minmod limiting). Output times default to
    ``grid.n_out`` points on [0, grid.T].
    """

    grid: EnsembleGrid = field(default_factory=EnsembleGrid)
    scheme: str = "upwind1"
    rtol: float = 1e-6
    atol: float = 1e-6
    t_eval: Optional[tuple] = None
    blowup: float = 1e6

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise StructuralError(f"unknown scheme {self.scheme!r}; use one of {SCHEMES}")
        if not (self.rtol > 0 and self.atol > 0):
            raise StructuralError("rtol and atol must be positive")

    @property
    def times(self) -> np.ndarray:
        if self.t_eval is not None:
            return np.asarray(self.t_eval, dtype=float)
        return self.grid.times


@dataclass
class Trajectory:
    """Sampled solution: times, states, control samples and E-norms.

    ``status`` is "ok", "blowup" (norm exceeded the blow-up factor) or
    "failed" (integrator error).
    """

    times: np.ndarray
    states: list
    controls: np.ndarray
    norms: np.ndarray
    status: str = "ok"
    t_end: float = float("nan")
    cfl: float = float("nan")
    companion: Optional[list] = None
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.times.size > 1 and np.any(np.diff(self.times) <= 0):
            raise StructuralError("trajectory times must be strictly increasing")

    @property
    def control_norms(self) -> np.ndarray:
        """L2 norm of the control samples (mean over components)."""
        if self.controls.size == 0:
            return np.zeros(self.times.size)
        return np.sqrt(np.mean(self.controls ** 2, axis=1))


@dataclass
class DiscreteSystem:
    """Discrete n+m form of a hyperbolic system on the x-grid ``x``."""

    x: np.ndarray
    lam: np.ndarray   # (nx, nu)
    mu: np.ndarray    # (nx, nv)
    Auu: np.ndarray   # (nx, nu, nu)
    Auv: np.ndarray   # (nx, nu, nv)
    Avu: np.ndarray   # (nx, nv, nu)
    Avv: np.ndarray   # (nx, nv, nv)
    Q: np.ndarray     # (nu, nv)
    R: np.ndarray     # (nv, nu)
    wu: np.ndarray    # (nu,) norm weights
    wv: np.ndarray
    kind: str

    @property
    def nu(self):
        return self.lam.shape[1]

    @property
    def nv(self):
        return self.mu.shape[1]

    @property
    def xw(self):
        return trapezoid_weights(self.x.size, self.x[1] - self.x[0])

    @classmethod
    def from_nm(cls, params: NmParams, x) -> "DiscreteSystem":
        s = params.sample(np.asarray(x, float))
        n, m = params.n, params.m
        return cls(
            x=np.asarray(x, float), lam=s.lam.T.copy(), mu=s.mu.T.copy(),
            Auu=s.Sigma.transpose(2, 0, 1) / n, Auv=s.W.transpose(2, 0, 1) / m,
            Avu=s.Theta.transpose(2, 0, 1) / n, Avv=s.Psi.transpose(2, 0, 1) / m,
            Q=np.asarray(s.Q) / m, R=np.asarray(s.R) / n,
            wu=np.full(n, 1.0 / n), wv=np.full(m, 1.0 / m), kind="nm",
        )

    @classmethod
    def from_continuum(cls, params: ContinuumParams) -> "DiscreteSystem":
        g = params.grid
        w = 1.0 / g.ne
        return cls(
            x=g.x, lam=np.array(params.lam), mu=np.array(params.mu),
            Auu=params.sigma * w, Auv=params.W * w, Avu=params.theta * w, Avv=params.psi * w,
            Q=params.Q * w, R=params.R * w,
            wu=np.full(g.ne, w), wv=np.full(g.ne, w), kind="continuum",
        )

    def norm(self, u, v) -> np.ndarray:
        """E-norm of full fields u (..., nx, nu), v (..., nx, nv)."""
        xw = self.xw
        su = np.einsum("...xa,a,x->...", u ** 2, self.wu, xw)
        sv = np.einsum("...xa,a,x->...", v ** 2, self.wv, xw)
        return np.sqrt(su + sv)


@dataclass
class LinearFeedback:
    """Control law U = sum_k xw_k (Ku[k] u[k] + Lv[k] v[k]) - Ru u[-1].

    Shapes: Ku (nx, nU, nu_meas), Lv (nx, nU, nv_meas), Ru (nU, nu_meas).
    The measured fields are the plant's own state or a companion system's.
    ``perturb(t)`` optionally returns additive measurement errors
    (du, dv) with the shapes of the measured fields.
    """

    Ku: np.ndarray
    Lv: np.ndarray
    Ru: np.ndarray
    perturb: Optional[Callable] = None

    @property
    def n_out(self):
        return self.Ru.shape[0]

    @classmethod
    def zero(cls, nx, n_out, nu, nv):
        return cls(np.zeros((nx, n_out, nu)), np.zeros((nx, n_out, nv)), np.zeros((n_out, nu)))

    def evaluate(self, xw, u, v, t=0.0) -> np.ndarray:
        if self.perturb is not None:
            du, dv = self.perturb(t)
            u = u + du
            v = v + dv
        return (np.einsum("k,kij,kj->i", xw, self.Ku, u)
                + np.einsum("k,kij,kj->i", xw, self.Lv, v) - self.Ru @ u[-1])


@dataclass
class Companion:
    """A second system simulated alongside the plant and driven by ``P @ U``.

    The feedback then measures the companion instead of the plant.
    """

    system: DiscreteSystem
    u0: np.ndarray
    v0: np.ndarray
    P: np.ndarray  # (nv_companion, nU)


class _Block:
    """State bookkeeping of one discrete system in the stacked ODE."""

    def __init__(self, sys: DiscreteSystem, scheme: str, offset: int):
        self.sys = sys
        self.scheme = scheme
        nx = sys.x.size
        self.nx = nx
        self.h = sys.x[1] - sys.x[0]
        self.nu_states = (nx - 1) * sys.nu
        self.nv_states = (nx - 1) * sys.nv
        self.off = offset
        self.size = self.nu_states + self.nv_states

    def split(self, y):
        a = self.off
        ui = y[a:a + self.nu_states].reshape(self.nx - 1, self.sys.nu)
        vi = y[a + self.nu_states:a + self.size].reshape(self.nx - 1, self.sys.nv)
        return ui, vi

    def pack(self, u, v):
        return np.concatenate([u[1:].ravel(), v[:-1].ravel()])

    def full(self, ui, vi, v1):
        s = self.sys
        u = np.empty((self.nx, s.nu))
        v = np.empty((self.nx, s.nv))
        u[1:] = ui
        v[:-1] = vi
        v[-1] = v1
        u[0] = s.Q @ vi[0]
        return u, v

    def rhs(self, u, v, out):
        s = self.sys
        h = self.h
        if self.scheme == "upwind1":
            dux = (u[1:] - u[:-1]) / h
            dvx = (v[1:] - v[:-1]) / h
        else:
            dux = _muscl_right(u, h)
            dvx = -_muscl_right(v[::-1], h)[::-1]
        ut = -s.lam[1:] * dux
        ut += np.einsum("xab,xb->xa", s.Auu[1:], u[1:])
        ut += np.einsum("xab,xb->xa", s.Auv[1:], v[1:])
        vt = s.mu[:-1] * dvx
        vt += np.einsum("xab,xb->xa", s.Avu[:-1], u[:-1])
        vt += np.einsum("xab,xb->xa", s.Avv[:-1], v[:-1])
        a = self.off
        out[a:a + self.nu_states] = ut.ravel()
        out[a + self.nu_states:a + self.size] = vt.ravel()


def _minmod(a, b):
    return np.where(a * b > 0, np.sign(a) * np.minimum(np.abs(a), np.abs(b)), 0.0)


def _muscl_right(u, h):
    """Limited upwind derivative at nodes 1..N for rightward transport."""
    d = np.diff(u, axis=0)  # d[i] = u[i+1] - u[i]
    slope = np.zeros_like(u)
    slope[1:-1] = _minmod(d[:-1], d[1:])
    face = u + 0.5 * slope  # value at i + 1/2
    face[0] = u[0]
    face[-1] = u[-1]
    left = face[:-1]
    right = face[1:]
    return (right - left) / h


def simulate(plant: DiscreteSystem, u0, v0, feedback: Optional[LinearFeedback],
             cfg: SimConfig, companion: Optional[Companion] = None,
             B: Optional[np.ndarray] = None) -> Trajectory:
    """Integrate the plant (and an optional companion) in closed loop.

    ``feedback=None`` is open loop. ``B`` (nv, nU) maps controls into the
    plant's x = 1 boundary; identity by default.
    """
    u0 = np.asarray(u0, float)
    v0 = np.asarray(v0, float)
    nx = plant.x.size
    if u0.shape != (nx, plant.nu) or v0.shape != (nx, plant.nv):
        raise StructuralError(
            f"initial data shapes {u0.shape}, {v0.shape} do not match "
            f"({nx}, {plant.nu}), ({nx}, {plant.nv})")
    if not (np.all(np.isfinite(u0)) and np.all(np.isfinite(v0))):
        raise StructuralError("initial data must be finite")
    pb = _Block(plant, cfg.scheme, 0)
    blocks = [pb]
    if companion is not None:
        cb = _Block(companion.system, cfg.scheme, pb.size)
        blocks.append(cb)
    xw = plant.xw
    fb = feedback
    if fb is not None:
        nU = fb.n_out
        Bm = np.eye(plant.nv) if B is None else np.asarray(B, float)
        meas = blocks[-1] if companion is not None else pb
        Uv1 = xw[-1] * fb.Lv[-1]  # dependence of U on the measured v(1)
        if companion is None:
            Solve = np.linalg.inv(np.eye(plant.nv) - Bm @ Uv1)
        else:
            P = companion.P
            Solve = np.linalg.inv(np.eye(companion.system.nv) - P @ Uv1)
    else:
        nU = plant.nv

    def boundary(y, t):
        """Full fields of every block plus the control."""
        parts = [b.split(y) for b in blocks]
        if fb is None:
            U = np.zeros(nU)
            fulls = []
            for b, (ui, vi) in zip(blocks, parts):
                fulls.append(b.full(ui, vi, b.sys.R @ ui[-1]))
            return fulls, U
        mb = meas
        mi, mv = parts[-1] if companion is not None else parts[0]
        um = np.empty((mb.nx, mb.sys.nu))
        um[1:] = mi
        um[0] = mb.sys.Q @ mv[0]
        vm = np.empty((mb.nx, mb.sys.nv))
        vm[:-1] = mv
        vm[-1] = 0.0
        U0 = fb.evaluate(xw, um, vm, t)
        if companion is None:
            v1 = Solve @ (plant.R @ um[-1] + Bm @ U0)
            U = U0 + Uv1 @ v1
            fulls = [pb.full(parts[0][0], parts[0][1], v1)]
        else:
            vc1 = Solve @ (companion.system.R @ um[-1] + companion.P @ U0)
            U = U0 + Uv1 @ vc1
            ui, vi = parts[0]
            fulls = [pb.full(ui, vi, plant.R @ ui[-1] + Bm @ U),
                     blocks[1].full(mi, mv, vc1)]
        return fulls, U

    def rhs(t, y):
        out = np.empty_like(y)
        fulls, _ = boundary(y, t)
        for b, (u, v) in zip(blocks, fulls):
            b.rhs(u, v, out)
        return out

    y0 = pb.pack(u0, v0)
    if companion is not None:
        y0 = np.concatenate([y0, blocks[1].pack(companion.u0, companion.v0)])
    n0 = float(plant.norm(u0, v0))
    scale = max(n0, 1e-300)
    bound = cfg.blowup * scale

    def blow(t, y):
        ui, vi = pb.split(y)
        e = np.sqrt(np.sum(ui ** 2 * plant.wu) / (nx - 1) + np.sum(vi ** 2 * plant.wv) / (nx - 1))
        return bound - e if np.all(np.isfinite(y)) else -1.0

    blow.terminal = True
    times = cfg.times
    T = float(times[-1])
    status = "ok"
    try:
        sol = solve_ivp(rhs, (float(times[0]), T), y0, method="RK45", t_eval=times,
                        rtol=cfg.rtol, atol=cfg.atol, events=blow if n0 > 0 else None)
        if sol.status == 1:
            status = "blowup"
        elif sol.status < 0:
            status = "failed"
    except (FloatingPointError, ValueError) as exc:  # pragma: no cover - defensive
        raise SimulationError(f"integrator failure: {exc}", float("nan")) from exc
    ts = sol.t
    if ts.size == 0:
        raise SimulationError(f"integrator failure at t={times[0]}: {sol.message}", float(times[0]))
    states, comp_states, controls = [], [], []
    for k in range(ts.size):
        fulls, U = boundary(sol.y[:, k], ts[k])
        u, v = fulls[0]
        states.append(StateField(kind=plant.kind, u=u, v=v, t=float(ts[k])))
        if companion is not None:
            uc, vc = fulls[1]
            comp_states.append(StateField(kind=companion.system.kind, u=uc, v=vc, t=float(ts[k])))
        controls.append(U)
    norms = np.array([plant.norm(s.u, s.v) for s in states])
    max_speed = max(np.max(np.abs(plant.lam)), np.max(np.abs(plant.mu)))
    steps = max(1, (sol.nfev - 2) // 6)
    cfl = float(max_speed * (ts[-1] - ts[0]) / steps / (plant.x[1] - plant.x[0]))
    t_end = float(sol.t_events[0][0]) if status == "blowup" and sol.t_events else float(ts[-1])
    if status == "failed":
        raise SimulationError(f"integrator failure at t={ts[-1]:.4g}: {sol.message}", float(ts[-1]))
    return Trajectory(times=ts, states=states, controls=np.array(controls), norms=norms,
                      status=status, t_end=t_end, cfl=cfl,
                      companion=comp_states if companion is not None else None,
                      info={"nfev": int(sol.nfev), "scheme": cfg.scheme})


def _resolve(controller, plant, grid):
    """Turn a controller description into (feedback, companion, B)."""
    if controller is None or controller == "open_loop":
        return None, None, None
    if isinstance(controller, LinearFeedback):
        return controller, None, None
    build = getattr(controller, "build", None)
    if build is None:
        raise StructuralError(f"unsupported controller {controller!r}")
    return build(plant, grid)


def simulate_nm(params: NmParams, u0, v0, controller=None, cfg: SimConfig | None = None) -> Trajectory:
    """Simulate the n+m system. ``u0`` (nx, n) and ``v0`` (nx, m) or callables of x.

    ``controller`` is None/"open_loop", a LinearFeedback or a ControllerSpec.
    """
    cfg = SimConfig() if cfg is None else cfg
    x = cfg.grid.x
    plant = DiscreteSystem.from_nm(params, x)
    u0 = _init(u0, x, params.n)
    v0 = _init(v0, x, params.m)
    fb, comp, B = _resolve(controller, plant, cfg.grid)
    return simulate(plant, u0, v0, fb, cfg, comp, B)


def simulate_continuum(params: ContinuumParams, u0, v0, controller=None,
                       cfg: SimConfig | None = None) -> Trajectory:
    """Simulate the continuum system on ``params.grid`` (must match ``cfg.grid``
    in nx and ne). ``u0``/``v0`` have shape (nx, ne)."""
    cfg = SimConfig(grid=params.grid) if cfg is None else cfg
    g = params.grid
    if (cfg.grid.nx, cfg.grid.ne) != (g.nx, g.ne):
        raise StructuralError("parameter grid and simulation grid differ")
    plant = DiscreteSystem.from_continuum(params)
    u0 = _init(u0, g.x, g.ne)
    v0 = _init(v0, g.x, g.ne)
    fb, comp, B = _resolve(controller, plant, g)
    return simulate(plant, u0, v0, fb, cfg, comp, B)


def _init(f, x, k):
    if callable(f):
        f = f(x)
    arr = np.asarray(f, float)
    if arr.ndim == 0 or arr.shape == (k,):
        arr = np.broadcast_to(arr, (x.size, k))
    return np.array(arr, dtype=float)


@dataclass
class GapCurve:
    times: np.ndarray
    gap: np.ndarray

    @property
    def delta_T(self) -> float:
        return float(np.max(self.gap))


def solution_gap(traj_nm: Trajectory, traj_c: Trajectory, ne: int | None = None) -> GapCurve:
    """t -> ||F(u, v)(t) - (u, v)(t)||_{E_c} with the n+m state lifted to
    the continuum ensemble grid (step functions at cell-centered nodes)."""
    if traj_nm.times.shape != traj_c.times.shape or not np.allclose(traj_nm.times, traj_c.times):
        raise StructuralError("trajectories have different time samples")
    s0 = traj_c.states[0]
    ne = s0.u.shape[1] if ne is None else ne
    nx = s0.u.shape[0]
    if traj_nm.states[0].u.shape[0] != nx:
        raise StructuralError("trajectories use different x-grids")
    n = traj_nm.states[0].u.shape[1]
    m = traj_nm.states[0].v.shape[1]
    Fn, Fm = lift_matrix(ne, n), lift_matrix(ne, m)
    xw = trapezoid_weights(nx, 1.0 / (nx - 1))
    gaps = []
    for a, b in zip(traj_nm.states, traj_c.states):
        du = a.u @ Fn.T - b.u
        dv = a.v @ Fm.T - b.v
        gaps.append(np.sqrt(xw @ np.mean(du ** 2, axis=1) + xw @ np.mean(dv ** 2, axis=1)))
    return GapCurve(times=np.array(traj_c.times), gap=np.array(gaps))
