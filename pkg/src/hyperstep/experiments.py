"""Reproduction pipelines for the two worked examples.

Each function runs one study end to end and returns plain results that
the CLI writes to disk and the acceptance suite checks.
"""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import multiprocessing as mp
import numpy as np

from .control import ControllerSpec
from .kernels import resolve_workers, solve_2x2_kernels, solve_continuum_kernels_sa
from .kernels.powerseries import solve_continuum_kernels_ps
from .model import EnsembleGrid
from .sim import SimConfig, Trajectory, simulate_continuum, simulate_nm
from .stability import DecayFit, decay_fit
from .systems import (example1_continuum, example1_initial, example1_nm, example2_averaged,
                      example2_continuum, example2_initial, example2_nm)

__all__ = [
    "solve_kernels",
    "ClosedLoopResult",
    "example1_closed_loop",
    "example1_open_loop",
    "SweepResult",
    "nm_sweep",
    "example1_sweep",
    "macro_comparison",
    "Example2Result",
    "example2_study",
    "IssResult",
    "iss_study",
]


def solve_kernels(params, method="sa", order=10, workers=None):
    """Continuum kernels by successive approximations ("sa") or power series ("ps")."""
    if method == "sa":
        return solve_continuum_kernels_sa(params, workers=workers)
    if method == "ps":
        return solve_continuum_kernels_ps(params, order=order)
    raise ValueError(f"unknown kernel method {method!r}")


@dataclass
class ClosedLoopResult:
    traj: Trajectory
    kernels: object
    fit: DecayFit
    control_ratio: float   # ||U(T)|| / ||U(0)||


def example1_closed_loop(grid: EnsembleGrid | None = None, method="ps", order=10,
                         scheme="upwind1", workers=None, kernels=None) -> ClosedLoopResult:
    """Continuum example 1 under the continuum backstepping law."""
    grid = EnsembleGrid(T=5.0, n_out=101) if grid is None else grid
    p = example1_continuum(grid)
    k = solve_kernels(p, method, order, workers) if kernels is None else kernels
    spec = ControllerSpec("continuum_exact", kernels=k, R=p.R)
    u0, v0 = example1_initial(grid)
    tr = simulate_continuum(p, u0, v0, spec, SimConfig(grid=grid, scheme=scheme))
    cn = tr.control_norms
    ratio = float(cn[-1] / cn[0]) if cn[0] > 0 else 0.0
    return ClosedLoopResult(traj=tr, kernels=k, fit=decay_fit(tr), control_ratio=ratio)


def example1_open_loop(grid: EnsembleGrid | None = None, scheme="upwind1") -> Trajectory:
    grid = EnsembleGrid(T=5.0, n_out=101) if grid is None else grid
    p = example1_continuum(grid)
    u0, v0 = example1_initial(grid)
    return simulate_continuum(p, u0, v0, None, SimConfig(grid=grid, scheme=scheme))


@dataclass
class SweepResult:
    ns: list
    fits: list
    trajs: list = field(default_factory=list, repr=False)

    def rows(self):
        return [(n, f.classification, f.omega, f.growth) for n, f in zip(self.ns, self.fits)]


_SWEEP = {}


def _example1_member(n):
    y = np.arange(1, n + 1) / n
    return example1_nm(n, n), (y + 0.5) / 2, np.ones(n)


def _sweep_one(n):
    c = _SWEEP
    grid = c["grid"]
    pn, u0, v0 = c["member"](n)
    u0 = np.broadcast_to(u0, (grid.nx, pn.n)).copy()
    v0 = np.broadcast_to(v0, (grid.nx, pn.m)).copy()
    perturb = None
    if c["eps"]:
        du = np.full((grid.nx, pn.n), c["eps"])
        dv = np.full((grid.nx, pn.m), c["eps"])
        perturb = lambda t: (du, dv)  # noqa: E731
    spec = ControllerSpec("macro_kernels_micro_meas", kernels=c["k"], R=pn.R, n=pn.n, m=pn.m,
                          perturb=perturb)
    return simulate_nm(pn, u0, v0, spec, SimConfig(grid=grid, scheme=c["scheme"]))


def _map(fn, items, workers):
    workers = resolve_workers(workers)
    if workers == 1 or len(items) == 1:
        return [fn(i) for i in items]
    with ProcessPoolExecutor(min(workers, len(items)), mp_context=mp.get_context("fork")) as ex:
        return list(ex.map(fn, items))


def nm_sweep(member, ns, kernels, grid: EnsembleGrid, scheme="upwind1", workers=None,
             eps=0.0) -> SweepResult:
    """Closed loops of the n+m systems ``member(n) -> (params, u0, v0)`` under
    cell means of ``kernels``; ``eps`` adds a constant measurement error."""
    _SWEEP.update(k=kernels, grid=grid, scheme=scheme, eps=float(eps), member=member)
    trajs = _map(_sweep_one, list(ns), workers)
    return SweepResult(ns=list(ns), fits=[decay_fit(t) for t in trajs], trajs=trajs)


def example1_sweep(ns=(2, 5, 10, 15, 20, 25), grid: EnsembleGrid | None = None, kernels=None,
                   method="sa", scheme="upwind1", workers=None) -> SweepResult:
    """n+m members of example 1 under cell means of the continuum kernels."""
    grid = EnsembleGrid(T=5.0, n_out=101) if grid is None else grid
    if kernels is None:
        kernels = solve_kernels(example1_continuum(grid), method, workers=workers)
    return nm_sweep(_example1_member, ns, kernels, grid, scheme, workers)


@dataclass
class Example2Result:
    times: np.ndarray
    norms: dict                    # variant -> E-norm history
    controls_spread: float         # max over t of the spread of the averaged controls
    trajs: dict = field(default_factory=dict, repr=False)

    def at_end(self) -> dict:
        return {k: float(v[-1]) for k, v in self.norms.items()}


def macro_comparison(pn, pc, av, init, companion_init, grid: EnsembleGrid, method="sa",
                     scheme="upwind1", workers=None) -> Example2Result:
    """The n+m plant ``pn`` autonomous, under continuum kernels of ``pc``
    measuring a companion continuum state, and under averaged 2x2 kernels
    of ``av`` measuring the ensemble average of the same companion."""
    cfg = SimConfig(grid=grid, scheme=scheme)
    u0, v0 = init
    cu0, cv0 = companion_init
    n, m = pn.n, pn.m
    trajs = {"autonomous": simulate_nm(pn, u0, v0, None, cfg)}
    kc = solve_kernels(pc, method, workers=workers)
    spec = ControllerSpec("macro_kernels_macro_meas", kernels=kc, R=pc.R, n=n, m=m,
                          companion=pc, companion_init=(cu0, cv0))
    trajs["macro_kernels_macro_meas"] = simulate_nm(pn, u0, v0, spec, cfg)
    kb = solve_2x2_kernels(av, nx=grid.nx)
    spec = ControllerSpec("averaged_macro", kernels=kb, n=n, m=m, companion=pc,
                          companion_init=(cu0, cv0), averaged=av)
    trajs["averaged_macro"] = simulate_nm(pn, u0, v0, spec, cfg)
    U = trajs["averaged_macro"].controls
    spread = float(np.max(np.ptp(U, axis=1))) if U.size else 0.0
    return Example2Result(times=trajs["autonomous"].times,
                          norms={k: np.asarray(t.norms) for k, t in trajs.items()},
                          controls_spread=spread, trajs=trajs)


def example2_study(grid: EnsembleGrid | None = None, n=10, m=10, method="sa",
                   scheme="upwind1", workers=None) -> Example2Result:
    """Example 2 with the plant from u0 = 0.9, v0 = 1 and the continuum
    companion from u0 = v0 = 1."""
    grid = EnsembleGrid(T=5.0, n_out=101) if grid is None else grid
    ones = np.ones((grid.nx, grid.ne))
    return macro_comparison(example2_nm(n, m), example2_continuum(grid), example2_averaged(),
                            example2_initial(n, m, grid.nx), (ones, ones), grid, method,
                            scheme, workers)


@dataclass
class IssResult:
    eps: list
    bounds: list      # ultimate bound: max norm over the last quarter of [0, T]
    fits: list


def iss_study(eps=(0.0, 0.01, 0.05, 0.1), n=10, grid: EnsembleGrid | None = None, kernels=None,
              scheme="upwind1", workers=None) -> IssResult:
    """Constant measurement errors of size eps on the example 1 member n = m.

    The ultimate bound is the largest state norm over the last quarter of
    the horizon.
    """
    grid = EnsembleGrid(T=5.0, n_out=101) if grid is None else grid
    if kernels is None:
        kernels = solve_kernels(example1_continuum(grid), "sa", workers=workers)
    bounds, fits = [], []
    for e in eps:
        tr = nm_sweep(_example1_member, [n], kernels, grid, scheme, 1, eps=e).trajs[0]
        tail = tr.times >= 0.75 * tr.times[-1]
        bounds.append(float(np.max(tr.norms[tail])))
        fits.append(decay_fit(tr))
    return IssResult(eps=list(eps), bounds=bounds, fits=fits)
