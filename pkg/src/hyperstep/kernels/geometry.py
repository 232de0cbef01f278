"""Characteristic geometry of the continuum kernel equations.

The L-kernel characteristics through the origin form the hypersurface
xi = rho(x, eta, zeta) = phi_zeta^{-1}(phi_eta(x)), with
phi_eta(x) = int_0^x ds / mu(s, eta). For eta <= zeta it splits the
triangle xi <= x into a lower part (segment a, characteristics end on
xi = 0) and an upper part (segment b, they end on xi = x). Cells with
zeta < eta form segment c.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import cumulative_trapezoid

__all__ = [
    "SEG_A", "SEG_B", "SEG_C", "SEG_DIAG",
    "phi_table",
    "ensemble_column",
    "rho",
    "segment_labels",
    "CharacteristicPath",
    "trace_characteristics",
    "GeometryError",
]

SEG_A, SEG_B, SEG_C, SEG_DIAG = 0, 1, 2, 3


class GeometryError(RuntimeError):
    """Characteristic did not reach a face within its budget."""


def phi_table(x, speed) -> np.ndarray:
    """Cumulative travel time int_0^x ds / speed(s) for each column of ``speed``."""
    speed = np.asarray(speed, dtype=float)
    return cumulative_trapezoid(1.0 / speed, x, axis=0, initial=0.0)


def ensemble_column(field2d, nodes, value) -> np.ndarray:
    """Linear interpolation (with linear extension) of a (nx, ne) field at an
    arbitrary ensemble value; returns the x-profile."""
    field2d = np.asarray(field2d, dtype=float)
    ne = nodes.size
    if ne == 1:
        return field2d[:, 0].copy()
    j = int(np.clip(np.searchsorted(nodes, value) - 1, 0, ne - 2))
    t = (value - nodes[j]) / (nodes[j + 1] - nodes[j])
    return (1 - t) * field2d[:, j] + t * field2d[:, j + 1]


def rho(params, x, eta, zeta) -> float:
    """xi-coordinate of the characteristic hypersurface at (x, eta, zeta), eta <= zeta."""
    if eta > zeta:
        raise ValueError("rho is only defined for eta <= zeta")
    g = params.grid
    xs = g.x
    mu_e = ensemble_column(params.mu, g.nodes, eta)
    mu_z = ensemble_column(params.mu, g.nodes, zeta)
    ph_e = phi_table(xs, mu_e)
    ph_z = phi_table(xs, mu_z)
    target = np.interp(x, xs, ph_e)
    return float(np.clip(np.interp(target, ph_z, xs), 0.0, x))


def segment_labels(phi_rows, phi_cols, rows, cols, diag_special=True):
    """Segment label per (x-index, xi-index, row, col).

    ``phi_rows[:, r]`` is the travel-time table of row r (eta-speed) and
    ``phi_cols[:, c]`` that of column c (zeta-speed); rows and columns are
    ordered so that a smaller index means a larger speed. Nodes on the
    diagonal of equal-index cells get SEG_DIAG when ``diag_special``.
    """
    pr = phi_rows[:, rows]  # (nx, R)
    pc = phi_cols[:, cols]  # (nx, C)
    nx = pr.shape[0]
    R, C = len(rows), len(cols)
    lab = np.full((nx, nx, R, C), SEG_C, dtype=np.int8)
    rr = np.asarray(rows)[:, None]
    cc = np.asarray(cols)[None, :]
    upper = rr < cc
    same = rr == cc
    # phi_c(xi) < phi_r(x) means the characteristic reaches xi = 0 first
    a = pc[None, :, None, :] < pr[:, None, :, None] * (1.0 - 1e-12) - 1e-15
    lab[:, :, upper] = np.where(a[:, :, upper], SEG_A, SEG_B)
    lab[:, :, same] = SEG_A
    if diag_special:
        idx = np.arange(nx)
        sub = lab[idx, idx]
        sub[:, same] = SEG_DIAG
        lab[idx, idx] = sub
    return lab


@dataclass
class CharacteristicPath:
    s: np.ndarray
    x: np.ndarray
    xi: np.ndarray
    face: str
    s_final: float
    crossings: list


def trace_characteristics(params, start, eta, zeta, family="K", ds=1e-3,
                          through_rho=False, s_max=50.0):
    """Integrate one characteristic by RK4 with bisection event location.

    family "K": dx/ds = -mu(x, eta), dxi/ds = lam(xi, zeta).
    family "L": dx/ds = eps mu(x, eta), dxi/ds = eps mu(xi, zeta) with
    eps = -1 for eta <= zeta and +1 otherwise.

    Terminal faces are "xi_eq_x", "xi_eq_0", "x_eq_1" and, for a K path
    starting below rho (eta <= zeta), "xi_eq_rho". With ``through_rho`` a K
    path continues through rho to the diagonal; the rho crossing is kept in
    ``crossings``.
    """
    g = params.grid
    xs = g.x
    mu_e = ensemble_column(params.mu, g.nodes, eta)
    mu_z = ensemble_column(params.mu, g.nodes, zeta)
    lam_z = ensemble_column(params.lam, g.nodes, zeta)
    x0, xi0 = map(float, start)
    if xi0 > x0 + 1e-14 or x0 > 1 + 1e-14 or xi0 < -1e-14:
        raise GeometryError("start point outside the triangle xi <= x")

    if family == "K":
        def f(p):
            return np.array([-np.interp(p[0], xs, mu_e), np.interp(p[1], xs, lam_z)])
    elif family == "L":
        eps = -1.0 if eta <= zeta else 1.0

        def f(p):
            return eps * np.array([np.interp(p[0], xs, mu_e), np.interp(p[1], xs, mu_z)])
    else:
        raise ValueError("family must be 'K' or 'L'")

    rho_on = eta <= zeta and eta != zeta
    if rho_on:
        ph_e, ph_z = phi_table(xs, mu_e), phi_table(xs, mu_z)

        def rho_of(xv):
            return np.interp(np.interp(xv, xs, ph_e), ph_z, xs)

    events = {"xi_eq_x": lambda p: p[0] - p[1]}
    if family == "L":
        if eta <= zeta:
            events["xi_eq_0"] = lambda p: p[1]
        else:
            events["x_eq_1"] = lambda p: 1.0 - p[0]
    if family == "K" and rho_on and xi0 < rho_of(x0) - 1e-14:
        events["xi_eq_rho"] = lambda p: rho_of(p[0]) - p[1]

    def rk4(p, hstep):
        k1 = f(p)
        k2 = f(p + 0.5 * hstep * k1)
        k3 = f(p + 0.5 * hstep * k2)
        k4 = f(p + hstep * k3)
        return p + hstep / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)

    p = np.array([x0, xi0])
    s = 0.0
    S, X, XI = [0.0], [x0], [xi0]
    crossings = []
    # a start point on a face terminates immediately
    for name, ev in events.items():
        if abs(ev(p)) < 1e-14 and name != "xi_eq_rho":
            return CharacteristicPath(np.array(S), np.array(X), np.array(XI), name, 0.0, crossings)
    while s < s_max:
        q = rk4(p, ds)
        hit = None
        for name, ev in events.items():
            if ev(p) > 0 >= ev(q) or ev(p) < 0 <= ev(q):
                lo, hi = 0.0, ds
                for _ in range(60):
                    mid = 0.5 * (lo + hi)
                    pm = rk4(p, mid)
                    if np.sign(ev(pm)) == np.sign(ev(p)):
                        lo = mid
                    else:
                        hi = mid
                    if (hi - lo) < 1e-10:
                        break
                tau = 0.5 * (lo + hi)
                if hit is None or tau < hit[1]:
                    hit = (name, tau)
        if hit is not None:
            name, tau = hit
            pe = rk4(p, tau)
            if name == "xi_eq_rho" and through_rho:
                crossings.append((s + tau, float(pe[0]), float(pe[1])))
                del events["xi_eq_rho"]
                p, s = q, s + ds
                S.append(s); X.append(p[0]); XI.append(p[1])
                continue
            s += tau
            S.append(s); X.append(pe[0]); XI.append(pe[1])
            return CharacteristicPath(np.array(S), np.array(X), np.array(XI), name, s, crossings)
        p, s = q, s + ds
        S.append(s); X.append(p[0]); XI.append(p[1])
    raise GeometryError("characteristic did not terminate within the s-budget")
