"""Boundary control laws, the backstepping transform and target coefficients.

Five control laws are provided, all linear in the measured state:

continuum_exact
    continuum kernels acting on the continuum state.
micro_exact
    exact n+m kernels acting on the n+m state.
macro_kernels_micro_meas
    cell means of the continuum kernels acting on the n+m state.
macro_kernels_macro_meas
    eta-row means of the continuum kernels acting on a companion
    continuum state driven by the lifted controls.
averaged_macro
    averaged 2x2 kernels acting on ensemble averages of a companion
    continuum state; every control component is the same.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .kernels.sa import ContinuumKernels, Kernel2x2, NmKernels
from .lift import (lift_matrix, projection_matrix, sample_kernel_matrix,
                   sample_kernel_rows)
from .model import AveragedParams, ContinuumParams, StateField, StructuralError, trapezoid_weights
from .sim import Companion, DiscreteSystem, LinearFeedback

__all__ = [
    "VARIANTS",
    "ControllerSpec",
    "feedback_continuum",
    "control_continuum",
    "control_micro",
    "control_macro_meas",
    "backstep_transform",
    "inverse_transform",
    "InverseResult",
    "TargetCoeffs",
    "target_coeffs",
    "target_residual",
]

VARIANTS = (
    "continuum_exact",
    "micro_exact",
    "macro_kernels_micro_meas",
    "macro_kernels_macro_meas",
    "averaged_macro",
)


def _on_x(arr, x_src, x_dst):
    """Linear interpolation of ``arr`` along axis 0 from x_src to x_dst."""
    arr = np.asarray(arr, float)
    if x_src.size == x_dst.size and np.allclose(x_src, x_dst):
        return arr
    flat = arr.reshape(arr.shape[0], -1)
    out = np.empty((x_dst.size, flat.shape[1]))
    for j in range(flat.shape[1]):
        out[:, j] = np.interp(x_dst, x_src, flat[:, j])
    return out.reshape((x_dst.size,) + arr.shape[1:])


def feedback_continuum(kernels: ContinuumKernels, R, x=None) -> LinearFeedback:
    """Linear feedback of the continuum law on the ensemble grid of ``kernels``."""
    ne = kernels.grid.ne
    R = np.asarray(R, float)
    if R.shape != (ne, ne):
        raise StructuralError(f"R has shape {R.shape}, kernels need ({ne}, {ne})")
    x = kernels.x if x is None else x
    K1 = _on_x(kernels.K1, kernels.x, x)
    L1 = _on_x(kernels.L1, kernels.x, x)
    return LinearFeedback(Ku=K1 / ne, Lv=L1 / ne, Ru=R / ne)


@dataclass
class ControllerSpec:
    """Controller description consumed by the simulators.

    Parameters
    ----------
    variant : str
        One of ``VARIANTS``.
    kernels : ContinuumKernels, NmKernels or Kernel2x2
        Kernel source matching the variant.
    R : array
        Boundary coupling of the plant (n+m R matrix, or continuum R field
        for the continuum and macro-measurement variants).
    n, m : int
        Plant sizes for the micro variants.
    companion : ContinuumParams
        Continuum system simulated alongside the plant (macro variants).
    companion_init : (u0, v0)
        Initial state of the companion on its grid.
    averaged : AveragedParams
        Source of r_bar for the averaged variant.
    perturb : callable, optional
        ``perturb(t) -> (du, dv)`` additive measurement error.
    """

    variant: str
    kernels: object = None
    R: Optional[np.ndarray] = None
    n: int = 0
    m: int = 0
    companion: Optional[ContinuumParams] = None
    companion_init: Optional[tuple] = None
    averaged: Optional[AveragedParams] = None
    perturb: Optional[Callable] = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise StructuralError(f"unknown controller variant {self.variant!r}")
        need = {
            "continuum_exact": ContinuumKernels,
            "micro_exact": NmKernels,
            "macro_kernels_micro_meas": ContinuumKernels,
            "macro_kernels_macro_meas": ContinuumKernels,
            "averaged_macro": Kernel2x2,
        }[self.variant]
        if not isinstance(self.kernels, need):
            raise StructuralError(f"variant {self.variant} requires {need.__name__} kernels")
        if self.variant in ("macro_kernels_macro_meas", "averaged_macro"):
            if self.companion is None or self.companion_init is None:
                raise StructuralError(f"variant {self.variant} requires a companion continuum system")
        if self.variant == "averaged_macro" and self.averaged is None:
            raise StructuralError("averaged_macro requires AveragedParams for r_bar")

    def feedback(self, x, nu=None, nv=None) -> LinearFeedback:
        """Linear map from the measured fields on grid ``x`` to U."""
        v = self.variant
        k = self.kernels
        if v == "continuum_exact":
            R = np.zeros((k.grid.ne,) * 2) if self.R is None else self.R
            fb = feedback_continuum(k, R, x)
        elif v == "micro_exact":
            n, m = k.K1.shape[2], k.K1.shape[1]
            R = np.zeros((m, n)) if self.R is None else np.asarray(self.R, float)
            fb = LinearFeedback(Ku=_on_x(k.K1, k.x, x) / n, Lv=_on_x(k.L1, k.x, x) / m, Ru=R / n)
        elif v == "macro_kernels_micro_meas":
            n, m = self.n, self.m
            Kt, Lt = sample_kernel_matrix(k, n, m)
            R = np.zeros((m, n)) if self.R is None else np.asarray(self.R, float)
            fb = LinearFeedback(Ku=_on_x(Kt, k.x, x) / n, Lv=_on_x(Lt, k.x, x) / m, Ru=R / n)
        elif v == "macro_kernels_macro_meas":
            ne = k.grid.ne
            R = np.zeros((ne, ne)) if self.R is None else np.asarray(self.R, float)
            Rr, Kr, Lr = sample_kernel_rows(k, R, self.m)
            fb = LinearFeedback(Ku=_on_x(Kr, k.x, x) / ne, Lv=_on_x(Lr, k.x, x) / ne, Ru=Rr / ne)
        else:
            ne = self.companion.grid.ne
            m = self.m
            ones = np.full((m, ne), 1.0 / ne)
            Kb = np.interp(x, k.x, k.K1)
            Lb = np.interp(x, k.x, k.L1)
            fb = LinearFeedback(Ku=Kb[:, None, None] * ones, Lv=Lb[:, None, None] * ones,
                                Ru=float(self.averaged.r) * ones)
        fb.perturb = self.perturb
        return fb

    def build(self, plant: DiscreteSystem, grid):
        """Hook used by the simulators: (feedback, companion, B)."""
        fb = self.feedback(plant.x)
        comp = None
        if self.variant in ("macro_kernels_macro_meas", "averaged_macro"):
            cs = DiscreteSystem.from_continuum(self.companion)
            if cs.x.size != plant.x.size:
                raise StructuralError("companion and plant need the same x-grid")
            u0, v0 = self.companion_init
            comp = Companion(system=cs, u0=np.asarray(u0, float), v0=np.asarray(v0, float),
                             P=lift_matrix(self.companion.grid.ne, fb.n_out))
        return fb, comp, None


def _trap_x(n):
    return trapezoid_weights(n, 1.0 / (n - 1))


def control_continuum(kernels: ContinuumKernels, R, state: StateField) -> np.ndarray:
    """U(eta) = -int R u(1) + int int K(1) u + int int L(1) v on the ensemble grid."""
    if state.u.shape != (kernels.x.size, kernels.grid.ne):
        raise StructuralError("state and kernel grids differ")
    fb = feedback_continuum(kernels, R)
    return fb.evaluate(_trap_x(state.u.shape[0]), state.u, state.v)


def control_micro(spec: ControllerSpec, state: StateField) -> np.ndarray:
    """U in R^m for the micro variants, evaluated on an n+m state."""
    if spec.variant not in ("micro_exact", "macro_kernels_micro_meas"):
        raise StructuralError("control_micro needs a micro-measurement variant")
    nx = state.u.shape[0]
    x = np.linspace(0, 1, nx)
    fb = spec.feedback(x)
    if fb.Ku.shape[2] != state.u.shape[1] or fb.Lv.shape[2] != state.v.shape[1]:
        raise StructuralError("state dimensions do not match the controller")
    return fb.evaluate(_trap_x(nx), state.u, state.v, state.t)


def control_macro_meas(spec: ControllerSpec, macro_state: StateField) -> np.ndarray:
    """U in R^m for the macro-measurement variants on a continuum state."""
    if spec.variant not in ("macro_kernels_macro_meas", "averaged_macro"):
        raise StructuralError("control_macro_meas needs a macro-measurement variant")
    if macro_state is None:
        raise StructuralError("macro measurement missing")
    nx = macro_state.u.shape[0]
    fb = spec.feedback(np.linspace(0, 1, nx))
    return fb.evaluate(_trap_x(nx), macro_state.u, macro_state.v, macro_state.t)


def _volterra_weights(nx):
    """W[i, k]: trapezoid weights of int_0^{x_i} on nodes k <= i."""
    h = 1.0 / (nx - 1)
    W = np.tril(np.full((nx, nx), h))
    idx = np.arange(nx)
    W[:, 0] *= 0.5
    W[idx, idx] *= 0.5
    W[0, 0] = 0.0
    return W


def _apply_volterra(Kt, f, ne):
    """(T f)(x_i, eta) = int_0^{x_i} int K(x_i, xi, eta, zeta) f(xi, zeta) by quadrature.

    ``Kt`` has layout (xi, x, eta, zeta), ``f`` (nx, ne)."""
    nx = Kt.shape[0]
    Wv = _volterra_weights(nx)  # [i, k]
    # sum_k Wv[i, k] sum_z Kt[k, i, e, z] f[k, z]
    Kf = np.einsum("kiez,kz->kie", Kt, f, optimize=True)
    return np.einsum("ik,kie->ie", Wv, Kf) / ne


def backstep_transform(kernels: ContinuumKernels, state: StateField) -> StateField:
    """alpha = u, beta = v - int int K u - int int L v."""
    ne = kernels.grid.ne
    if state.u.shape != (kernels.x.size, ne):
        raise StructuralError("state and kernel grids differ")
    beta = state.v - _apply_volterra(kernels.Kt, state.u, ne) - _apply_volterra(kernels.Lt, state.v, ne)
    return StateField(kind="continuum", u=state.u.copy(), v=beta, t=state.t)


@dataclass
class InverseResult:
    state: StateField
    iterations: int
    residuals: list = field(default_factory=list)


def inverse_transform(kernels: ContinuumKernels, target: StateField, tol: float = 1e-8,
                      max_iter: int = 500, full_output: bool = False):
    """Recover (u, v) from (alpha, beta) by Picard iteration of
    v = beta + int int K alpha + int int L v.

    The iteration stops when the relative update falls below ``tol`` (and
    after one further sweep to reach the fixed point to roundoff level).
    """
    ne = kernels.grid.ne
    if target.u.shape != (kernels.x.size, ne):
        raise StructuralError("state and kernel grids differ")
    base = target.v + _apply_volterra(kernels.Kt, target.u, ne)
    v = base.copy()
    res = []
    scale = max(np.linalg.norm(base), 1e-300)
    for it in range(1, max_iter + 1):
        vn = base + _apply_volterra(kernels.Lt, v, ne)
        r = np.linalg.norm(vn - v) / scale
        res.append(float(r))
        v = vn
        if r < tol * 1e-3 or (r == 0.0):
            break
    else:
        raise RuntimeError(f"inverse transform did not converge in {max_iter} iterations")
    st = StateField(kind="continuum", u=target.u.copy(), v=v, t=target.t)
    if full_output:
        return InverseResult(state=st, iterations=it, residuals=res)
    return st


@dataclass
class TargetCoeffs:
    """Target-system coefficients on the x-grid ``x``.

    ``C_plus``, ``C_minus`` have layout (x, xi, y, zeta); ``G`` (x, eta, zeta)
    vanishes for zeta >= eta.
    """

    x: np.ndarray
    C_plus: np.ndarray
    C_minus: np.ndarray
    G: np.ndarray


def target_coeffs(kernels: ContinuumKernels, params: ContinuumParams, stride: int = 1) -> TargetCoeffs:
    """G from the kernels at xi = 0; C- by an implicit march of its Volterra
    equation in xi (from xi = x downward), then C+ by quadrature.

    ``stride`` subsamples the x-grid (the Volterra solve costs O(nx^3 ne^3)).
    """
    g = kernels.grid
    p = params.resample(g)
    ne = g.ne
    sel = np.arange(0, g.nx, stride)
    if sel[-1] != g.nx - 1:
        raise StructuralError("stride must divide nx - 1")
    x = g.x[sel]
    Kt = kernels.Kt[np.ix_(sel, sel)]
    Lt = kernels.Lt[np.ix_(sel, sel)]
    W = p.W[sel]
    nx = x.size
    h = x[1] - x[0]
    # G(x, eta, zeta) = L(x, 0) mu(0, zeta) - int K(x, 0, eta, chi) lam(0, chi) Q(chi, zeta)
    G = Lt[0] * p.mu[0][None, None, :] - np.einsum("iec,c,cz->iez", Kt[0], p.lam[0], p.Q) / ne
    G = G * np.tril(np.ones((ne, ne)), -1)[None]
    Cm = np.zeros((nx, nx, ne, ne))
    Cp = np.zeros((nx, nx, ne, ne))
    eye = np.eye(ne)
    for i in range(nx):
        Wi = W[i]  # (y, s)
        for k in range(i, -1, -1):
            Fm = Wi @ Lt[k, i] / ne
            Fp = Wi @ Kt[k, i] / ne
            if k < i:
                w = np.full(i - k + 1, h)
                w[0] = w[-1] = 0.5 * h
                # sum_{j=k+1..i} w_j C-(x_i, chi_j) L(chi_j, xi_k)
                Cs = Cm[i, k + 1:i + 1] * w[1:, None, None]
                acc = np.einsum("jys,jsz->yz", Cs, Lt[k, k + 1:i + 1]) / ne
                Fm = Fm + acc
                A = eye - (w[0] / ne) * Lt[k, k]
                Cm[i, k] = np.linalg.solve(A.T, Fm.T).T
                Cs = Cm[i, k:i + 1] * w[:, None, None]
                Fp = Fp + np.einsum("jys,jsz->yz", Cs, Kt[k, k:i + 1]) / ne
            else:
                Cm[i, k] = Fm
            Cp[i, k] = Fp
    return TargetCoeffs(x=x, C_plus=Cp, C_minus=Cm, G=G)


def target_residual(coeffs: TargetCoeffs, params: ContinuumParams, traj_states, times,
                    kernels: ContinuumKernels) -> float:
    """Relative grid-L2 residual of the target dynamics along a trajectory.

    The transformed states are differenced in time (central differences)
    and in x (upwind, matching the simulator) and compared against the
    right-hand sides of the target system.
    """
    g = kernels.grid
    p = params.resample(g)
    ne = g.ne
    stride = (g.nx - 1) // (coeffs.x.size - 1)
    sel = np.arange(0, g.nx, stride)
    tgt = [backstep_transform(kernels, s) for s in traj_states]
    A = np.array([t.u for t in tgt])[:, sel]
    B = np.array([t.v for t in tgt])[:, sel]
    x = coeffs.x
    h = x[1] - x[0]
    dt = np.gradient(times)
    At = np.gradient(A, times, axis=0)
    Bt = np.gradient(B, times, axis=0)
    Ax = np.gradient(A, h, axis=1)
    Bx = np.gradient(B, h, axis=1)
    lam, mu = p.lam[sel], p.mu[sel]
    Wv = _volterra_weights(x.size)
    ra, rb, na, nb = 0.0, 0.0, 0.0, 0.0
    for k in range(1, len(times) - 1):
        a, b = A[k], B[k]
        rhs_a = (np.einsum("xyz,xz->xy", p.sigma[sel], a) + np.einsum("xyz,xz->xy", p.W[sel], b)) / ne
        rhs_a += np.einsum("ij,ijyz,jz->iy", Wv, coeffs.C_plus, a) / ne
        rhs_a += np.einsum("ij,ijyz,jz->iy", Wv, coeffs.C_minus, b) / ne
        rhs_b = np.einsum("xez,z->xe", coeffs.G, b[0]) / ne
        r1 = At[k] + lam * Ax[k] - rhs_a
        r2 = Bt[k] - mu * Bx[k] - rhs_b
        ra += np.sum(r1[2:-2] ** 2)
        rb += np.sum(r2[2:-2] ** 2)
        na += np.sum((At[k] ** 2 + (lam * Ax[k]) ** 2)[2:-2])
        nb += np.sum((Bt[k] ** 2 + (mu * Bx[k]) ** 2)[2:-2])
    del dt
    return float(np.sqrt((ra + rb) / max(na + nb, 1e-300)))
