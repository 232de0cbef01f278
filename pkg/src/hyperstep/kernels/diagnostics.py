"""Residual checks for solved continuum kernels.

All norms are the sup over the relevant (x, xi) nodes of the L2 norm over
the ensemble pair (eta, zeta), with the midpoint rule of the ensemble grid.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..model import ContinuumParams
from .geometry import phi_table
from .sa import ContinuumKernels

__all__ = [
    "BoundaryResiduals",
    "boundary_residuals",
    "k_jump",
    "interior_residual",
    "kernel_gap",
]


@dataclass
class BoundaryResiduals:
    """Residuals of the four boundary conditions of the kernel equations."""

    K_diag: float   # K(x, x) = -theta / (lam(x, zeta) + mu(x, eta))
    L_diag: float   # L(x, x) = psi / (mu(x, zeta) - mu(x, eta))
    L_xi0: float    # L(x, 0) = (1/mu(0, zeta)) int K(x, 0, chi) lam(0, chi) Q(chi, zeta)
    L_x1: float     # L(1, xi) = artificial datum, zeta < eta

    @property
    def max(self) -> float:
        return max(self.K_diag, self.L_diag, self.L_xi0, self.L_x1)

    def as_dict(self) -> dict:
        return {"K_diag": self.K_diag, "L_diag": self.L_diag,
                "L_xi0": self.L_xi0, "L_x1": self.L_x1}


def _rms(A, mask=None):
    """L2 over the last two axes, with entries outside ``mask`` dropped."""
    A = np.asarray(A, dtype=float)
    if mask is not None:
        A = np.where(mask, A, 0.0)
    return np.sqrt(np.mean(A ** 2, axis=(-2, -1)))


def boundary_residuals(kernels: ContinuumKernels, params: ContinuumParams) -> BoundaryResiduals:
    p = params.resample(kernels.grid)
    ne = kernels.grid.ne
    idx = np.arange(kernels.grid.nx)
    K, L = kernels.K, kernels.L
    lam, mu = p.lam, p.mu
    ratio = p.diag_ratio()
    bcK = -p.theta / (lam[:, None, :] + mu[:, :, None])
    r_K = _rms(K[idx, idx] - bcK).max()
    r_Ld = _rms(L[idx, idx] - ratio).max()
    upper = np.triu(np.ones((ne, ne), dtype=bool))
    lower = ~upper
    # L(x, 0) for eta <= zeta; x = 0 belongs to the diagonal face
    K0 = K[1:, 0]                                       # (x, eta, chi)
    b0 = np.einsum("xec,c,cz->xez", K0, lam[0], p.Q) / ne / mu[0][None, None, :]
    r_0 = _rms(L[1:, 0] - b0, upper).max() if K0.size else 0.0
    # L(1, xi) for zeta < eta, xi < 1
    r_1 = _rms(L[-1, :-1] - ratio[:-1], lower).max()
    return BoundaryResiduals(float(r_K), float(r_Ld), float(r_0), float(r_1))


def k_jump(kernels: ContinuumKernels, params: ContinuumParams, order: int = 1):
    """Jump across xi = rho(x, eta, zeta), eta < zeta, of K and of L.

    Each side is extrapolated to rho by the polynomial of degree ``order``
    through the ``order + 1`` nearest grid nodes on that side; (x, eta, zeta)
    with too few nodes on a side are skipped. Returns (jump_K, jump_L) as the
    sup over x of the L2 norm over (eta, zeta).
    """
    g = kernels.grid
    p = params.resample(g)
    x = g.x
    ne = g.ne
    q = order + 1
    phi = phi_table(x, p.mu)
    K, L = kernels.K, kernels.L
    jK = np.zeros((x.size, ne, ne))
    jL = np.zeros((x.size, ne, ne))
    for r in range(ne):
        for c in range(r + 1, ne):
            rho = np.interp(phi[:, r], phi[:, c], x)
            for i in range(x.size):
                k = int(np.searchsorted(x, rho[i], side="right")) - 1  # x[k] <= rho < x[k+1]
                if k + 1 - q < 0 or k + q > i:
                    continue
                lo = np.arange(k + 1 - q, k + 1)
                hi = np.arange(k + 1, k + 1 + q)
                # Lagrange weights at rho from each side
                wl = _lagrange(x[lo], rho[i])
                wh = _lagrange(x[hi], rho[i])
                jK[i, r, c] = K[i, hi, r, c] @ wh - K[i, lo, r, c] @ wl
                jL[i, r, c] = L[i, hi, r, c] @ wh - L[i, lo, r, c] @ wl
    return float(_rms(jK).max()), float(_rms(jL).max())


def _lagrange(nodes, t):
    w = np.ones(nodes.size)
    for a in range(nodes.size):
        for b in range(nodes.size):
            if a != b:
                w[a] *= (t - nodes[b]) / (nodes[a] - nodes[b])
    return w


def interior_residual(kernels: ContinuumKernels, params: ContinuumParams, band: int = 2):
    """Finite-difference residual of the kernel PDEs in grid L2 over T x [0,1]^2.

    Centered differences in x and xi on interior nodes; nodes within ``band``
    grid cells of the diagonal, of xi = 0, of x = 1 or of xi = rho are left
    out for L (and of the faces for K), since L may jump across rho.
    Returns (res_K, res_L).
    """
    g = kernels.grid
    p = params.resample(g)
    h, ne = g.h, g.ne
    K, L = kernels.K, kernels.L
    nx = g.nx
    lam, lam_x, mu, mu_x = p.lam, p.lam_x, p.mu, p.mu_x
    I, J = np.meshgrid(np.arange(nx), np.arange(nx), indexing="ij")
    inner = (J >= band) & (I - J >= band) & (I <= nx - 1 - band)
    sl = (slice(1, -1), slice(1, -1))
    Kx = (K[2:, 1:-1] - K[:-2, 1:-1]) / (2 * h)
    Kxi = (K[1:-1, 2:] - K[1:-1, :-2]) / (2 * h)
    Lx = (L[2:, 1:-1] - L[:-2, 1:-1]) / (2 * h)
    Lxi = (L[1:-1, 2:] - L[1:-1, :-2]) / (2 * h)
    Kc, Lc = K[sl], L[sl]
    X = slice(1, -1)
    mu_e = mu[X][:, None, :, None]
    lam_z = lam[X][None, :, None, :]
    lamx_z = lam_x[X][None, :, None, :]
    mu_z = mu[X][None, :, None, :]
    mux_z = mu_x[X][None, :, None, :]
    sig = p.sigma[X]   # (xi, chi, zeta)
    th = p.theta[X]
    W = p.W[X]
    ps = p.psi[X]
    cK = (np.einsum("axec,xcz->axez", Kc, sig) + np.einsum("axec,xcz->axez", Lc, th)) / ne
    cL = (np.einsum("axec,xcz->axez", Kc, W) + np.einsum("axec,xcz->axez", Lc, ps)) / ne
    rK = mu_e * Kx - lam_z * Kxi - lamx_z * Kc - cK
    rL = mu_e * Lx + mu_z * Lxi + mux_z * Lc - cL
    m = inner[sl]
    # exclude L nodes within ``band`` cells of a label change (the rho surface)
    lab = kernels.labels
    near = np.zeros(lab.shape, dtype=bool)
    for s in range(1, band + 1):
        for ax in (0, 1):
            d = np.diff(lab, n=1, axis=ax) != 0
            d = np.concatenate([d, np.zeros_like(d.take([0], axis=ax))], axis=ax)
            near |= np.roll(d, s - 1, axis=ax) | np.roll(d, -s, axis=ax)
    near = near[sl]
    w = m.sum() * ne * ne
    res_K = np.sqrt(np.sum(np.where(m[:, :, None, None], rK, 0.0) ** 2) / max(w, 1))
    mL = m[:, :, None, None] & ~near
    res_L = np.sqrt(np.sum(np.where(mL, rL, 0.0) ** 2) / max(mL.sum(), 1))
    return float(res_K), float(res_L)


def kernel_gap(a: ContinuumKernels, b: ContinuumKernels):
    """sup over (x, xi) of the L2 gap over (eta, zeta) for K and for L.

    ``b`` may sit on a finer x-grid whose nodes contain those of ``a``.
    """
    na, nb = a.grid.nx, b.grid.nx
    if (nb - 1) % (na - 1):
        raise ValueError("x-grids are not nested")
    s = (nb - 1) // (na - 1)
    tri = np.tri(na, dtype=bool)
    out = []
    for A, B in ((a.K, b.K), (a.L, b.L)):
        d = _rms(A - B[::s, ::s])
        out.append(float(d[tri].max()))
    return tuple(out)
