"""Continuum kernels by polynomial least-squares collocation.

For every eta node the kernels are polynomials of total degree ``order``
in (x, xi, zeta): one for K on the whole triangle and one for L on each
segment (a: zeta > eta below rho, b: zeta > eta above rho, c: zeta < eta).
On segment b the polynomial variable xi is replaced by the wedge
coordinate (x - xi)/(x - rho).
The eta rows are independent because the coupling integrals run over
zeta only. Coefficients minimise the weighted residual of the kernel PDEs
at interior collocation points together with the boundary conditions at
face points (weighted ``bc_weight`` times). The diagonal cell eta = zeta
has its own polynomial (there rho = x, so the whole triangle is of type a)
and its nodes on xi = x carry the filled diagonal datum, as in the
characteristic solver.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from numpy.polynomial import legendre as leg
from scipy.stats import qmc

from ..model import ContinuumParams, EnsembleGrid
from .geometry import SEG_A, SEG_B, SEG_C, SEG_DIAG, phi_table, segment_labels
from .sa import ContinuumKernels, SaHistory

__all__ = ["solve_continuum_kernels_ps", "CollocationWarning", "total_degree_indices"]


class CollocationWarning(RuntimeWarning):
    """The collocation system is ill-conditioned."""


def total_degree_indices(order: int, zmax: int | None = None) -> np.ndarray:
    """Multi-indices (a, b, c) with a + b + c <= order and c <= zmax."""
    zmax = order if zmax is None else min(order, zmax)
    return np.array([(a, b, c) for a in range(order + 1) for b in range(order + 1 - a)
                     for c in range(min(order - a - b, zmax) + 1)], dtype=int)


def _vander(t, order):
    """Legendre values and derivatives on [0, 1] (mapped to [-1, 1])."""
    s = 2.0 * np.asarray(t, float) - 1.0
    V = leg.legvander(s, order)
    dV = np.zeros_like(V)
    for d in range(1, order + 1):
        c = np.zeros(order + 1)
        c[d] = 1.0
        dV[..., d] = 2.0 * leg.legval(s, leg.legder(c))
    return V, dV


def _interp_x(xg, field, pts):
    """Linear interpolation along axis 0 of ``field`` at the points ``pts``."""
    f = np.asarray(field, float)
    flat = f.reshape(f.shape[0], -1)
    out = np.empty((pts.size, flat.shape[1]))
    for j in range(flat.shape[1]):
        out[:, j] = np.interp(pts, xg, flat[:, j])
    return out.reshape((pts.size,) + f.shape[1:])


@dataclass
class _Row:
    """Collocation data for one eta node."""

    e: int
    blocks: dict        # name -> (offset, indices)
    ncols: int


def _blocks(order, e, ne):
    n_up = ne - 1 - e   # zeta nodes above eta
    n_dn = e            # zeta nodes below eta
    blocks = {}
    off = 0
    # "d" is the diagonal cell zeta = eta (rho = x, no b part)
    for name, cnt in (("K", ne), ("d", 1), ("a", n_up), ("b", n_up), ("c", n_dn)):
        if cnt == 0:
            continue
        idx = total_degree_indices(order, cnt - 1)
        blocks[name] = (off, idx)
        off += len(idx)
    return _Row(e=e, blocks=blocks, ncols=off)


class _Assembler:
    """Builds design rows for one eta node.

    Block "b" uses the wedge coordinate q = (x - xi) / (x - rho) in place of
    xi: along the thin wedges rho <= xi <= x of zeta close to eta the kernel
    varies on the scale of the wedge width, which is smooth in q but not in
    xi. All other blocks use xi itself.
    """

    def __init__(self, params: ContinuumParams, order: int, row: _Row):
        self.p = params
        self.order = order
        self.row = row
        g = params.grid
        self.xg = g.x
        self.nodes = g.nodes
        self.ne = g.ne
        self.Vz, _ = _vander(self.nodes, order)  # (ne, N+1)
        self.phi = phi_table(g.x, params.mu)
        self.ratio = params.diag_ratio()

    def rho(self, x, zeta_idx):
        """rho(x, eta_e, zeta) for an array of x and one zeta node."""
        return _rho(self.xg, self.phi, self.row.e, zeta_idx, x)

    def coord(self, name, x, xi, j):
        """Second polynomial variable q and its partial derivatives (q_x, q_xi)."""
        if name != "b":
            return xi, np.zeros_like(xi), np.ones_like(xi)
        p, e = self.p, self.row.e
        r = self.rho(x, j)
        w = np.maximum(x - r, 1e-12)
        q = np.clip((x - xi) / w, 0.0, 1.0)
        # d rho / dx = mu(rho, zeta) / mu(x, eta)
        rx = np.interp(r, self.xg, p.mu[:, j]) / np.interp(x, self.xg, p.mu[:, e])
        return q, (1.0 - q * (1.0 - rx)) / w, -1.0 / w

    def _place(self, name, fx, fq, fz, out):
        """out[:, cols of block] += fx[:, a] fq[:, b] fz[:, c]."""
        if name not in self.row.blocks:
            return
        off, idx = self.row.blocks[name]
        out[:, off:off + len(idx)] += fx[:, idx[:, 0]] * fq[:, idx[:, 1]] * fz[:, idx[:, 2]]

    def _seg_of(self, x, xi, j):
        """Segment of L at zeta node j for points (x, xi)."""
        e = self.row.e
        if j < e:
            return np.full(x.shape, SEG_C)
        if j == e:
            return np.full(x.shape, SEG_DIAG)
        return np.where(xi < self.rho(x, j), SEG_A, SEG_B)

    def _coupling(self, x, xi, coefK, coefL, A):
        """Subtract (1/ne) sum_j K(., chi_j) coefK[:, j] + L(., chi_j) coefL[:, j]."""
        Vx, _ = _vander(x, self.order)
        Vxi, _ = _vander(xi, self.order)
        self._place("K", Vx, Vxi, -(coefK @ self.Vz) / self.ne, A)
        seg = np.stack([self._seg_of(x, xi, j) for j in range(self.ne)], axis=1)  # (P, ne)
        for name, code in (("a", SEG_A), ("c", SEG_C), ("d", SEG_DIAG)):
            mask = seg == code
            if mask.any() and name in self.row.blocks:
                self._place(name, Vx, Vxi, -((coefL * mask) @ self.Vz) / self.ne, A)
        mask = seg == SEG_B
        if mask.any() and "b" in self.row.blocks:
            off, idx = self.row.blocks["b"]
            T = np.zeros((x.size, self.order + 1, self.order + 1))
            for j in np.flatnonzero(mask.any(axis=0)):
                wj = coefL[:, j] * mask[:, j] / self.ne
                Vq, _ = _vander(self.coord("b", x, xi, j)[0], self.order)
                T += (wj[:, None] * Vq)[:, :, None] * self.Vz[j][None, None, :]
            A[:, off:off + len(idx)] -= Vx[:, idx[:, 0]] * T[:, idx[:, 1], idx[:, 2]]

    def k_equation(self, x, xi, z):
        """mu(x,eta) K_x - lam(xi,zeta) K_xi - lam_xi K - couplings = 0."""
        p, e = self.p, self.row.e
        P = x.size
        A = np.zeros((P, self.row.ncols))
        Vx, dVx = _vander(x, self.order)
        Vxi, dVxi = _vander(xi, self.order)
        Vz = np.broadcast_to(self.Vz[z], (P, self.order + 1))
        mu_e = np.interp(x, self.xg, p.mu[:, e])[:, None]
        lam_z = np.interp(xi, self.xg, p.lam[:, z])[:, None]
        lamx_z = np.interp(xi, self.xg, p.lam_x[:, z])[:, None]
        self._place("K", mu_e * dVx, Vxi, Vz, A)
        self._place("K", Vx, -lam_z * dVxi, Vz, A)
        self._place("K", -lamx_z * Vx, Vxi, Vz, A)
        sig = _interp_x(self.xg, p.sigma[:, :, z], xi)   # (P, ne) over chi
        th = _interp_x(self.xg, p.theta[:, :, z], xi)
        self._coupling(x, xi, sig, th, A)
        return A, np.zeros(P)

    def l_equation(self, name, x, xi, z):
        """mu(x,eta) L_x + mu(xi,zeta) L_xi + mu_xi L - couplings = 0."""
        p, e = self.p, self.row.e
        P = x.size
        A = np.zeros((P, self.row.ncols))
        Vx, dVx = _vander(x, self.order)
        q, qx, qxi = self.coord(name, x, xi, z)
        Vq, dVq = _vander(q, self.order)
        Vz = np.broadcast_to(self.Vz[z], (P, self.order + 1))
        mu_e = np.interp(x, self.xg, p.mu[:, e])[:, None]
        mu_z = np.interp(xi, self.xg, p.mu[:, z])[:, None]
        mux_z = np.interp(xi, self.xg, p.mu_x[:, z])[:, None]
        self._place(name, mu_e * dVx, Vq, Vz, A)
        self._place(name, Vx, (mu_e * qx[:, None] + mu_z * qxi[:, None]) * dVq, Vz, A)
        self._place(name, mux_z * Vx, Vq, Vz, A)
        W = _interp_x(self.xg, p.W[:, :, z], xi)
        ps = _interp_x(self.xg, p.psi[:, :, z], xi)
        self._coupling(x, xi, W, ps, A)
        return A, np.zeros(P)

    def value_rows(self, name, x, xi, z):
        P = x.size
        A = np.zeros((P, self.row.ncols))
        Vx, _ = _vander(x, self.order)
        Vq, _ = _vander(self.coord(name, x, xi, z)[0], self.order)
        self._place(name, Vx, Vq, np.broadcast_to(self.Vz[z], (P, self.order + 1)), A)
        return A

    def b0_rows(self, name, x, z):
        """L(x, 0, zeta) - (1/mu(0,zeta)) int K(x, 0, chi) lam(0, chi) Q(chi, zeta) = 0."""
        p = self.p
        P = x.size
        A = self.value_rows(name, x, np.zeros(P), z)
        Vx, _ = _vander(x, self.order)
        V0, _ = _vander(np.zeros(P), self.order)
        coef = p.lam[0] * p.Q[:, z] / (self.ne * p.mu[0, z])  # over chi
        S = np.broadcast_to(coef @ self.Vz, (P, self.order + 1))
        self._place("K", Vx, V0, -S, A)
        return A


def _rho(xg, phi, e, j, x):
    t = np.interp(x, xg, phi[:, e])
    return np.clip(np.interp(t, phi[:, j], xg), 0.0, x)


def _triangle_points(npts, seed):
    """Quasi-random points (x, xi) with 0 <= xi <= x <= 1."""
    s = qmc.Sobol(d=2, scramble=True, seed=seed).random(npts)
    x = np.maximum(s[:, 0], s[:, 1])
    xi = np.minimum(s[:, 0], s[:, 1])
    return x, xi


def _solve_row(params, order, e, n_int, n_bc, bc_weight, seed, rcond):
    ne = params.grid.ne
    row = _blocks(order, e, ne)
    asm = _Assembler(params, order, row)
    blocks_A, blocks_b = [], []

    def add(A, b, w=1.0):
        blocks_A.append(w * A)
        blocks_b.append(w * b)

    edge = np.linspace(0.0, 1.0, n_bc)
    for z in range(ne):
        x, xi = _triangle_points(n_int, seed + 7919 * z + e)
        add(*asm.k_equation(x, xi, z))
        bcK = -params.theta[:, e, z] / (params.lam[:, z] + params.mu[:, e])
        add(asm.value_rows("K", edge, edge, z), np.interp(edge, params.grid.x, bcK), bc_weight)
        ratio = np.interp(edge, params.grid.x, asm.ratio[:, e, z])
        if z < e:
            add(*asm.l_equation("c", x, xi, z))
            add(asm.value_rows("c", edge, edge, z), ratio, bc_weight)
            add(asm.value_rows("c", np.ones(n_bc), edge, z), ratio, bc_weight)
        elif z == e:
            add(*asm.l_equation("d", x, xi, z))
            add(asm.b0_rows("d", edge, z), np.zeros(n_bc), bc_weight)
        else:
            u, t = qmc.Sobol(d=2, scramble=True, seed=seed + 104729 + 7919 * z + e).random(n_int).T
            r = asm.rho(u, z)
            add(*asm.l_equation("a", u, t * r, z))
            add(asm.b0_rows("a", edge, z), np.zeros(n_bc), bc_weight)
            add(*asm.l_equation("b", u, r + t * (u - r), z))
            add(asm.value_rows("b", edge, edge, z), ratio, bc_weight)
    A = np.vstack(blocks_A)
    b = np.concatenate(blocks_b)
    # column scaling for conditioning
    scale = np.linalg.norm(A, axis=0)
    scale[scale == 0] = 1.0
    coef, _, rank, sv = np.linalg.lstsq(A / scale, b, rcond=rcond)
    coef = coef / scale
    res = float(np.linalg.norm(A @ coef - b) / max(np.linalg.norm(b), 1e-300))
    cond = float(sv[0] / sv[-1]) if sv.size and sv[-1] > 0 else float("inf")
    return row, coef, res, cond, int(rank)


def _coef_tensor(row, coef, order, name):
    off, idx = row.blocks[name]
    C = np.zeros((order + 1,) * 3)
    C[idx[:, 0], idx[:, 1], idx[:, 2]] = coef[off:off + len(idx)]
    return C


def _evaluate(row, coef, order, name, Vx, Vxi, Vz):
    """Values on (x, xi, zeta) grids: einsum over the total-degree index set."""
    C = _coef_tensor(row, coef, order, name)
    T = np.einsum("abc,zc->abz", C, Vz)
    T = np.einsum("abz,kb->akz", T, Vxi)
    return np.einsum("akz,ia->ikz", T, Vx)  # (x, xi, zeta)


def _evaluate_wedge(row, coef, order, x, phi, Vx, Vz, mask_of):
    """Block b on the grid: for zeta node j the second variable is
    q = (x - xi)/(x - rho). ``mask_of(j)`` selects the (x, xi) nodes."""
    C = _coef_tensor(row, coef, order, "b")
    nx = x.size
    out = np.zeros((nx, nx, Vz.shape[0]))
    for j in range(row.e + 1, Vz.shape[0]):
        m = mask_of(j)
        if not m.any():
            continue
        ii, kk = np.nonzero(m)
        r = _rho(x, phi, row.e, j, x[ii])
        q = np.clip((x[ii] - x[kk]) / np.maximum(x[ii] - r, 1e-12), 0.0, 1.0)
        Vq, _ = _vander(q, order)
        M = np.einsum("abc,c->ab", C, Vz[j])
        out[ii, kk, j] = np.sum((Vx[ii] @ M) * Vq, axis=1)
    return out


def solve_continuum_kernels_ps(params: ContinuumParams, order: int = 10,
                               grid: EnsembleGrid | None = None, n_int: int = 128,
                               n_bc: int = 24, bc_weight: float = 10.0, seed: int = 0,
                               cond_limit: float = 1e12, rcond: float | None = None) -> ContinuumKernels:
    """Continuum kernels as piecewise polynomials of total degree ``order``.

    Parameters
    ----------
    params : ContinuumParams
    order : int
        Total degree in (x, xi, zeta) of each polynomial.
    grid : EnsembleGrid, optional
        Output grid (defaults to ``params.grid``).
    n_int, n_bc : int
        Interior collocation points per (segment, zeta node) and face points
        per boundary condition and zeta node.
    bc_weight : float
        Weight of boundary rows relative to PDE rows.
    seed : int
        Seed of the scrambled Sobol collocation points.
    cond_limit : float
        Condition number above which a ``CollocationWarning`` is issued.

    Returns
    -------
    ContinuumKernels
        ``method == "ps"``; ``info`` holds the per-row relative residuals,
        condition numbers and ranks.
    """
    grid = params.grid if grid is None else grid
    p = params.resample(grid)
    nx, ne = grid.nx, grid.ne
    x = grid.x
    Vx, _ = _vander(x, order)
    Vz, _ = _vander(grid.nodes, order)
    phi = phi_table(x, p.mu)
    lab = segment_labels(phi, phi, np.arange(ne), np.arange(ne), True)  # (x, xi, r, c)
    Kt = np.zeros((nx, nx, ne, ne))
    Lt = np.zeros((nx, nx, ne, ne))
    ratio = p.diag_ratio()
    tri = np.tri(nx, dtype=bool)  # [i, k] k <= i
    res, conds, ranks = [], [], []
    for e in range(ne):
        row, coef, r, cnd, rk = _solve_row(p, order, e, n_int, n_bc, bc_weight, seed, rcond)
        res.append(r)
        conds.append(cnd)
        ranks.append(rk)
        Kv = _evaluate(row, coef, order, "K", Vx, Vx, Vz)
        Lv = np.zeros((nx, nx, ne))
        for name, code in (("a", SEG_A), ("c", SEG_C)):
            if name in row.blocks:
                vals = _evaluate(row, coef, order, name, Vx, Vx, Vz)
                m = lab[:, :, e, :] == code
                m[:, :, e] = False
                Lv[m] = vals[m]
        if "b" in row.blocks:
            vals = _evaluate_wedge(row, coef, order, x, phi, Vx, Vz,
                                   lambda j: lab[:, :, e, j] == SEG_B)
            m = lab[:, :, e, :] == SEG_B
            Lv[m] = vals[m]
        vals = _evaluate(row, coef, order, "d", Vx, Vx, Vz)
        Lv[:, :, e] = vals[:, :, e]
        # nodes xi = x of the diagonal cell carry the boundary datum
        m = lab[:, :, e, :] == SEG_DIAG
        Lv[m] = np.broadcast_to(ratio[None, :, e, :], (nx, nx, ne))[m]
        Kv[~tri] = 0.0
        Lv[~tri] = 0.0
        Kt[:, :, e, :] = Kv.transpose(1, 0, 2)
        Lt[:, :, e, :] = Lv.transpose(1, 0, 2)
    worst = int(np.argmax(conds))
    if conds[worst] > cond_limit:
        warnings.warn(f"collocation system ill-conditioned (cond {conds[worst]:.2e} on row {worst}, "
                      f"relative residual {res[worst]:.2e})", CollocationWarning, stacklevel=2)
    labels_t = np.ascontiguousarray(lab.transpose(1, 0, 2, 3))
    return ContinuumKernels(grid=grid, Kt=Kt, Lt=Lt, labels_t=labels_t, method="ps", order=order,
                            history=SaHistory(),
                            info={"residual": res, "cond": conds, "rank": ranks,
                                  "bc_weight": bc_weight, "n_int": n_int})
