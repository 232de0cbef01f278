"""Step-function lifting between finite index sets and ensemble variables.

``lift`` embeds a k-vector as the step function sum_i b_i chi_((i-1)/k, i/k]
and ``project`` returns its cell means (the adjoint). Both act on fields
sampled at the cell-centered ensemble nodes of an :class:`EnsembleGrid`.
The module also builds continuum parameters from n+m parameters by anchor
interpolation, averaged 2x2 parameters, and mean-value samples of continuum
kernels.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import nnls

from .model import (AveragedParams, ContinuumParams, EnsembleGrid, NmParams,
                    StructuralError, validate_nm)

__all__ = [
    "ResolutionError",
    "cell_index",
    "lift_matrix",
    "projection_matrix",
    "lift",
    "project",
    "weighted_norm",
    "LiftedNmParams",
    "lift_params",
    "lift_state",
    "build_continuum",
    "build_averaged",
    "average_continuum",
    "closeness_norms",
    "sample_kernel_matrix",
    "sample_kernel_rows",
]


class ResolutionError(ValueError):
    """The ensemble grid is too coarse for the requested number of cells."""


def _nodes(grid_or_ne):
    if isinstance(grid_or_ne, EnsembleGrid):
        return grid_or_ne.nodes
    ne = int(grid_or_ne)
    return (np.arange(ne) + 0.5) / ne


def cell_index(nodes, k):
    """0-based index i of the cell ((i)/k, (i+1)/k] containing each node."""
    idx = np.ceil(np.asarray(nodes) * k - 1e-12).astype(int) - 1
    return np.clip(idx, 0, k - 1)


def lift_matrix(grid_or_ne, k) -> np.ndarray:
    """(ne, k) matrix evaluating the step embedding at ensemble nodes."""
    nodes = _nodes(grid_or_ne)
    E = np.zeros((nodes.size, k))
    E[np.arange(nodes.size), cell_index(nodes, k)] = 1.0
    return E


def projection_matrix(grid_or_ne, k) -> np.ndarray:
    """(k, ne) matrix of cell means under the midpoint rule.

    Each ensemble node stands for its own cell of width 1/ne; the weight of
    node l in target cell i is k times the overlap of the two cells, so a
    field that is piecewise constant on the ensemble cells is averaged
    exactly even when k does not divide ne.
    """
    nodes = _nodes(grid_or_ne)
    ne = nodes.size
    if k < 1:
        raise StructuralError("k must be positive")
    counts = np.bincount(cell_index(nodes, k), minlength=k)
    if k > ne or np.any(counts == 0):
        raise ResolutionError(f"ne={ne} ensemble nodes cannot resolve {k} cells")
    lo = np.arange(ne) / ne
    hi = lo + 1.0 / ne
    a = np.arange(k)[:, None] / k
    b = a + 1.0 / k
    overlap = np.clip(np.minimum(hi[None, :], b) - np.maximum(lo[None, :], a), 0.0, None)
    return k * overlap


def lift(values, grid) -> np.ndarray:
    """Step function of ``values`` sampled at the ensemble nodes."""
    values = np.atleast_1d(np.asarray(values, dtype=float))
    if values.ndim != 1 or values.size < 1:
        raise StructuralError("lift expects a non-empty 1-D array")
    return lift_matrix(grid, values.size) @ values


def project(field, k, axis=-1) -> np.ndarray:
    """Cell means of a field sampled at cell-centered nodes along ``axis``."""
    field = np.asarray(field, dtype=float)
    ne = field.shape[axis]
    if k >= 1 and ne % k == 0:
        # equal cells: sum then divide, so projecting a lifted basis vector is exact
        f = np.moveaxis(field, axis, -1)
        f = f.reshape(f.shape[:-1] + (k, ne // k)).sum(axis=-1) / (ne // k)
        return np.moveaxis(f, -1, axis)
    P = projection_matrix(ne, k)
    return np.moveaxis(np.tensordot(P, np.moveaxis(field, axis, 0), axes=(1, 0)), 0, axis)


def weighted_norm(b) -> float:
    """(1/k)-weighted Euclidean norm, the L2 norm of the step embedding."""
    b = np.asarray(b, dtype=float)
    return float(np.sqrt(np.mean(b ** 2)))


@dataclass(frozen=True)
class LiftedNmParams(ContinuumParams):
    """Piecewise-constant continuum realisation of an n+m system."""

    n: int = 0
    m: int = 0


def lift_params(params: NmParams, grid: EnsembleGrid) -> LiftedNmParams:
    """Realise every n+m parameter as a step function in the ensemble variables."""
    s = params.sample(grid.x)
    En = lift_matrix(grid, params.n)
    Em = lift_matrix(grid, params.m)

    def mat(A, left, right):
        return np.einsum("ya,abx,zb->xyz", left, A, right)

    return LiftedNmParams(
        grid=grid,
        lam=(En @ s.lam).T, lam_x=(En @ s.lam_x).T,
        mu=(Em @ s.mu).T, mu_x=(Em @ s.mu_x).T,
        sigma=mat(s.Sigma, En, En), W=mat(s.W, En, Em),
        theta=mat(s.Theta, Em, En), psi=mat(s.Psi, Em, Em),
        Q=En @ s.Q @ Em.T, R=Em @ s.R @ En.T,
        label=f"lifted {params.label}".strip(), n=params.n, m=params.m,
    )


def lift_state(u, v, ne):
    """Lift an n+m state ((nx, n), (nx, m)) to ensemble nodes."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    return u @ lift_matrix(ne, u.shape[1]).T, v @ lift_matrix(ne, v.shape[1]).T


def _anchor_interp(points, k, extrapolate=True):
    """(len(points), k) matrix interpolating anchors at i/k, i = 1..k.

    Piecewise linear between anchors; below 1/k the first segment is
    extended linearly (or held constant when ``extrapolate`` is False).
    """
    p = np.asarray(points, dtype=float)
    M = np.zeros((p.size, k))
    if k == 1:
        M[:, 0] = 1.0
        return M
    t = p * k  # anchor coordinate, anchors at 1..k
    lo = np.clip(np.floor(t).astype(int), 1, k - 1)
    frac = t - lo
    if not extrapolate:
        frac = np.clip(frac, 0.0, 1.0)
    rows = np.arange(p.size)
    M[rows, lo - 1] += 1.0 - frac
    M[rows, lo] += frac
    return M


def _fit_mu(mu_anchor, order):
    """Nonnegative coefficients a_l of mu = mu_m + sum a_l (1 - eta)^l per x."""
    m, nx = mu_anchor.shape
    if m == 1:
        return np.zeros((0, nx))
    eta = np.arange(1, m + 1) / m
    A = np.stack([(1.0 - eta) ** l for l in range(1, order + 1)], axis=1)
    coef = np.zeros((order, nx))
    for ix in range(nx):
        b = mu_anchor[:, ix] - mu_anchor[-1, ix]
        c, _ = nnls(A, b)
        coef[:, ix] = c
    if np.any(coef.sum(axis=0) <= 0):
        raise StructuralError("mu anchors admit no strictly decreasing monotone fit")
    return coef


def _diag_fill(pt):
    """Fill the diagonal of anchor matrices (..., m, m) by adjacent means."""
    m = pt.shape[-1]
    if m == 1:
        pt[..., 0, 0] = 0.0
        return pt
    idx = np.arange(m)
    left = np.where(idx > 0, idx - 1, idx + 1)
    right = np.where(idx < m - 1, idx + 1, idx - 1)
    pt[..., idx, idx] = 0.5 * (pt[..., idx, left] + pt[..., idx, right])
    return pt


def build_continuum(params: NmParams, grid: EnsembleGrid, order: int = 3) -> ContinuumParams:
    """Continuum parameters whose values at the anchors (i/n, j/m) equal the
    n+m entries.

    mu is fitted in the monotone form mu_m(x) + sum_l a_l(x)(1 - eta)^l with
    a_l >= 0 by nonnegative least squares; psi is psi_tilde times
    (mu(x, eta) - mu(x, zeta)) with psi_tilde interpolating
    psi_jp / (mu_j - mu_p). All other fields are multilinear in the ensemble
    variables and exact in x.
    """
    rep = validate_nm(params)
    if not rep.ok:
        raise StructuralError("n+m parameters violate the standing assumptions:\n" + rep.render())

    def build(g: EnsembleGrid) -> ContinuumParams:
        s = params.sample(g.x)
        n, m = params.n, params.m
        e = g.nodes
        In = _anchor_interp(e, n)
        Im = _anchor_interp(e, m)
        lam = (In @ s.lam).T
        lam_x = (In @ s.lam_x).T
        if np.any(lam <= 0):
            In0 = _anchor_interp(e, n, extrapolate=False)
            lam, lam_x = (In0 @ s.lam).T, (In0 @ s.lam_x).T
        coef = _fit_mu(s.mu, order)
        basis = np.stack([(1.0 - e) ** l for l in range(1, coef.shape[0] + 1)], axis=0)
        mu = s.mu[-1][:, None] + (coef.T @ basis if coef.size else 0.0)
        mu = np.broadcast_to(mu, (g.nx, g.ne)).copy()
        if params.mu_x is not None and coef.size:
            dcoef = np.gradient(coef, g.x, axis=1) if g.nx > 1 else np.zeros_like(coef)
            mu_x = s.mu_x[-1][:, None] + dcoef.T @ basis
        elif coef.size:
            mu_x = np.gradient(mu, g.x, axis=0)
        else:
            mu_x = np.broadcast_to(s.mu_x[-1][:, None], (g.nx, g.ne)).copy()

        def mat(A, left, right):
            return np.einsum("ya,abx,zb->xyz", left, A, right)

        den = s.mu[:, None, :] - s.mu[None, :, :]
        off = ~np.eye(m, dtype=bool)
        pt = np.zeros((m, m, g.nx))
        pt[off] = s.Psi[off] / den[off]
        pt = np.moveaxis(_diag_fill(np.moveaxis(pt, 2, 0)), 0, 2)
        psi_tilde = mat(pt, Im, Im)
        psi = psi_tilde * (mu[:, :, None] - mu[:, None, :])
        return ContinuumParams(
            grid=g, lam=lam, lam_x=lam_x, mu=mu, mu_x=mu_x,
            sigma=mat(s.Sigma, In, In), W=mat(s.W, In, Im),
            theta=mat(s.Theta, Im, In), psi=psi,
            Q=In @ s.Q @ Im.T, R=Im @ s.R @ In.T,
            psi_tilde=psi_tilde, builder=build,
            label=f"continuum of {params.label}".strip(),
        )

    return build(grid)


def build_averaged(params: NmParams, mean: str = "continuum", x=None,
                   ne_fine: int = 400) -> AveragedParams:
    """Averaged scalar parameters for the 2x2 approximation.

    ``mean="continuum"`` averages the continuum fields of
    :func:`build_continuum` over the ensemble variables; ``mean="index"``
    takes arithmetic means over the component indices. The realised
    closeness radius (largest deviation of any component from its average)
    is stored in ``eps_bar``.
    """
    if mean not in ("continuum", "index"):
        raise StructuralError("mean must be 'continuum' or 'index'")
    if x is None:
        x = EnsembleGrid().x
    s = params.sample(x)
    if mean == "continuum":
        n, m = params.n, params.m
        e = (np.arange(ne_fine) + 0.5) / ne_fine
        In, Im = _anchor_interp(e, n), _anchor_interp(e, m)
        wn, wm = In.mean(axis=0), Im.mean(axis=0)  # anchor weights of the ensemble mean
        coef = _fit_mu(s.mu, 3)
        mu_bar = s.mu[-1] + (np.sum(coef / np.arange(2, coef.shape[0] + 2)[:, None], axis=0)
                             if coef.size else 0.0)
        lam_bar = wn @ s.lam
        lam_bar_x = wn @ s.lam_x
        sig = np.einsum("a,abx,b->x", wn, s.Sigma, wn)
        w = np.einsum("a,abx,b->x", wn, s.W, wm)
        th = np.einsum("a,abx,b->x", wm, s.Theta, wn)
        q = float(wn @ s.Q @ wm)
        r = float(wm @ s.R @ wn)
        if coef.size:
            dcoef = np.gradient(coef, x, axis=1)
            mu_bar_x = s.mu_x[-1] + np.sum(dcoef / np.arange(2, coef.shape[0] + 2)[:, None], axis=0)
        else:
            mu_bar_x = s.mu_x[-1]
    else:
        lam_bar, lam_bar_x = s.lam.mean(axis=0), s.lam_x.mean(axis=0)
        mu_bar, mu_bar_x = s.mu.mean(axis=0), s.mu_x.mean(axis=0)
        sig, w, th = s.Sigma.mean(axis=(0, 1)), s.W.mean(axis=(0, 1)), s.Theta.mean(axis=(0, 1))
        q, r = float(s.Q.mean()), float(s.R.mean())
    eps = max(
        np.max(np.abs(s.lam - lam_bar)) + np.max(np.abs(s.lam_x - lam_bar_x)),
        np.max(np.abs(s.mu - mu_bar)) + np.max(np.abs(s.mu_x - mu_bar_x)),
        np.max(np.abs(s.Sigma - sig)), np.max(np.abs(s.W - w)), np.max(np.abs(s.Theta - th)),
        np.max(np.abs(s.Psi)), np.max(np.abs(s.Q - q)), np.max(np.abs(s.R - r)),
    )

    def tab(vals):
        vals = np.broadcast_to(np.asarray(vals, dtype=float), x.shape).copy()
        return lambda xq, vals=vals: np.interp(np.asarray(xq, float), x, vals)

    return AveragedParams(
        lam=tab(lam_bar), mu=tab(mu_bar), sigma=tab(sig), w=tab(w), theta=tab(th),
        q=q, r=r, lam_x=tab(lam_bar_x), mu_x=tab(mu_bar_x), eps_bar=float(eps),
    )


def average_continuum(params: ContinuumParams) -> AveragedParams:
    """Ensemble means of continuum fields as averaged 2x2 parameters.

    Means use the midpoint rule of the ensemble grid; x-dependent means are
    tabulated on the x-grid and interpolated linearly.
    """
    x = params.grid.x

    def tab(vals):
        vals = np.asarray(vals, dtype=float)
        return lambda xq, vals=vals: np.interp(np.asarray(xq, float), x, vals)

    return AveragedParams(
        lam=tab(params.lam.mean(axis=1)), mu=tab(params.mu.mean(axis=1)),
        sigma=tab(params.sigma.mean(axis=(1, 2))), w=tab(params.W.mean(axis=(1, 2))),
        theta=tab(params.theta.mean(axis=(1, 2))),
        q=float(np.mean(params.Q)), r=float(np.mean(params.R)),
        lam_x=tab(params.lam_x.mean(axis=1)), mu_x=tab(params.mu_x.mean(axis=1)),
    )


def closeness_norms(params: NmParams, cont: ContinuumParams) -> dict:
    """sup over x of the ensemble L2 distance between lifted and continuum fields.

    Both are evaluated on ``cont.grid``; the velocity entries include the
    x-derivative distance.
    """
    lp = lift_params(params, cont.grid)
    out = {}
    for name in ("lam", "mu"):
        d = np.sqrt(np.mean((getattr(lp, name) - getattr(cont, name)) ** 2, axis=1))
        dx = np.sqrt(np.mean((getattr(lp, name + "_x") - getattr(cont, name + "_x")) ** 2, axis=1))
        out[name] = float(np.max(d + dx))
    for name in ("sigma", "W", "theta", "psi"):
        d = np.sqrt(np.mean((getattr(lp, name) - getattr(cont, name)) ** 2, axis=(1, 2)))
        out[name] = float(np.max(d))
    for name in ("Q", "R"):
        out[name] = float(np.sqrt(np.mean((getattr(lp, name) - getattr(cont, name)) ** 2)))
    return out


def sample_kernel_matrix(kernels, n: int, m: int):
    """Cell means of K(1, xi, ., .) and L(1, xi, ., .).

    Returns ``(Kt, Lt)`` with shapes (nx, m, n) and (nx, m, m): the value at
    xi-index k is the mean of the continuum kernel over the (i, j) cell,
    i.e. nm (resp. m^2) times its integral.
    """
    ne = kernels.K1.shape[-1]
    if ne < max(n, m):
        raise ResolutionError(f"kernels on ne={ne} cannot be sampled to n={n}, m={m}")
    Pn, Pm = projection_matrix(ne, n), projection_matrix(ne, m)
    Kt = np.einsum("ia,kab,jb->kij", Pm, kernels.K1, Pn)
    Lt = np.einsum("ia,kab,jb->kij", Pm, kernels.L1, Pm)
    return Kt, Lt


def sample_kernel_rows(kernels, R, m: int):
    """Row means over eta-cells: R_rows (m, ne), K_rows (nx, m, ne), L_rows (nx, m, ne)."""
    R = np.asarray(R, dtype=float)
    ne = R.shape[0]
    if ne < m:
        raise ResolutionError(f"ne={ne} cannot resolve m={m} rows")
    Pm = projection_matrix(ne, m)
    return Pm @ R, np.einsum("ia,kab->kib", Pm, kernels.K1), np.einsum("ia,kab->kib", Pm, kernels.L1)
