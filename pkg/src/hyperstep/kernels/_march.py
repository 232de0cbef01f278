"""Compiled marching loops for one successive-approximation sweep.

All 4-D arrays use the layout (xi-index k, x-index i, row r, col c) and
only the triangle k <= i is touched. Row r carries the eta-speed
``mu[:, rows[r]]``, column c the zeta-speed (``lam[:, c]`` for K,
``mu[:, c]`` for L). Integrands are integrated along characteristics with
the trapezoid rule, feet between grid nodes are interpolated linearly and
characteristics that leave through the diagonal pick up the boundary data
there.
"""
from __future__ import annotations

import numpy as np
from numba import njit

SEG_A, SEG_B, SEG_C, SEG_DIAG = 0, 1, 2, 3


@njit(cache=True, inline="always")
def _lin(col, h, pos):
    n = col.shape[0]
    p = pos / h
    j = int(np.floor(p))
    if j < 0:
        j = 0
    elif j > n - 2:
        j = n - 2
    f = p - j
    return (1.0 - f) * col[j] + f * col[j + 1]


@njit(cache=True)
def march_K(h, lam, mu, phi, rows, bcK, GK, Knew):
    """K along dx/ds = -mu(x, eta), dxi/ds = lam(xi, zeta), from the diagonal.

    ``bcK`` (nx, R, C) is the diagonal datum, ``GK`` (nx, nx, R, C) the
    integrand lam_xi K + coupling, evaluated on the previous iterate.
    """
    nx = lam.shape[0]
    R = rows.shape[0]
    C = lam.shape[1]
    for r in range(R):
        for c in range(C):
            Knew[0, 0, r, c] = bcK[0, r, c]
    for i in range(1, nx):
        xi_ = i * h
        for r in range(R):
            rr = rows[r]
            ds = phi[i, rr] - phi[i - 1, rr]
            mu_i = mu[i, rr]
            for c in range(C):
                Knew[i, i, r, c] = bcK[i, r, c]
                for k in range(i):
                    xk = k * h
                    l0 = lam[k, c]
                    lm = _lin(lam[:, c], h, xk + 0.5 * l0 * ds)
                    xf = xk + lm * ds
                    if xf < (i - 1) * h - 1e-13:
                        p = xf / h
                        j = int(np.floor(p))
                        if j > i - 2:
                            j = i - 2
                        if j < 0:
                            j = 0
                        f = p - j
                        Kf = (1 - f) * Knew[j, i - 1, r, c] + f * Knew[j + 1, i - 1, r, c]
                        Gf = (1 - f) * GK[j, i - 1, r, c] + f * GK[j + 1, i - 1, r, c]
                        Knew[k, i, r, c] = Kf + 0.5 * ds * (GK[k, i, r, c] + Gf)
                    else:
                        s0 = (xi_ - xk) / (mu_i + l0)
                        xm = xi_ - 0.5 * mu_i * s0
                        km = xk + 0.5 * l0 * s0
                        sp = _lin(mu[:, rr], h, xm) + _lin(lam[:, c], h, km)
                        s = (xi_ - xk) / sp
                        z = xk + _lin(lam[:, c], h, km) * s
                        pz = z / h
                        jz = int(np.floor(pz))
                        if jz > i - 1:
                            jz = i - 1
                        if jz < 0:
                            jz = 0
                        fz = pz - jz
                        Kd = (1 - fz) * bcK[jz, r, c] + fz * bcK[jz + 1, r, c]
                        Gd = (1 - fz) * GK[jz, jz, r, c] + fz * GK[jz + 1, jz + 1, r, c]
                        Knew[k, i, r, c] = Kd + 0.5 * s * (GK[k, i, r, c] + Gd)


@njit(cache=True, inline="always")
def _seg_interp(V, H, lab, k, lo, hi, p, T, r, c):
    """Interpolate V and H on xi-line k at fractional x-index p, using only
    nodes of segment T where possible (one-sided extrapolation otherwise)."""
    j = int(np.floor(p))
    if j < lo:
        j = lo
    if j > hi - 1:
        j = hi - 1
    if hi == lo:
        return V[k, lo, r, c], H[k, lo, r, c]
    f = p - j
    la = lab[k, j, r, c]
    lb = lab[k, j + 1, r, c]
    if la == T and lb == T:
        return ((1 - f) * V[k, j, r, c] + f * V[k, j + 1, r, c],
                (1 - f) * H[k, j, r, c] + f * H[k, j + 1, r, c])
    if la != T and lb == T:
        if j + 2 <= hi and lab[k, j + 2, r, c] == T:
            t = p - (j + 1)
            return (V[k, j + 1, r, c] + t * (V[k, j + 2, r, c] - V[k, j + 1, r, c]),
                    H[k, j + 1, r, c] + t * (H[k, j + 2, r, c] - H[k, j + 1, r, c]))
        return V[k, j + 1, r, c], H[k, j + 1, r, c]
    if la == T and lb != T:
        if j - 1 >= lo and lab[k, j - 1, r, c] == T:
            t = p - j
            return (V[k, j, r, c] + t * (V[k, j, r, c] - V[k, j - 1, r, c]),
                    H[k, j, r, c] + t * (H[k, j, r, c] - H[k, j - 1, r, c]))
        return V[k, j, r, c], H[k, j, r, c]
    return ((1 - f) * V[k, j, r, c] + f * V[k, j + 1, r, c],
            (1 - f) * H[k, j, r, c] + f * H[k, j + 1, r, c])


@njit(cache=True)
def march_L(h, mu, phi, rows, diagL, lart, B0, HL, lab, Lnew):
    """L along dx/ds = eps mu(x, eta), dxi/ds = eps mu(xi, zeta).

    Columns with c < rows[r] (eps = +1) start from the artificial datum
    ``lart`` (nx, R, C) on x = 1 and march downward in x; the others
    (eps = -1) start from ``B0`` (nx, R, C) on xi = 0 or from the diagonal
    datum ``diagL`` (nx, R, C) and march upward in xi. ``HL`` is the
    integrand mu_xi L - coupling on the previous iterate.
    """
    nx = mu.shape[0]
    R = rows.shape[0]
    C = mu.shape[1]
    N = nx - 1
    # eps = +1, segment c
    for r in range(R):
        rr = rows[r]
        for c in range(C):
            if c >= rr:
                continue
            for k in range(nx):
                Lnew[k, N, r, c] = lart[k, r, c]
            for i in range(N - 1, -1, -1):
                xi_ = i * h
                ds = phi[i + 1, rr] - phi[i, rr]
                mu_i = mu[i, rr]
                Lnew[i, i, r, c] = diagL[i, r, c]
                for k in range(i):
                    xk = k * h
                    m0 = mu[k, c]
                    mm = _lin(mu[:, c], h, xk + 0.5 * m0 * ds)
                    xf = xk + mm * ds
                    if xf <= (i + 1) * h + 1e-13:
                        p = xf / h
                        j = int(np.floor(p))
                        if j > i:
                            j = i
                        f = p - j
                        Lf = (1 - f) * Lnew[j, i + 1, r, c] + f * Lnew[j + 1, i + 1, r, c]
                        Hf = (1 - f) * HL[j, i + 1, r, c] + f * HL[j + 1, i + 1, r, c]
                        Lnew[k, i, r, c] = Lf + 0.5 * ds * (HL[k, i, r, c] + Hf)
                    else:
                        den = m0 - mu_i
                        s0 = (xi_ - xk) / den
                        xm = xi_ + 0.5 * mu_i * s0
                        km = xk + 0.5 * m0 * s0
                        mxm = _lin(mu[:, rr], h, xm)
                        s = (xi_ - xk) / (_lin(mu[:, c], h, km) - mxm)
                        z = xi_ + mxm * s
                        pz = z / h
                        jz = int(np.floor(pz))
                        if jz < i:
                            jz = i
                        if jz > N - 1:
                            jz = N - 1
                        fz = pz - jz
                        Ld = (1 - fz) * diagL[jz, r, c] + fz * diagL[jz + 1, r, c]
                        Hd = (1 - fz) * HL[jz, jz, r, c] + fz * HL[jz + 1, jz + 1, r, c]
                        Lnew[k, i, r, c] = Ld + 0.5 * s * (HL[k, i, r, c] + Hd)
    # eps = -1, segments a and b
    for r in range(R):
        rr = rows[r]
        for c in range(C):
            if c < rr:
                continue
            for i in range(nx):
                lb = lab[0, i, r, c]
                if lb == SEG_A:
                    Lnew[0, i, r, c] = B0[i, r, c]
                else:
                    Lnew[0, i, r, c] = diagL[0, r, c]
            for k in range(1, nx):
                xk = k * h
                ds = phi[k, c] - phi[k - 1, c]
                m0c = mu[k, c]
                for i in range(k, nx):
                    T = lab[k, i, r, c]
                    if T == SEG_DIAG or (T == SEG_B and i == k):
                        Lnew[k, i, r, c] = diagL[k, r, c]
                        continue
                    xi_ = i * h
                    mu_i = mu[i, rr]
                    xm = xi_ - 0.5 * mu_i * ds
                    xf = xi_ - _lin(mu[:, rr], h, xm) * ds
                    if rr == c or xf >= (k - 1) * h - 1e-13:
                        p = xf / h
                        if p < k - 1:
                            p = k - 1.0
                        Lf, Hf = _seg_interp(Lnew, HL, lab, k - 1, k - 1, N, p, T, r, c)
                        Lnew[k, i, r, c] = Lf - 0.5 * ds * (HL[k, i, r, c] + Hf)
                    else:
                        den = mu_i - m0c
                        s0 = (xi_ - xk) / den
                        xm2 = xi_ - 0.5 * mu_i * s0
                        km = xk - 0.5 * m0c * s0
                        mkm = _lin(mu[:, c], h, km)
                        s = (xi_ - xk) / (_lin(mu[:, rr], h, xm2) - mkm)
                        z = xk - mkm * s
                        pz = z / h
                        jz = int(np.floor(pz))
                        if jz > k - 1:
                            jz = k - 1
                        if jz < 0:
                            jz = 0
                        fz = pz - jz
                        Ld = (1 - fz) * diagL[jz, r, c] + fz * diagL[jz + 1, r, c]
                        Hd = (1 - fz) * HL[jz, jz, r, c] + fz * HL[jz + 1, jz + 1, r, c]
                        Lnew[k, i, r, c] = Ld - 0.5 * s * (HL[k, i, r, c] + Hd)
