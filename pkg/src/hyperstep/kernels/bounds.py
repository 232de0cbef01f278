"""A priori bounds for the successive approximations of the continuum kernels.

The update of iteration l (difference of consecutive iterates, starting
from zero) is bounded in sup-L2 by the factorial envelope

    M (M_KL M_Phi / m_Phi)^l / l!

where M collects the boundary data, M_KL the coupling and velocity
derivative norms, and M_Phi, m_Phi come from the comparison function
Phi(x, xi, eta, zeta) = exp(x e^{-g eps}) - exp(xi e^{g eps}) + exp(e^g)
with eps = +1 for eta > zeta and -1 otherwise.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from ..model import ContinuumParams

__all__ = ["SaBounds", "compute_sa_bounds", "comparison_function", "minimal_gamma"]


@dataclass
class SaBounds:
    """Constants of the factorial envelope and the quantities they derive from."""

    gamma: float
    m_Phi: float
    M: float
    M_KL: float
    M_B: float
    M_Phi: float
    constants: dict

    @property
    def rate(self) -> float:
        """The base M_KL M_Phi / m_Phi of the factorial envelope."""
        return self.M_KL * self.M_Phi / self.m_Phi

    def envelope(self, ell) -> np.ndarray:
        """M rate^l / l! for iteration index l (0 for the first update)."""
        ell = np.asarray(ell, dtype=float)
        return self.M * np.exp(ell * np.log(self.rate) - gammaln(ell + 1.0))

    def phi(self, x, xi, eta, zeta):
        return comparison_function(self.gamma, x, xi, eta, zeta)


def comparison_function(gamma, x, xi, eta, zeta):
    """Phi on broadcast arrays; positive on the triangle xi <= x."""
    eps = np.where(np.asarray(eta) > np.asarray(zeta), 1.0, -1.0)
    return np.exp(x * np.exp(-gamma * eps)) - np.exp(xi * np.exp(gamma * eps)) + np.exp(np.exp(gamma))


def minimal_gamma(ratio: float, step: float = 1e-3, gmax: float = 20.0) -> float:
    """Smallest gamma on a grid of width ``step`` with ratio < exp(2 g - exp(-g))."""
    g = np.arange(step, gmax + step, step)
    ok = np.log(ratio) < 2 * g - np.exp(-g)
    if not np.any(ok):
        raise ValueError("no admissible gamma below gmax")
    return float(g[np.argmax(ok)])


def _first_axis_norm(A):
    """max over x of || int A(x, eta, .) d eta ||_L2 for A with shape (nx, ne, ne)."""
    return float(np.max(np.sqrt(np.mean(np.mean(A, axis=1) ** 2, axis=1))))


def compute_sa_bounds(params: ContinuumParams, m_phi_factor: float = 0.99) -> SaBounds:
    """Envelope constants for ``params``.

    Integrals over the ensemble variables use the midpoint rule of the
    grid. Velocity derivative bounds use absolute values, and ``m_Phi`` is
    ``m_phi_factor`` times its upper limit.
    """
    g = params.grid
    lam, mu = params.lam, params.mu
    m_lam, m_mu = float(lam.min()), float(mu.min())
    M_mu = float(mu.max())
    gamma = minimal_gamma(M_mu / m_mu)
    limit = min(m_mu * np.exp(gamma) - M_mu * np.exp(np.exp(-gamma) - gamma),
                (m_mu + m_lam) * np.exp(-gamma))
    m_Phi = m_phi_factor * limit
    ratio = params.diag_ratio()
    M_B = float(np.max(np.sqrt(np.mean(ratio ** 2, axis=(1, 2)))))
    qint = np.sqrt(np.mean(np.mean(params.Q, axis=0) ** 2))
    M_Q1 = float(np.max(lam[0][:, None] / mu[0][None, :]) * qint)
    c = {
        "m_lam": m_lam, "m_mu": m_mu, "M_mu": M_mu,
        "M_lam1": float(np.max(np.abs(params.lam_x))),
        "M_mu1": float(np.max(np.abs(params.mu_x))),
        "M_sigma": _first_axis_norm(params.sigma),
        "M_theta": _first_axis_norm(params.theta),
        "M_W": _first_axis_norm(params.W),
        "M_psi": _first_axis_norm(params.psi),
        "M_Q1": M_Q1,
    }
    theta_l2 = float(np.max(np.sqrt(np.mean(params.theta ** 2, axis=(1, 2)))))
    M = M_B + (1 + M_Q1) * theta_l2 / (m_lam + m_mu)
    M_KL = (2 * (1 + M_Q1) * (c["M_lam1"] + c["M_sigma"] + c["M_theta"])
            + 2 * (c["M_mu1"] + c["M_W"] + c["M_psi"]))
    # sup over the triangle of the L2 norm of Phi over (eta, zeta)
    e = g.nodes
    frac_up = np.mean(e[:, None] > e[None, :])
    x = g.x
    X, XI = np.meshgrid(x, x, indexing="ij")
    tri = XI <= X
    big = np.exp(np.exp(gamma))
    p_up = np.exp(X * np.exp(-gamma)) - np.exp(XI * np.exp(gamma)) + big
    p_dn = np.exp(X * np.exp(gamma)) - np.exp(XI * np.exp(-gamma)) + big
    M_Phi = float(np.sqrt(np.max((frac_up * p_up ** 2 + (1 - frac_up) * p_dn ** 2)[tri])))
    return SaBounds(gamma=gamma, m_Phi=float(m_Phi), M=float(M), M_KL=float(M_KL), M_B=M_B,
                    M_Phi=M_Phi, constants=c)
