"""Parameter sets of the two worked examples.

Example 1 is a continuum system with mu = 2 - eta and psi = eta - zeta,
together with the n+m family obtained by sampling it at i/n, j/m.
Example 2 is a 10+10 system with mu_j = 1 - j/(2m), its continuum
approximation and its scalar averaged approximation.
"""
from __future__ import annotations

import numpy as np

from .model import AveragedParams, ContinuumParams, EnsembleGrid, NmParams

__all__ = [
    "example1_continuum",
    "example1_nm",
    "example2_nm",
    "example2_continuum",
    "example2_averaged",
    "example1_initial",
    "example2_initial",
]


def _zero3(x, a, b):
    return 0.0 * x * a * b


def example1_continuum(grid: EnsembleGrid | None = None) -> ContinuumParams:
    """lam = 1, mu = 2 - eta, sigma = W = theta = (x+1) y (zeta + 1/2),
    psi = eta - zeta, Q = (y + 1/2) zeta, R = 0."""
    grid = EnsembleGrid() if grid is None else grid

    def coup(x, a, b):
        return (x + 1) * a * (b + 0.5)

    return ContinuumParams.from_functions(
        grid,
        lam=lambda x, y: 1.0 + 0 * x * y,
        mu=lambda x, e: 2.0 - e + 0 * x,
        sigma=coup, W=coup, theta=coup,
        psi=lambda x, e, z: e - z + 0 * x,
        Q=lambda y, z: (y + 0.5) * z,
        R=lambda e, z: 0 * e * z,
        lam_x=lambda x, y: 0 * x * y,
        mu_x=lambda x, e: 0 * x * e,
        # psi = psi_tilde (mu(eta) - mu(zeta)) with mu(eta) - mu(zeta) = zeta - eta
        psi_tilde=lambda x, e, z: -1.0 + 0 * x * e * z,
        label="example1",
    )


def example1_nm(n: int, m: int) -> NmParams:
    """The n+m family sampled from example 1 at y = i/n, eta = j/m."""
    return NmParams.from_index_functions(
        n, m,
        lam=lambda x, i, n, m: 1.0 + 0 * x * i,
        mu=lambda x, j, n, m: 2.0 - j / m + 0 * x,
        sigma=lambda x, i, l, n, m: (x + 1) * (i / n) * (l / n + 0.5),
        w=lambda x, i, p, n, m: (x + 1) * (i / n) * (p / m + 0.5),
        theta=lambda x, j, l, n, m: (x + 1) * (j / m) * (l / n + 0.5),
        psi=lambda x, j, p, n, m: (j - p) / m + 0 * x,
        q=lambda i, p, n, m: (i / n + 0.5) * (p / m),
        r=lambda j, l, n, m: 0.0 * j * l,
        lam_x=lambda x, i, n, m: 0 * x * i,
        mu_x=lambda x, j, n, m: 0 * x * j,
        label=f"example1 n={n} m={m}",
    )


def example2_nm(n: int = 10, m: int = 10) -> NmParams:
    """lam_i = 1, mu_j = 1 - j/(2m), x-proportional couplings, q = 1, r = 0."""
    return NmParams.from_index_functions(
        n, m,
        lam=lambda x, i, n, m: 1.0 + 0 * x * i,
        mu=lambda x, j, n, m: 1.0 - j / (2 * m) + 0 * x,
        sigma=lambda x, i, l, n, m: x * (i / n) * (l / n + 0.5),
        w=lambda x, i, p, n, m: x * (i / n) * (p / m + 0.5),
        theta=lambda x, j, l, n, m: x * (j / m) * (l / n + 0.5),
        psi=lambda x, j, p, n, m: (j - p) / (2 * m) + 0 * x,
        q=lambda i, p, n, m: 1.0 + 0 * i * p,
        r=lambda j, l, n, m: 0.0 * j * l,
        lam_x=lambda x, i, n, m: 0 * x * i,
        mu_x=lambda x, j, n, m: 0 * x * j,
        label=f"example2 n={n} m={m}",
    )


def example2_continuum(grid: EnsembleGrid | None = None) -> ContinuumParams:
    """Continuum approximation of example 2: mu = 1 - eta/2,
    sigma = W = theta = x y (zeta + 1/2), psi = (eta - zeta)/2, Q = 1."""
    grid = EnsembleGrid() if grid is None else grid

    def coup(x, a, b):
        return x * a * (b + 0.5)

    return ContinuumParams.from_functions(
        grid,
        lam=lambda x, y: 1.0 + 0 * x * y,
        mu=lambda x, e: 1.0 - 0.5 * e + 0 * x,
        sigma=coup, W=coup, theta=coup,
        psi=lambda x, e, z: 0.5 * (e - z) + 0 * x,
        Q=lambda y, z: 1.0 + 0 * y * z,
        R=lambda e, z: 0 * e * z,
        lam_x=lambda x, y: 0 * x * y,
        mu_x=lambda x, e: 0 * x * e,
        psi_tilde=lambda x, e, z: -1.0 + 0 * x * e * z,
        label="example2 continuum",
    )


def example2_averaged() -> AveragedParams:
    """Averages of example 2 over all indices: lam = 1, mu = 3/4,
    sigma = w = theta = x/2, q = 1, r = 0."""
    half = lambda x: 0.5 * np.asarray(x, float)  # noqa: E731
    return AveragedParams(lam=1.0, mu=0.75, sigma=half, w=half, theta=half,
                          q=1.0, r=0.0, lam_x=0.0, mu_x=0.0)


def example1_initial(grid: EnsembleGrid):
    """u0(x, y) = int_0^1 Q(y, zeta) dzeta = (y + 1/2)/2 and v0 = 1."""
    y = grid.nodes
    u0 = np.broadcast_to((y + 0.5) / 2, (grid.nx, grid.ne)).copy()
    v0 = np.ones((grid.nx, grid.ne))
    return u0, v0


def example2_initial(n: int, m: int, nx: int):
    """u0 = 0.9 and v0 = 1 in every component."""
    return np.full((nx, n), 0.9), np.ones((nx, m))
