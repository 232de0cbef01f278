"""How accurate are the continuum kernels?

Successive approximations march the kernel equations along characteristics;
the power-series route fits polynomials by collocation. Comparing them and
checking the boundary conditions shows where each is reliable: the boundary
data are met to roundoff, while L loses accuracy where eta approaches zeta
and the diagonal datum becomes singular.
"""
import argparse

import numpy as np

from hyperstep.kernels import (boundary_residuals, compute_sa_bounds, k_jump, kernel_gap,
                               solve_continuum_kernels_ps, solve_continuum_kernels_sa)
from hyperstep.model import EnsembleGrid
from hyperstep.systems import example1_continuum

ap = argparse.ArgumentParser()
ap.add_argument("--grid", default="33,10")
args = ap.parse_args()
nx, ne = (int(s) for s in args.grid.split(","))
p = example1_continuum(EnsembleGrid(nx=nx, ne=ne))

ks = solve_continuum_kernels_sa(p)
print("successive approximations:", ks.history.iterations, "iterations")
print("boundary residuals:", {k: f"{v:.1e}" for k, v in boundary_residuals(ks, p).as_dict().items()})
print("K jump across rho: %.2e" % k_jump(ks, p)[0])

b = compute_sa_bounds(p)
upd = np.asarray(ks.history.total)
print("largest update / envelope ratio: %.3f" % np.max(upd / b.envelope(np.arange(upd.size))))

kp = solve_continuum_kernels_ps(p, order=10)
gK, gL = kernel_gap(ks, kp)
print(f"SA vs power series: K gap {gK:.2e}, L gap {gL:.2e}")
