"""Controlling large n+m systems with kernels computed once for the continuum.

The n+m members of example 1 are sampled from the continuum system. Their
controllers use cell means of a single continuum kernel instead of solving
a kernel problem per n. The approximation only works once n is large
enough: n = m = 2 stays unstable, and the decay rate grows with n.
"""
import argparse
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from hyperstep.experiments import example1_sweep
from hyperstep.model import EnsembleGrid

ap = argparse.ArgumentParser()
ap.add_argument("--quick", action="store_true")
ap.add_argument("--workers", type=int, default=None)
ap.add_argument("--out", default=str(Path(__file__).with_name("out")))
args = ap.parse_args()
out = Path(args.out)
out.mkdir(exist_ok=True)

grid = EnsembleGrid(nx=33, ne=50, T=5.0, n_out=101) if args.quick else EnsembleGrid(T=5.0, n_out=101)
sw = example1_sweep(grid=grid, workers=args.workers)
for n, cls, omega, growth in sw.rows():
    print(f"n = m = {n:2d}: {cls:9s} omega = {omega:+.4f}")

fig, ax = plt.subplots(figsize=(6, 4))
for n, tr in zip(sw.ns, sw.trajs):
    ax.semilogy(tr.times, tr.norms, label=f"n = m = {n}")
ax.set_xlabel("t")
ax.set_ylabel("E norm")
ax.legend()
fig.tight_layout()
fig.savefig(out / "nm_sweep.png", dpi=120)
print(f"figure written to {out / 'nm_sweep.png'}")
