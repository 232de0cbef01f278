"""``hyperstep`` command line: run an experiment config or its acceptance suite.

Exit codes: 0 success, 2 config error, 3 solver failure, 4 acceptance
failure in ``--check`` mode.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import acceptance
from .config import (ConfigError, ExperimentConfig, continuum_from_spec, continuum_initial,
                     load_config, nm_family_from_spec, nm_initial)
from .control import ControllerSpec
from .experiments import macro_comparison, nm_sweep, solve_kernels
from .io import write_long_csv, write_manifest, write_snapshot
from .kernels import KernelConvergenceError, solve_nm_kernels
from .kernels.bounds import compute_sa_bounds
from .kernels.diagnostics import boundary_residuals
from .lift import ResolutionError, average_continuum, build_averaged
from .model import StructuralError, validate_continuum, validate_nm
from .sim import SimConfig, SimulationError, simulate_continuum, simulate_nm
from .stability import convergence_study, decay_fit

log = logging.getLogger("hyperstep")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_CHECK = 0, 2, 3, 4


def _grid_arg(text):
    try:
        nx, ne = (int(s) for s in text.split(","))
    except ValueError as exc:
        raise argparse.ArgumentTypeError("expected nx,ne") from exc
    if nx < 2 or ne < 1:
        raise argparse.ArgumentTypeError("need nx >= 2 and ne >= 1")
    return nx, ne


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hyperstep",
                                 description="Backstepping experiments for large hyperbolic systems.")
    ap.add_argument("--config", required=True, metavar="PATH",
                    help="experiment config (YAML); 'bundled:NAME' selects a packaged config")
    ap.add_argument("--check", action="store_true", help="run the config's acceptance suite")
    ap.add_argument("--out", default="out", metavar="DIR", help="output directory")
    ap.add_argument("--workers", type=int, default=None, metavar="N",
                    help="worker processes (fallback: HYPERSTEP_WORKERS, then 1)")
    ap.add_argument("--kernel-method", choices=("sa", "ps"), default=None,
                    help="continuum kernel solver: successive approximations or power series")
    ap.add_argument("--grid", type=_grid_arg, default=None, metavar="NX,NE",
                    help="override the x-grid and ensemble-grid sizes")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def bundled_config(name: str) -> Path:
    path = Path(__file__).parent / "configs" / (name if name.endswith(".cfg") else name + ".cfg")
    if not path.exists():
        raise ConfigError(f"no bundled config {name!r}")
    return path


def _resolve(path: str) -> Path:
    return bundled_config(path[len("bundled:"):]) if path.startswith("bundled:") else Path(path)


# ----------------------------------------------------------------------------- writers

def _write_norms(out, name, times, norms, files):
    files.append(write_long_csv(out / name, ["t", "norm"], list(zip(times, norms)),
                                {"t": "s", "norm": "E-norm"}))


def _write_controls(out, name, times, controls, coords, files, coord="eta"):
    rows = [(t, c, u) for t, row in zip(times, controls) for c, u in zip(coords, row)]
    files.append(write_long_csv(out / name, ["t", coord, "U"], rows, {"t": "s", "U": "state"}))


def _write_kernels(out, k, files, prefix="kernel"):
    files.append(write_snapshot(out / f"{prefix}_K.snap", k.K))
    files.append(write_snapshot(out / f"{prefix}_L.snap", k.L))


def _fit_dict(f):
    return {"classification": f.classification, "omega": f.omega, "M": f.M,
            "growth": f.growth, "window": list(f.window)}


def _continuum(cfg: ExperimentConfig, g):
    p = continuum_from_spec(cfg.continuum, g)
    rep = validate_continuum(p)
    if not rep.ok:
        raise StructuralError("continuum system violates assumptions: " + rep.render())
    return p


def _family(cfg: ExperimentConfig):
    fam = nm_family_from_spec(cfg.nm)

    def checked(n, m=None):
        p = fam(n, m)
        rep = validate_nm(p)
        if not rep.ok:
            raise StructuralError(f"n+m system n={p.n} violates assumptions: " + rep.render())
        return p

    return checked


# ----------------------------------------------------------------------------- scenarios

def _single(cfg: ExperimentConfig, out: Path, workers, files, extra):
    g = cfg.grid
    sim = SimConfig(grid=g, scheme=cfg.scheme, rtol=cfg.rtol, atol=cfg.atol)
    if cfg.continuum is not None and cfg.controller in ("continuum_exact", "open_loop"):
        p = _continuum(cfg, g)
        u0, v0 = continuum_initial(cfg.initial, g)
        spec = None
        if cfg.controller == "continuum_exact":
            k = solve_kernels(p, cfg.kernel_method, cfg.order, workers)
            _write_kernels(out, k, files)
            spec = ControllerSpec("continuum_exact", kernels=k, R=p.R)
        tr = simulate_continuum(p, u0, v0, spec, sim)
        coords = g.nodes
    else:
        if cfg.nm is None:
            raise ConfigError(f"controller {cfg.controller} needs system.nm")
        n, m = int(cfg.nm.get("n", 2)), int(cfg.nm.get("m", cfg.nm.get("n", 2)))
        pn = _family(cfg)(n, m)
        u0, v0 = nm_initial(cfg.initial, n, m, g.nx)
        spec = None
        if cfg.controller == "micro_exact":
            k = solve_nm_kernels(pn, nx=g.nx, tol=cfg.tol)
            spec = ControllerSpec("micro_exact", kernels=k, R=pn.R, n=n, m=m)
        elif cfg.controller == "macro_kernels_micro_meas":
            pc = _continuum(cfg, g)
            k = solve_kernels(pc, cfg.kernel_method, cfg.order, workers)
            _write_kernels(out, k, files)
            spec = ControllerSpec("macro_kernels_micro_meas", kernels=k, R=pn.R, n=n, m=m)
        elif cfg.controller != "open_loop":
            raise ConfigError(f"controller {cfg.controller} needs scenario macro_compare")
        tr = simulate_nm(pn, u0, v0, spec, sim)
        coords = np.arange(1, m + 1)
    if tr.status == "failed":
        raise SimulationError("integration failed", tr.t_end)
    _write_norms(out, "norms.csv", tr.times, tr.norms, files)
    _write_controls(out, "controls.csv", tr.times, tr.controls, coords, files,
                    "eta" if coords.dtype.kind == "f" else "j")
    fit = decay_fit(tr)
    extra["fit"] = _fit_dict(fit)
    extra["status"] = tr.status
    log.info("single run: %s omega=%.4g", fit.classification, fit.omega)


def _sweep(cfg: ExperimentConfig, out: Path, workers, files, extra):
    g = cfg.grid
    pc = _continuum(cfg, g)
    k = solve_kernels(pc, cfg.kernel_method, cfg.order, workers)
    _write_kernels(out, k, files)
    family = _family(cfg)
    init = cfg.initial

    def member(n):
        return family(n, n), *nm_initial(init, n, n, g.nx)

    sw = nm_sweep(member, cfg.ns, k, g, cfg.scheme, workers)
    rows = [(n, t, v) for n, tr in zip(sw.ns, sw.trajs) for t, v in zip(tr.times, tr.norms)]
    files.append(write_long_csv(out / "sweep_norms.csv", ["n", "t", "norm"], rows,
                                {"t": "s", "norm": "E-norm"}))
    files.append(write_long_csv(out / "sweep_fits.csv", ["n", "classification", "omega", "growth"],
                                sw.rows(), {"omega": "1/s"}))
    extra["fits"] = {str(n): _fit_dict(f) for n, f in zip(sw.ns, sw.fits)}
    for n, f in zip(sw.ns, sw.fits):
        log.info("n=m=%d: %s omega=%.4g", n, f.classification, f.omega)


def _convergence(cfg: ExperimentConfig, out: Path, workers, files, extra):
    g = cfg.grid
    pc = _continuum(cfg, g)
    init = continuum_initial(cfg.initial, g)
    kernels = None
    if cfg.study in ("kernel_gap", "control_gap"):
        kernels = solve_kernels(pc, cfg.kernel_method, cfg.order, workers)
    rep = convergence_study(_family(cfg), cfg.ns, cfg.study, pc, init=init,
                            kernels=kernels, T=g.T, n_out=g.n_out, scheme=cfg.scheme,
                            tol=cfg.tol, workers=workers)
    files.append(write_long_csv(out / "convergence.csv", ["n", "gap"], rep.rows()))
    extra["study"] = rep.summary()


def _bounds(cfg: ExperimentConfig, out: Path, workers, files, extra):
    g = cfg.grid
    p = _continuum(cfg, g)
    k = solve_kernels(p, "sa", workers=workers)
    _write_kernels(out, k, files)
    b = compute_sa_bounds(p)
    upd = np.asarray(k.history.total)
    env = b.envelope(np.arange(upd.size))
    files.append(write_long_csv(out / "sa_envelope.csv", ["iteration", "update", "envelope"],
                                [(i, u, e) for i, (u, e) in enumerate(zip(upd, env))]))
    extra["bounds"] = {"gamma": b.gamma, "M": b.M, "M_KL": b.M_KL, "M_B": b.M_B,
                       "M_Phi": b.M_Phi, "m_Phi": b.m_Phi}
    extra["boundary_residuals"] = boundary_residuals(k, p).as_dict()


def _macro_compare(cfg: ExperimentConfig, out: Path, workers, files, extra):
    g = cfg.grid
    n, m = int(cfg.nm.get("n", 10)), int(cfg.nm.get("m", cfg.nm.get("n", 10)))
    pn = _family(cfg)(n, m)
    pc = _continuum(cfg, g)
    if cfg.averaged == "declared":
        av = average_continuum(pc)
    else:
        av = build_averaged(pn, mean=cfg.averaged, x=g.x)
    res = macro_comparison(pn, pc, av, nm_initial(cfg.initial, n, m, g.nx),
                           continuum_initial(cfg.companion_initial, g), g, cfg.kernel_method,
                           cfg.scheme, workers)
    rows = [(name, t, v) for name, nrm in sorted(res.norms.items()) for t, v in zip(res.times, nrm)]
    files.append(write_long_csv(out / "macro_norms.csv", ["variant", "t", "norm"], rows,
                                {"t": "s", "norm": "E-norm"}))
    tr = res.trajs["averaged_macro"]
    _write_controls(out, "averaged_controls.csv", tr.times, tr.controls, np.arange(1, m + 1),
                    files, "j")
    extra["norms_at_T"] = res.at_end()
    extra["averaged_control_spread"] = res.controls_spread


_SCENARIOS = {"single": _single, "sweep": _sweep, "convergence": _convergence,
              "bounds": _bounds, "macro_compare": _macro_compare}


def run(cfg: ExperimentConfig, out: Path, workers=None) -> int:
    out.mkdir(parents=True, exist_ok=True)
    files, extra = [], {"scenario": cfg.scenario, "grid": [cfg.grid.nx, cfg.grid.ne]}
    _SCENARIOS[cfg.scenario](cfg, out, workers, files, extra)
    write_manifest(out, cfg.digest, cfg.kernel_method, files, extra)
    return EXIT_OK


def check(cfg: ExperimentConfig, out: Path, workers=None, echo=print) -> int:
    if cfg.suite is None:
        raise ConfigError("--check needs a config with check.suite")
    out.mkdir(parents=True, exist_ok=True)
    ctx = acceptance.AcceptanceContext(nx=cfg.grid.nx, ne=cfg.grid.ne, T=cfg.grid.T,
                                       n_out=cfg.grid.n_out, method=cfg.kernel_method,
                                       order=cfg.order, scheme=cfg.scheme, workers=workers,
                                       seed=cfg.seed)
    results = acceptance.run_suite(cfg.suite, ctx, echo=echo)
    text = acceptance.verdict(cfg.suite, results, ctx)
    (out / "verdict.json").write_text(text + "\n")
    write_manifest(out, cfg.digest, cfg.kernel_method, [out / "verdict.json"],
                   {"suite": cfg.suite})
    return EXIT_OK if all(r.passed for r in results) else EXIT_CHECK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = load_config(_resolve(args.config)).with_overrides(args.grid, args.kernel_method)
        if args.workers is not None and args.workers < 1:
            raise ConfigError("--workers must be >= 1")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out)
    try:
        if args.check:
            return check(cfg, out, args.workers)
        return run(cfg, out, args.workers)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (KernelConvergenceError, SimulationError, StructuralError, ResolutionError,
            np.linalg.LinAlgError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
