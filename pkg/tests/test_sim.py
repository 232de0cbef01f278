import numpy as np
import pytest

from hyperstep.model import ContinuumParams, EnsembleGrid, StructuralError
from hyperstep.sim import SimConfig, simulate_continuum, simulate_nm, solution_gap
from hyperstep.systems import example1_continuum, example1_initial, example1_nm


def transport(grid, Q=0.0):
    return ContinuumParams.from_functions(
        grid, lam=lambda x, y: 1 + 0 * x * y, mu=lambda x, e: 2 - e + 0 * x,
        sigma=lambda x, a, b: 0 * x * a * b, W=lambda x, a, b: 0 * x * a * b,
        theta=lambda x, a, b: 0 * x * a * b, psi=lambda x, e, z: 0 * x * e * z,
        Q=lambda y, z: Q + 0 * y * z, R=lambda e, z: 0 * e * z)


@pytest.mark.parametrize("scheme,rate", [("upwind1", 1.8), ("upwind2", 2.5)])
def test_pure_transport_matches_shifted_profile(scheme, rate):
    # u_t + u_x = 0 with zero inflow: u(t, x) = u0(x - t); the minmod limiter clips
    # the peak, so the second-order rate shows in RMS rather than sup norm
    errs = []
    for nx in (65, 129):
        g = EnsembleGrid(nx=nx, ne=2, T=0.25, n_out=2)
        x = g.x
        u0 = np.repeat(np.sin(np.pi * x)[:, None] ** 2, 2, axis=1)
        tr = simulate_continuum(transport(g), u0, np.zeros_like(u0), None,
                                SimConfig(grid=g, scheme=scheme, rtol=1e-9, atol=1e-12))
        exact = np.where(x >= 0.25, np.sin(np.pi * (x - 0.25)) ** 2, 0.0)
        errs.append(np.sqrt(np.mean((tr.states[-1].u[:, 0] - exact) ** 2)))
    assert errs[0] / errs[1] > rate


def test_uncoupled_state_leaves_the_domain():
    g = EnsembleGrid(nx=33, ne=4, T=2.0, n_out=21)
    tr = simulate_continuum(transport(g), np.ones((33, 4)), np.ones((33, 4)), None,
                            SimConfig(grid=g))
    assert tr.norms[-1] < 1e-3 * tr.norms[0]


def test_zero_state_stays_zero():
    g = EnsembleGrid(nx=17, ne=4, T=1.0, n_out=11)
    tr = simulate_continuum(example1_continuum(g), np.zeros((17, 4)), np.zeros((17, 4)), None,
                            SimConfig(grid=g))
    assert np.all(tr.norms == 0)


def test_open_loop_example1_grows():
    g = EnsembleGrid(nx=33, ne=10, T=5.0, n_out=51)
    u0, v0 = example1_initial(g)
    tr = simulate_continuum(example1_continuum(g), u0, v0, None, SimConfig(grid=g))
    assert tr.norms[-1] > tr.norms[0]


def test_lifted_nm_solution_approaches_continuum():
    g = EnsembleGrid(nx=33, ne=16, T=1.0, n_out=11)
    u0, v0 = example1_initial(g)
    tc = simulate_continuum(example1_continuum(g), u0, v0, None, SimConfig(grid=g))
    gaps = []
    for n in (4, 8, 16):
        y = np.arange(1, n + 1) / n
        # cell means of (y + 1/2)/2 over ((i-1)/n, i/n]
        tn = simulate_nm(example1_nm(n, n), np.tile((y - 0.5 / n + 0.5) / 2, (33, 1)),
                         np.ones((33, n)), None, SimConfig(grid=g))
        gaps.append(solution_gap(tn, tc).delta_T)
    assert gaps[0] > gaps[1] > gaps[2]


def test_bad_inputs_raise():
    with pytest.raises(StructuralError):
        SimConfig(scheme="spectral")
    g = EnsembleGrid(nx=9, ne=2)
    with pytest.raises(StructuralError):
        simulate_continuum(example1_continuum(g), np.zeros((9, 2)), np.zeros((9, 2)), None,
                           SimConfig(grid=g.with_(nx=17)))
