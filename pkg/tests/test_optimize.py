import itertools

import numpy as np
import pytest

from pmca_control import (
    ControlSignal,
    DirectProblem,
    duty_ratio_stats,
    objective_gradient,
    optimize_direct,
    simulate,
)
from pmca_control.optimize import objective_value, refine_cells

U_BAR = 3.317041517736345


@pytest.fixture
def problem(scan_mats, scan_rate):
    return DirectProblem(
        mats=scan_mats,
        rate=scan_rate,
        u_min=1.0,
        u_max=8.0,
        T=6.0,
        n_cells=8,
        x0=np.ones(3),
        dt=0.05,
    )


@pytest.fixture
def problem2(d2cfg):
    from pmca_control import RateFunction

    return DirectProblem(
        mats=d2cfg.matrices(),
        rate=RateFunction.affine(d2cfg.zeta, d2cfg.theta),
        u_min=d2cfg.u_min,
        u_max=d2cfg.u_max,
        T=4.0,
        n_cells=2,
        x0=np.array([1.0, 1.0]),
        dt=0.05,
    )


# --- problem container --------------------------------------------------------


@pytest.mark.parametrize(
    "kw",
    [
        dict(u_min=0.0),
        dict(u_min=8.0, u_max=1.0),
        dict(T=-1.0),
        dict(n_cells=0),
        dict(dt=0.0),
        dict(dt=100.0),
        dict(v_rule="chord"),
        dict(x0=np.ones(4)),
    ],
)
def test_problem_validation(scan_mats, scan_rate, kw):
    base = dict(
        mats=scan_mats,
        rate=scan_rate,
        u_min=1.0,
        u_max=8.0,
        T=6.0,
        n_cells=8,
        x0=np.ones(3),
        dt=0.05,
    )
    base.update(kw)
    with pytest.raises(ValueError):
        DirectProblem(**base)


def test_problem_grid_helpers(problem):
    assert problem.cell_dt == pytest.approx(0.75)
    np.testing.assert_allclose(problem.breakpoints, np.linspace(0.0, 6.0, 9))
    u = np.full(8, 2.0)
    sig = problem.control_from(u)
    assert isinstance(sig, ControlSignal)
    np.testing.assert_allclose(sig.v, problem.rate(u))
    np.testing.assert_allclose(problem.clip(np.array([0.0, 4.0, 99.0] + [2.0] * 5)),
                               [1.0, 4.0, 8.0] + [2.0] * 5)


def test_v_rules(problem):
    u = np.linspace(1.0, 8.0, 8)
    assert np.allclose(problem.v_of(u), problem.rate(u))
    assert np.allclose(problem.v_slope_of(u), problem.rate.deriv(u))
    from dataclasses import replace

    chord = replace(problem, v_rule="string")
    strp = problem.string()
    assert np.allclose(chord.v_of(u), strp.sigma(u))
    assert np.allclose(chord.v_slope_of(u), strp.theta)


# --- objective and gradient ---------------------------------------------------


def test_objective_matches_simulation(problem, rng):
    u = rng.uniform(1.0, 8.0, size=8)
    J = objective_value(problem, u)
    traj = simulate(problem.x0, problem.control_from(u), problem.mats, problem.dt)
    assert J == pytest.approx(traj.J, rel=1e-12)


def test_gradient_matches_finite_differences(problem, rng):
    h = 1e-6
    for _ in range(6):
        u = rng.uniform(1.5, 7.5, size=8)
        g = objective_gradient(problem, u)
        for k in (0, 3, 7):
            e = np.zeros(8)
            e[k] = h
            fd = (objective_value(problem, u + e) - objective_value(problem, u - e)) / (
                2.0 * h
            )
            assert g[k] == pytest.approx(fd, rel=1e-5)


def test_gradient_on_string_rule(problem, rng):
    from dataclasses import replace

    chord = replace(problem, v_rule="string")
    u = rng.uniform(1.5, 7.5, size=8)
    g = objective_gradient(chord, u)
    h = 1e-6
    e = np.zeros(8)
    e[4] = h
    fd = (objective_value(chord, u + e) - objective_value(chord, u - e)) / (2.0 * h)
    assert g[4] == pytest.approx(fd, rel=1e-5)


# --- ascent -------------------------------------------------------------------


def test_ascent_is_monotone_and_feasible(problem):
    res = optimize_direct(problem, max_iters=60)
    Js = [row[1] for row in res.history]
    assert all(b >= a - 1e-12 * abs(a) for a, b in zip(Js, Js[1:]))
    assert res.u_grid.min() >= problem.u_min - 1e-12
    assert res.u_grid.max() <= problem.u_max + 1e-12
    assert res.J == pytest.approx(objective_value(problem, res.u_grid), rel=1e-12)
    assert res.iterations == len(res.history) - 1
    assert res.control.n_segments == problem.n_cells


def test_ascent_beats_every_constant_control(problem):
    res = optimize_direct(problem, max_iters=200)
    for u0 in np.linspace(1.0, 8.0, 15):
        assert res.J >= objective_value(problem, np.full(8, u0)) * (1.0 - 1e-10)


def test_two_cell_optimum_matches_brute_force(problem2):
    res = optimize_direct(problem2, max_iters=400, restarts=3, seed=7)
    grid = np.linspace(problem2.u_min, problem2.u_max, 33)
    best = max(
        ((objective_value(problem2, np.array(p)), p)
         for p in itertools.product(grid, grid)),
        key=lambda t: t[0],
    )
    step = grid[1] - grid[0]
    assert res.J >= best[0] * (1.0 - 1e-9)
    assert np.abs(res.u_grid - np.array(best[1])).max() <= 1.5 * step


def test_random_restarts_only_improve(problem2):
    base = optimize_direct(problem2, max_iters=100)
    multi = optimize_direct(problem2, max_iters=100, restarts=4, seed=3)
    assert multi.J >= base.J * (1.0 - 1e-12)


def test_refine_reproduces_coarse_control(problem):
    u = np.linspace(2.0, 5.0, 8)
    fine, u_fine = refine_cells(problem, u, factor=3)
    assert fine.n_cells == 24
    assert u_fine.size == 24
    assert objective_value(fine, u_fine) == pytest.approx(
        objective_value(problem, u), rel=1e-12
    )
    with pytest.raises(ValueError):
        refine_cells(problem, u, factor=1)


# --- duty statistics ----------------------------------------------------------


def test_duty_stats_on_square_wave(scan_rate):
    bp = np.array([0.0, 0.6, 1.0, 1.6, 2.0, 3.0])
    u = np.array([8.0, 1.0, 8.0, 1.0, 4.0])
    sig = ControlSignal.from_u(bp, u, scan_rate)
    stats = duty_ratio_stats(sig, 1.0, 8.0)
    assert stats.window == (0.0, 3.0)
    assert stats.time_at_umax == pytest.approx(0.6 + 0.6)
    assert stats.time_at_umin == pytest.approx(0.4 + 0.4)
    assert stats.time_between == pytest.approx(1.0)
    assert stats.fraction_at_umax == pytest.approx(1.2 / 3.0)
    assert stats.empirical_ratio == pytest.approx(1.2 / 0.8)
    assert stats.mean_u == pytest.approx((1.2 * 8.0 + 0.8 * 1.0 + 1.0 * 4.0) / 3.0)


def test_duty_stats_window_clipping(scan_rate):
    bp = np.array([0.0, 1.0, 2.0])
    sig = ControlSignal.from_u(bp, np.array([8.0, 1.0]), scan_rate)
    stats = duty_ratio_stats(sig, 1.0, 8.0, window=(0.5, 1.5))
    assert stats.time_at_umax == pytest.approx(0.5)
    assert stats.time_at_umin == pytest.approx(0.5)
    assert stats.empirical_ratio == pytest.approx(1.0)


def test_duty_stats_constant_interior_control(scan_rate):
    sig = ControlSignal.from_u(np.array([0.0, 2.0]), np.array([U_BAR]), scan_rate)
    stats = duty_ratio_stats(sig, 1.0, 8.0)
    assert stats.fraction_at_umax == 0.0
    assert stats.empirical_ratio is None
    assert stats.time_between == pytest.approx(2.0)
    assert stats.mean_u == pytest.approx(U_BAR)
    with pytest.raises(ValueError):
        duty_ratio_stats(sig, 1.0, 8.0, window=(2.0, 1.0))
