import numpy as np
import pytest
import scipy.linalg

from pmca_control import (
    ControlSignal,
    ModelParams,
    PositivityError,
    RateFunction,
    Trajectory,
    build_matrices,
    integrate_adjoint,
    integrate_forward,
    perron_triple,
    pmp_residual,
    simulate,
    string_params,
    switching_function,
)

U_MIN, U_MAX = 1.0, 8.0


@pytest.fixture
def mats2():
    params = ModelParams(n=2, tau=(0.1, 0.0), beta=(0.0, 0.05), kappa={(1, 2): 2.0})
    return build_matrices(params)


def bang(rate, n_segments=6, T=12.0):
    bp = np.linspace(0.0, T, n_segments + 1)
    u = np.where(np.arange(n_segments) % 2 == 0, U_MAX, U_MIN)
    return ControlSignal.from_u(bp, u, rate)


# --- control signal ----------------------------------------------------------


@pytest.mark.parametrize(
    "bp, u, v",
    [
        ([0.0], [], []),  # no segment
        ([1.0, 2.0], [3.0], [1.0]),  # does not start at 0
        ([0.0, 1.0, 1.0], [3.0, 3.0], [1.0, 1.0]),  # repeated breakpoint
        ([0.0, 2.0, 1.0], [3.0, 3.0], [1.0, 1.0]),  # decreasing
        ([0.0, 1.0, 2.0], [3.0], [1.0]),  # u wrong length
        ([0.0, 1.0], [3.0], [1.0, 1.0]),  # v wrong length
    ],
)
def test_signal_rejects_malformed(bp, u, v):
    with pytest.raises(ValueError):
        ControlSignal(np.asarray(bp, float), np.asarray(u, float), np.asarray(v, float))


def test_signal_arrays_frozen():
    sig = ControlSignal.constant(2.0, 3.0, 0.5)
    with pytest.raises(ValueError):
        sig.u[0] = 99.0


def test_signal_lookup_conventions():
    sig = ControlSignal(
        np.array([0.0, 1.0, 3.0]), np.array([2.0, 5.0]), np.array([0.6, 0.3])
    )
    assert sig.T == 3.0 and sig.n_segments == 2
    assert sig.value_at(0.0) == (2.0, 0.6)
    assert sig.value_at(1.0) == (5.0, 0.3)  # half-open: [t_k, t_{k+1})
    assert sig.value_at(3.0) == (5.0, 0.3)  # final instant keeps last value
    assert sig.value_at(-1.0) == (2.0, 0.6)  # clamped
    assert list(sig.segments()) == [(0.0, 1.0, 2.0, 0.6), (1.0, 3.0, 5.0, 0.3)]


def test_segments_in_window_clips_and_drops():
    sig = ControlSignal(
        np.array([0.0, 1.0, 2.0, 3.0]),
        np.array([1.0, 2.0, 3.0]),
        np.array([0.1, 0.2, 0.3]),
    )
    got = list(sig.segments_in_window(0.5, 2.0))
    assert got == [(0.5, 1.0, 1.0, 0.1), (1.0, 2.0, 2.0, 0.2)]
    # a window inside one segment keeps just that piece
    assert list(sig.segments_in_window(1.25, 1.75)) == [(1.25, 1.75, 2.0, 0.2)]


def test_from_u_and_on_string(scan_rate):
    bp = np.array([0.0, 1.0, 2.0])
    u = np.array([2.0, 6.0])
    sig = ControlSignal.from_u(bp, u, scan_rate)
    assert np.allclose(sig.v, scan_rate(u))
    strp = string_params(scan_rate, U_MIN, U_MAX)
    rel = ControlSignal.on_string(bp, u, strp.theta, strp.zeta)
    assert np.allclose(rel.v, strp.sigma(u))


def test_validate_in_hull(scan_rate):
    strp = string_params(scan_rate, U_MIN, U_MAX)
    bp = np.array([0.0, 1.0, 2.0, 3.0, 4.0])
    u = np.array([2.0, 0.5, 2.0, 2.0])  # segment 1 leaves the u-interval
    v = np.array(
        [
            float(scan_rate(2.0)),
            float(scan_rate(0.5)),
            float(strp.sigma(2.0)) + 1e-3,  # above the chord
            float(scan_rate(2.0)) - 1e-3,  # below the curve
        ]
    )
    sig = ControlSignal(bp, u, v)
    assert sig.validate_in_hull(scan_rate, strp) == [1, 2, 3]
    ok = ControlSignal.on_string(bp, np.full(4, 3.0), strp.theta, strp.zeta)
    assert ok.validate_in_hull(scan_rate, strp) == []


# --- integration -------------------------------------------------------------


def test_grid_hits_breakpoints_exactly(scan_mats, scan_rate):
    sig = ControlSignal.from_u(np.array([0.0, 0.7, 1.9, 3.0]), np.array([2.0, 5.0, 3.0]), scan_rate)
    times, X = integrate_forward(np.ones(3), sig, scan_mats, dt=0.13)
    for b in sig.breakpoints:
        assert np.min(np.abs(times - b)) == 0.0
    assert times[0] == 0.0 and times[-1] == sig.T
    assert np.all(np.diff(times) > 0)
    assert X.shape == (times.size, 3)


def test_forward_matches_matrix_exponential(scan_mats, scan_rate):
    u = 3.0
    v = float(scan_rate(u))
    sig = ControlSignal.constant(2.0, u, v)
    x0 = np.array([1.0, 2.0, 3.0])
    times, X = integrate_forward(x0, sig, scan_mats, dt=0.01)
    exact = scipy.linalg.expm(2.0 * scan_mats.assembled(u, v)) @ x0
    assert np.abs(X[-1] - exact).max() < 1e-9 * np.abs(exact).max()


def test_forward_rejects_bad_initial_state(scan_mats, scan_rate):
    sig = ControlSignal.constant(1.0, 2.0, float(scan_rate(2.0)))
    with pytest.raises(ValueError):
        integrate_forward(np.array([1.0, -0.1, 1.0]), sig, scan_mats, dt=0.1)
    with pytest.raises(ValueError):
        integrate_forward(np.zeros(3), sig, scan_mats, dt=0.1)
    with pytest.raises(ValueError):
        integrate_forward(np.ones(4), sig, scan_mats, dt=0.1)


def test_boundary_initial_state_is_accepted(mats2, scan_rate):
    # a zero count at t = 0 is fine; positivity is enforced afterwards
    sig = ControlSignal.constant(1.0, 2.0, float(scan_rate(2.0)))
    _, X = integrate_forward(np.array([0.0, 1.0]), sig, mats2, dt=0.01)
    assert X[1:].min() > 0


def test_coarse_step_positivity_failure(mats2):
    # one huge step of the degree-4 map on a stiff segment goes negative,
    # which the integrator must refuse rather than silently continue
    sig = ControlSignal.constant(1.0, 0.0, 50.0)
    with pytest.raises(PositivityError):
        integrate_forward(np.array([1.0, 0.0]), sig, mats2, dt=1.0)
    # promoted resolution on the same problem is fine
    times, X = integrate_forward(np.array([1.0, 0.0]), sig, mats2, dt=0.001)
    assert X[1:].min() > 0


def test_duality_product_is_constant(scan_mats, scan_rate, rng):
    sig = bang(scan_rate)
    x0 = np.array([1.0, 1.0, 1.0])
    times, X = integrate_forward(x0, sig, scan_mats, dt=0.05)
    _, P = integrate_adjoint(sig, scan_mats, dt=0.05)
    prod = np.einsum("ti,ti->t", P, X)
    assert np.abs(prod / prod[0] - 1.0).max() < 1e-12


def test_adjoint_default_terminal_condition(scan_mats, scan_rate):
    sig = ControlSignal.constant(1.0, 2.0, float(scan_rate(2.0)))
    _, P = integrate_adjoint(sig, scan_mats, dt=0.1)
    assert np.array_equal(P[-1], scan_mats.psi)


# --- trajectory diagnostics --------------------------------------------------


def test_simulate_objective_and_fields(scan_mats, scan_rate):
    sig = bang(scan_rate)
    traj = simulate(np.ones(3), sig, scan_mats, dt=0.05)
    assert traj.J == pytest.approx(float(scan_mats.psi @ traj.x[-1]), rel=1e-15)
    assert traj.Phi is None
    assert traj.times.shape == traj.H.shape == traj.u.shape == traj.v.shape
    # the stored control samples reproduce the signal on the half-open cells
    for i, t in enumerate(traj.times[:-1]):
        u, v = sig.value_at(t)
        assert traj.u[i] == u and traj.v[i] == v


def test_hamiltonian_constant_for_constant_control(scan_mats, scan_rate):
    u = 3.0
    sig = ControlSignal.constant(5.0, u, float(scan_rate(u)))
    traj = simulate(np.array([1.0, 2.0, 0.5]), sig, scan_mats, dt=0.05)
    med = np.median(traj.H)
    assert np.abs(traj.H - med).max() < 1e-11 * abs(med)


def test_switching_function_matches_gradient_identity(scan_mats, scan_rate):
    # on a long singular arc, Phi/(p x) settles to d lam/du on the chord,
    # which vanishes at the relaxed maximizer
    strp = string_params(scan_rate, U_MIN, U_MAX)
    u_bar = 3.317041517736345
    sig = ControlSignal.on_string(np.array([0.0, 60.0]), np.array([u_bar]), strp.theta, strp.zeta)
    traj = simulate(np.ones(3), sig, scan_mats, dt=0.05, theta=strp.theta)
    assert traj.Phi is not None
    mid = traj.times.size // 2
    normalized = traj.Phi[mid] / float(traj.p[mid] @ traj.x[mid])
    assert abs(normalized) < 1e-10
    assert np.allclose(traj.Phi, switching_function(traj, strp.theta, scan_mats))


def test_pmp_residual_requires_switching_data(scan_mats, scan_rate):
    traj = simulate(np.ones(3), bang(scan_rate), scan_mats, dt=0.1)
    with pytest.raises(ValueError):
        pmp_residual(traj, U_MIN, U_MAX)


def make_traj(u, Phi):
    n = u.size
    return Trajectory(
        times=np.linspace(0.0, 1.0, n),
        x=np.ones((n, 2)),
        p=np.ones((n, 2)),
        u=u,
        v=np.ones(n),
        H=np.full(n, 2.0),
        Phi=Phi,
        J=1.0,
    )


def test_pmp_residual_counts_sign_rule_violations():
    Phi = np.array([1.0, 1.0, -1.0, -1.0, 1e-12, 1.0])
    u = np.array([8.0, 1.0, 1.0, 8.0, 4.0, 8.0])
    #            ok    bad   ok   bad  singular  ok
    rep = pmp_residual(make_traj(u, Phi), 1.0, 8.0)
    assert rep.n_points == 6
    assert rep.n_violations == 2
    assert rep.violation_fraction == pytest.approx(2 / 6)
    assert not rep.ok()
    assert rep.ok(max_fraction=0.5)
    assert rep.hamiltonian_drift == 0.0
    assert rep.max_abs_phi == 1.0


def test_pmp_residual_clean_bang_arc():
    Phi = np.array([1.0, 1.0, -1.0, -1.0])
    u = np.array([8.0, 8.0, 1.0, 1.0])
    rep = pmp_residual(make_traj(u, Phi), 1.0, 8.0)
    assert rep.n_violations == 0
    assert rep.ok()
