"""Trajectory propagation and optimality diagnostics.

Controls are piecewise constant, so the state equation dx/dt = (u F + v G) x
is linear and autonomous on every segment.  One classical RK4 step of size h
applied to a constant linear system is exactly the degree-4 Taylor map
I + hA + (hA)^2/2 + (hA)^3/6 + (hA)^4/24; we precompute that matrix once per
segment and step with a single matvec.  The integration grid is built per
segment (steps never straddle a control jump), and the adjoint reuses the
same grid and the same one-step map, which makes the discrete duality
p(t) x(t) = const hold to roundoff.

The maximized Hamiltonian is H = p (u F + v G) x; along the chord
v = theta u + zeta the control multiplies Phi = p (F + theta G) x, so the
sign of Phi dictates the bang value of u and Phi = 0 marks singular arcs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import GrowthFragMatrices, RateFunction


class PositivityError(RuntimeError):
    """State left the positive cone during integration."""

    def __init__(self, time, index):
        self.time = time
        self.index = index
        super().__init__(f"state positivity lost at t = {time:.6g} (grid index {index})")


@dataclass(frozen=True)
class ControlSignal:
    """Piecewise-constant control (u_k, v_k) on 0 = t_0 < ... < t_K = T.

    Segment k holds on [t_k, t_{k+1}); the final instant takes the last
    segment's value.  The signal itself does not know the admissible set;
    use :meth:`validate_in_hull` to check membership where that matters.
    """

    breakpoints: np.ndarray
    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.breakpoints, dtype=float)
        u = np.asarray(self.u, dtype=float)
        v = np.asarray(self.v, dtype=float)
        if b.ndim != 1 or b.size < 2:
            raise ValueError("need at least one segment")
        if u.shape != (b.size - 1,) or v.shape != (b.size - 1,):
            raise ValueError("u and v must have one value per segment")
        if b[0] != 0.0:
            raise ValueError(f"breakpoints must start at 0, got {b[0]!r}")
        if not np.all(np.diff(b) > 0):
            raise ValueError("breakpoints must be strictly increasing")
        for a in (b, u, v):
            a.setflags(write=False)
        object.__setattr__(self, "breakpoints", b)
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)

    @property
    def T(self) -> float:
        return float(self.breakpoints[-1])

    @property
    def n_segments(self) -> int:
        return self.u.size

    @classmethod
    def constant(cls, T: float, u: float, v: float) -> "ControlSignal":
        return cls(np.array([0.0, float(T)]), np.array([float(u)]), np.array([float(v)]))

    @classmethod
    def from_u(cls, breakpoints, u_values, rate: RateFunction) -> "ControlSignal":
        """Admissible signal: v = r(u) on every segment."""
        u = np.asarray(u_values, dtype=float)
        return cls(np.asarray(breakpoints, dtype=float), u, np.asarray(rate(u), dtype=float))

    @classmethod
    def on_string(cls, breakpoints, u_values, theta: float, zeta: float) -> "ControlSignal":
        """Relaxed signal on the hull chord: v = theta u + zeta."""
        u = np.asarray(u_values, dtype=float)
        return cls(np.asarray(breakpoints, dtype=float), u, theta * u + zeta)

    def segment_index(self, t: float) -> int:
        i = int(np.searchsorted(self.breakpoints, t, side="right")) - 1
        return min(max(i, 0), self.n_segments - 1)

    def value_at(self, t: float) -> tuple[float, float]:
        i = self.segment_index(t)
        return float(self.u[i]), float(self.v[i])

    def segments(self):
        for k in range(self.n_segments):
            yield (
                float(self.breakpoints[k]),
                float(self.breakpoints[k + 1]),
                float(self.u[k]),
                float(self.v[k]),
            )

    def segments_in_window(self, t_lo: float, t_hi: float):
        """Segments clipped to [t_lo, t_hi]; zero-length pieces are dropped."""
        for t0, t1, u, v in self.segments():
            a, b = max(t0, t_lo), min(t1, t_hi)
            if b > a:
                yield a, b, u, v

    def validate_in_hull(self, rate: RateFunction, strp, tol: float = 1e-9) -> list[int]:
        """Indices of segments whose (u, v) leaves the admissible hull."""
        bad = []
        for k in range(self.n_segments):
            u, v = float(self.u[k]), float(self.v[k])
            if not (strp.u_min - tol <= u <= strp.u_max + tol):
                bad.append(k)
            elif not (float(rate(u)) - tol <= v <= strp.sigma(u) + tol):
                bad.append(k)
        return bad


def _taylor4(A: np.ndarray, h: float) -> np.ndarray:
    """One-step RK4 map for dx/dt = A x (exact degree-4 Taylor polynomial)."""
    hA = h * A
    P = np.eye(A.shape[0]) + hA
    term = hA
    for fac in (2.0, 3.0, 4.0):
        term = term @ hA / fac
        P = P + term
    return P


@dataclass(frozen=True)
class _Grid:
    times: np.ndarray
    # per segment: (first step index, step count, step size, u, v)
    segs: tuple


def _build_grid(control: ControlSignal, dt: float) -> _Grid:
    if not dt > 0:
        raise ValueError(f"dt = {dt!r} must be > 0")
    pieces = [np.array([0.0])]
    segs = []
    i0 = 0
    for t0, t1, u, v in control.segments():
        span = t1 - t0
        m = max(1, int(np.ceil(span / dt - 1e-12)))
        h = span / m
        pieces.append(t0 + h * np.arange(1, m + 1))
        pieces[-1][-1] = t1  # exact breakpoint, no accumulation drift
        segs.append((i0, m, h, u, v))
        i0 += m
    times = np.concatenate(pieces)
    times.setflags(write=False)
    return _Grid(times=times, segs=tuple(segs))


def integrate_forward(x0, control: ControlSignal, mats: GrowthFragMatrices, dt: float):
    """Propagate dx/dt = (u F + v G) x across the control grid.

    Returns (times, X) with X[i] = x(times[i]).  The initial state may touch
    the boundary of the cone (some zero counts); strict positivity is
    enforced at every later grid time.
    """
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (mats.n,):
        raise ValueError(f"x0 must have shape ({mats.n},)")
    if x0.min() < 0 or not x0.max() > 0:
        raise ValueError("x0 must be nonnegative and not identically zero")

    grid = _build_grid(control, dt)
    N = grid.times.size
    X = np.empty((N, mats.n))
    X[0] = x0
    x = x0
    for i0, m, h, u, v in grid.segs:
        P = _taylor4(mats.assembled(u, v), h)
        for j in range(m):
            x = P @ x
            X[i0 + j + 1] = x
    if not np.isfinite(X).all():
        bad = int(np.argmax(~np.isfinite(X).all(axis=1)))
        raise PositivityError(float(grid.times[bad]), bad)
    interior = X[1:]
    if interior.min() <= 0.0:
        bad = 1 + int(np.argmax((interior <= 0.0).any(axis=1)))
        raise PositivityError(float(grid.times[bad]), bad)
    return grid.times, X


def integrate_adjoint(control: ControlSignal, mats: GrowthFragMatrices, dt: float, p_T=None):
    """Propagate the costate dp/dt = -p (u F + v G) backward from p(T).

    Defaults to the mass vector p(T) = psi.  Shares the forward grid and the
    per-segment RK4 map, so p(t) x(t) is conserved to roundoff against
    :func:`integrate_forward` on the same control and dt.
    """
    p_T = mats.psi if p_T is None else np.asarray(p_T, dtype=float)
    if p_T.shape != (mats.n,):
        raise ValueError(f"p_T must have shape ({mats.n},)")
    grid = _build_grid(control, dt)
    N = grid.times.size
    P_arr = np.empty((N, mats.n))
    P_arr[-1] = p_T
    p = p_T
    for i0, m, h, u, v in reversed(grid.segs):
        # one backward step from t+h to t multiplies by the same Taylor map
        M = _taylor4(mats.assembled(u, v), h)
        for j in range(m - 1, -1, -1):
            p = p @ M
            P_arr[i0 + j] = p
    if not np.isfinite(P_arr).all():
        bad = int(np.argmax(~np.isfinite(P_arr).all(axis=1)))
        raise PositivityError(float(grid.times[bad]), bad)
    return grid.times, P_arr


@dataclass(frozen=True)
class Trajectory:
    """State/costate paths on a shared grid with pointwise diagnostics.

    Phi is filled when the hull chord slope theta is known (it needs the
    relaxed structure); J = psi @ x(T) is the polymerized mass at the end.
    """

    times: np.ndarray
    x: np.ndarray
    p: np.ndarray
    u: np.ndarray
    v: np.ndarray
    H: np.ndarray
    Phi: np.ndarray | None
    J: float


def hamiltonian(x, p, u: float, v: float, mats: GrowthFragMatrices) -> float:
    """H(x, p, u, v) = p (u F + v G) x."""
    return float(p @ mats.assembled(u, v) @ x)


def switching_value(x, p, theta: float, mats: GrowthFragMatrices) -> float:
    """Phi = p (F + theta G) x, the factor multiplying u along the chord."""
    return float(p @ (mats.F + theta * mats.G) @ x)


def simulate(
    x0,
    control: ControlSignal,
    mats: GrowthFragMatrices,
    dt: float,
    theta: float | None = None,
    p_T=None,
) -> Trajectory:
    """Forward + adjoint pass with H, Phi and J evaluated on the grid."""
    times, X = integrate_forward(x0, control, mats, dt)
    _, P = integrate_adjoint(control, mats, dt, p_T=p_T)
    grid = _build_grid(control, dt)
    N = times.size
    u_arr = np.empty(N)
    v_arr = np.empty(N)
    H = np.empty(N)
    for i0, m, h, u, v in grid.segs:
        u_arr[i0 : i0 + m] = u
        v_arr[i0 : i0 + m] = v
        M = mats.assembled(u, v)
        H[i0 : i0 + m] = np.einsum("ti,ij,tj->t", P[i0 : i0 + m], M, X[i0 : i0 + m])
    u_arr[-1], v_arr[-1] = u_arr[-2], v_arr[-2]
    M_last = mats.assembled(u_arr[-1], v_arr[-1])
    H[-1] = P[-1] @ M_last @ X[-1]

    Phi = None
    if theta is not None:
        S = mats.F + theta * mats.G
        Phi = np.einsum("ti,ij,tj->t", P, S, X)

    J = float(mats.psi @ X[-1])
    return Trajectory(times=times, x=X, p=P, u=u_arr, v=v_arr, H=H, Phi=Phi, J=J)


def objective(traj: Trajectory) -> float:
    """Polymerized mass at the horizon, J = psi @ x(T)."""
    return traj.J


def switching_function(traj: Trajectory, theta: float, mats: GrowthFragMatrices) -> np.ndarray:
    """Phi(t) = p(t) (F + theta G) x(t) on the trajectory grid."""
    S = mats.F + theta * mats.G
    return np.einsum("ti,ij,tj->t", traj.p, S, traj.x)


@dataclass(frozen=True)
class PMPReport:
    """Sign-rule violations of the maximum principle along a trajectory.

    Where Phi > tol the Hamiltonian maximum demands u = u_max; where
    Phi < -tol it demands u = u_min; |Phi| <= tol is treated as singular
    (any admissible u).  The tolerance scales with max |Phi|.
    """

    n_points: int
    n_violations: int
    violation_fraction: float
    tol: float
    max_abs_phi: float
    hamiltonian_median: float
    hamiltonian_drift: float
    hamiltonian_drift_rel: float

    def ok(self, max_fraction: float = 0.0) -> bool:
        return self.violation_fraction <= max_fraction


def pmp_residual(
    traj: Trajectory,
    u_min: float,
    u_max: float,
    tol_factor: float = 1e-7,
) -> PMPReport:
    """Classify every grid point by the switching sign rule.

    Needs ``traj.Phi`` (simulate with theta).  Violations are points where
    the control is not at the bound that the sign of Phi demands; the
    Hamiltonian constancy residual comes along for free.
    """
    if traj.Phi is None:
        raise ValueError("trajectory has no switching function; simulate with theta")
    Phi = traj.Phi
    max_abs = float(np.abs(Phi).max())
    tol = tol_factor * max_abs
    u_tol = 1e-9 * (u_max - u_min)
    needs_max = Phi > tol
    needs_min = Phi < -tol
    at_max = np.abs(traj.u - u_max) <= u_tol
    at_min = np.abs(traj.u - u_min) <= u_tol
    viol = (needs_max & ~at_max) | (needs_min & ~at_min)
    n_viol = int(viol.sum())
    n = Phi.size

    med = float(np.median(traj.H))
    drift = float(np.abs(traj.H - med).max())
    return PMPReport(
        n_points=n,
        n_violations=n_viol,
        violation_fraction=n_viol / n,
        tol=tol,
        max_abs_phi=max_abs,
        hamiltonian_median=med,
        hamiltonian_drift=drift,
        hamiltonian_drift_rel=drift / max(abs(med), 1e-300),
    )
