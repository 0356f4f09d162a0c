"""Direct maximization of terminal polymerized mass over piecewise-constant controls.

The horizon [0, T] is cut into K equal cells; the control is one intensity
value per cell, fragmentation following either v = r(u) (the physical curve)
or its chord v = theta u + zeta (the relaxed string).  Projected gradient
ascent with Armijo backtracking runs on log J — the objective grows like
exp(lam T), so the log keeps steps and tolerances scale-free while leaving
the maximizer untouched.

The per-cell derivative of J = psi . x(T) is the adjoint integral

    dJ/du_k = integral over cell k of p(t) (F + v'(u_k) G) x(t) dt,

with p the adjoint of the same discretization, evaluated by Simpson's rule
on the shared time grid.  Line-search probes avoid storing paths: each cell
contributes one precomputed one-step map raised to its step count.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.integrate import simpson

from .dynamics import ControlSignal, _build_grid, _taylor4, integrate_adjoint, integrate_forward
from .model import GrowthFragMatrices, RateFunction
from .spectral import StringParams, string_params

GRAD_PROJECTION_TOL = 1e-8
ARMIJO_SLOPE = 1e-4
BACKTRACK_FACTOR = 0.5
MAX_ITERS_DEFAULT = 400


@dataclass(frozen=True)
class DirectProblem:
    """A discretized terminal-mass maximization instance."""

    mats: GrowthFragMatrices
    rate: RateFunction
    u_min: float
    u_max: float
    T: float
    n_cells: int
    x0: np.ndarray
    dt: float  # target integration step inside each cell
    v_rule: str = "rate"  # "rate" -> v = r(u); "string" -> v on the chord

    def __post_init__(self):
        if not 0 < self.u_min < self.u_max:
            raise ValueError(f"need 0 < u_min < u_max, got [{self.u_min}, {self.u_max}]")
        if not self.T > 0 or self.n_cells < 1:
            raise ValueError("need T > 0 and at least one cell")
        if not 0 < self.dt <= self.T:
            raise ValueError(f"dt = {self.dt!r} out of range")
        if self.v_rule not in ("rate", "string"):
            raise ValueError(f"unknown v_rule {self.v_rule!r}")
        x0 = np.asarray(self.x0, dtype=float)
        if x0.shape != (self.mats.n,):
            raise ValueError(f"x0 shape {x0.shape} does not match n = {self.mats.n}")
        object.__setattr__(self, "x0", x0)

    @property
    def cell_dt(self) -> float:
        return self.T / self.n_cells

    @property
    def breakpoints(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.n_cells + 1)

    def string(self) -> StringParams:
        return string_params(self.rate, self.u_min, self.u_max)

    def v_of(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if self.v_rule == "rate":
            return np.asarray(self.rate(u), dtype=float)
        return self.string().sigma(u)

    def v_slope_of(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if self.v_rule == "rate":
            return np.asarray(self.rate.deriv(u), dtype=float)
        return np.full_like(u, self.string().theta)

    def control_from(self, u_grid: np.ndarray) -> ControlSignal:
        u = np.asarray(u_grid, dtype=float)
        if u.shape != (self.n_cells,):
            raise ValueError(f"u_grid shape {u.shape}, expected ({self.n_cells},)")
        return ControlSignal(breakpoints=self.breakpoints, u=u, v=self.v_of(u))

    def clip(self, u_grid: np.ndarray) -> np.ndarray:
        return np.clip(u_grid, self.u_min, self.u_max)


def _objective_fast(problem: DirectProblem, u_grid: np.ndarray) -> float:
    """J = psi . x(T) without storing paths: one map power per cell."""
    v_grid = problem.v_of(u_grid)
    m = max(1, int(np.ceil(problem.cell_dt / problem.dt - 1e-12)))
    h = problem.cell_dt / m
    x = problem.x0.copy()
    for u_k, v_k in zip(u_grid, v_grid):
        P = _taylor4(problem.mats.assembled(float(u_k), float(v_k)), h)
        x = np.linalg.matrix_power(P, m) @ x
    J = float(problem.mats.psi @ x)
    if not np.isfinite(J):
        raise OverflowError("objective overflowed; shorten the horizon or rescale rates")
    return J


def objective_value(problem: DirectProblem, u_grid: np.ndarray) -> float:
    control = problem.control_from(np.asarray(u_grid, dtype=float))
    times, X = integrate_forward(problem.x0, control, problem.mats, problem.dt)
    return float(problem.mats.psi @ X[-1])


def objective_gradient(problem: DirectProblem, u_grid: np.ndarray) -> np.ndarray:
    """Per-cell dJ/du_k from one forward and one adjoint pass."""
    _, grad = _objective_and_gradient(problem, np.asarray(u_grid, dtype=float))
    return grad


def _objective_and_gradient(problem: DirectProblem, u_grid: np.ndarray):
    control = problem.control_from(u_grid)
    mats = problem.mats
    times, X = integrate_forward(problem.x0, control, mats, problem.dt)
    P = integrate_adjoint(control, mats, problem.dt)[1]
    J = float(mats.psi @ X[-1])
    slopes = problem.v_slope_of(u_grid)
    grid = _build_grid(control, problem.dt)
    grad = np.empty(problem.n_cells)
    for k, (i0, m, _h, _u, _v) in enumerate(grid.segs):
        sl = slice(i0, i0 + m + 1)
        Mk = mats.F + slopes[k] * mats.G
        w = np.einsum("ti,ij,tj->t", P[sl], Mk, X[sl])
        grad[k] = simpson(w, x=times[sl])
    return J, grad


@dataclass(frozen=True)
class OptimizeResult:
    u_grid: np.ndarray
    J: float
    converged: bool
    iterations: int
    grad_projection_norm: float
    history: tuple  # rows (iteration, J, grad_projection_norm, step)
    problem: DirectProblem = field(repr=False)

    @property
    def control(self) -> ControlSignal:
        return self.problem.control_from(self.u_grid)


def optimize_direct(
    problem: DirectProblem,
    u0: Optional[np.ndarray] = None,
    max_iters: int = MAX_ITERS_DEFAULT,
    grad_tol: float = GRAD_PROJECTION_TOL,
    restarts: int = 0,
    seed: int = 0,
) -> OptimizeResult:
    """Projected gradient ascent with Armijo backtracking on log J.

    Stops when the projected scaled-gradient sup-norm falls below
    ``grad_tol`` or at the iteration cap.  ``restarts`` adds that many
    extra runs from uniform random cell values; the best terminal J wins.
    """
    runs = [_ascend(problem, u0, max_iters, grad_tol)]
    if restarts > 0:
        rng = np.random.default_rng(seed)
        for _ in range(restarts):
            start = rng.uniform(problem.u_min, problem.u_max, size=problem.n_cells)
            runs.append(_ascend(problem, start, max_iters, grad_tol))
    return max(runs, key=lambda r: r.J)


def _ascend(problem, u0, max_iters, grad_tol) -> OptimizeResult:
    span = problem.u_max - problem.u_min
    if u0 is None:
        u = np.full(problem.n_cells, 0.5 * (problem.u_min + problem.u_max))
    else:
        u = problem.clip(np.asarray(u0, dtype=float).copy())

    J, g = _objective_and_gradient(problem, u)
    gs = g / J  # gradient of log J
    step = 0.25 * span / max(np.abs(gs).max(), 1e-300)
    pg = np.abs(problem.clip(u + gs) - u).max()
    history = [(0, J, pg, 0.0)]

    converged = pg <= grad_tol
    it = 0
    while not converged and it < max_iters:
        it += 1
        logJ = np.log(J)
        while True:
            u_new = problem.clip(u + step * gs)
            du = u_new - u
            if not du.any():
                break  # pinned at the bounds along the gradient
            J_new = _objective_fast(problem, u_new)
            if np.log(J_new) >= logJ + ARMIJO_SLOPE * float(gs @ du):
                break
            step *= BACKTRACK_FACTOR
            if step < 1e-14 * span:
                break
        if not du.any() or step < 1e-14 * span:
            pg = np.abs(problem.clip(u + gs) - u).max()
            history.append((it, J, pg, step))
            converged = pg <= grad_tol
            break
        u = u_new
        J, g = _objective_and_gradient(problem, u)
        gs = g / J
        pg = np.abs(problem.clip(u + gs) - u).max()
        history.append((it, J, pg, step))
        converged = pg <= grad_tol
        step /= BACKTRACK_FACTOR  # let the next trial grow back

    return OptimizeResult(
        u_grid=u,
        J=J,
        converged=converged,
        iterations=it,
        grad_projection_norm=pg,
        history=tuple(history),
        problem=problem,
    )


@dataclass(frozen=True)
class DutyStats:
    """Occupation statistics of a control over a time window."""

    window: tuple
    mean_u: float
    time_at_umax: float
    time_at_umin: float
    time_between: float
    fraction_at_umax: float

    @property
    def empirical_ratio(self) -> Optional[float]:
        """time at u_max over time at u_min; None when the floor is never hit."""
        if self.time_at_umin <= 0.0:
            return None
        return self.time_at_umax / self.time_at_umin


def duty_ratio_stats(
    control: ControlSignal,
    u_min: float,
    u_max: float,
    window: Optional[tuple] = None,
    at_tol: float = 1e-9,
) -> DutyStats:
    """Classify each span of the control as floor, ceiling, or in between."""
    t_lo, t_hi = (0.0, control.T) if window is None else map(float, window)
    if not t_lo < t_hi:
        raise ValueError(f"empty window ({t_lo}, {t_hi})")
    total = t_hi - t_lo
    tol = at_tol * max(1.0, abs(u_max))
    at_max = at_min = between = 0.0
    mean_acc = 0.0
    for t0, t1, u, _v in control.segments_in_window(t_lo, t_hi):
        span = t1 - t0
        mean_acc += u * span
        if abs(u - u_max) <= tol:
            at_max += span
        elif abs(u - u_min) <= tol:
            at_min += span
        else:
            between += span
    return DutyStats(
        window=(t_lo, t_hi),
        mean_u=mean_acc / total,
        time_at_umax=at_max,
        time_at_umin=at_min,
        time_between=between,
        fraction_at_umax=at_max / total,
    )


def refine_cells(problem: DirectProblem, u_grid: np.ndarray, factor: int = 2):
    """Split every cell into ``factor`` copies: same control, finer problem.

    Handy for nested-refinement studies: the refined start reproduces the
    coarse control exactly, so its optimum can only improve.
    """
    if factor < 2:
        raise ValueError("factor must be >= 2")
    fine = replace(problem, n_cells=problem.n_cells * factor)
    return fine, np.repeat(np.asarray(u_grid, dtype=float), factor)
