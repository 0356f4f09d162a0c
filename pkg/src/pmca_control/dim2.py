"""Closed-form optimal synthesis for the two-compartment model.

With sizes {1, 2} the relaxed eigenvalue problem on the hull chord
v = theta u + zeta is solvable by hand.  Writing A = theta tau + beta,
B = sqrt(-2 theta beta tau), C = theta tau + 3 beta, D = zeta tau, the
chord-restricted Perron value is

    lam_P(u) = (-A u - D + sqrt(Delta(u))) / 2 ,
    Delta(u) = (A^2 - 2 B^2) u^2 + 2 C D u + D^2 ,

which is strictly concave on (0, zeta/(-theta)) because
2 Delta Delta'' - (Delta')^2 = -32 D^2 beta^2 < 0.  Its unique interior
maximizer u_bar supports a singular arc; the optimal long-horizon control
rides it.  Projecting the state onto y = x_1/(x_1+x_2) and the costate onto
q = p_1/(p_1+p_2) reduces entry and exit of that arc to scalar flows, which
is how the three-segment control (bang entry, singular cruise, u_min tail)
is synthesized here, together with bang-bang chattering approximations that
realize the singular arc as a fast switching limit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dynamics import ControlSignal
from .model import GrowthFragMatrices, ModelParams, build_matrices

EVENT_TIME_ATOL = 1e-12  # bisection window for crossing times
EVENT_SELF_ATOL = 1e-11  # dt-halving self-convergence for event times


class HorizonError(ValueError):
    """Horizon too short to fit the entry and exit layers."""

    def __init__(self, T, threshold):
        self.T = T
        self.threshold = threshold
        super().__init__(
            f"horizon T = {T:.6g} must exceed the boundary-layer budget "
            f"T0 + T_psi = {threshold:.6g}"
        )


@dataclass(frozen=True)
class Dim2Config:
    """Two-compartment problem data on the hull chord.

    theta < 0 and zeta > 0 describe the chord v = theta u + zeta; tau and
    beta are the (single) growth and fragmentation rates.  Bounds must sit
    strictly inside (0, zeta/(-theta)) so that v stays positive.
    """

    theta: float
    zeta: float
    tau: float
    beta: float
    u_min: float
    u_max: float

    def __post_init__(self):
        problems = []
        if not self.theta < 0:
            problems.append(f"theta = {self.theta!r} must be < 0")
        if not self.zeta > 0:
            problems.append(f"zeta = {self.zeta!r} must be > 0")
        if not self.tau > 0:
            problems.append(f"tau = {self.tau!r} must be > 0")
        if not self.beta > 0:
            problems.append(f"beta = {self.beta!r} must be > 0")
        if problems:
            raise ValueError("; ".join(problems))
        ceiling = self.zeta / (-self.theta)
        if not (0 < self.u_min < self.u_max < ceiling):
            raise ValueError(
                f"need 0 < u_min < u_max < zeta/(-theta) = {ceiling:.6g}, "
                f"got [{self.u_min!r}, {self.u_max!r}]"
            )

    @property
    def A(self) -> float:
        return self.theta * self.tau + self.beta

    @property
    def B(self) -> float:
        return math.sqrt(-2.0 * self.theta * self.beta * self.tau)

    @property
    def C(self) -> float:
        return self.theta * self.tau + 3.0 * self.beta

    @property
    def D(self) -> float:
        return self.zeta * self.tau

    @property
    def u_ceiling(self) -> float:
        return self.zeta / (-self.theta)

    def sigma(self, u):
        return self.theta * u + self.zeta

    def matrices(self) -> GrowthFragMatrices:
        params = ModelParams(
            n=2,
            tau=(self.tau, 0.0),
            beta=(0.0, self.beta),
            kappa={(1, 2): 2.0},
        )
        return build_matrices(params)


def delta(cfg: Dim2Config, u):
    A, B, C, D = cfg.A, cfg.B, cfg.C, cfg.D
    return (A * A - 2.0 * B * B) * u * u + 2.0 * C * D * u + D * D


def delta_prime(cfg: Dim2Config, u):
    A, B, C, D = cfg.A, cfg.B, cfg.C, cfg.D
    return 2.0 * (A * A - 2.0 * B * B) * u + 2.0 * C * D


def delta_second(cfg: Dim2Config) -> float:
    A, B = cfg.A, cfg.B
    return 2.0 * (A * A - 2.0 * B * B)


def lambda_closed(cfg: Dim2Config, u):
    """Chord-restricted Perron value lam_P(u, sigma(u)) in closed form."""
    return 0.5 * (-cfg.A * u - cfg.D + np.sqrt(delta(cfg, u)))


def singular_control(cfg: Dim2Config) -> float:
    """The unique chord maximizer u_bar = (D/B)(2 beta + B)/(beta + 2B - theta tau)."""
    if not -2.0 * cfg.theta * cfg.tau * cfg.beta > 0:
        raise ValueError("B^2 = -2 theta tau beta must be positive (check signs)")
    B = cfg.B
    u = (cfg.D / B) * (2.0 * cfg.beta + B) / (cfg.beta + 2.0 * B - cfg.theta * cfg.tau)
    if not 0.0 < u < cfg.u_ceiling:
        raise ValueError(f"singular control {u!r} fell outside (0, {cfg.u_ceiling!r})")
    return u


def u_minus(cfg: Dim2Config) -> float:
    """Interior root of lam_P'(u) = 0 from the stationarity quadratic.

    Squaring Delta'(u) = 2 A sqrt(Delta(u)) gives
    -2 B^2 (A^2 - 2B^2) u^2 - 4 B^2 C D u + D^2 (C^2 - A^2) = 0 with
    discriminant 64 A^2 B^2 D^2 beta^2.  Solved in the cancellation-safe
    form; degenerate leading coefficients (A^2 = 2 B^2) reduce to the
    linear case.  Squaring introduces the Delta' = -2A sqrt(Delta) branch,
    and that spurious root can land inside (0, u_ceiling) too, so candidates
    are screened against the unsquared equation before the interiority cut.
    """
    A, B, C, D = cfg.A, cfg.B, cfg.C, cfg.D
    a = -2.0 * B * B * (A * A - 2.0 * B * B)
    b = -4.0 * B * B * C * D
    c = D * D * (C * C - A * A)
    sq = 8.0 * abs(A) * B * D * cfg.beta  # sqrt of the closed-form discriminant
    if a == 0.0:
        roots = [-c / b] if b != 0.0 else []
    else:
        qq = -(b + math.copysign(sq, b)) / 2.0 if b != 0.0 else -sq / 2.0
        if qq == 0.0:
            roots = [0.0, -b / a]
        else:
            roots = [qq / a, c / qq]

    def on_true_branch(u):
        d = delta(cfg, u)
        if d < 0.0:
            return False
        lhs = delta_prime(cfg, u)
        rhs = 2.0 * A * math.sqrt(d)
        return abs(lhs - rhs) <= 1e-8 * (abs(lhs) + abs(rhs) + 1e-300)

    interior = [u for u in roots if 0.0 < u < cfg.u_ceiling and on_true_branch(u)]
    if not interior:
        raise ValueError(f"no interior stationarity root among {roots!r}")
    return float(interior[0])


@dataclass(frozen=True)
class OptimalEigenelements:
    """Perron data at the singular control, raw rays and normalized forms."""

    u_bar: float
    lam: float
    X_raw: tuple[float, float]
    phi_raw: tuple[float, float]
    X: np.ndarray  # ||X||_1 = 1
    phi: np.ndarray  # phi @ X = 1


def optimal_eigenelements(cfg: Dim2Config) -> OptimalEigenelements:
    """Closed-form (lam_bar, X_bar, phi_bar) at u_bar.

    lam_bar = zeta tau beta / (beta + 2B - theta tau), X_bar = (2 beta, B),
    phi_bar = (beta + B, 2 beta + B).
    """
    B = cfg.B
    lam = cfg.zeta * cfg.tau * cfg.beta / (cfg.beta + 2.0 * B - cfg.theta * cfg.tau)
    X_raw = (2.0 * cfg.beta, B)
    phi_raw = (cfg.beta + B, 2.0 * cfg.beta + B)
    X = np.array(X_raw)
    X = X / X.sum()
    phi = np.array(phi_raw)
    phi = phi / float(phi @ X)
    return OptimalEigenelements(
        u_bar=singular_control(cfg),
        lam=float(lam),
        X_raw=X_raw,
        phi_raw=phi_raw,
        X=X,
        phi=phi,
    )


def y_field(y, u: float, cfg: Dim2Config):
    """Flow of the state projection y = x_1/(x_1 + x_2)."""
    ub = u * cfg.beta
    return 2.0 * ub - (3.0 * ub + cfg.sigma(u) * cfg.tau) * y + ub * y * y


def q_field(q, u: float, cfg: Dim2Config):
    """Flow of the costate projection q = p_1/(p_1 + p_2)."""
    st = cfg.sigma(u) * cfg.tau
    ub = u * cfg.beta
    return -(st - (3.0 * st - ub) * q + (2.0 * st - 3.0 * ub) * q * q)


def projective_fields(y, q, u: float, cfg: Dim2Config):
    return y_field(y, u, cfg), q_field(q, u, cfg)


def steady_projections(u: float, cfg: Dim2Config):
    """Fixed points (Y(u), pi(u)) of the projective flows at constant u.

    Y is increasing and pi decreasing in u; pi(zeta/(-theta)) = 1/3, the
    projection of the transversality costate psi = (1, 2).
    """
    st = cfg.sigma(u) * cfg.tau
    ub = u * cfg.beta
    s = math.sqrt(delta(cfg, u))
    Y = (ub - st + s) / (ub + st + s)
    pi = (ub - st + s) / (5.0 * ub - st + s)
    return Y, pi


def _rk4_step(f, y, h):
    k1 = f(y)
    k2 = f(y + 0.5 * h * k1)
    k3 = f(y + 0.5 * h * k2)
    k4 = f(y + h * k3)
    return y + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _flow_until(f, y0, target, dt, t_cap):
    """March RK4 until y crosses target; bisect the step that brackets it."""
    s0 = y0 - target
    if s0 == 0.0:
        return 0.0, y0
    t, y = 0.0, y0
    while t < t_cap:
        y_new = _rk4_step(f, y, dt)
        if (y_new - target) * s0 <= 0.0:
            lo, hi = 0.0, dt
            while hi - lo > EVENT_TIME_ATOL:
                mid = 0.5 * (lo + hi)
                if (_rk4_step(f, y, mid) - target) * s0 <= 0.0:
                    hi = mid
                else:
                    lo = mid
            h = 0.5 * (lo + hi)
            return t + h, _rk4_step(f, y, h)
        t += dt
        y = y_new
    raise RuntimeError(f"no crossing of {target!r} within t <= {t_cap!r}")


def _event_time(f, y0, target, dt0, t_cap):
    """Crossing time with dt halved until the located time self-converges."""
    t_prev, y_prev = _flow_until(f, y0, target, dt0, t_cap)
    dt = 0.5 * dt0
    for _ in range(40):
        t_new, y_new = _flow_until(f, y0, target, dt, t_cap)
        if abs(t_new - t_prev) <= EVENT_SELF_ATOL * max(1.0, abs(t_new)):
            return t_new, y_new
        t_prev, y_prev = t_new, y_new
        dt *= 0.5
    raise RuntimeError("event time did not self-converge under dt halving")


def _flow_fixed(f, y0, T, n0=256):
    """Value after flowing for a fixed duration, step count self-converged."""
    if T == 0.0:
        return y0

    def run(n):
        h = T / n
        y = y0
        for _ in range(n):
            y = _rk4_step(f, y, h)
        return y

    n = n0
    prev = run(n)
    for _ in range(16):
        n *= 2
        cur = run(n)
        if abs(cur - prev) <= 1e-12 * max(1.0, abs(cur)):
            return cur
        prev = cur
    return prev


def entry_time(y0: float, cfg: Dim2Config) -> float:
    """Time for the bang entry arc to carry y0 onto Y(u_bar).

    Flows with u_max when starting below Y(u_bar), with u_min when starting
    above; either flow crosses in finite time because its own fixed point
    lies strictly beyond the target.
    """
    if not 0.0 <= y0 <= 1.0:
        raise ValueError(f"y0 = {y0!r} must lie in [0, 1]")
    u_bar = singular_control(cfg)
    Y_bar, _ = steady_projections(u_bar, cfg)
    if abs(y0 - Y_bar) <= 1e-14:
        return 0.0
    u = cfg.u_max if y0 < Y_bar else cfg.u_min
    f = lambda y: y_field(y, u, cfg)
    span = np.linspace(y0, Y_bar, 65)
    speed = np.abs(f(span)).min()
    if speed <= 0.0:
        raise RuntimeError("entry flow stalls before reaching Y(u_bar)")
    t_cap = 4.0 * abs(Y_bar - y0) / speed + 1.0
    rate_scale = 5.0 * u * cfg.beta + cfg.sigma(u) * cfg.tau
    dt0 = min(0.25 / rate_scale, t_cap / 8.0)
    t, _ = _event_time(f, y0, Y_bar, dt0, t_cap)
    return t


def exit_time(cfg: Dim2Config):
    """Length of the u_min tail arc, with the state projection at its start.

    T_psi is fixed by the costate: flowing q backward from the
    transversality value 1/3 with u_min must land on pi(u_bar).  Y_psi is
    then the state projection after riding the tail for that long from
    Y(u_bar); it ends up strictly between Y(u_min) and Y(u_bar).
    """
    u_bar = singular_control(cfg)
    Y_bar, pi_bar = steady_projections(u_bar, cfg)
    if not pi_bar > 1.0 / 3.0:
        raise RuntimeError(f"pi(u_bar) = {pi_bar!r} should exceed 1/3")
    g = lambda q: -q_field(q, cfg.u_min, cfg)  # backward-in-time flow
    span = np.linspace(1.0 / 3.0, pi_bar, 65)
    speed = np.abs(g(span)).min()
    if speed <= 0.0:
        raise RuntimeError("backward costate flow stalls before pi(u_bar)")
    t_cap = 4.0 * (pi_bar - 1.0 / 3.0) / speed + 1.0
    st = cfg.sigma(cfg.u_min) * cfg.tau
    rate_scale = 3.0 * st + 3.0 * cfg.u_min * cfg.beta
    dt0 = min(0.25 / rate_scale, t_cap / 8.0)
    T_psi, _ = _event_time(g, 1.0 / 3.0, pi_bar, dt0, t_cap)
    Y_psi = _flow_fixed(lambda y: y_field(y, cfg.u_min, cfg), Y_bar, T_psi)
    return T_psi, float(Y_psi)


@dataclass(frozen=True)
class TurnpikeControl:
    """Three-segment relaxed optimal control and its synthesis data."""

    cfg: Dim2Config
    T: float
    u_init: float
    T0: float
    u_bar: float
    v_bar: float
    T_psi: float
    lam_bar: float
    Y_bar: float
    pi_bar: float
    Y_psi: float
    control: ControlSignal

    @property
    def arc_window(self) -> tuple[float, float]:
        """[T0, T - T_psi], the singular cruise."""
        return self.T0, self.T - self.T_psi


def synthesize_turnpike(x0, T: float, cfg: Dim2Config) -> TurnpikeControl:
    """Assemble the bang/singular/bang control for horizon T from state x0.

    Raises
    ------
    HorizonError
        If T does not exceed the combined entry and exit layer durations.
    """
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (2,) or x0.min() < 0 or not x0.max() > 0:
        raise ValueError("x0 must be a nonnegative, nonzero 2-vector")
    y0 = float(x0[0] / x0.sum())

    u_bar = singular_control(cfg)
    Y_bar, pi_bar = steady_projections(u_bar, cfg)
    ee = optimal_eigenelements(cfg)
    T0 = entry_time(y0, cfg)
    u_init = cfg.u_max if y0 < Y_bar else cfg.u_min
    T_psi, Y_psi = exit_time(cfg)
    if not T > T0 + T_psi:
        raise HorizonError(T, T0 + T_psi)

    breaks = [0.0]
    us = []
    if T0 > 0.0:
        breaks.append(T0)
        us.append(u_init)
    breaks.append(T - T_psi)
    us.append(u_bar)
    breaks.append(T)
    us.append(cfg.u_min)
    control = ControlSignal.on_string(np.array(breaks), np.array(us), cfg.theta, cfg.zeta)

    return TurnpikeControl(
        cfg=cfg,
        T=float(T),
        u_init=float(u_init),
        T0=float(T0),
        u_bar=float(u_bar),
        v_bar=float(cfg.sigma(u_bar)),
        T_psi=float(T_psi),
        lam_bar=ee.lam,
        Y_bar=float(Y_bar),
        pi_bar=float(pi_bar),
        Y_psi=float(Y_psi),
        control=control,
    )


def chattering_approximation(tc: TurnpikeControl, n_pieces: int) -> ControlSignal:
    """Bang-bang square wave replacing the singular cruise.

    The cruise [T0, T - T_psi] is cut into ``n_pieces`` equal cells; each
    cell spends dt (u_max - u_bar)/(u_max - u_min) at u_min first, the rest
    at u_max, so the cell average of both u and sigma(u) equals the singular
    values exactly.  The result only takes admissible bang values.
    """
    if n_pieces < 1:
        raise ValueError("n_pieces must be >= 1")
    cfg = tc.cfg
    t_on, t_off = tc.arc_window
    span = t_off - t_on
    cell = span / n_pieces
    frac_min = (cfg.u_max - tc.u_bar) / (cfg.u_max - cfg.u_min)
    d_min = cell * frac_min

    breaks = [0.0]
    us = []
    if tc.T0 > 0.0:
        breaks.append(tc.T0)
        us.append(tc.u_init)
    for k in range(n_pieces):
        a = t_on + k * cell
        breaks.append(a + d_min)
        us.append(cfg.u_min)
        breaks.append(t_on + (k + 1) * cell if k < n_pieces - 1 else t_off)
        us.append(cfg.u_max)
    breaks.append(tc.T)
    us.append(cfg.u_min)
    return ControlSignal.on_string(np.array(breaks), np.array(us), cfg.theta, cfg.zeta)


@dataclass(frozen=True)
class IdentityReport:
    """Closed-form cross-checks at a probe point u.

    ``concavity_lhs`` is 2 Delta Delta'' - (Delta')^2, which collapses to the
    constant -32 D^2 beta^2 (= ``concavity_rhs``); its negativity is what
    makes sqrt(Delta), hence lam_P, strictly concave.  The stationarity
    quadratic's discriminant likewise collapses to 64 A^2 B^2 D^2 beta^2.
    """

    u: float
    delta: float
    lam: float
    concavity_lhs: float
    concavity_rhs: float
    discriminant: float
    discriminant_closed: float
    u_minus: float
    u_sing: float

    @property
    def concavity_rel_err(self) -> float:
        return abs(self.concavity_lhs - self.concavity_rhs) / abs(self.concavity_rhs)

    @property
    def root_gap(self) -> float:
        return abs(self.u_minus - self.u_sing)


def closed_form_identities(cfg: Dim2Config, u: float) -> IdentityReport:
    """Evaluate the closed-form identities at a probe u."""
    A, B, C, D = cfg.A, cfg.B, cfg.C, cfg.D
    d = float(delta(cfg, u))
    dp = float(delta_prime(cfg, u))
    dpp = delta_second(cfg)
    lhs = 2.0 * d * dpp - dp * dp
    rhs = -32.0 * D * D * cfg.beta * cfg.beta
    a = -2.0 * B * B * (A * A - 2.0 * B * B)
    b = -4.0 * B * B * C * D
    c = D * D * (C * C - A * A)
    disc = b * b - 4.0 * a * c
    disc_closed = 64.0 * A * A * B * B * D * D * cfg.beta * cfg.beta
    return IdentityReport(
        u=float(u),
        delta=d,
        lam=float(lambda_closed(cfg, u)),
        concavity_lhs=lhs,
        concavity_rhs=rhs,
        discriminant=disc,
        discriminant_closed=disc_closed,
        u_minus=u_minus(cfg),
        u_sing=singular_control(cfg),
    )
