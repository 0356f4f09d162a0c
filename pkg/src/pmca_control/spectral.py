"""Perron eigenvalue machinery for the assembled generator M(u, v) = u F + v G.

For fixed positive controls the generator is an irreducible Metzler matrix, so
it carries a simple dominant eigenvalue with positive right and left
eigenvectors (the asymptotic growth exponent of the polymer population and
its stable profile).  Everything here is built on a shifted power iteration:
M + cI with c = max |diagonal| + 1 is nonnegative and primitive, so the
iteration converges without any general eigensolver.

The admissible instantaneous control set is Omega = {(u, r(u))}; its convex
hull is bounded above by the chord sigma(u) = theta*u + zeta through the
endpoints (r is strictly convex).  Relaxed controls live on that chord.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import GrowthFragMatrices, ModelParams, RateFunction, build_matrices

POWER_ITERATION_CAP = 100_000
POWER_MOVE_TOL = 1e-13  # successive-iterate angle, 1-normalized positive vectors
RESIDUAL_RTOL = 1e-12  # internal target; the guaranteed bound is 1e-11 * ||M||_inf

_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


class EigenConvergenceError(RuntimeError):
    """Power iteration failed to reach its residual target within the cap."""

    def __init__(self, residual, message="power iteration did not converge"):
        self.residual = residual
        super().__init__(f"{message} (last residual {residual:.3e})")


@dataclass(frozen=True)
class PerronTriple:
    """Dominant eigenvalue with its positive right/left eigenvectors.

    Normalization: ||X||_1 = 1 and phi @ X = 1.  When ``reducible_limit`` is
    set (u = 0, growth only) the matrix is reducible; the dominant value is 0
    with X concentrated on the largest size, and positivity of X fails by
    construction.
    """

    lam: float
    X: np.ndarray
    phi: np.ndarray
    reducible_limit: bool = False

    def residuals(self, M: np.ndarray) -> tuple[float, float]:
        right = float(np.abs(M @ self.X - self.lam * self.X).max())
        left = float(np.abs(self.phi @ M - self.lam * self.phi).max())
        return right, left


def _inf_norm(A):
    return float(np.abs(A).sum(axis=1).max())


def _dominant_pair(A, x0=None, w0=None, cap=POWER_ITERATION_CAP, move_tol=POWER_MOVE_TOL):
    """Shifted power iteration for the dominant right/left pair of a Metzler A.

    Returns (lam, X, w, steps) with ||X||_1 = 1, ||w||_1 = 1, both positive.
    Iterates in chunks, renormalizing by the 1-norm (a plain sum for positive
    vectors); convergence is declared when successive iterates stop moving and
    the eigen-residual is below RESIDUAL_RTOL * ||A||_inf.
    """
    n = A.shape[0]
    c = float(np.abs(np.diag(A)).max()) + 1.0
    B = A + c * np.eye(n)
    scale = _inf_norm(B)
    Bh = B / scale
    BhT = np.ascontiguousarray(Bh.T)

    x = np.full(n, 1.0 / n) if x0 is None else np.asarray(x0, dtype=float) / np.sum(x0)
    w = np.full(n, 1.0 / n) if w0 is None else np.asarray(w0, dtype=float) / np.sum(w0)

    a_norm = _inf_norm(A)
    res_tol = RESIDUAL_RTOL * a_norm
    chunk = 16
    used = 0
    res = math.inf
    while True:
        x_prev, w_prev = x, w
        for _ in range(chunk):
            x = Bh @ x
        for _ in range(chunk):
            w = BhT @ w
        used += chunk
        sx, sw = x.sum(), w.sum()
        if not (np.isfinite(sx) and sx > 0 and np.isfinite(sw) and sw > 0):
            raise EigenConvergenceError(float("nan"), "power iterate left the positive cone")
        x = x / sx
        w = w / sw
        moved = np.abs(x - x_prev).sum() + np.abs(w - w_prev).sum()
        if moved <= 2.0 * move_tol or used >= cap:
            Ax = A @ x
            wx = float(w @ x)
            lam = float(w @ Ax) / wx
            res = max(
                float(np.abs(Ax - lam * x).max()),
                float(np.abs(w @ A - lam * w).max()),
            )
            if res <= res_tol:
                return lam, x, w, used
            if used >= cap:
                raise EigenConvergenceError(res)


def perron_triple(u: float, v: float, mats: GrowthFragMatrices, *, x0=None, w0=None) -> PerronTriple:
    """Perron triple of M(u, v) = u F + v G.

    Parameters
    ----------
    u, v : float
        Sonication intensity u >= 0 and growth modulation v > 0.  For u > 0
        the generator is irreducible and the triple is strictly positive;
        u = 0 is returned as a reducible limit (lam = 0) with a flag.
    x0, w0 : array, optional
        Warm starts for the right/left iterations (must be positive).
    """
    if u < 0:
        raise ValueError(f"u = {u!r} must be >= 0")
    if not v > 0:
        raise ValueError(f"v = {v!r} must be > 0")
    n = mats.n
    if u == 0.0:
        # dx/dt = v G x is a pure cascade: everything drains into the largest
        # size, growth exponent 0.  The left vector is the total count.
        X = np.zeros(n)
        X[-1] = 1.0
        phi = np.ones(n)
        return PerronTriple(lam=0.0, X=X, phi=phi, reducible_limit=True)

    A = mats.assembled(u, v)
    lam, X, w, _ = _dominant_pair(A, x0=x0, w0=w0)
    phi = w / float(w @ X)
    return PerronTriple(lam=lam, X=X, phi=phi)


def perron_gradient(u: float, v: float, mats: GrowthFragMatrices, triple: PerronTriple | None = None):
    """Exact eigenvalue gradient (d lam/du, d lam/dv) = (phi F X, phi G X)."""
    if triple is None:
        triple = perron_triple(u, v, mats)
    dlam_du = float(triple.phi @ mats.F @ triple.X)
    dlam_dv = float(triple.phi @ mats.G @ triple.X)
    return dlam_du, dlam_dv


@dataclass(frozen=True)
class StringParams:
    """Chord of the rate graph over [u_min, u_max]: sigma(u) = theta u + zeta."""

    theta: float
    zeta: float
    u_min: float
    u_max: float

    def sigma(self, u):
        return self.theta * u + self.zeta


def string_params(rate: RateFunction, u_min: float, u_max: float) -> StringParams:
    """Slope/intercept of the chord through (u_min, r(u_min)) and (u_max, r(u_max))."""
    if not u_min < u_max:
        raise ValueError(f"need u_min < u_max, got [{u_min!r}, {u_max!r}]")
    r_lo, r_hi = float(rate(u_min)), float(rate(u_max))
    span = u_max - u_min
    theta = (r_hi - r_lo) / span
    zeta = (u_max * r_lo - u_min * r_hi) / span
    return StringParams(theta=theta, zeta=zeta, u_min=u_min, u_max=u_max)


@dataclass(frozen=True)
class HullPoint:
    """A relaxed control (u, v) inside the convex hull of the rate graph."""

    u: float
    v: float


def in_hull(point: HullPoint, rate: RateFunction, strp: StringParams, tol: float = 1e-12) -> bool:
    """Membership test: u within bounds and r(u) <= v <= sigma(u), up to tol."""
    u, v = point.u, point.v
    if not (strp.u_min - tol <= u <= strp.u_max + tol):
        return False
    return float(rate(u)) - tol <= v <= strp.sigma(u) + tol


def _parabola_vertex(xl, fl, xm, fm, xr, fr):
    num = (xm - xl) ** 2 * (fm - fr) - (xm - xr) ** 2 * (fm - fl)
    den = (xm - xl) * (fm - fr) - (xm - xr) * (fm - fl)
    if den == 0.0:
        return xm
    return xm - 0.5 * num / den


def _golden_max(f, a, b, width_tol):
    """Golden-section maximization of a unimodal f on [a, b].

    Shrinks the bracket to ``width_tol`` and then polishes the midpoint with
    two parabolic vertex fits at decreasing spacing; the fits average out the
    eigensolver's evaluation noise, which otherwise limits how sharply a flat
    maximum can be localized.
    """
    a0, b0 = a, b
    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    fc, fd = f(c), f(d)
    while (b - a) > width_tol:
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - _INVPHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INVPHI * (b - a)
            fd = f(d)
    u = 0.5 * (a + b)
    fu = f(u)
    for h in (1e-3 * (b0 - a0), 1e-5 * (b0 - a0)):
        xl, xr = u - h, u + h
        if xl <= a0 or xr >= b0:
            break
        fl, fr = f(xl), f(xr)
        if not (fu >= fl and fu >= fr):
            break
        v = _parabola_vertex(xl, fl, u, fu, xr, fr)
        if not (xl < v < xr):
            break
        fv = f(v)
        if fv >= fu:
            u, fu = v, fv
    return u, fu


@dataclass(frozen=True)
class ConstantMaxResult:
    u_opt: float
    lam: float
    boundary: bool


@dataclass(frozen=True)
class HullMaxResult:
    u_bar: float
    v_bar: float
    lam: float
    triple: PerronTriple
    boundary: bool
    strp: StringParams


def _maximize_on_curve(f, u_min, u_max, pre_scan, width_tol):
    """Shared scan+golden driver; returns (u, lam, boundary)."""
    if pre_scan >= 3:
        grid = np.linspace(u_min, u_max, pre_scan)
        vals = np.array([f(u) for u in grid])
        i = int(np.argmax(vals))
        if i == 0 or i == pre_scan - 1:
            return float(grid[i]), float(vals[i]), True
        lo, hi = float(grid[i - 1]), float(grid[i + 1])
    else:
        lo, hi = u_min, u_max
    u, lam = _golden_max(f, lo, hi, width_tol)
    edge = 2.0 * max(width_tol, 1e-9 * (u_max - u_min))
    boundary = u - u_min <= edge or u_max - u <= edge
    if boundary:
        for ue in (u_min, u_max):
            fe = f(ue)
            if fe > lam:
                u, lam = ue, fe
    return float(u), float(lam), boundary


def _warmed_lambda(mats, v_of_u):
    """lam(u) evaluator that warm-starts each solve from the previous vectors."""
    state = {"x": None, "w": None}

    def f(u):
        A = mats.assembled(u, v_of_u(u))
        lam, x, w, _ = _dominant_pair(A, x0=state["x"], w0=state["w"])
        state["x"], state["w"] = x, w
        return lam

    return f


def maximize_perron_constant(
    mats: GrowthFragMatrices,
    rate: RateFunction,
    u_min: float,
    u_max: float,
    *,
    pre_scan: int = 256,
    width_tol: float = 1e-10,
) -> ConstantMaxResult:
    """Maximize u -> lam_P(u, r(u)) over constant admissible controls.

    A grid pre-scan locates a unimodality bracket; golden-section then
    shrinks it below ``width_tol``.  A maximizer at either bound is reported
    with ``boundary=True`` rather than rejected.
    """
    if not u_min < u_max:
        raise ValueError(f"need u_min < u_max, got [{u_min!r}, {u_max!r}]")
    if not rate.is_positive_on(u_min, u_max):
        raise ValueError("rate must stay positive on the control interval")
    f = _warmed_lambda(mats, rate)
    u, lam, boundary = _maximize_on_curve(f, u_min, u_max, pre_scan, width_tol)
    return ConstantMaxResult(u_opt=u, lam=lam, boundary=boundary)


def maximize_perron_hull(
    mats: GrowthFragMatrices,
    rate: RateFunction,
    u_min: float,
    u_max: float,
    *,
    pre_scan: int = 256,
    width_tol: float = 1e-10,
) -> HullMaxResult:
    """Maximize lam_P over the hull boundary v = sigma(u) (relaxed controls).

    The maximum of the relaxed problem sits on the chord, so a scalar search
    in u suffices.  Returns the maximizing pair with its Perron triple.
    """
    strp = string_params(rate, u_min, u_max)
    if not min(rate(u_min), rate(u_max)) > 0:
        raise ValueError("rate must be positive at the interval endpoints")
    f = _warmed_lambda(mats, strp.sigma)
    u, lam, boundary = _maximize_on_curve(f, u_min, u_max, pre_scan, width_tol)
    v = float(strp.sigma(u))
    triple = perron_triple(u, v, mats)
    return HullMaxResult(u_bar=u, v_bar=v, lam=triple.lam, triple=triple, boundary=boundary, strp=strp)


@dataclass(frozen=True)
class ExpansionReport:
    """Large-u behaviour of lam_P(u, r(u)) against its predicted expansion.

    With r(u) = r0 + rl u^{-l} and tau_i = i tau_1 up to index k (and a
    strict surplus at k+1), the eigenvalue behaves as

        lam_P(u) = r0 tau_1 + coeff * u^{-min(k, l)} + o(u^{-min(k, l)}) .

    The leading coefficient depends on which of k and l is smaller; the
    eigenvector components decay as x_i ~ amp_i * u^{1-i}.
    """

    k: int
    l: float
    case: str
    order: float
    predicted_coeff: float
    empirical_coeff: float
    coeff_rel_err: float
    expected_exponent: float
    exponent_fit: float
    eigvec_expected_slopes: tuple[float, ...]
    eigvec_slopes: tuple[float, ...]
    eigvec_expected_amplitudes: tuple[float, ...]
    eigvec_amplitudes: tuple[float, ...]
    u_samples: tuple[float, ...]
    lam_samples: tuple[float, ...]

    def summary(self) -> str:
        lines = [
            f"case {self.case} (k={self.k}, l={self.l:g}): order u^-{self.order:g}",
            f"  coefficient: predicted {self.predicted_coeff:.6g}, "
            f"fitted {self.empirical_coeff:.6g} (rel err {self.coeff_rel_err:.2e})",
            f"  exponent: expected {self.expected_exponent:g}, fitted {self.exponent_fit:.6g}",
        ]
        for i, (se, sf) in enumerate(zip(self.eigvec_expected_slopes, self.eigvec_slopes), start=1):
            lines.append(f"  x_{i}: decay exponent expected {se:g}, fitted {sf:.6g}")
        return "\n".join(lines)


def expansion_check(
    params: ModelParams,
    rate: RateFunction,
    k: int,
    u_samples=(1e3, 3e3, 1e4),
) -> ExpansionReport:
    """Compare lam_P(u, r(u)) at large u against the predicted power law.

    Requires the power-tail rate form and a growth ladder that is arithmetic
    up to index k: tau_i = i tau_1 for i <= k, with tau_{k+1} > (k+1) tau_1.
    The coefficient fit uses the largest sample; the exponent fit is the
    log-log slope between the two largest samples.
    """
    if rate.form != "power_tail":
        raise ValueError("expansion check needs the power_tail rate form")
    r0 = rate.params["r0"]
    rl = rate.params["rl"]
    l = rate.params["l"]
    if not r0 > 0:
        raise ValueError(f"power-tail limit r0 = {r0!r} must be > 0")

    tau = params.tau
    n = params.n
    if not 1 <= k <= n - 2:
        raise ValueError(f"k = {k} must lie in [1, n-2] so that tau_(k+1) > 0 can hold")
    tau1 = tau[0]
    for i in range(1, k + 1):
        if abs(tau[i - 1] - i * tau1) > 1e-12 * i * tau1:
            raise ValueError(f"tau_{i} = {tau[i - 1]!r} must equal {i} * tau_1 for i <= k")
    if not tau[k] > (k + 1) * tau1:
        raise ValueError(f"tau_{k + 1} = {tau[k]!r} must exceed (k+1) * tau_1 = {(k + 1) * tau1!r}")

    mats = build_matrices(params)
    u_samples = tuple(sorted(float(u) for u in u_samples))
    triples = [perron_triple(u, float(rate(u)), mats) for u in u_samples]
    lams = np.array([t.lam for t in triples])

    ladder = math.prod(tau[i - 1] / params.beta[i] for i in range(1, k + 1))
    surplus = tau[k] - (k + 1) * tau1
    if k < l:
        case = "k<l"
        coeff = r0 ** (k + 1) * surplus * ladder
    elif k == l:
        case = "k=l"
        coeff = r0 ** (k + 1) * surplus * ladder + rl * tau1
    else:
        case = "k>l"
        coeff = rl * tau1
    order = min(k, float(l))

    d = lams - r0 * tau1
    u2, u3 = u_samples[-2], u_samples[-1]
    exponent_fit = float(np.log(d[-1] / d[-2]) / np.log(u3 / u2))
    empirical = float(d[-1] * u3**order)
    rel_err = abs(empirical - coeff) / abs(coeff)

    X2, X3 = triples[-2].X, triples[-1].X
    slopes = tuple(float(s) for s in np.log(X3 / X2) / np.log(u3 / u2))
    expected_slopes = tuple(float(1 - i) for i in range(1, n + 1))
    amps = tuple(float(a) for a in X3 * u3 ** np.arange(0, n, dtype=float))
    expected_amps = tuple(
        r0 ** (i - 1) * math.prod(tau[j - 1] / params.beta[j] for j in range(1, i))
        for i in range(1, n + 1)
    )

    return ExpansionReport(
        k=k,
        l=float(l),
        case=case,
        order=float(order),
        predicted_coeff=float(coeff),
        empirical_coeff=empirical,
        coeff_rel_err=float(rel_err),
        expected_exponent=-float(order),
        exponent_fit=exponent_fit,
        eigvec_expected_slopes=expected_slopes,
        eigvec_slopes=slopes,
        eigvec_expected_amplitudes=tuple(float(a) for a in expected_amps),
        eigvec_amplitudes=amps,
        u_samples=u_samples,
        lam_samples=tuple(float(x) for x in lams),
    )
