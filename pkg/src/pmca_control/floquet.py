"""Floquet analysis of periodically forced sonication.

A T-periodic control u(t) drives dx/dt = M(u(t)) x with
M(u) = u F + r(u) G.  The monodromy matrix (one period of the fundamental
solution, fixed-step RK4) gives the Floquet exponent
lam_F = log(spectral radius) / T.  For small forcing
u(t) = u_opt + eps * cos(omega t) around the constant maximizer, second-order
perturbation theory expresses d^2 lam_F / d eps^2 through the spectral basis
of M(u_opt):

    1/2 phi_1 M'' X_1
      + sum_{i>=2} (lam_1 - lam_i) / (omega^2 + (lam_1 - lam_i)^2)
                   * (phi_1 M' X_i)(phi_i M' X_1) ,

with M' = F + r'(u) G and M'' = r''(u) G.  Its omega -> infinity limit,
(1/2) r''(u)/(r(u) - u r'(u)) * lam_P(u), is positive for strictly convex r
with r - u r' > 0: the constant maximizer is a saddle against fast
oscillations, which is the spectral trace of the relaxation gap.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .model import GrowthFragMatrices, RateFunction

MONODROMY_MIN_STEPS = 1024
MONODROMY_DEFAULT_STEPS = 4096
MONODROMY_SELF_TOL = 1e-9
MONODROMY_STEP_CAP = 2**20
DIAGONALIZABILITY_COND_LIMIT = 1e12


class FloquetOverflowError(RuntimeError):
    """Monodromy entries overflowed; rescale the period or the rates."""


class DefectiveBasisError(RuntimeError):
    """Eigenvector matrix too ill-conditioned to trust the spectral basis."""

    def __init__(self, cond):
        self.cond = cond
        super().__init__(
            f"eigenvector condition number {cond:.3e} exceeds "
            f"{DIAGONALIZABILITY_COND_LIMIT:.0e}; matrix is numerically defective"
        )


@dataclass(frozen=True)
class PeriodicControl:
    """A strictly positive periodic intensity profile u(t)."""

    period: float
    u: Callable
    description: str = ""

    def __post_init__(self):
        if not self.period > 0:
            raise ValueError(f"period = {self.period!r} must be > 0")

    @classmethod
    def cosine(cls, u0: float, eps: float, omega: float) -> "PeriodicControl":
        if not omega > 0:
            raise ValueError(f"omega = {omega!r} must be > 0")
        return cls(
            period=2.0 * np.pi / omega,
            u=lambda t: u0 + eps * np.cos(omega * t),
            description=f"u0={u0:g}, eps={eps:g}, omega={omega:g}",
        )

    @classmethod
    def constant(cls, u0: float, period: float = 1.0) -> "PeriodicControl":
        return cls(period=period, u=lambda t: u0 + 0.0 * np.asarray(t), description=f"u0={u0:g}")


def monodromy(
    control: PeriodicControl,
    mats: GrowthFragMatrices,
    rate: RateFunction,
    steps: int = MONODROMY_DEFAULT_STEPS,
) -> np.ndarray:
    """Fundamental solution over one period by fixed-step RK4.

    Stage controls are sampled at the nodes and midpoints; u(t) and r(u(t))
    must stay positive across the period.
    """
    if steps < MONODROMY_MIN_STEPS:
        raise ValueError(f"steps = {steps} must be >= {MONODROMY_MIN_STEPS}")
    T = control.period
    h = T / steps
    t_nodes = h * np.arange(steps + 1)
    t_mids = t_nodes[:-1] + 0.5 * h
    u_nodes = np.asarray(control.u(t_nodes), dtype=float)
    u_mids = np.asarray(control.u(t_mids), dtype=float)
    if u_nodes.min() <= 0 or u_mids.min() <= 0:
        raise ValueError("periodic control must stay strictly positive")
    r_nodes = np.asarray(rate(u_nodes), dtype=float)
    r_mids = np.asarray(rate(u_mids), dtype=float)
    if r_nodes.min() <= 0 or r_mids.min() <= 0:
        raise ValueError("rate must stay strictly positive along the control")

    F, G = mats.F, mats.G
    X = np.eye(mats.n)
    for i in range(steps):
        M0 = u_nodes[i] * F + r_nodes[i] * G
        Mm = u_mids[i] * F + r_mids[i] * G
        M1 = u_nodes[i + 1] * F + r_nodes[i + 1] * G
        k1 = M0 @ X
        k2 = Mm @ (X + 0.5 * h * k1)
        k3 = Mm @ (X + 0.5 * h * k2)
        k4 = M1 @ (X + h * k3)
        X = X + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.isfinite(X).all():
        raise FloquetOverflowError(
            "monodromy overflowed; rescale the period or integrate sub-periods"
        )
    return X


def floquet_eigenvalue(
    control: PeriodicControl,
    mats: GrowthFragMatrices,
    rate: RateFunction,
    steps: int | None = None,
) -> float:
    """lam_F = log(spectral radius of the monodromy) / period.

    With ``steps=None`` the step count starts at the default and doubles
    until two consecutive answers agree to MONODROMY_SELF_TOL.
    """
    T = control.period

    def lam_at(s):
        Phi = monodromy(control, mats, rate, s)
        rho = float(np.abs(np.linalg.eigvals(Phi)).max())
        if rho <= 0.0:
            raise FloquetOverflowError("monodromy spectral radius underflowed to zero")
        return float(np.log(rho) / T)

    if steps is not None:
        return lam_at(steps)
    s = MONODROMY_DEFAULT_STEPS
    prev = lam_at(s)
    while s <= MONODROMY_STEP_CAP:
        s *= 2
        cur = lam_at(s)
        if abs(cur - prev) <= MONODROMY_SELF_TOL:
            return cur
        prev = cur
    raise RuntimeError("Floquet exponent did not self-converge under step doubling")


@dataclass(frozen=True)
class SpectralBasis:
    """Full biorthonormal eigenbasis of M(u_opt).

    Columns X[:, i] are right eigenvectors, rows phi[i] left ones, with
    phi[i] @ X[:, j] = delta_ij.  Ordering puts the (real, simple) dominant
    value first, with X[:, 0] positive and 1-normalized.
    """

    u_opt: float
    lam: np.ndarray  # complex, lam[0] real dominant
    X: np.ndarray  # complex columns
    phi: np.ndarray  # complex rows
    cond: float

    @property
    def n(self) -> int:
        return self.lam.size

    def biorthonormality_residual(self) -> float:
        return float(np.abs(self.phi @ self.X - np.eye(self.n)).max())


def spectral_basis(u_opt: float, mats: GrowthFragMatrices, rate: RateFunction) -> SpectralBasis:
    """Eigendecomposition of M(u_opt) = u_opt F + r(u_opt) G.

    Raises
    ------
    DefectiveBasisError
        If the eigenvector matrix condition number exceeds the
        diagonalizability gate.
    """
    M = mats.assembled(u_opt, float(rate(u_opt)))
    w, V = np.linalg.eig(M)
    order = np.argsort(-w.real)
    w = w[order]
    V = V[:, order]
    cond = float(np.linalg.cond(V))
    if cond > DIAGONALIZABILITY_COND_LIMIT:
        raise DefectiveBasisError(cond)

    # dominant pair is real and positive up to roundoff; realify and orient
    lam1 = w[0]
    if abs(lam1.imag) > 1e-9 * max(1.0, abs(lam1.real)):
        raise RuntimeError(f"dominant eigenvalue {lam1!r} is not numerically real")
    w = w.astype(complex)
    w[0] = lam1.real
    x1 = V[:, 0]
    phase = x1[np.argmax(np.abs(x1))]
    x1 = (x1 / phase).real  # rotate onto the real axis
    if x1.min() <= 0:
        x1 = -x1
    if x1.min() <= 0:
        raise RuntimeError("dominant eigenvector is not one-signed")
    V = V.astype(complex)
    V[:, 0] = x1 / x1.sum()
    phi = np.linalg.inv(V)
    for a in (w, V, phi):
        a.setflags(write=False)
    return SpectralBasis(u_opt=float(u_opt), lam=w, X=V, phi=phi, cond=cond)


def gamma_coefficient(omega: float, lam1, lami):
    """Stationary response coefficients of mode i to cos(omega t) forcing.

    Returns (cos_coeff, sin_coeff) =
    ((lam1 - lami)/(omega^2 + (lam1 - lami)^2), omega/(omega^2 + (lam1 - lami)^2)).
    At omega = 0 this degenerates to (1/(lam1 - lami), 0).
    """
    d = complex(lam1) - complex(lami)
    if d == 0:
        raise ValueError("coincident eigenvalues have no resolvent coefficient")
    if not d.real > 0:
        raise ValueError(f"need Re(lam1 - lam_i) > 0, got {d!r}")
    denom = omega * omega + d * d
    return d / denom, omega / denom


def _mode_products(basis: SpectralBasis, mats: GrowthFragMatrices, rate: RateFunction):
    u = basis.u_opt
    M1 = mats.F + float(rate.deriv(u)) * mats.G
    M2 = float(rate.second_deriv(u)) * mats.G
    x1 = basis.X[:, 0]
    p1 = basis.phi[0]
    own = complex(p1 @ M1 @ x1)
    forward = basis.phi[1:] @ (M1 @ x1)  # phi_i M' X_1
    backward = (p1 @ M1) @ basis.X[:, 1:]  # phi_1 M' X_i
    curvature = complex(p1 @ M2 @ x1)
    return own, forward, backward, curvature


def _real_with_residue_check(value: complex, what: str) -> float:
    if abs(value.imag) > 1e-10 * max(1.0, abs(value.real)):
        raise RuntimeError(f"{what} has imaginary residue {value.imag:.3e}")
    return float(value.real)


def floquet_second_derivative_formula(
    basis: SpectralBasis,
    omega: float,
    mats: GrowthFragMatrices,
    rate: RateFunction,
) -> float:
    """Perturbative d^2 lam_F / d eps^2 at the constant maximizer.

    Requires the basis to sit at a stationary point of lam_P along the
    admissible curve (phi_1 M' X_1 = 0 up to 1e-8); complex conjugate modes
    pair up, and the imaginary residue of the sum is checked.
    """
    own, forward, backward, curvature = _mode_products(basis, mats, rate)
    if abs(own) > 1e-8:
        raise ValueError(
            f"basis is not at a stationary point: phi_1 M' X_1 = {own.real:.3e}"
        )
    d = basis.lam[0] - basis.lam[1:]
    total = 0.5 * curvature + np.sum(d / (omega * omega + d * d) * backward * forward)
    return _real_with_residue_check(complex(total), "second-derivative formula")


def perron_second_derivative(
    basis: SpectralBasis, mats: GrowthFragMatrices, rate: RateFunction
) -> float:
    """Static curvature d^2 lam_P / du^2 along u -> M(u, r(u)).

    This is the gamma = 1 (omega -> 0, doubled) reduction of the periodic
    formula: phi_1 M'' X_1 + 2 sum_i (phi_1 M' X_i)(phi_i M' X_1)/(lam_1 - lam_i).
    """
    _, forward, backward, curvature = _mode_products(basis, mats, rate)
    d = basis.lam[0] - basis.lam[1:]
    total = curvature + 2.0 * np.sum(backward * forward / d)
    return _real_with_residue_check(complex(total), "static curvature")


def high_frequency_limit(basis: SpectralBasis, rate: RateFunction) -> float:
    """omega -> infinity limit: (1/2) r''(u)/(r(u) - u r'(u)) * lam_P(u)."""
    u = basis.u_opt
    denom = float(rate(u)) - u * float(rate.deriv(u))
    if denom == 0.0:
        raise ValueError("r(u) - u r'(u) vanishes; the limit is undefined")
    return 0.5 * float(rate.second_deriv(u)) / denom * float(basis.lam[0].real)


def fd_second_derivative(
    u_opt: float,
    omega: float,
    mats: GrowthFragMatrices,
    rate: RateFunction,
    eps_pair=(1e-2, 1e-3),
    steps: int = 8192,
) -> float:
    """Finite-difference d^2 lam_F / d eps^2, Richardson-extrapolated.

    All exponents at one omega share the same step count so the RK4 bias
    largely cancels in the second difference; the two amplitudes are then
    combined assuming an O(eps^2) truncation error.
    """
    lam0 = floquet_eigenvalue(PeriodicControl.cosine(u_opt, 0.0, omega), mats, rate, steps=steps)

    def second_diff(eps):
        lp = floquet_eigenvalue(PeriodicControl.cosine(u_opt, eps, omega), mats, rate, steps=steps)
        lm = floquet_eigenvalue(PeriodicControl.cosine(u_opt, -eps, omega), mats, rate, steps=steps)
        return (lp - 2.0 * lam0 + lm) / (eps * eps)

    e1, e2 = max(eps_pair), min(eps_pair)
    d1, d2 = second_diff(e1), second_diff(e2)
    return (e1 * e1 * d2 - e2 * e2 * d1) / (e1 * e1 - e2 * e2)
