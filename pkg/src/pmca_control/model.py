"""Compartment model for polymer growth and fragmentation under sonication.

The state x(t) collects polymer counts by size class 1..n.  Growth moves mass
up the size ladder (matrix G, driven by the nutrient-limited elongation rates
tau), fragmentation moves it back down (matrix F, driven by the breakage
rates beta and the fragment-count kernel kappa).  The controlled dynamics are

    dx/dt = u F x + v G x ,

where u is the sonication intensity and v the growth modulation.  Fragment
counts must conserve polymerized mass: sum_i i * kappa[i, j] = j for every
breakable size j.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

MASS_BALANCE_RTOL = 1e-12


class ModelValidationError(ValueError):
    """Model coefficients violate a structural invariant."""

    def __init__(self, report):
        self.report = report
        super().__init__("invalid model coefficients:\n" + report.describe())


@dataclass(frozen=True)
class Violation:
    rule: str
    where: str
    message: str

    def __str__(self):
        return f"{self.rule} [{self.where}]: {self.message}"


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.violations

    def describe(self) -> str:
        if self.ok:
            return "ok"
        return "\n".join(f"- {v}" for v in self.violations)


@dataclass(frozen=True)
class ModelParams:
    """Size count and rate coefficients of the compartment model.

    Parameters
    ----------
    n : int
        Number of size compartments, at least 2.
    tau : sequence of float
        Growth rates tau_1..tau_n; tau_i > 0 for i < n and tau_n = 0
        (the largest size cannot grow further).
    beta : sequence of float
        Fragmentation rates beta_1..beta_n; beta_1 = 0 (monomers do not
        break) and beta_j > 0 for j >= 2.
    kappa : mapping (i, j) -> float
        Expected number of size-i fragments from breaking a size-j polymer,
        for 1 <= i < j <= n.  Missing pairs count as zero.
    """

    n: int
    tau: tuple[float, ...]
    beta: tuple[float, ...]
    kappa: dict[tuple[int, int], float] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "tau", tuple(float(t) for t in self.tau))
        object.__setattr__(self, "beta", tuple(float(b) for b in self.beta))
        object.__setattr__(
            self,
            "kappa",
            {(int(i), int(j)): float(k) for (i, j), k in self.kappa.items()},
        )

    def kappa_at(self, i: int, j: int) -> float:
        return self.kappa.get((i, j), 0.0)

    def total_fragments(self, j: int) -> float:
        """K_j = sum_i kappa[i, j], the mean fragment count of size j."""
        return sum(k for (i, jj), k in self.kappa.items() if jj == j)


def validate(params: ModelParams) -> ValidationReport:
    """Check every structural invariant, returning the full violation list.

    An empty list means the parameters are admissible.  Mass balance is
    checked to relative tolerance ``MASS_BALANCE_RTOL``.
    """
    bad = []

    def flag(rule, where, message):
        bad.append(Violation(rule, where, message))

    n = params.n
    if not isinstance(n, int) or n < 2:
        flag("size-count", f"n={n}", "need an integer n >= 2")
        return ValidationReport(tuple(bad))

    if len(params.tau) != n:
        flag("growth-rates", f"len={len(params.tau)}", f"expected {n} entries")
    else:
        for i, t in enumerate(params.tau[:-1], start=1):
            if not t > 0:
                flag("growth-rates", f"i={i}", f"tau_{i} = {t!r} must be > 0")
        if params.tau[-1] != 0.0:
            flag("growth-rates", f"i={n}", f"tau_{n} = {params.tau[-1]!r} must be 0")

    if len(params.beta) != n:
        flag("fragmentation-rates", f"len={len(params.beta)}", f"expected {n} entries")
    else:
        if params.beta[0] != 0.0:
            flag("fragmentation-rates", "j=1", f"beta_1 = {params.beta[0]!r} must be 0")
        for j, b in enumerate(params.beta[1:], start=2):
            if not b > 0:
                flag("fragmentation-rates", f"j={j}", f"beta_{j} = {b!r} must be > 0")

    for (i, j), k in params.kappa.items():
        if not (1 <= i < j <= n):
            flag("fragment-kernel", f"(i,j)=({i},{j})", "indices must satisfy 1 <= i < j <= n")
        if k < 0:
            flag("fragment-kernel", f"(i,j)=({i},{j})", f"kappa = {k!r} must be >= 0")

    if len(params.tau) == n and len(params.beta) == n:
        for j in range(2, n + 1):
            s = sum(i * params.kappa_at(i, j) for i in range(1, j))
            if abs(s - j) > MASS_BALANCE_RTOL * j:
                flag(
                    "mass-balance",
                    f"j={j}",
                    f"sum_i i*kappa[i,{j}] = {s!r}, expected {j}",
                )

    return ValidationReport(tuple(bad))


@dataclass(frozen=True)
class GrowthFragMatrices:
    """F, G and the mass vector psi = (1, ..., n).

    Invariants: psi @ F == 0 exactly (mass-conserving fragmentation) and the
    columns of G sum to zero (growth conserves polymer count).  The arrays
    are write-protected after construction.
    """

    F: np.ndarray
    G: np.ndarray
    psi: np.ndarray

    @property
    def n(self) -> int:
        return self.F.shape[0]

    def assembled(self, u: float, v: float) -> np.ndarray:
        """M(u, v) = u F + v G."""
        return u * self.F + v * self.G


def build_matrices(params: ModelParams) -> GrowthFragMatrices:
    """Assemble F and G from validated parameters.

    Raises
    ------
    ModelValidationError
        If ``validate(params)`` reports any violation; the report rides on
        the exception.
    """
    report = validate(params)
    if not report.ok:
        raise ModelValidationError(report)

    n = params.n
    G = np.zeros((n, n))
    for i in range(1, n):  # tau_n = 0 leaves the last diagonal entry at 0
        G[i - 1, i - 1] = -params.tau[i - 1]
        G[i, i - 1] = params.tau[i - 1]

    F = np.zeros((n, n))
    for j in range(2, n + 1):
        F[j - 1, j - 1] = -params.beta[j - 1]
        for i in range(1, j):
            k = params.kappa_at(i, j)
            if k:
                F[i - 1, j - 1] = k * params.beta[j - 1]

    psi = np.arange(1, n + 1, dtype=float)
    for a in (F, G, psi):
        a.setflags(write=False)
    return GrowthFragMatrices(F=F, G=G, psi=psi)


class RateFunction:
    """Growth response v = r(u) to the sonication intensity.

    Supplies the value and its first two derivatives.  Supported forms:

    - ``rational``:   r(u) = a / (b + u)
    - ``affine``:     r(u) = c0 + c1 * u
    - ``power_tail``: r(u) = r0 + rl * u**(-l)
    - ``tabulated``:  cubic spline through (u_i, r_i) samples
    """

    def __init__(self, form, params, spline=None):
        self.form = form
        self.params = dict(params)
        self._spline = spline

    @classmethod
    def rational(cls, a: float, b: float) -> "RateFunction":
        return cls("rational", {"a": float(a), "b": float(b)})

    @classmethod
    def affine(cls, c0: float, c1: float = 0.0) -> "RateFunction":
        return cls("affine", {"c0": float(c0), "c1": float(c1)})

    @classmethod
    def constant(cls, c: float) -> "RateFunction":
        return cls.affine(c, 0.0)

    @classmethod
    def power_tail(cls, r0: float, rl: float, l: float) -> "RateFunction":
        if not l > 0:
            raise ValueError(f"power_tail exponent l = {l!r} must be > 0")
        return cls("power_tail", {"r0": float(r0), "rl": float(rl), "l": float(l)})

    @classmethod
    def tabulated(cls, u_samples, r_samples) -> "RateFunction":
        u = np.asarray(u_samples, dtype=float)
        r = np.asarray(r_samples, dtype=float)
        if u.ndim != 1 or u.size < 4 or u.shape != r.shape:
            raise ValueError("tabulated form needs matching 1-d arrays with >= 4 samples")
        spline = CubicSpline(u, r)
        return cls(
            "tabulated",
            {"u": tuple(u.tolist()), "r": tuple(r.tolist())},
            spline=spline,
        )

    def __call__(self, u):
        p = self.params
        if self.form == "rational":
            return p["a"] / (p["b"] + u)
        if self.form == "affine":
            return p["c0"] + p["c1"] * u
        if self.form == "power_tail":
            return p["r0"] + p["rl"] * u ** (-p["l"])
        return self._spline(u)

    def deriv(self, u):
        p = self.params
        if self.form == "rational":
            return -p["a"] / (p["b"] + u) ** 2
        if self.form == "affine":
            return p["c1"] * np.ones_like(np.asarray(u, dtype=float)) if np.ndim(u) else p["c1"]
        if self.form == "power_tail":
            return -p["l"] * p["rl"] * u ** (-p["l"] - 1.0)
        return self._spline(u, 1)

    def second_deriv(self, u):
        p = self.params
        if self.form == "rational":
            return 2.0 * p["a"] / (p["b"] + u) ** 3
        if self.form == "affine":
            return np.zeros_like(np.asarray(u, dtype=float)) if np.ndim(u) else 0.0
        if self.form == "power_tail":
            return p["l"] * (p["l"] + 1.0) * p["rl"] * u ** (-p["l"] - 2.0)
        return self._spline(u, 2)

    def is_positive_on(self, u_min: float, u_max: float, samples: int = 257) -> bool:
        u = np.linspace(u_min, u_max, samples)
        return bool(np.all(self(u) > 0))

    def is_strictly_convex_on(self, u_min: float, u_max: float, samples: int = 257) -> bool:
        u = np.linspace(u_min, u_max, samples)
        return bool(np.all(self.second_deriv(u) > 0))

    def to_dict(self) -> dict:
        return {"form": self.form, **self.params}

    @classmethod
    def from_dict(cls, d: dict) -> "RateFunction":
        d = dict(d)
        form = d.pop("form")
        if form == "rational":
            return cls.rational(d["a"], d["b"])
        if form == "affine":
            return cls.affine(d["c0"], d.get("c1", 0.0))
        if form == "power_tail":
            return cls.power_tail(d["r0"], d["rl"], d["l"])
        if form == "tabulated":
            return cls.tabulated(d["u"], d["r"])
        raise ValueError(f"unknown rate form {form!r}")

    def __repr__(self):
        inner = ", ".join(f"{k}={v}" for k, v in self.params.items() if k not in ("u", "r"))
        return f"RateFunction({self.form}, {inner})"
