import numpy as np
import pytest

from pmca_control import (
    ModelParams,
    ModelValidationError,
    RateFunction,
    build_matrices,
    validate,
)


def make_params(**overrides):
    base = dict(
        n=3,
        tau=(0.25, 2.5, 0.0),
        beta=(0.0, 0.125, 0.25),
        kappa={(1, 2): 2.0, (1, 3): 1.0, (2, 3): 1.0},
    )
    base.update(overrides)
    return ModelParams(**base)


def test_valid_params_pass():
    assert validate(make_params()).ok


@pytest.mark.parametrize(
    "overrides, rule",
    [
        (dict(n=1, tau=(0.0,), beta=(0.0,), kappa={}), "size-count"),
        (dict(tau=(0.25, 2.5, 1.0)), "growth-rates"),  # tau_n must vanish
        (dict(tau=(-1.0, 2.5, 0.0)), "growth-rates"),
        (dict(beta=(0.1, 0.125, 0.25)), "fragmentation-rates"),  # beta_1 must vanish
        (dict(beta=(0.0, -0.125, 0.25)), "fragmentation-rates"),
        (dict(kappa={(1, 2): 2.0, (1, 3): 1.0}), "mass-balance"),
        (dict(kappa={(1, 2): 2.0, (1, 3): 3.0, (2, 3): 1.0}), "mass-balance"),
        (dict(kappa={(2, 2): 2.0, (1, 3): 1.0, (2, 3): 1.0}), "fragment-kernel"),
    ],
)
def test_invalid_params_flagged(overrides, rule):
    report = validate(make_params(**overrides))
    assert not report.ok
    assert any(v.rule == rule for v in report.violations), report.describe()


def test_build_matrices_raises_with_report():
    with pytest.raises(ModelValidationError) as exc:
        build_matrices(make_params(kappa={(1, 2): 2.0}))
    assert "mass-balance" in str(exc.value)


def test_mass_vector_annihilates_fragmentation(scan_mats):
    # psi F = 0: breaking a polymer conserves total polymerized mass
    psi = scan_mats.psi
    assert np.abs(psi @ scan_mats.F).max() == 0.0


def test_count_vector_annihilates_growth(scan_mats):
    # column sums of G vanish: elongation conserves the number of polymers
    ones = np.ones(scan_mats.n)
    assert np.abs(ones @ scan_mats.G).max() == 0.0


def test_matrix_shapes_and_signs(scan_mats):
    F, G = scan_mats.F, scan_mats.G
    n = scan_mats.n
    assert F.shape == G.shape == (n, n)
    # G is lower bidiagonal with nonpositive diagonal
    assert np.all(np.triu(G, 1) == 0.0)
    assert np.all(np.diag(G) <= 0.0)
    # F is upper triangular with nonnegative off-diagonal entries
    assert np.all(np.tril(F, -1) == 0.0)
    off = F - np.diag(np.diag(F))
    assert np.all(off >= 0.0)


def test_assembled_is_linear(scan_mats, rng):
    u, v = rng.uniform(0.1, 5.0, 2)
    M = scan_mats.assembled(u, v)
    assert np.allclose(M, u * scan_mats.F + v * scan_mats.G)


def test_matrices_are_write_protected(scan_mats):
    with pytest.raises(ValueError):
        scan_mats.F[0, 0] = 1.0


def test_mass_balance_tolerance_is_tight():
    # a 1e-9 relative defect in the kernel must be rejected
    params = make_params(kappa={(1, 2): 2.0 + 2e-9, (1, 3): 1.0, (2, 3): 1.0})
    report = validate(params)
    assert any(v.rule == "mass-balance" for v in report.violations)


# --- rate functions ---------------------------------------------------------


def test_rational_rate_values_and_derivatives():
    r = RateFunction.rational(2.0, 1.0)
    u = np.linspace(0.5, 8.0, 11)
    assert np.allclose(r(u), 2.0 / (1.0 + u))
    assert np.allclose(r.deriv(u), -2.0 / (1.0 + u) ** 2)
    assert np.allclose(r.second_deriv(u), 4.0 / (1.0 + u) ** 3)
    assert r.is_positive_on(0.5, 8.0)
    assert r.is_strictly_convex_on(0.5, 8.0)


def test_affine_and_constant_rates():
    r = RateFunction.affine(1.0, -0.1)
    assert r(3.0) == pytest.approx(0.7)
    assert r.deriv(3.0) == pytest.approx(-0.1)
    assert r.second_deriv(3.0) == 0.0
    c = RateFunction.constant(0.8)
    assert c(123.0) == pytest.approx(0.8)
    assert c.deriv(1.0) == 0.0


def test_power_tail_rate():
    r = RateFunction.power_tail(1.0, 5.0, 1.0)
    assert r(10.0) == pytest.approx(1.5)
    assert r.deriv(10.0) == pytest.approx(-0.05)
    assert r.second_deriv(10.0) == pytest.approx(0.01)
    with pytest.raises(ValueError):
        RateFunction.power_tail(1.0, 1.0, 0.0)


def test_tabulated_rate_matches_samples(rng):
    u = np.linspace(1.0, 8.0, 15)
    vals = 2.0 / (1.0 + u)
    r = RateFunction.tabulated(u, vals)
    assert np.allclose(r(u), vals)
    # interpolation error of a smooth function stays small between knots
    # (the end intervals carry the usual not-a-knot boundary penalty)
    mid = 0.5 * (u[:-1] + u[1:])
    err = np.abs(r(mid) - 2.0 / (1.0 + mid))
    assert err.max() < 1e-3
    assert err[2:-2].max() < 1e-4


@pytest.mark.parametrize(
    "rate",
    [
        RateFunction.rational(2.0, 1.0),
        RateFunction.affine(1.0, -0.05),
        RateFunction.power_tail(1.0, 5.0, 1.0),
    ],
)
def test_rate_serialization_round_trip(rate):
    clone = RateFunction.from_dict(rate.to_dict())
    u = np.linspace(0.5, 9.0, 7)
    assert np.allclose(clone(u), rate(u))
    assert clone.form == rate.form


def test_unknown_rate_form_rejected():
    with pytest.raises(ValueError):
        RateFunction.from_dict({"form": "sigmoid", "a": 1.0})
