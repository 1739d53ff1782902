import math

import numpy as np
import pytest

from winprob.quadrature import QuadratureError, integrate_adaptive, integrate_adaptive_batch


def test_constant():
    assert integrate_adaptive(lambda t: 1.0, 0.0, 1.0) == pytest.approx(1.0, abs=1e-12)


def test_polynomial():
    assert integrate_adaptive(lambda t: t**2, 0.0, 3.0) == pytest.approx(9.0, abs=1e-12)


def test_exponential_density():
    lam = 0.25
    got = integrate_adaptive(lambda t: lam * np.exp(-lam * t), 0.0, 40.0)
    assert got == pytest.approx(-math.expm1(-10.0), abs=1e-8)
    assert got == pytest.approx(0.9999546, abs=1e-7)


def test_endpoint_singularity_meets_tolerance():
    # int_0^1 t^-0.5 dt = 2, singular derivative at 0.
    got = integrate_adaptive(lambda t: t**-0.5, 0.0, 1.0, tol=1e-8)
    assert got == pytest.approx(2.0, abs=1e-7)


def test_breakpoints_kink():
    got = integrate_adaptive(lambda t: np.abs(t - 0.3), 0.0, 1.0, breakpoints=[0.3])
    assert got == pytest.approx(0.5 * 0.3**2 + 0.5 * 0.7**2, abs=1e-12)


def test_batch_matches_individual():
    rates = np.array([0.1, 1.0, 5.0])

    def f(x, owner):
        return rates[owner, None] * np.exp(-rates[owner, None] * x)

    got = integrate_adaptive_batch(f, 0.0, 2.0, size=3)
    np.testing.assert_allclose(got, -np.expm1(-2.0 * rates), atol=1e-9)


def test_batch_per_member_limits():
    got = integrate_adaptive_batch(lambda x, owner: np.ones_like(x), np.array([0.0, 1.0]), np.array([1.0, 4.0]))
    np.testing.assert_allclose(got, [1.0, 3.0], atol=1e-12)


def test_nonconvergence_raises():
    # Oscillation far beyond what a few subdivision rounds can resolve.
    with pytest.raises(QuadratureError):
        integrate_adaptive(lambda t: np.sin(1e6 * t**2), 0.0, 10.0, tol=1e-12, max_rounds=3)


def test_nonfinite_integrand_raises():
    with pytest.raises(QuadratureError):
        integrate_adaptive(lambda t: np.where(t > 0.5, np.nan, 1.0), 0.0, 1.0)


def test_bad_limits():
    with pytest.raises(ValueError):
        integrate_adaptive(lambda t: t, 1.0, 0.0)
