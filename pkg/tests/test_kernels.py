import math

import mpmath
import numpy as np
import pytest

from radavg.kernels import (
    TruncationError,
    build_kernel,
    eval_kernel_derivative,
    falling_factorial,
    kernel_image_mean_bound,
    kernel_norm_bound,
    lemma4_lower_bound,
)
from radavg.weights import Monomial, PowerLog, make_counterexample_nu, tail

ONE = PowerLog(0, 0)


def test_falling_factorial():
    assert falling_factorial(np.array([5, 2, 1]), 3).tolist() == [60.0, 0.0, 0.0]
    assert falling_factorial(np.array([7]), 0).tolist() == [1.0]


def test_coefficients_for_constant_weight():
    k = build_kernel(ONE, 0.9)
    n = np.arange(k.n_max + 1)
    assert np.allclose(k.coefficients, n + 1, rtol=1e-12)


def test_coefficients_for_linear_weight():
    k = build_kernel(Monomial(1.0, 2.0), 0.8)
    n = np.arange(k.n_max + 1)
    assert np.allclose(k.coefficients, (2 * n + 3) / 4, rtol=1e-12)


def test_coefficients_grow_quadratically_for_power_weight():
    k = build_kernel(PowerLog(1, 0), 0.95)
    n = np.arange(k.n_max + 1)
    exact = (2 * n + 2) * (2 * n + 3) / 2
    assert np.allclose(k.coefficients, exact, rtol=1e-10)
    ratio = k.coefficients[32:] / n[32:] ** 2
    assert ratio.min() > 1.9 and ratio.max() < 2.5


@pytest.mark.parametrize(
    "nu", [ONE, PowerLog(1, 0), PowerLog(0.5, -2.0), PowerLog(-0.5, 1.0), Monomial(3.0)]
)
def test_coefficients_nondecreasing(nu):
    k = build_kernel(nu, 0.9)
    assert np.all(k.coefficients > 0)
    assert np.all(np.diff(k.coefficients) >= -1e-12 * k.coefficients[1:])


def test_coefficients_nondecreasing_for_counterexample_weight():
    # nu itself is not integrable at the origin but its odd moments are
    k = build_kernel(make_counterexample_nu(ONE, 2.0), 0.8)
    c = k.coefficients
    # first moment 1/2 + 1/8 + 1/32 + ... = 2/3
    assert c[0] == pytest.approx(3 / 4, rel=1e-9)
    assert np.all(np.diff(c) >= -1e-12 * c[1:])


def test_reproducing_closed_forms_at_random_points():
    rng = np.random.default_rng(7)
    k = build_kernel(ONE, 0.95, tol=1e-12)
    for _ in range(100):
        a = 0.95 * math.sqrt(rng.uniform()) * np.exp(2j * math.pi * rng.uniform())
        z = 0.95 * math.sqrt(rng.uniform()) * np.exp(2j * math.pi * rng.uniform())
        x = 1 - z * np.conj(a)
        b0 = eval_kernel_derivative(k, 0, a, z)
        b1 = eval_kernel_derivative(k, 1, a, z)
        assert abs(b0 - x**-2) <= 1e-9 * abs(x**-2)
        assert abs(b1 - 2 * np.conj(a) * x**-3) <= 1e-9 * abs(x**-3)


def test_kernel_at_origin_is_first_coefficient():
    k = build_kernel(PowerLog(0.5, 1.0), 0.7)
    assert eval_kernel_derivative(k, 0, 0.0, 0.3 + 0.2j) == pytest.approx(k.coefficients[0])


def test_kernel_radius_and_order_checks():
    k = build_kernel(ONE, 0.5)
    with pytest.raises(ValueError):
        eval_kernel_derivative(k, 0, 0.6, 0.1)
    with pytest.raises(ValueError):
        eval_kernel_derivative(k, 0, 0.4, 1.0)
    with pytest.raises(ValueError):
        build_kernel(ONE, 1.0)


def test_kernel_term_limit():
    with pytest.raises(TruncationError):
        build_kernel(ONE, 1 - 1e-7, tol=1e-14)


def test_certified_remainder_bounds_true_truncation_error():
    k = build_kernel(ONE, 0.9, tol=1e-10)
    a = 0.9
    n = np.arange(k.n_max + 1, k.n_max + 20000, dtype=float)
    true_rest = float(np.sum((n + 1) * a**n))
    assert true_rest <= k.remainder(a) < 1e-10


def test_kernel_csv():
    k = build_kernel(ONE, 0.5)
    lines = k.to_csv().splitlines()
    assert lines[0] == "n,c_n" and len(lines) == k.n_max + 2


# --- norm bound ---------------------------------------------------------------


@pytest.mark.parametrize("a", [0.3, 0.9, 0.999])
def test_norm_bound_closed_forms(a):
    i1, _ = kernel_norm_bound(ONE, 1.0, 1, a)
    assert i1 == pytest.approx(a / (1 - a), rel=1e-10)
    i2, up = kernel_norm_bound(ONE, 2.0, 1, a)
    assert i2 == pytest.approx(((1 - a) ** -4 - 1) / 4, rel=1e-10)
    assert up == pytest.approx(1 / ((1 - a) * (1 - a) ** 3), rel=1e-12)


@pytest.mark.parametrize("nu", [ONE, PowerLog(1, 0), PowerLog(0, -2)])
@pytest.mark.parametrize("p", [1.0, 2.0, 3.0])
def test_norm_bound_ratio_uniform(nu, p):
    ratios = []
    for j in range(4, 31, 2):
        a = 1 - 2.0**-j
        integral, upper = kernel_norm_bound(nu, p, 1, a)
        ratios.append(integral / upper)
    assert min(ratios) > 0.05 and max(ratios) <= 1.0 + 1e-9
    assert max(ratios) / min(ratios) < 1.5


def test_norm_bound_matches_mpmath():
    nu, p, N, a = PowerLog(0.5, 1.0), 1.5, 2, 0.95
    integral, _ = kernel_norm_bound(nu, p, N, a)
    f = lambda t: 1 / (tail(nu, float(t)) ** (p - 1) * (1 - t) ** (p * (N + 1)))  # noqa: E731
    assert integral == pytest.approx(float(mpmath.quad(f, [0, 0.5, 0.9, a])), rel=1e-8)


def test_norm_bound_small_p_needs_beta():
    with pytest.raises(ValueError):
        kernel_norm_bound(ONE, 0.5, 1, 0.5)
    integral, upper = kernel_norm_bound(ONE, 0.5, 1, 0.9, beta=1.0)
    assert integral > 0 and upper > 0


# --- mean estimate of the averaged kernel derivative --------------------------------


def test_mean_bound_matches_direct_angular_quadrature():
    # omega = nu = 1, N = 1: the averaged series is known term by term
    q, N, a, t = 2.0, 1, 0.8, 0.5
    mb = kernel_image_mean_bound(ONE, ONE, q, N, a, t)
    # by Parseval the mean of |sum b_m e^{i m theta}|^2 is sum |b_m|^2
    j = np.arange(N, 4000, dtype=float)
    m = j - N
    om = (1 - t ** (m + 1)) / (m + 1)
    b = j * (j + 1) * a**j * om
    assert mb.lhs == pytest.approx(float(np.sum(b**2)), rel=1e-9)


def test_mean_bound_rhs_branches():
    lhs0, rhs0 = lemma4_lower_bound(ONE, ONE, 2.0, 2, 0.9, 0.0)
    _, rhs1 = lemma4_lower_bound(ONE, ONE, 2.0, 2, 0.9, 0.4)
    assert rhs0 == pytest.approx(rhs1, rel=1e-14)
    # continuity at t = a
    _, rhs_a = lemma4_lower_bound(ONE, ONE, 2.0, 2, 0.9, 0.9)
    expected = tail(ONE, 0.9) ** 2 / (tail(ONE, 0.9) ** 2 * 0.1 ** (2 * 3 - 1))
    assert rhs_a == pytest.approx(expected, rel=1e-12)
    assert rhs_a == pytest.approx(rhs0, rel=1e-12)


def test_mean_bound_ratio_bounded_below():
    ratios = [lemma4_lower_bound(ONE, ONE, 2.0, 2, a, 0.0) for a in (0.8, 0.9, 0.95)]
    ratios = [lhs / rhs for lhs, rhs in ratios]
    assert min(ratios) > 0.01
    assert max(ratios) / min(ratios) < 10


def test_mean_bound_argument_checks():
    with pytest.raises(ValueError):
        lemma4_lower_bound(ONE, ONE, 2.0, 2, 0.5, 0.0)
    with pytest.raises(ValueError):
        lemma4_lower_bound(ONE, ONE, 0.0, 2, 0.9, 0.0)
    with pytest.raises(ValueError):
        lemma4_lower_bound(ONE, ONE, 2.0, 0, 0.9, 0.0)
