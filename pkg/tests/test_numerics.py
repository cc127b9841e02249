import json
import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from radavg.numerics import (
    ConditionProfile,
    NonConvergenceError,
    PolarGrid,
    RadialGrid,
    Verdict,
    adaptive_gl,
    classify_levels,
    dumps_json,
    extrapolate_limit,
    integrate_improper,
    interval_integrals,
    log_diff_exp,
    log_product,
    log_upper_gamma,
    prefix_integrals,
    r_of_u,
    suffix_integrals,
    sup_profile,
    u_of_r,
)


# --- coordinates and extended arithmetic ------------------------------------


def test_log_depth_round_trip():
    r = np.array([0.0, 0.5, 0.9, 1 - 2.0 ** -40])
    assert np.allclose(r_of_u(u_of_r(r)), r, rtol=0, atol=1e-16)
    assert u_of_r(1 - 2.0 ** -40) == pytest.approx(40 * math.log(2), rel=1e-14)


def test_zero_times_infinity_is_zero():
    assert log_product(-np.inf, np.inf) == -np.inf
    assert log_product(np.inf, 1.0) == np.inf
    assert log_product(1.0, 2.0) == 3.0


def test_log_diff_exp():
    assert log_diff_exp(math.log(5.0), math.log(2.0)) == pytest.approx(math.log(3.0))
    assert log_diff_exp(1.0, -np.inf) == 1.0


@settings(max_examples=40, deadline=None)
@given(st.floats(-3.0, 4.0), st.floats(0.05, 500.0))
def test_log_upper_gamma_matches_mpmath(s, z):
    ours = float(log_upper_gamma(s, [z])[0])
    ref = float(mpmath.log(mpmath.gammainc(s, z)))
    assert ours == pytest.approx(ref, rel=1e-11, abs=1e-11)


# --- quadrature ---------------------------------------------------------------


def test_adaptive_gl_polynomial_and_breaks():
    assert adaptive_gl(lambda x: x**5, 0.0, 2.0) == pytest.approx(64 / 6, rel=1e-14)
    step = adaptive_gl(lambda x: np.where(x < 0.3, 1.0, 2.0), 0.0, 1.0, breaks=[0.3])
    assert step == pytest.approx(0.3 + 1.4, rel=1e-14)


def test_integrate_improper_constant():
    assert integrate_improper(lambda s: np.ones_like(s), 0.0) == pytest.approx(1.0, abs=1e-10)


def test_integrate_improper_log_squared_singularity():
    # in log-depth 1/((1-s) log^2(e/(1-s))) ds becomes du/(1+u)^2, total 1
    val = integrate_improper(lambda u: 1.0 / (1.0 + u) ** 2, 0.0, log_depth=True)
    assert val == pytest.approx(1.0, abs=1e-8)


def test_integrate_improper_mild_singularity_in_s():
    assert integrate_improper(lambda s: (1 - s) ** -0.5, 0.0) == pytest.approx(2.0, rel=1e-8)


def test_integrate_improper_divergent_harmonic():
    assert integrate_improper(lambda u: np.ones_like(u), 0.0, log_depth=True) == math.inf


def test_integrate_improper_additive():
    f = lambda u: np.exp(-0.5 * u) / (1 + u)  # noqa: E731
    whole = integrate_improper(f, 0.2, log_depth=True)
    mid = float(u_of_r(0.7))
    head = adaptive_gl(f, float(u_of_r(0.2)), mid)
    tail = integrate_improper(f, 0.7, log_depth=True)
    assert head + tail == pytest.approx(whole, rel=1e-9)


def test_integrate_improper_rejects_bad_input():
    with pytest.raises(ValueError):
        integrate_improper(lambda s: s, 1.0)
    with pytest.raises(ValueError):
        integrate_improper(lambda s: s, 0.0, rel_tol=0.0)


def test_nonconvergence_is_an_arithmetic_error():
    assert issubclass(NonConvergenceError, ArithmeticError)


def test_interval_and_suffix_integrals_match_closed_forms():
    # log-density of omega = 1 is 0; int_{r_i}^{r_{i+1}} ds = r_{i+1} - r_i
    u = np.array([0.0, 0.5, 1.0, 3.0, 10.0])
    lf = lambda v: np.zeros_like(np.asarray(v, dtype=float))  # noqa: E731
    r = r_of_u(u)
    assert np.allclose(interval_integrals(lf, u), np.diff(r), rtol=1e-13)
    assert np.allclose(suffix_integrals(lf, u), 1 - r, rtol=1e-12)
    assert np.allclose(prefix_integrals(lf, u), r - r[0], rtol=1e-13)


# --- grids -----------------------------------------------------------------------


def test_radial_grid_structure():
    g = RadialGrid(levels=5, points_per_level=4)
    n = g.nodes
    assert n[0] == 0.0 and np.all(np.diff(n) > 0) and n[-1] == 1 - 2.0**-5
    assert len(n) == 5 * 4 + 1
    # four equispaced points per dyadic band
    band = n[(n >= 0.5) & (n < 0.75)]
    assert np.allclose(np.diff(band), 1 / 16)
    assert g.refined().points_per_level == 8


def test_polar_grid_validation():
    assert len(PolarGrid(RadialGrid(2, 2), 32).angles) == 32
    with pytest.raises(ValueError):
        PolarGrid(RadialGrid(2, 2), 24)
    with pytest.raises(ValueError):
        PolarGrid(RadialGrid(2, 2), 8)
    with pytest.raises(ValueError):
        RadialGrid(0, 2)


# --- supremum profiles ---------------------------------------------------------


def test_sup_profile_constant_bounded():
    pr = sup_profile(lambda r: 5.0, RadialGrid())
    assert pr.verdict.kind == "Bounded" and pr.verdict.sup_estimate == pytest.approx(5.0)


def test_sup_profile_log_rate():
    pr = sup_profile(lambda r: -math.log1p(-r), RadialGrid())
    assert pr.verdict.kind == "DivergesLog"
    assert pr.verdict.rate == pytest.approx(math.log(2), rel=0.02)


def test_sup_profile_power_exponent():
    pr = sup_profile(lambda r: (1 - r) ** -0.5, RadialGrid())
    assert pr.verdict.kind == "DivergesPower"
    assert abs(pr.verdict.exponent - 0.5) <= 0.05


def test_sup_profile_infinite():
    pr = sup_profile(lambda r: math.inf if r > 0.9 else 1.0, RadialGrid())
    assert pr.verdict.kind == "Infinite"
    rs = pr.running_sup
    assert np.all(rs[1:] >= rs[:-1])


def test_sup_profile_slowly_convergent_is_bounded():
    # 2 - 1/log(e/(1-r)) converges like 1/L
    pr = sup_profile(lambda r: 2.0 - 1.0 / (1.0 - math.log1p(-r)), RadialGrid())
    assert pr.verdict.kind == "Bounded"
    assert pr.verdict.sup_estimate == pytest.approx(2.0, rel=0.05)


@pytest.mark.parametrize(
    "expr",
    [lambda r: 3.0 - r, lambda r: -math.log1p(-r), lambda r: (1 - r) ** -0.25],
)
def test_sup_profile_verdict_stable_under_refinement(expr):
    a = sup_profile(expr, RadialGrid(40, 8))
    b = sup_profile(expr, RadialGrid(40, 16))
    assert a.verdict.kind == b.verdict.kind
    assert b.sup == pytest.approx(a.sup, rel=0.01)


def test_extrapolate_limit_separates_summable_increments():
    u = np.arange(1, 41) * math.log(2)
    L = 1 + u
    conv = np.cumsum(1.0 / L**2)
    ok, limit = extrapolate_limit(conv, u)
    assert ok and limit > conv[-1]
    div = np.cumsum(1.0 / L)
    assert extrapolate_limit(div, u)[0] is False


def test_classify_levels_divergence_not_masked():
    u = np.arange(1, 41) * math.log(2)
    v, _ = classify_levels(np.sqrt(1 + u), u)
    assert v.kind.startswith("Diverges")


def test_profile_csv_and_json():
    pr = sup_profile(lambda r: r, RadialGrid(3, 2))
    lines = pr.to_csv().splitlines()
    assert lines[0] == "level,r,value,running_sup"
    assert len(lines) == len(pr.nodes) + 1
    summary = json.loads(dumps_json(pr.summary()))
    assert summary["verdict"]["kind"] == pr.verdict.kind
    assert set(summary) >= {"verdict", "fit", "sup_estimate"}


def test_json_encodes_infinity_deterministically():
    text = dumps_json({"b": math.inf, "a": np.float64(1.5)})
    assert text == dumps_json({"a": 1.5, "b": math.inf})
    assert json.loads(text) == {"a": 1.5, "b": "inf"}
    assert json.loads(dumps_json({"ok": np.bool_(True), "n": np.int64(3)})) == {"ok": True, "n": 3}


def test_verdict_string_forms():
    assert str(Verdict("Bounded", sup_estimate=1.0)).startswith("Bounded")
    assert isinstance(ConditionProfile, type)
