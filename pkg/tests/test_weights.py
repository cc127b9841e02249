import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from radavg.numerics import RadialGrid
from radavg.weights import (
    Monomial,
    NonpositiveTailError,
    OscillatingProduct,
    PowerLog,
    Tabulated,
    WeightError,
    ZeroWeight,
    classify_dcheck,
    classify_dhat,
    classify_regular,
    dumps,
    dyadic_knots,
    eval_weight,
    from_config,
    load_weight,
    loads,
    make_counterexample_nu,
    make_log_example_triple,
    moment,
    parse_inline,
    rho_sequence,
    rho_sequence_u,
    tabulate,
    tail,
    to_config,
)

GRID = RadialGrid(levels=40, points_per_level=2)


def mp_tail(a, b, r):
    """Reference tail of PowerLog(a, b) by mpmath quadrature in log-depth."""
    u0 = -mpmath.log1p(-r)
    f = lambda u: mpmath.exp(-(a + 1) * u) * (1 + u) ** b  # noqa: E731
    return float(mpmath.quad(f, [u0, u0 + 1, u0 + 10, mpmath.inf]))


# --- evaluation ---------------------------------------------------------------


def test_eval_weight_examples():
    assert eval_weight(PowerLog(0, 0), 0.5) == 1.0
    assert eval_weight(Monomial(1), 0.25) == pytest.approx(0.25)
    assert eval_weight(PowerLog(1, 0), 0.5) == pytest.approx(0.5)


def test_eval_weight_domain():
    with pytest.raises(ValueError):
        eval_weight(PowerLog(), 1.0)
    with pytest.raises(ValueError):
        eval_weight(PowerLog(), -0.1)


def test_tail_examples():
    r = np.array([0.0, 0.3, 0.9, 0.999])
    assert np.allclose(tail(PowerLog(0, 0), r), 1 - r, rtol=1e-14)
    assert np.allclose(tail(Monomial(1), r), (1 - r**2) / 2, rtol=1e-13)
    assert tail(PowerLog(1, 0), 0.5) == pytest.approx(0.125, rel=1e-14)


def test_moment_examples():
    assert moment(PowerLog(0, 0), 0.0, 1) == pytest.approx(0.5, rel=1e-12)
    assert moment(PowerLog(0, 0), 0.4, 0) == pytest.approx(0.6, rel=1e-12)
    assert moment(PowerLog(1, 0), 0.0, 1) == pytest.approx(1 / 6, rel=1e-12)


def test_nonintegrable_weight_rejected():
    with pytest.raises(WeightError):
        PowerLog(-1, 0)
    with pytest.raises(WeightError):
        Monomial(-1)


def test_zero_weight_has_no_positive_tail():
    with pytest.raises(NonpositiveTailError):
        tail(ZeroWeight(), 0.5)


@settings(max_examples=30, deadline=None)
@given(
    st.floats(-0.95, 3.0),
    st.floats(-3.0, 3.0),
    st.floats(0.0, 0.999),
)
def test_powerlog_tail_matches_quadrature(a, b, r):
    assert tail(PowerLog(a, b), r) == pytest.approx(mp_tail(a, b, r), rel=1e-9)


@pytest.mark.parametrize("b", [-1.5, -2.0, -3.5])
def test_borderline_powerlog_tail(b):
    # a = -1: tail is L^(b+1)/(-b-1)
    r = 0.99
    L = 1 - math.log1p(-r)
    assert tail(PowerLog(-1, b), r) == pytest.approx(L ** (b + 1) / (-b - 1), rel=1e-12)
    assert tail(PowerLog(-1, b), r) == pytest.approx(mp_tail(-1, b, r), rel=1e-9)


@pytest.mark.parametrize(
    "w",
    [PowerLog(0.5, 1.0), PowerLog(-0.5, -2.0), Monomial(2.0, 3.0), PowerLog(1.0, 0.0)],
)
def test_moment_zero_is_tail_and_moments_match_quadrature(w):
    for t in (0.0, 0.4, 0.95):
        assert moment(w, t, 0) == pytest.approx(tail(w, t), rel=1e-9)
        for x in (0.5, 1.0, 3.0):
            ref, _ = integrate.quad(lambda s: s**x * eval_weight(w, s), t, 1, limit=200, epsabs=0)
            assert moment(w, t, x) == pytest.approx(ref, rel=1e-8)


@pytest.mark.parametrize("w", [PowerLog(0.3, -1.0), Monomial(1.0), PowerLog(-0.9, 2.0)])
def test_tail_decreasing_to_zero(w):
    r = GRID.nodes
    t = tail(w, r)
    assert np.all(np.diff(t) < 0)
    # decay to zero checked deep in log-depth, beyond double resolution of r
    assert w.log_tail(2000.0)[0] < math.log(t[0]) - 20


def test_moment_rejects_negative_exponent():
    with pytest.raises(WeightError):
        moment(PowerLog(), 0.0, -1.0)


# --- tabulated weights ---------------------------------------------------------


def test_tabulate_preserves_tails_at_knots():
    w = PowerLog(-1, -2)  # tail 1/log(e/(1-r))
    tab = tabulate(w, dyadic_knots())
    for r in dyadic_knots()[::17]:
        assert tail(tab, r) == pytest.approx(tail(w, r), rel=1e-10)


def test_tabulated_csv_round_trip(tmp_path):
    tab = Tabulated([0.0, 0.5, 0.75], [1.0, 2.0, 4.0])
    path = tmp_path / "w.csv"
    tab.write_csv(path)
    again = Tabulated.read_csv(path)
    assert tail(again, 0.25) == pytest.approx(tail(tab, 0.25))
    assert tail(tab, 0.25) == pytest.approx(0.25 + 0.5 + 1.0)


def test_tabulated_requires_increasing_knots():
    with pytest.raises(WeightError):
        Tabulated([0.0, 0.5, 0.5], [1.0, 1.0, 1.0])


# --- classification -----------------------------------------------------------


def test_dhat_constant():
    rep = classify_dhat(PowerLog(0, 0), GRID)
    assert rep.verdict == "Member" and rep.C_estimate == pytest.approx(2.0)


@pytest.mark.parametrize("a", [-0.5, 0.0, 1.0, 2.5])
def test_dhat_and_dcheck_power(a):
    w = PowerLog(a, 0)
    rep = classify_dhat(w, GRID)
    assert rep.verdict == "Member" and rep.C_estimate == pytest.approx(2 ** (a + 1), rel=1e-9)
    for K in (2.0, 4.0):
        rc = classify_dcheck(w, K, GRID)
        assert rc.verdict == "Member" and rc.C_estimate == pytest.approx(K ** (a + 1), rel=1e-9)


@pytest.mark.parametrize("a,b", [(0.0, 3.0), (1.0, -2.0), (-0.5, 5.0), (2.0, -4.0)])
def test_dhat_member_for_powerlog(a, b):
    assert classify_dhat(PowerLog(a, b), GRID).verdict == "Member"


def test_inverse_log_tail_is_doubling_not_reverse_doubling():
    tab = tabulate(PowerLog(-1, -2), dyadic_knots())
    rep = classify_dhat(tab, GRID)
    assert rep.verdict == "Member"
    assert rep.C_estimate <= 1 + math.log(2) + 1e-9
    assert classify_dcheck(tab, 2.0, GRID).verdict == "NotMember"
    assert classify_dcheck(PowerLog(-1, -2), 2.0, GRID).verdict == "NotMember"


def test_regular_examples():
    rep = classify_regular(PowerLog(0, 0), GRID)
    assert rep.verdict == "Member" and rep.C_estimate == pytest.approx(1.0)
    for a in (0.5, 2.0):
        rep = classify_regular(PowerLog(a, 0), GRID)
        assert rep.verdict == "Member"
        assert rep.ratios == pytest.approx(np.full(len(rep.ratios), 1 / (a + 1)), rel=1e-9)
    osc = OscillatingProduct(PowerLog(0, 0), 2.0)
    assert classify_regular(osc, GRID).verdict == "NotMember"
    assert classify_regular(PowerLog(-1, -2), GRID).verdict == "NotMember"


def test_report_invariants():
    for w in (PowerLog(0.2, 1), Monomial(1), PowerLog(-1, -1.5)):
        for rep in (classify_dhat(w, GRID), classify_dcheck(w, 2, GRID), classify_regular(w, GRID)):
            assert rep.C_estimate >= 1
            assert rep.verdict in {"Member", "NotMember", "Inconclusive"}
            d = rep.as_dict()
            assert d["class_tested"] in {"Dhat", "Dcheck", "Regular"} and "protocol" in d


def test_dcheck_rejects_small_k():
    with pytest.raises(WeightError):
        classify_dcheck(PowerLog(), 1.0, GRID)


# --- rho sequences ---------------------------------------------------------------


def test_rho_sequence_examples():
    rho = rho_sequence(PowerLog(0, 0), 2.0, 0.0, 10)
    assert rho == pytest.approx([1 - 2.0**-n for n in range(11)], abs=1e-12)
    assert rho_sequence(PowerLog(1, 0), 4.0, 0.0, 1)[1] == pytest.approx(0.5, abs=1e-12)
    assert rho_sequence(Monomial(1), 2.0, 0.0, 1)[1] == pytest.approx(1 / math.sqrt(2), abs=1e-12)


@pytest.mark.parametrize("w", [PowerLog(0.5, -1), Monomial(2.0), PowerLog(-0.7, 3)])
@pytest.mark.parametrize("K", [2.0, 3.5])
def test_rho_sequence_telescoping(w, K):
    # checked in log-depth, where heavy weights stay resolvable
    r = 0.3
    u = np.array(rho_sequence_u(w, K, r, 12))
    assert np.all(np.diff(u) > 0)
    tails = np.exp(w.log_tail(u))
    for n in range(12):
        assert tails[n] - tails[n + 1] == pytest.approx(tails[0] * K**-n * (K - 1) / K, rel=1e-8)


def test_rho_sequence_nondecreasing_in_r():
    rho = rho_sequence(PowerLog(-0.7, 3), 2.0, 0.3, 12)
    assert np.all(np.diff(rho) >= 0) and rho[-1] <= 1.0


# --- counterexample and log triple ------------------------------------------------


def test_counterexample_nu_structure():
    nu = make_counterexample_nu(PowerLog(0, 0), 2.0)
    assert nu.level_u[:4] == pytest.approx([n * math.log(2) for n in range(4)], abs=1e-12)
    # nu = 1/t on [0,1/2) and [3/4,7/8), zero on the gaps
    assert eval_weight(nu, 0.25) == pytest.approx(4.0)
    assert eval_weight(nu, 0.8) == pytest.approx(1 / 0.8)
    for gap in (0.6, 0.9, 1 - 2.0**-7 + 1e-4):
        assert eval_weight(nu, gap) == 0.0
        assert eval_weight(PowerLog(0, 0), gap) > 0


def test_counterexample_nu_tail_comparable_and_doubling():
    omega = PowerLog(0, 0)
    nu = make_counterexample_nu(omega, 2.0)
    ts = np.linspace(0.05, 0.99, 10)
    ratios = []
    for t in ts:
        ref, _ = integrate.quad(
            lambda s: s * eval_weight(nu, s), t, 1, points=[1 - 2.0**-k for k in range(1, 30)], limit=400
        )
        assert moment(nu, t, 1) == pytest.approx(ref, rel=1e-7, abs=1e-12)
        ratios.append(ref / tail(omega, t))
    assert 0.2 < min(ratios) and max(ratios) <= 1.0 + 1e-12
    assert classify_dhat(nu, GRID).verdict == "Member"


def test_counterexample_requires_doubling_omega():
    with pytest.raises(WeightError):
        # tail drops by a growing factor per level, so it is not doubling
        k = np.arange(48)
        steep = Tabulated(1 - 2.0**-k, 2.0 ** (-(k**2) / 4))
        make_counterexample_nu(steep, 2.0)
    with pytest.raises(WeightError):
        make_counterexample_nu(PowerLog(), 1.0)


def test_log_example_triple():
    tr = make_log_example_triple(2.0)
    s = 0.7
    L = math.log(math.e / (1 - s))
    assert eval_weight(tr.nu, s) == pytest.approx((1 - s) * L**2)
    assert eval_weight(tr.eta, s) == pytest.approx((1 - s) * L)
    assert eval_weight(tr.omega, s) == pytest.approx(s)
    assert eval_weight(tr.nu, 0.0) == pytest.approx(1.0)
    assert eval_weight(tr.eta, 0.0) == pytest.approx(1.0)
    with pytest.raises(WeightError):
        make_log_example_triple(1.0)


# --- configuration ---------------------------------------------------------------


@pytest.mark.parametrize(
    "w",
    [PowerLog(0.5, -2.0), Monomial(1.0, 2.0), ZeroWeight(), OscillatingProduct(PowerLog(1, 0), 3.0)],
)
def test_config_round_trip(w):
    again = loads(dumps(w))
    assert to_config(again) == to_config(w)
    assert from_config(to_config(w)).config() == w.config()


def test_inline_and_file_specs(tmp_path):
    assert parse_inline("powerlog:a=1,b=2").config() == PowerLog(1, 2).config()
    assert parse_inline("const").config() == PowerLog().config()
    tab = Tabulated([0.0, 0.5], [1.0, 3.0])
    tab.write_csv(tmp_path / "t.csv")
    (tmp_path / "w.cfg").write_text("# tabulated weight\nfamily = tabulated\npath = t.csv\n")
    w = load_weight(str(tmp_path / "w.cfg"))
    assert tail(w, 0.0) == pytest.approx(0.5 + 1.5)
    with pytest.raises(WeightError):
        parse_inline("nosuch:a=1")
    with pytest.raises(WeightError):
        loads("family powerlog")
