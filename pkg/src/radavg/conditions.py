"""Supremum-type weight conditions for the radial averaging operator.

All quantities are evaluated at the nodes of a :class:`RadialGrid` and packed
into :class:`ConditionProfile` objects whose verdict says whether the
supremum over ``0 <= r < 1`` is finite.  Notation used throughout:

* ``A(r) = int_r^1 (omega/(s nu))**p' s nu ds`` with ``p' = p/(p-1)``,
* ``S_w(r) = int_r^1 s w(s) ds``,
* ``G_q(r) = int_0^r s w(s) / omegahat(s)**q ds`` for the relevant ``w``.

The conventions ``0 * inf = 0`` and ``1/0 = inf`` are applied in log space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .numerics import (
    ConditionProfile,
    RadialGrid,
    dumps_json,
    gauss_legendre,
    integrate_log_density,
    interval_integrals,
    log_product,
    profile_from_values,
    r_of_u,
    safe_log,
    suffix_integrals,
    u_of_r,
)
from .weights import RadialWeight, WeightTriple


def conjugate(p: float) -> float:
    return p / (p - 1.0)


def union_breaks(*weights: RadialWeight):
    """Breakpoint callback covering every weight."""

    def breaks(lo, hi):
        out = set()
        for w in weights:
            out.update(float(b) for b in w.breaks(lo, hi))
        return sorted(out)

    return breaks


def log_muckenhoupt_density(omega: RadialWeight, nu: RadialWeight, p: float):
    """log of ``(omega/(s nu))**p' * s nu`` as a function of log-depth."""
    pp = conjugate(p)

    def f(u):
        u = np.asarray(u, dtype=float)
        lsnu = log_product(safe_log(r_of_u(u)), nu.log_density(u))
        # (1 - p') < 0, so a vanishing s*nu gives +inf unless omega vanishes too
        return log_product(pp * omega.log_density(u), (1.0 - pp) * lsnu)

    return f


def log_head_density(w: RadialWeight, omega: RadialWeight, q: float):
    """log of ``s w(s) / omegahat(s)**q``."""

    def f(u):
        u = np.asarray(u, dtype=float)
        return log_product(w.log_density(u), safe_log(r_of_u(u)), -q * omega.log_tail(u))

    return f


def muckenhoupt_tail(omega: RadialWeight, nu: RadialWeight, p: float, u_nodes) -> np.ndarray:
    """``A(r)`` at the given log-depths (increasing)."""
    u_nodes = np.asarray(u_nodes, dtype=float)
    return suffix_integrals(
        log_muckenhoupt_density(omega, nu, p), u_nodes, union_breaks(omega, nu), singular_at_zero=True
    )


def head_integrals(w: RadialWeight, omega: RadialWeight, q: float, u_nodes) -> np.ndarray:
    """``G_q(r) = int_0^r s w / omegahat**q`` at increasing log-depths."""
    u_nodes = np.asarray(u_nodes, dtype=float)
    lf = log_head_density(w, omega, q)
    edges = np.concatenate([[0.0], u_nodes])
    return np.cumsum(interval_integrals(lf, edges, union_breaks(w, omega)))


def stail(w: RadialWeight, u_nodes) -> np.ndarray:
    """``S_w(r) = int_r^1 s w`` at the given log-depths."""
    return np.exp(w.log_stail(np.asarray(u_nodes, dtype=float)))


def _mul(*factors):
    """Product with ``0 * inf = 0``."""
    out = np.ones_like(np.asarray(factors[0], dtype=float))
    zero = np.zeros(out.shape, dtype=bool)
    for f in factors:
        f = np.asarray(f, dtype=float)
        zero |= f == 0
        with np.errstate(invalid="ignore", over="ignore"):
            out = out * f
    return np.where(zero, 0.0, out)


def _root(x, k):
    with np.errstate(divide="ignore"):
        return np.power(np.asarray(x, dtype=float), 1.0 / k)


def _check_p(p, lo=1.0):
    if not p > lo:
        raise ValueError(f"p must exceed {lo}")


# ---------------------------------------------------------------------------
# profiles
# ---------------------------------------------------------------------------


def m_p(omega, nu, eta, p: float, grid: RadialGrid) -> ConditionProfile:
    """``A(r)**(1/p') * G_p[eta](r)**(1/p)``; bounded iff ``T`` is bounded on ``L^p``."""
    _check_p(p)
    u = grid.u
    A = muckenhoupt_tail(omega, nu, p, u)
    B = head_integrals(eta, omega, p, u)
    vals = _mul(_root(A, conjugate(p)), _root(B, p))
    return profile_from_values(grid, vals, {"A": A, "B": B})


def d_p(omega, nu, p: float, grid: RadialGrid) -> ConditionProfile:
    """``omegahat(r)**p / S_nu(r) * G_p[nu](r)``."""
    _check_p(p, 0.0)
    u = grid.u
    vals = d_p_values(omega, nu, p, u)
    return profile_from_values(grid, vals)


def d_p_values(omega, nu, p, u) -> np.ndarray:
    G = head_integrals(nu, omega, p, u)
    scale = np.exp(p * omega.log_tail(u) - nu.log_stail(u))
    return _mul(scale, G)


def n_value(omega, nu, eta, p: float, t: float, r: float) -> float:
    """``((S_eta(t) - S_eta(r)) / omegahat(t)**p)**(1/p) * A(r)**(1/p')`` for ``t < r``."""
    _check_p(p)
    if not 0 <= t <= r < 1:
        raise ValueError("need 0 <= t <= r < 1")
    ut, ur = float(u_of_r(t)), float(u_of_r(r))
    dS = _annulus(eta, ut, ur)
    A = float(muckenhoupt_tail(omega, nu, p, [ur])[0]) if dS > 0 else 0.0
    lt = float(omega.log_tail(ut)[0])
    return float(_mul(_root(dS * math.exp(-p * lt), p), _root(A, conjugate(p))))


def _annulus(eta, ut, ur):
    """``int_t^r s eta`` by direct quadrature."""
    if ur <= ut:
        return 0.0

    def lf(u):
        return log_product(eta.log_density(u), safe_log(r_of_u(u)))

    return integrate_log_density(lf, ut, ur, breaks=list(eta.breaks(ut, ur)))


def n_p(omega, nu, eta, p: float, grid: RadialGrid) -> ConditionProfile:
    """Two-parameter supremum over ``t < r``, as a profile in ``r``.

    For each node ``r`` the inner maximum runs over grid nodes ``t < r``; the
    overall maximizing pair is then refined by golden-section search in each
    variable and reported in ``extra``.
    """
    _check_p(p)
    u = grid.u
    A = muckenhoupt_tail(omega, nu, p, u)
    S = stail(eta, u)
    lw = omega.log_tail(u)
    n = len(u)
    vals = np.zeros(n)
    arg_t = np.zeros(n, dtype=int)
    Ap = _root(A, conjugate(p))
    for i in range(1, n):
        dS = np.maximum(S[:i] - S[i], 0.0)
        inner = _root(dS * np.exp(-p * lw[:i]), p)
        row = _mul(inner, np.full(i, Ap[i]))
        j = int(np.argmax(row))
        vals[i], arg_t[i] = row[j], j
    extra = {}
    i = int(np.argmax(vals))
    if vals[i] > 0 and math.isfinite(vals[i]):
        nodes = grid.nodes
        t0, r0 = float(nodes[arg_t[i]]), float(nodes[i])
        t_lo = float(nodes[max(arg_t[i] - 1, 0)])
        t_hi = float(nodes[min(arg_t[i] + 1, i)])
        r_lo = float(nodes[max(i - 1, 1)])
        r_hi = float(nodes[min(i + 1, n - 1)])

        def f(t, r):
            return n_value(omega, nu, eta, p, min(t, r), r)

        t1 = _golden_max(lambda t: f(t, r0), t_lo, t_hi, t0)
        r1 = _golden_max(lambda r: f(t1, r), max(r_lo, t1), r_hi, r0)
        best = max((f(t0, r0), t0, r0), (f(t1, r1), t1, r1))
        extra = {"maximizer": {"t": best[1], "r": best[2]}, "refined_sup": best[0]}
    elif math.isinf(vals[i]):
        extra = {"maximizer": {"t": float(grid.nodes[arg_t[i]]), "r": float(grid.nodes[i])}}
    extra["inner_argmax_t"] = grid.nodes[arg_t]
    return profile_from_values(grid, vals, extra)


def _golden_max(f, lo, hi, x0, iters=40):
    if hi <= lo:
        return x0
    g = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c, d = b - g * (b - a), a + g * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(iters):
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - g * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + g * (b - a)
            fd = f(d)
        if b - a < 1e-12 * max(1.0, abs(b)):
            break
    x = c if fc >= fd else d
    return x if f(x) >= f(x0) else x0


def m_p_eps(omega, nu, eta, p: float, eps: float, grid: RadialGrid) -> ConditionProfile:
    """``(omegahat(r)**eps G_{p+eps}[eta](r))**(1/p) * A(r)**(1/p')``."""
    _check_p(p)
    if not eps > 0:
        raise ValueError("eps must be positive")
    u = grid.u
    A = muckenhoupt_tail(omega, nu, p, u)
    G = head_integrals(eta, omega, p + eps, u)
    first = _mul(np.exp(eps * omega.log_tail(u)), G)
    vals = _mul(_root(first, p), _root(A, conjugate(p)))
    return profile_from_values(grid, vals, {"eps": eps})


# ---------------------------------------------------------------------------
# Carleson-measure identity
# ---------------------------------------------------------------------------


PANEL_WIDTH = 0.25
OUTER_SPAN = 80.0


def _panel_rule(lo, hi, breaks, order):
    edges = [lo, *[b for b in breaks if lo < b < hi], hi]
    fine = []
    for a, b in zip(edges[:-1], edges[1:]):
        k = max(1, int(math.ceil((b - a) / PANEL_WIDTH)))
        fine.extend(np.linspace(a, b, k + 1)[:-1].tolist())
    fine.append(hi)
    e = np.asarray(fine)
    x, w = gauss_legendre(order)
    half = 0.5 * np.diff(e)
    nodes = e[:-1, None] + half[:, None] * (x[None, :] + 1.0)
    weights = half[:, None] * w[None, :]
    return e, nodes, weights


def _cumulative(lf, lo, hi, breaks, order=20):
    """Panel edges, node values of ``int_lo^node`` and the node rule."""
    e, nodes, weights = _panel_rule(lo, hi, breaks, order)
    vals = np.exp(log_product(lf(nodes.ravel()), -nodes.ravel())).reshape(nodes.shape)
    # integral from each panel's left edge to each of its nodes
    xg, wg = gauss_legendre(order)
    partial = np.zeros_like(nodes)
    for k in range(order):
        left = e[:-1]
        right = nodes[:, k]
        half = 0.5 * (right - left)
        sub = left[:, None] + half[:, None] * (xg[None, :] + 1.0)
        sv = np.exp(log_product(lf(sub.ravel()), -sub.ravel())).reshape(sub.shape)
        partial[:, k] = half * (sv @ wg)
    panel_totals = np.sum(vals * weights, axis=1)
    start = np.concatenate([[0.0], np.cumsum(panel_totals)[:-1]])
    return nodes, weights, start[:, None] + partial, float(np.sum(panel_totals))


def carleson_identity_residual(omega, nu, p: float, a: float) -> float:
    """Relative gap between the two sides of the Fubini identity.

    ``LHS = int_a^1 omegahat^(p-1) omega(t) G_p[nu](t) dt`` is computed by a
    nested panel rule starting from the origin; ``RHS =
    omegahat(a)**p / p * G_p[nu](a) + S_nu(a) / p`` uses the adaptive
    integrator and the analytic tail.
    """
    if not p > 0:
        raise ValueError("p must be positive")
    if not 0 <= a < 1:
        raise ValueError("a must lie in [0, 1)")
    ua = float(u_of_r(a))
    br = union_breaks(omega, nu)
    inner = log_head_density(nu, omega, p)
    span = OUTER_SPAN
    while True:
        hi = ua + span
        with np.errstate(over="ignore", invalid="ignore"):
            nodes, weights, G_nodes, G_hi = _cumulative(inner, 0.0, hi, sorted({*br(0.0, hi), ua}))
            flat_u = nodes.ravel()
            outer = np.exp(log_product((p - 1.0) * omega.log_tail(flat_u), omega.log_density(flat_u), -flat_u))
            mask = flat_u >= ua
            # panels straddling u_a are avoided by inserting it as a breakpoint
            lhs = float(np.sum((outer * G_nodes.ravel() * weights.ravel())[mask]))
            # closed-form remainder past the span: G(hi) omegahat(hi)^p / p + S_nu(hi) / p
            lhs += G_hi * math.exp(p * float(omega.log_tail(hi)[0])) / p
        lhs += float(stail(nu, [hi])[0]) / p
        if math.isfinite(lhs) or span < 1.0:
            break
        # fast-growing head integrals overflow; the remainder is exact for any span
        span /= 2.0
    G_a = float(head_integrals(nu, omega, p, [ua])[0]) if ua > 0 else 0.0
    S_a = float(stail(nu, [ua])[0])
    rhs = math.exp(p * float(omega.log_tail(ua)[0])) / p * G_a + S_a / p
    return abs(lhs - rhs) / rhs


def carleson_ratio(omega, nu, p: float, a: float) -> float:
    """Ratio of the pulled-back measure of the square at ``a`` to its ``nu``-measure."""
    if not p > 0:
        raise ValueError("p must be positive")
    if not 0 <= a < 1:
        raise ValueError("a must lie in [0, 1)")
    ua = float(u_of_r(a))
    G_a = float(head_integrals(nu, omega, p, [ua])[0]) if ua > 0 else 0.0
    S_a = float(stail(nu, [ua])[0])
    return (math.exp(p * float(omega.log_tail(ua)[0])) / p * G_a + S_a / p) / S_a


def carleson_profile(omega, nu, p: float, grid: RadialGrid) -> ConditionProfile:
    """:func:`carleson_ratio` over the grid; equals ``(D_p(r) + 1)/p``."""
    _check_p(p, 0.0)
    u = grid.u
    G = head_integrals(nu, omega, p, u)
    S = stail(nu, u)
    first = _mul(np.exp(p * omega.log_tail(u)) / p, G)
    return profile_from_values(grid, (first + S / p) / S)


# ---------------------------------------------------------------------------
# self-improvement and necessary conditions
# ---------------------------------------------------------------------------


SANDWICH_SLACK = 0.01


@dataclass
class SelfImprovementReport:
    Dp: float
    DpMinusEps: float
    upper: float
    eps: float
    sandwich_ok: bool
    pointwise_ok: bool

    def as_dict(self):
        return {
            "Dp": self.Dp,
            "DpMinusEps": self.DpMinusEps,
            "upper": self.upper,
            "eps": self.eps,
            "sandwich_ok": self.sandwich_ok,
            "pointwise_ok": self.pointwise_ok,
        }


def self_improve_check(omega, nu, p: float, eps: float, grid: RadialGrid) -> SelfImprovementReport:
    """Check ``D_p <= D_{p-eps} <= p/(p - eps (1 + D_p)) D_p`` on the grid."""
    base = d_p(omega, nu, p, grid)
    if not base.verdict.bounded:
        raise ValueError(f"D_p must be bounded; verdict {base.verdict}")
    D = base.sup
    if not 0 < eps < p / (D + 1.0):
        raise ValueError(f"eps={eps} outside the admissible range (0, {p / (D + 1.0):.6g})")
    lower = d_p(omega, nu, p - eps, grid)
    upper = p / (p - eps * (1.0 + D)) * D
    pointwise = bool(np.all(base.values <= lower.values * (1 + SANDWICH_SLACK) + 1e-300))
    ok = D <= lower.sup * (1 + SANDWICH_SLACK) and lower.sup <= upper * (1 + SANDWICH_SLACK)
    return SelfImprovementReport(D, lower.sup, upper, eps, bool(ok and pointwise), pointwise)


@dataclass
class NecessaryReport:
    first: ConditionProfile
    second: ConditionProfile
    head_ratio_min: float


def necessary_pq(omega, nu, eta, p: float, q: float, grid: RadialGrid) -> NecessaryReport:
    """The two necessary profiles for ``A^p_nu -> L^q_eta`` boundedness.

    ``first(r) = omegahat(r)**q / ((1-r)**(q/p-1) S_nu(r)**(q/p)) * G_q[eta](r)``
    and ``second(r) = S_eta(r) / ((1-r)**(q/p-1) S_nu(r)**(q/p))``.  The
    minimum over ``r`` of ``G_q[eta](r) omegahat(r)**q / S_eta(r)`` is reported
    as well; it stays away from 0 when the tails of ``omega`` and ``eta``
    double and reverse-double.
    """
    if not 0 < p <= q:
        raise ValueError("need 0 < p <= q")
    u = grid.u
    ratio = q / p
    # (1-r)**(q/p-1) = exp(-(q/p-1) u)
    log_den = -(ratio - 1.0) * u + ratio * nu.log_stail(u)
    G = head_integrals(eta, omega, q, u)
    first = _mul(np.exp(q * omega.log_tail(u) - log_den), G)
    second = np.exp(eta.log_stail(u) - log_den)
    with np.errstate(divide="ignore", invalid="ignore"):
        hr = _mul(G, np.exp(q * omega.log_tail(u) - eta.log_stail(u)))
    hr = hr[grid.nodes > 0]
    return NecessaryReport(
        profile_from_values(grid, first, {"q": q}),
        profile_from_values(grid, second, {"q": q}),
        float(np.min(hr)) if len(hr) else math.nan,
    )


# ---------------------------------------------------------------------------
# requests
# ---------------------------------------------------------------------------


CONDITIONS = ("Mp", "Dp", "Np", "MpEps", "CarlesonRatio", "NecessaryFirst", "NecessarySecond")


@dataclass
class ConditionRequest:
    which: str
    triple: WeightTriple
    p: float
    grid: RadialGrid = field(default_factory=RadialGrid)
    eps: float | None = None
    q: float | None = None

    def __post_init__(self):
        if self.which not in CONDITIONS:
            raise ValueError(f"unknown condition {self.which!r}; choose from {CONDITIONS}")
        if self.which in ("Mp", "Np", "MpEps") and not self.p > 1:
            raise ValueError(f"{self.which} needs p > 1")
        if self.which in ("Dp", "CarlesonRatio") and not self.p > 0:
            raise ValueError(f"{self.which} needs p > 0")
        if self.which == "MpEps" and not (self.eps and self.eps > 0):
            raise ValueError("MpEps needs eps > 0")
        if self.which.startswith("Necessary") and not (self.q and self.q >= self.p):
            raise ValueError(f"{self.which} needs q >= p")

    def run(self) -> ConditionProfile:
        om, nu, eta = self.triple.omega, self.triple.nu, self.triple.eta
        w, p, g = self.which, self.p, self.grid
        if w == "Mp":
            return m_p(om, nu, eta, p, g)
        if w == "Dp":
            return d_p(om, nu, p, g)
        if w == "Np":
            return n_p(om, nu, eta, p, g)
        if w == "MpEps":
            return m_p_eps(om, nu, eta, p, self.eps, g)
        if w == "CarlesonRatio":
            return carleson_profile(om, nu, p, g)
        rep = necessary_pq(om, nu, eta, p, self.q, g)
        return rep.first if w == "NecessaryFirst" else rep.second

    def as_dict(self) -> dict:
        d = {
            "which": self.which,
            "p": self.p,
            "levels": self.grid.levels,
            "points_per_level": self.grid.points_per_level,
            **{k: v for k, v in self.triple.config().items()},
        }
        if self.eps is not None:
            d["eps"] = self.eps
        if self.q is not None:
            d["q"] = self.q
        return d

    def report_json(self, profile: ConditionProfile) -> str:
        return dumps_json({"schema": 1, "request": self.as_dict(), "result": profile.summary()})
