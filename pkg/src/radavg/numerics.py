"""Quadrature, grids and supremum profiles.

Every radial integral in the package is taken in the log-depth coordinate
``u = -log(1 - s)``, so that ``s = -expm1(-u)`` and ``1 - s = exp(-u)`` are
both known to full relative precision however close ``s`` is to 1.  An
integrand is supplied as the natural log of its density in ``s``; the
Jacobian ``ds = exp(-u) du`` is added here.  Working with logs makes the
measure-theoretic conventions ``0 * inf = 0`` and ``1 / 0 = inf`` a matter of
adding ``-inf`` and ``+inf`` terms, see :func:`log_product`.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Iterable, Sequence

import mpmath
import numpy as np
from scipy import special

LOG2 = math.log(2.0)


class NonConvergenceError(ArithmeticError):
    """An improper integral neither converged nor visibly diverged."""


# ---------------------------------------------------------------------------
# coordinates and extended-real helpers
# ---------------------------------------------------------------------------


def u_of_r(r):
    """Log-depth coordinate of a radius in [0, 1)."""
    return -np.log1p(-np.asarray(r, dtype=float))


def r_of_u(u):
    return -np.expm1(-np.asarray(u, dtype=float))


def log_product(*terms):
    """Sum of log-factors under the convention ``0 * inf = 0``.

    A factor equal to zero (log ``-inf``) wins over any infinite factor.
    """
    arrays = np.broadcast_arrays(*[np.asarray(t, dtype=float) for t in terms])
    out = np.zeros(arrays[0].shape)
    zero = np.zeros(arrays[0].shape, dtype=bool)
    for t in arrays:
        zero |= t == -np.inf
        with np.errstate(invalid="ignore"):
            out = out + np.where(t == -np.inf, 0.0, t)
    out = np.where(zero, -np.inf, out)
    return out if out.ndim else float(out)


def safe_log(x):
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore"):
        out = np.log(x)
    return out if out.ndim else float(out)


def log_diff_exp(la, lb):
    """log(exp(la) - exp(lb)) for la >= lb."""
    la = np.asarray(la, dtype=float)
    lb = np.asarray(lb, dtype=float)
    with np.errstate(invalid="ignore", divide="ignore"):
        d = lb - la
        out = la + np.log(-np.expm1(np.minimum(d, 0.0)))
    out = np.where(lb == -np.inf, la, out)
    return out if out.ndim else float(out)


def ext_pow(x, a):
    """``x**a`` on [0, inf] with ``0**negative = inf`` and ``inf**0 = 1``."""
    with np.errstate(divide="ignore", over="ignore"):
        return np.power(np.asarray(x, dtype=float), a)


# ---------------------------------------------------------------------------
# upper incomplete gamma in log form
# ---------------------------------------------------------------------------


def _log_gamma_cf(s, z):
    # modified Lentz on the Legendre continued fraction; z > s + 1 assumed
    tiny = 1e-300
    b = z + 1.0 - s
    c = np.full_like(z, 1.0 / tiny)
    d = 1.0 / b
    h = d.copy()
    for i in range(1, 2000):
        an = -i * (i - s)
        b = b + 2.0
        d = an * d + b
        d = np.where(np.abs(d) < tiny, tiny, d)
        c = b + an / c
        c = np.where(np.abs(c) < tiny, tiny, c)
        d = 1.0 / d
        delta = d * c
        h = h * delta
        if np.all(np.abs(delta - 1.0) < 4e-16):
            break
    return -z + s * np.log(z) + np.log(h)


def log_upper_gamma(s: float, z):
    """``log Gamma(s, z)`` for real ``s`` and ``z > 0`` (vectorized in z)."""
    z = np.atleast_1d(np.asarray(z, dtype=float))
    out = np.empty_like(z)
    cf = z > max(s + 1.0, 2.0)
    if cf.any():
        out[cf] = _log_gamma_cf(s, z[cf])
    rest = ~cf
    if rest.any():
        # small s: gammaincc underflows while gammaln overflows
        if s >= 0.5:
            out[rest] = np.log(special.gammaincc(s, z[rest])) + special.gammaln(s)
        else:
            out[rest] = [float(mpmath.log(mpmath.gammainc(s, zz))) for zz in z[rest]]
    return out


# ---------------------------------------------------------------------------
# Gauss-Legendre machinery
# ---------------------------------------------------------------------------


@lru_cache(maxsize=None)
def gauss_legendre(order: int):
    x, w = np.polynomial.legendre.leggauss(order)
    return x, w


def _clip_breaks(breaks, a, b):
    if breaks is None:
        return []
    br = np.asarray(breaks, dtype=float)
    br = br[(br > a) & (br < b)]
    return sorted(set(br.tolist()))


def _gl(g, a, b, order):
    x, w = gauss_legendre(order)
    half = 0.5 * (b - a)
    t = a + half * (x + 1.0)
    v = np.asarray(g(t), dtype=float)
    if np.isnan(v).any():
        raise FloatingPointError(f"integrand produced NaN on [{a}, {b}]")
    if np.isposinf(v).any():
        return math.inf
    return half * float(np.dot(w, v))


def adaptive_gl(g, a, b, rel_tol=1e-12, abs_tol=0.0, breaks=None, depth=18, max_pieces=4000):
    """Integrate a vectorized ``g`` over [a, b] by bisecting Gauss-Legendre.

    Each piece compares a 20- and a 40-point rule.  Any infinite sample
    makes the whole integral infinite.
    """
    edges = [a, *_clip_breaks(breaks, a, b), b]
    total = 0.0
    stack = [(lo, hi, 0) for lo, hi in zip(edges[:-1], edges[1:])]
    pieces = []
    while stack:
        lo, hi, lvl = stack.pop()
        if hi <= lo:
            continue
        coarse = _gl(g, lo, hi, 20)
        fine = _gl(g, lo, hi, 40)
        if math.isinf(coarse) or math.isinf(fine):
            return math.inf
        err = abs(fine - coarse)
        settled = err <= max(rel_tol * abs(fine), abs_tol) or err == 0.0
        if settled or lvl >= depth or len(pieces) + len(stack) > max_pieces:
            pieces.append(fine)
        else:
            mid = 0.5 * (lo + hi)
            stack.append((lo, mid, lvl + 1))
            stack.append((mid, hi, lvl + 1))
    pieces.sort(key=abs)
    for p in pieces:
        total += p
    return total


def improper_blocks(
    g: Callable,
    t0: float,
    rel_tol: float = 1e-10,
    breaks: Callable[[float, float], Sequence[float]] | None = None,
    max_blocks: int = 200,
    first_width: float = 1.0,
) -> float:
    """Integrate a nonnegative vectorized ``g`` over [t0, inf).

    Blocks of doubling width are added until three consecutive blocks each
    contribute less than ``rel_tol`` of the running total.  Returns ``inf``
    when the block contributions stop decaying.
    """
    total = 0.0
    quiet = 0
    lo = t0
    width = first_width
    contributions = []
    for _ in range(max_blocks):
        hi = lo + width
        br = breaks(lo, hi) if breaks is not None else None
        # far blocks only need accuracy relative to the running total
        c = adaptive_gl(g, lo, hi, rel_tol=rel_tol * 1e-2, abs_tol=rel_tol * 1e-3 * total, breaks=br)
        if math.isinf(c):
            return math.inf
        total += c
        contributions.append(c)
        if total > 0 and c <= rel_tol * total:
            quiet += 1
            if quiet >= 3:
                return total
        elif total == 0.0 and lo - t0 > 1e3:
            return 0.0
        else:
            quiet = 0
        lo = hi
        width *= 2.0
        if not math.isfinite(total):
            return math.inf
    tail = contributions[-10:]
    if all(b >= a * 0.999 for a, b in zip(tail[:-1], tail[1:])):
        return math.inf
    raise NonConvergenceError(
        f"improper integral from {t0} did not settle within {max_blocks} blocks"
    )


def integrate_improper(f, a: float, rel_tol: float = 1e-10, *, log_depth: bool = False):
    """``int_a^1 f(s) ds`` for an integrand that may be singular at 1.

    With ``log_depth=False`` ``f`` is a (vectorized) function of ``s``.  With
    ``log_depth=True`` ``f`` is already the integrand in ``u = -log(1-s)``,
    i.e. ``int_a^1 F(s) ds = int_{u(a)}^inf f(u) du``; this form reaches
    depths far below double-precision resolution of ``s``.
    """
    if rel_tol <= 0:
        raise ValueError("rel_tol must be positive")
    if not 0.0 <= a < 1.0:
        raise ValueError(f"lower limit {a} outside [0, 1)")
    u0 = float(u_of_r(a))
    if log_depth:
        return improper_blocks(f, u0, rel_tol=rel_tol)

    def g(u):
        s = r_of_u(u)
        with np.errstate(invalid="ignore", over="ignore", divide="ignore"):
            v = np.asarray(f(s), dtype=float)
        return log_weighted(v, np.exp(-u))

    # beyond 1 - s = 2**-52 the value f(s) carries no information
    u_res = 52 * LOG2
    if u0 >= u_res:
        raise ValueError("lower limit not resolvable in double precision")
    total = adaptive_gl(g, u0, u_res, rel_tol=rel_tol * 1e-2)
    if math.isinf(total):
        return math.inf
    probe = np.asarray(g(np.linspace(u_res - 8.0, u_res, 9)), dtype=float)
    if probe[-1] <= rel_tol * max(total, 1e-300):
        return total + probe[-1]
    if probe[-1] >= 0.9 * probe[0]:
        return math.inf
    # exponential decay in u (algebraic in 1 - s) has a closed-form remainder
    # fitted where 1 - s is still well resolved
    fit = np.asarray(g(np.linspace(u_res - 20.0, u_res - 12.0, 9)), dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        rates = -np.diff(np.log(fit))
    if np.all(rates > 0) and np.ptp(rates) <= 1e-3 * rates.mean():
        beta = rates.mean()
        return total + fit[-1] * math.exp(-12.0 * beta) / beta
    raise NonConvergenceError(
        "integrand decays too slowly to resolve in s; pass log_depth=True"
    )


def log_weighted(v, x):
    """``v * x`` with ``0 * inf = 0``."""
    v = np.asarray(v, dtype=float)
    with np.errstate(invalid="ignore"):
        out = v * x
    return np.where((v == 0) | (x == 0), 0.0, out)


def integrate_log_density(log_f, u_lo, u_hi, breaks=None, rel_tol=1e-12):
    """``int`` of a log-density over [s(u_lo), s(u_hi)] (finite u_hi)."""

    def g(u):
        with np.errstate(over="ignore"):
            return np.exp(log_product(log_f(u), -u))

    return adaptive_gl(g, u_lo, u_hi, rel_tol=rel_tol, breaks=breaks)


def integrate_log_density_tail(log_f, u_lo, breaks=None, rel_tol=1e-11):
    """``int`` of a log-density over [s(u_lo), 1)."""

    def g(u):
        with np.errstate(over="ignore"):
            return np.exp(log_product(log_f(u), -u))

    return improper_blocks(g, u_lo, rel_tol=rel_tol, breaks=breaks)


def integrate_log_density_head(log_f, u_hi, rel_tol=1e-11):
    """``int`` of a log-density over (0, s(u_hi)], allowing a singularity at 0.

    Uses ``v = -log s`` so that an integrable blow-up at the origin becomes a
    decaying tail; a non-integrable one returns ``inf``.
    """
    v0 = -math.log(float(r_of_u(u_hi)))

    def g(v):
        s = np.exp(-v)
        u = -np.log1p(-s)
        with np.errstate(over="ignore"):
            return np.exp(log_product(log_f(u), -v))

    return improper_blocks(g, v0, rel_tol=rel_tol)


# ---------------------------------------------------------------------------
# grids
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RadialGrid:
    """Dyadic radial grid clustered at the boundary.

    Band ``j`` is ``[1 - 2**-j, 1 - 2**-(j+1)]`` for ``j = 0 .. levels-1`` and
    holds ``points_per_level`` equispaced nodes; the last node is
    ``1 - 2**-levels``.
    """

    levels: int = 40
    points_per_level: int = 8

    def __post_init__(self):
        if self.levels < 1 or self.points_per_level < 1:
            raise ValueError("levels and points_per_level must be positive")

    @property
    def depths(self) -> np.ndarray:
        m = self.points_per_level
        k = np.arange(m)
        xs = [2.0 ** -j * (1.0 - k / (2.0 * m)) for j in range(self.levels)]
        xs.append(np.array([2.0 ** -self.levels]))
        return np.concatenate(xs)

    @property
    def nodes(self) -> np.ndarray:
        return 1.0 - self.depths

    @property
    def u(self) -> np.ndarray:
        return -np.log(self.depths)

    @property
    def node_levels(self) -> np.ndarray:
        m = self.points_per_level
        lv = np.repeat(np.arange(self.levels), m)
        return np.append(lv, self.levels)

    def refined(self) -> "RadialGrid":
        return RadialGrid(self.levels, 2 * self.points_per_level)

    def level_end_indices(self) -> np.ndarray:
        """Index of the last node of every level (and the final node)."""
        m = self.points_per_level
        return np.append(np.arange(1, self.levels + 1) * m - 1, self.levels * m)


@dataclass(frozen=True)
class PolarGrid:
    radial: RadialGrid = field(default_factory=RadialGrid)
    angular: int = 64

    def __post_init__(self):
        n = self.angular
        if n < 16 or n & (n - 1):
            raise ValueError("angular count must be a power of two >= 16")

    @property
    def angles(self) -> np.ndarray:
        return 2 * np.pi * np.arange(self.angular) / self.angular


def interval_integrals(log_f, u_nodes, breaks=None, rel_tol=1e-12):
    """Integrals of a log-density between consecutive log-depth nodes.

    All pieces (split at breakpoints) get a 20-point rule in one vectorized
    call; pieces where the 10- and 20-point rules disagree by more than
    ``CHECK_TOL`` are redone adaptively.
    """
    u_nodes = np.asarray(u_nodes, dtype=float)
    n = len(u_nodes) - 1
    if n <= 0:
        return np.zeros(0)
    owner, los, his = [], [], []
    for k in range(n):
        lo, hi = u_nodes[k], u_nodes[k + 1]
        if hi <= lo:
            continue
        edges = [lo, *_clip_breaks(breaks(lo, hi) if breaks is not None else None, lo, hi), hi]
        for a, b in zip(edges[:-1], edges[1:]):
            owner.append(k)
            los.append(a)
            his.append(b)
    out = np.zeros(n)
    if not owner:
        return out
    owner, los, his = np.array(owner), np.array(los), np.array(his)
    half = 0.5 * (his - los)
    x20, w20 = gauss_legendre(20)
    x10, w10 = gauss_legendre(10)
    nodes = np.concatenate([x20, x10])
    pts = los[:, None] + half[:, None] * (nodes[None, :] + 1.0)
    with np.errstate(over="ignore"):
        vals = np.exp(log_product(log_f(pts.ravel()), -pts.ravel())).reshape(pts.shape)
    if np.isnan(vals).any():
        raise FloatingPointError("integrand produced NaN")
    with np.errstate(invalid="ignore"):
        i20 = half * (vals[:, :20] @ w20)
        i10 = half * (vals[:, 20:] @ w10)
        bad = ~np.isfinite(i20) | ~np.isfinite(i10) | (np.abs(i20 - i10) > CHECK_TOL * np.abs(i20))
    for idx in np.flatnonzero(bad):
        i20[idx] = adaptive_gl(
            lambda u: np.exp(log_product(log_f(u), -u)), los[idx], his[idx], rel_tol=rel_tol
        )
    np.add.at(out, owner, i20)
    return out


CHECK_TOL = 1e-10


def suffix_integrals(log_f, u_nodes, breaks=None, singular_at_zero=True):
    """``int_{r_i}^1`` of a log-density at every node."""
    u_nodes = np.asarray(u_nodes, dtype=float)
    tail = integrate_log_density_tail(log_f, u_nodes[-1], breaks)
    if len(u_nodes) == 1:
        if u_nodes[0] == 0.0 and singular_at_zero:
            head = integrate_log_density_head(log_f, 1.0)
            return np.array([head + integrate_log_density_tail(log_f, 1.0, breaks)])
        return np.array([tail])
    inner = interval_integrals(log_f, u_nodes[1:], breaks)
    parts = np.append(inner, tail)
    rest = np.cumsum(parts[::-1])[::-1]
    if u_nodes[0] == 0.0 and singular_at_zero:
        head = integrate_log_density_head(log_f, u_nodes[1])
    else:
        head = float(interval_integrals(log_f, u_nodes[:2], breaks)[0])
    return np.append(head + rest[0], rest)


def prefix_integrals(log_f, u_nodes, breaks=None):
    """``int_{r_0}^{r_i}`` of a log-density at every node (regular at r_0)."""
    parts = interval_integrals(log_f, u_nodes, breaks)
    return np.concatenate([[0.0], np.cumsum(parts)])


# ---------------------------------------------------------------------------
# supremum profiles
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Verdict:
    kind: str  # Bounded | DivergesLog | DivergesPower | DivergesOther | Infinite
    sup_estimate: float = math.nan
    rate: float = math.nan
    exponent: float = math.nan

    @property
    def bounded(self) -> bool:
        return self.kind == "Bounded"

    def as_dict(self) -> dict:
        d = {"kind": self.kind}
        for k in ("sup_estimate", "rate", "exponent"):
            v = getattr(self, k)
            if not math.isnan(v):
                d[k] = v
        return d

    def __str__(self):
        if self.kind == "Bounded":
            return f"Bounded({self.sup_estimate:.6g})"
        if self.kind == "DivergesLog":
            return f"DivergesLog(rate={self.rate:.4g}, exponent={self.exponent:.4g})"
        if self.kind == "DivergesPower":
            return f"DivergesPower({self.exponent:.4g})"
        return self.kind


@dataclass
class ConditionProfile:
    nodes: np.ndarray
    values: np.ndarray
    running_sup: np.ndarray
    verdict: Verdict
    fit_quality: float
    levels: np.ndarray
    extra: dict = field(default_factory=dict)

    @property
    def sup(self) -> float:
        return float(self.running_sup[-1])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["level", "r", "value", "running_sup"])
        for lv, r, v, s in zip(self.levels, self.nodes, self.values, self.running_sup):
            w.writerow([int(lv), repr(float(r)), repr(float(v)), repr(float(s))])
        return buf.getvalue()

    def summary(self) -> dict:
        return {
            "verdict": self.verdict.as_dict(),
            "fit": self.fit_quality,
            "sup_estimate": _json_float(self.sup),
            **{k: _json_ready(v) for k, v in self.extra.items()},
        }


def _json_float(x):
    x = float(x)
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    if math.isnan(x):
        return "nan"
    return x


def _json_ready(v):
    if isinstance(v, (float, np.floating)):
        return _json_float(v)
    if isinstance(v, (list, tuple, np.ndarray)):
        return [_json_ready(x) for x in v]
    if isinstance(v, dict):
        return {k: _json_ready(x) for k, x in v.items()}
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    return v


def dumps_json(obj) -> str:
    return json.dumps(_json_ready(obj), indent=2, sort_keys=True)


def _r2(x, y):
    if len(x) < 3 or np.ptp(x) == 0:
        return 0.0, 0.0, 0.0
    slope, icpt = np.polyfit(x, y, 1)
    resid = y - (slope * x + icpt)
    ss = np.sum((y - y.mean()) ** 2)
    if ss == 0:
        return slope, icpt, 0.0
    return slope, icpt, 1.0 - np.sum(resid**2) / ss


BOUNDED_WINDOW = 8
BOUNDED_TOL = 1e-3
FIT_R2 = 0.98


SUMMABLE_ALPHA = 1.3
MAX_REMAINDER = 0.25


def extrapolate_limit(seq, level_u, r2_min: float = FIT_R2):
    """Whether a monotone sequence converges, and its estimated limit.

    Works on samples one level apart (a trailing partial level is dropped).
    The increments over the upper half are fitted as a power of ``1 + u``
    with exponent below ``-SUMMABLE_ALPHA`` or as a geometric sequence in
    ``u``; the summed remainder must stay under ``MAX_REMAINDER`` of the last
    value.  Returns ``(converged, limit)``.
    """
    s = np.asarray(seq, dtype=float)
    u = np.asarray(level_u, dtype=float)
    if len(u) > 2 and u[-1] - u[-2] < 0.5 * LOG2:
        s, u = s[:-1], u[:-1]
    last = float(s[-1])
    half = len(s) // 2
    d = np.abs(np.diff(s))[half - 1 :]
    uu = u[half:]
    if len(d) < 4 or not np.all(np.isfinite(d)):
        return False, last
    if np.all(d == 0):
        return True, last
    if np.any(d <= 0):
        return False, last
    h = float(np.mean(np.diff(uu)))
    ld = np.log(d)
    best = None
    for kind, x in (("power", np.log1p(uu)), ("geometric", uu)):
        slope, icpt, r2 = _r2(x, ld)
        if r2 > r2_min and (best is None or r2 > best[0]):
            best = (r2, kind, slope, math.exp(slope * x[-1] + icpt))
    if best is None:
        return False, last
    _, kind, slope, d_last = best
    if kind == "power":
        alpha = -slope
        if alpha <= SUMMABLE_ALPHA:
            return False, last
        remainder = d_last * (1.0 + uu[-1]) / (h * (alpha - 1.0))
    else:
        q = math.exp(slope * h)
        if q >= 1:
            return False, last
        remainder = d_last * q / (1.0 - q)
    if remainder > MAX_REMAINDER * abs(last):
        return False, last
    direction = math.copysign(1.0, s[-1] - s[half - 1])
    return True, last + direction * remainder


def classify_levels(level_sups: np.ndarray, level_u: np.ndarray) -> tuple[Verdict, float]:
    """Verdict from the running supremum sampled at the end of each level.

    ``level_u`` is the log-depth of each sample; one level is ``log 2``.
    """
    s = np.asarray(level_sups, dtype=float)
    if np.isposinf(s).any():
        return Verdict("Infinite", sup_estimate=math.inf), 1.0
    last = s[-1]
    if last <= 0:
        return Verdict("Bounded", sup_estimate=0.0), 1.0
    w = min(BOUNDED_WINDOW, len(s) - 1)
    if (last - s[-1 - w]) <= BOUNDED_TOL * last:
        return Verdict("Bounded", sup_estimate=float(last)), 1.0
    converged, limit = extrapolate_limit(s, level_u)
    if converged:
        return Verdict("Bounded", sup_estimate=float(limit)), 1.0
    # fit on the upper half of the levels, where asymptotics dominate
    half = len(s) // 2
    u = np.asarray(level_u, dtype=float)[half:]
    y = s[half:]
    ok = (y > 0) & (u > 0)
    u, y = u[ok], y[ok]
    beta, _, r2_pow = _r2(u, np.log(y))
    gamma, _, r2_log = _r2(np.log(u), np.log(y))
    if max(r2_pow, r2_log) > FIT_R2:
        if r2_log >= r2_pow:
            rate, _, _ = _r2(u / LOG2, y)
            return Verdict("DivergesLog", rate=float(rate), exponent=float(gamma)), float(r2_log)
        return Verdict("DivergesPower", exponent=float(beta)), float(r2_pow)
    return Verdict("DivergesOther"), float(max(r2_pow, r2_log))


def profile_from_values(grid: RadialGrid, values, extra=None) -> ConditionProfile:
    values = np.asarray(values, dtype=float)
    if np.isnan(values).any():
        raise FloatingPointError("condition values contain NaN")
    running = np.maximum.accumulate(values)
    ends = grid.level_end_indices()
    verdict, fit = classify_levels(running[ends], grid.u[ends])
    return ConditionProfile(
        nodes=grid.nodes,
        values=values,
        running_sup=running,
        verdict=verdict,
        fit_quality=fit,
        levels=grid.node_levels,
        extra=dict(extra or {}),
    )


def sup_profile(expr: Callable[[float], float], grid: RadialGrid) -> ConditionProfile:
    """Profile of a scalar expression of ``r`` over the grid nodes."""
    values = [float(expr(float(r))) for r in grid.nodes]
    return profile_from_values(grid, values)
