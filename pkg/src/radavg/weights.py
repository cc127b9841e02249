"""Radial weights on the unit disc, their tails, moments and classes.

A weight is described by its density on [0, 1).  All methods take the
log-depth ``u = -log(1 - r)`` and return natural logs, so ``-inf`` encodes a
zero and ``+inf`` an infinite value.  The public functions (:func:`eval_weight`,
:func:`tail`, :func:`moment`, ...) accept plain radii.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import special

from .numerics import (
    RadialGrid,
    extrapolate_limit,
    gauss_legendre,
    integrate_log_density,
    integrate_log_density_head,
    integrate_log_density_tail,
    log_diff_exp,
    log_product,
    log_upper_gamma,
    r_of_u,
    safe_log,
    u_of_r,
)


class WeightError(ValueError):
    pass


class NonpositiveTailError(WeightError):
    """The tail integral vanished where the standing assumption needs it positive."""


def _check_r(r):
    r = np.asarray(r, dtype=float)
    if np.any((r < 0) | (r >= 1)) or np.isnan(r).any():
        raise WeightError(f"radius outside [0, 1): {r}")
    return r


class RadialWeight:
    """Base class.  Subclasses provide ``log_density`` and usually ``log_tail``."""

    family = "abstract"
    analytic_tail = False

    def log_density(self, u):
        raise NotImplementedError

    def log_tail(self, u):
        """log of ``int_r^1 w``, numerically by default."""
        u = np.atleast_1d(np.asarray(u, dtype=float))
        out = np.empty_like(u)
        for i, uu in enumerate(u):
            out[i] = safe_log(self._numeric_tail(uu, 0.0))
        return out

    def log_stail(self, u):
        """log of ``int_r^1 s w(s) ds``."""
        u = np.atleast_1d(np.asarray(u, dtype=float))
        out = np.empty_like(u)
        for i, uu in enumerate(u):
            out[i] = safe_log(self._numeric_tail(uu, 1.0))
        return out

    def _numeric_tail(self, u0, power):
        def lf(v):
            ld = self.log_density(v)
            return log_product(ld, power * safe_log(r_of_u(v))) if power else ld

        if u0 == 0.0 and power < 1.0:
            head = integrate_log_density_head(lf, 1.0)
            if math.isinf(head):
                return math.inf
            return head + integrate_log_density_tail(lf, 1.0, breaks=self.breaks)
        return integrate_log_density_tail(lf, u0, breaks=self.breaks)

    def breaks(self, lo, hi) -> Sequence[float]:
        """Log-depths in (lo, hi) where the density may jump."""
        return ()

    def moments(self, t: float, xs) -> np.ndarray:
        """``int_t^1 s**x w(s) ds`` for every exponent in ``xs``."""
        return numeric_moments(self, t, xs)

    def config(self) -> dict:
        raise NotImplementedError

    def __repr__(self):
        body = ",".join(f"{k}={v}" for k, v in self.config().items() if k != "family")
        return f"{self.family}({body})"


@dataclass(frozen=True, repr=False)
class PowerLog(RadialWeight):
    """``(1-s)**a * log(e/(1-s))**b``."""

    a: float = 0.0
    b: float = 0.0
    family = "powerlog"
    analytic_tail = True

    def __post_init__(self):
        if not (self.a > -1 or (self.a == -1 and self.b < -1)):
            raise WeightError(f"powerlog(a={self.a}, b={self.b}) is not integrable")

    def log_density(self, u):
        u = np.asarray(u, dtype=float)
        return -self.a * u + self.b * np.log1p(u)

    def log_tail(self, u):
        return _powerlog_log_tail(self.a, self.b, u)

    def log_stail(self, u):
        return log_diff_exp(
            _powerlog_log_tail(self.a, self.b, u), _powerlog_log_tail(self.a + 1.0, self.b, u)
        )

    def moments(self, t, xs):
        xs = np.asarray(xs, dtype=float)
        if self.b == 0.0:
            a = self.a
            beta = np.exp(special.betaln(a + 1.0, xs + 1.0))
            return beta * special.betainc(a + 1.0, xs + 1.0, 1.0 - t)
        return numeric_moments(self, t, xs)

    def config(self):
        return {"family": self.family, "a": self.a, "b": self.b}


def _powerlog_log_tail(a, b, u):
    u = np.atleast_1d(np.asarray(u, dtype=float))
    v = 1.0 + u
    if a == -1.0:
        return (b + 1.0) * np.log(v) - math.log(-b - 1.0)
    c = a + 1.0
    return c - (b + 1.0) * math.log(c) + log_upper_gamma(b + 1.0, c * v)


@dataclass(frozen=True, repr=False)
class Monomial(RadialWeight):
    """``coef * s**c``."""

    c: float = 0.0
    coef: float = 1.0
    family = "monomial"
    analytic_tail = True

    def __post_init__(self):
        if self.c < 0 or self.coef < 0:
            raise WeightError("monomial needs c >= 0 and coef >= 0")

    def log_density(self, u):
        u = np.asarray(u, dtype=float)
        if self.c == 0:
            return np.full(u.shape, safe_log(self.coef))
        return safe_log(self.coef) + self.c * safe_log(r_of_u(u))

    def _log_power_tail(self, k, u):
        # log int_r^1 s**(k-1) ds = log((1 - r**k)/k)
        u = np.atleast_1d(np.asarray(u, dtype=float))
        x = np.exp(-u)
        with np.errstate(divide="ignore"):
            inner = np.log(-np.expm1(k * np.log1p(-x)))
        deep = u > 700.0
        inner = np.where(deep, math.log(k) - u, inner)
        return safe_log(self.coef) + inner - math.log(k)

    def log_tail(self, u):
        return self._log_power_tail(self.c + 1.0, u)

    def log_stail(self, u):
        return self._log_power_tail(self.c + 2.0, u)

    def moments(self, t, xs):
        k = np.asarray(xs, dtype=float) + self.c + 1.0
        return self.coef * (-np.expm1(k * math.log(t))) / k if t > 0 else self.coef / k

    def config(self):
        return {"family": self.family, "c": self.c, "coef": self.coef}


class Tabulated(RadialWeight):
    """Piecewise-constant weight: ``values[i]`` on ``[knots[i], knots[i+1])``.

    The last value extends to 1 and must be positive so the tail stays
    positive.  Below the first knot the weight vanishes.
    """

    family = "tabulated"
    analytic_tail = True

    def __init__(self, knots, values, path=None):
        knots = np.asarray(knots, dtype=float)
        values = np.asarray(values, dtype=float)
        if knots.ndim != 1 or knots.shape != values.shape or len(knots) == 0:
            raise WeightError("knots and values must be 1-d of equal length")
        if np.any(np.diff(knots) <= 0) or knots[0] < 0 or knots[-1] >= 1:
            raise WeightError("knots must be strictly increasing in [0, 1)")
        if np.any(values < 0):
            raise WeightError("tabulated values must be nonnegative")
        if values[-1] <= 0:
            raise NonpositiveTailError("last tabulated value must be positive")
        self.knots = knots
        self.values = values
        self.path = path
        self._x = np.append(1.0 - knots, 0.0)
        self._u = -np.log(self._x[:-1])
        cell = values * (self._x[:-1] - self._x[1:])
        scell = values * (self._x[:-1] - self._x[1:]) * (2.0 - self._x[:-1] - self._x[1:]) / 2.0
        self._suffix = np.append(np.cumsum(cell[::-1])[::-1], 0.0)
        self._ssuffix = np.append(np.cumsum(scell[::-1])[::-1], 0.0)

    def _cell(self, u):
        return np.searchsorted(self._u, u, side="right") - 1

    def log_density(self, u):
        u = np.asarray(u, dtype=float)
        i = self._cell(u)
        vals = np.where(i >= 0, self.values[np.clip(i, 0, None)], 0.0)
        return safe_log(vals)

    def _log_tails(self, u, second):
        u = np.atleast_1d(np.asarray(u, dtype=float))
        x = np.exp(-u)
        i = self._cell(u)
        before = i < 0
        j = np.clip(i, 0, None)
        xn = self._x[j + 1]
        if second:
            part = self.values[j] * (x - xn) * (2.0 - x - xn) / 2.0
            total = part + self._ssuffix[j + 1]
            total = np.where(before, self._ssuffix[0], total)
        else:
            part = self.values[j] * (x - xn)
            total = part + self._suffix[j + 1]
            total = np.where(before, self._suffix[0], total)
        return safe_log(total)

    def log_tail(self, u):
        return self._log_tails(u, False)

    def log_stail(self, u):
        return self._log_tails(u, True)

    def breaks(self, lo, hi):
        return self._u[(self._u > lo) & (self._u < hi)]

    def config(self):
        if self.path is None:
            raise WeightError("tabulated weight has no CSV path; call write_csv first")
        return {"family": self.family, "path": str(self.path)}

    def write_csv(self, path):
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["r", "value"])
            for r, v in zip(self.knots, self.values):
                w.writerow([repr(float(r)), repr(float(v))])
        self.path = path
        return path

    @classmethod
    def read_csv(cls, path):
        rows = []
        with Path(path).open() as fh:
            for row in csv.reader(fh):
                if not row or row[0].strip().startswith("#"):
                    continue
                try:
                    rows.append((float(row[0]), float(row[1])))
                except ValueError:
                    continue  # header
        knots, values = zip(*rows)
        return cls(knots, values, path=Path(path))

    def __repr__(self):
        return f"tabulated({len(self.knots)} knots)"


@dataclass(frozen=True, repr=False)
class ZeroWeight(RadialWeight):
    family = "zero"
    analytic_tail = True

    def log_density(self, u):
        return np.full(np.shape(u), -np.inf)

    def log_tail(self, u):
        return np.full(np.atleast_1d(u).shape, -np.inf)

    def log_stail(self, u):
        return self.log_tail(u)

    def moments(self, t, xs):
        return np.zeros(np.shape(xs))

    def config(self):
        return {"family": self.family}


# depth beyond which the oscillation is replaced by its average density
OSCILLATION_CAP_U = -math.log(1e-14)


class OscillatingProduct(RadialWeight):
    """``(base(t)/t) * indicator`` switching off on every other tail level.

    With ``r_n`` defined by ``tail(base, r_n) = K**-n * tail(base, 0)`` the
    indicator is 1 on ``[r_{2n}, r_{2n+1})`` and 0 on ``[r_{2n+1}, r_{2n+2})``.
    Past ``1 - r = 1e-14`` the indicator is replaced by its mean mass
    fraction ``K/(K+1)``.
    """

    family = "oscillating"

    def __init__(self, base: RadialWeight, K: float = 2.0):
        if K <= 1:
            raise WeightError("K must exceed 1")
        self.base = base
        self.K = float(K)
        self.logK = math.log(self.K)
        self.log_base0 = float(base.log_tail(0.0)[0])
        if not math.isfinite(self.log_base0):
            raise WeightError("base tail at 0 must be finite and positive")
        self._levels = _tail_level_crossings(base, self.K, 0.0, OSCILLATION_CAP_U)
        edges = np.append(self._levels, OSCILLATION_CAP_U)
        # mass of each active cell; the first one diverges at the origin
        seg = np.zeros(len(self._levels))
        seg[0] = math.inf
        for n in range(2, len(seg), 2):
            seg[n] = integrate_log_density(self.log_density, edges[n], edges[n + 1])
        self._edges = edges
        self._log_deep = float(base.log_tail(OSCILLATION_CAP_U)[0]) + math.log(self.K / (self.K + 1.0))
        self._suffix = np.append(np.cumsum(seg[::-1])[::-1], 0.0) + math.exp(self._log_deep)

    @property
    def level_u(self) -> np.ndarray:
        """Log-depths ``u(r_n)`` up to the cap (``r_0 = 0``)."""
        return self._levels

    def _index(self, u):
        return np.searchsorted(self._levels, u, side="right") - 1

    def log_density(self, u):
        u = np.asarray(u, dtype=float)
        n = self._index(u)
        on = np.where(n % 2 == 0, 0.0, -np.inf)
        deep = u >= OSCILLATION_CAP_U
        on = np.where(deep, math.log(self.K / (self.K + 1.0)), on)
        with np.errstate(divide="ignore"):
            inv_s = -np.log(r_of_u(u))
        return log_product(self.base.log_density(u), inv_s, on)

    def log_tail(self, u):
        u = np.atleast_1d(np.asarray(u, dtype=float))
        n = self._index(u)
        out = np.empty(len(u))
        for i, (uu, k) in enumerate(zip(u, n)):
            if uu <= 0.0:
                out[i] = math.inf  # base(t)/t is not integrable at 0
            elif uu >= OSCILLATION_CAP_U:
                # 1/t = 1 to double precision here
                out[i] = float(self.base.log_tail(uu)[0]) + math.log(self.K / (self.K + 1.0))
            else:
                part = 0.0
                if k % 2 == 0:
                    part = integrate_log_density(self.log_density, uu, self._edges[k + 1])
                out[i] = math.log(part + self._suffix[k + 1])
        return out

    def log_stail(self, u):
        u = np.atleast_1d(np.asarray(u, dtype=float))
        lt = self.base.log_tail(u)
        n = self._index(u)
        deep = u >= OSCILLATION_CAP_U
        lscale = self.log_base0 - n * self.logK
        T = np.exp(lt - lscale)
        K = self.K
        active = np.log(np.maximum(T - 1.0 / K + 1.0 / (K * (K + 1.0)), 1e-300))
        gap = -math.log(K + 1.0)
        out = lscale + np.where(n % 2 == 0, active, gap)
        return np.where(deep, lt + math.log(K / (K + 1.0)), out)

    def breaks(self, lo, hi):
        lv = self._levels
        return lv[(lv > lo) & (lv < hi)]

    def config(self):
        cfg = {"family": self.family, "K": self.K}
        for k, v in self.base.config().items():
            cfg[f"base.{k}"] = v
        return cfg

    def __repr__(self):
        return f"oscillating(K={self.K}, base={self.base!r})"


def _tail_level_crossings(w, K, u0, u_cap):
    """Log-depths where ``tail(w)`` falls to ``tail(w, u0) * K**-n``, n >= 0."""
    l0 = float(w.log_tail(u0)[0])
    out = [u0]
    n = 1
    lo = u0
    logK = math.log(K)
    while True:
        target = l0 - n * logK
        u = _first_crossing(w, target, lo)
        if u >= u_cap:
            break
        out.append(u)
        lo = u
        n += 1
    return np.array(out)


def _first_crossing(w, target, lo, tol=1e-14):
    """Smallest log-depth at or after ``lo`` where ``log_tail <= target``."""
    step = 1.0
    hi = lo + step
    while float(w.log_tail(hi)[0]) > target:
        lo = hi
        step *= 2.0
        hi = lo + step
        if hi > 1e6:
            return math.inf
    for _ in range(200):
        if hi - lo <= tol * max(1.0, hi):
            break
        mid = 0.5 * (lo + hi)
        if float(w.log_tail(mid)[0]) > target:
            lo = mid
        else:
            hi = mid
    return hi


# ---------------------------------------------------------------------------
# moments
# ---------------------------------------------------------------------------


MOMENT_U_SPAN = 60.0


def _panel_nodes(lo, hi, breaks, width=0.25, order=24):
    edges = [lo, *[b for b in breaks if lo < b < hi], hi]
    xg, wg = gauss_legendre(order)
    us, ws = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        k = max(1, int(math.ceil((b - a) / width)))
        e = np.linspace(a, b, k + 1)
        half = 0.5 * np.diff(e)
        us.append((e[:-1, None] + half[:, None] * (xg[None, :] + 1.0)).ravel())
        ws.append((half[:, None] * wg[None, :]).ravel())
    return np.concatenate(us), np.concatenate(ws)


def numeric_moments(w: RadialWeight, t: float, xs, chunk: int = 512) -> np.ndarray:
    """``int_t^1 s**x w(s) ds`` by composite Gauss-Legendre in log-depth."""
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    u_lo = float(u_of_r(t))
    u_hi = u_lo + MOMENT_U_SPAN
    breaks = list(w.breaks(u_lo, u_hi))
    if u_lo < 0.25:
        # s**x is not smooth at the origin; grade panels toward it
        breaks += list(u_lo + (0.25 - u_lo) * 2.0 ** -np.arange(1, 48))
    un, wn = _panel_nodes(u_lo, u_hi, sorted(breaks))
    logs = safe_log(r_of_u(un))
    base = log_product(w.log_density(un), -un)
    out = np.empty(len(xs))
    for k in range(0, len(xs), chunk):
        xk = xs[k : k + chunk]
        with np.errstate(invalid="ignore"):
            lg = xk[:, None] * logs[None, :]
        lg = np.where(np.isnan(lg), 0.0, lg)  # 0 * log 0
        vals = np.exp(log_product(lg, base[None, :]))
        out[k : k + chunk] = vals @ wn
    out += np.exp(w.log_tail(u_hi)[0])
    return out


# ---------------------------------------------------------------------------
# public operations
# ---------------------------------------------------------------------------


def eval_weight(w: RadialWeight, r):
    """``w(r)`` for radii in [0, 1)."""
    r = _check_r(r)
    out = np.exp(w.log_density(u_of_r(r)))
    return float(out) if np.ndim(out) == 0 else out


def tail(w: RadialWeight, r):
    """``int_r^1 w(s) ds``; raises :class:`NonpositiveTailError` if it vanishes."""
    r = _check_r(r)
    vals = np.exp(w.log_tail(u_of_r(r)))
    if np.any(vals <= 0):
        raise NonpositiveTailError(f"tail of {w!r} is not positive at r={r}")
    return float(vals[0]) if np.ndim(r) == 0 else vals


def moment(w: RadialWeight, t: float, x: float) -> float:
    """``int_t^1 s**x w(s) ds``."""
    _check_r(t)
    if x < 0:
        raise WeightError("moment exponent must be nonnegative")
    if x == 0:
        return float(np.exp(w.log_tail(u_of_r(t)))[0])
    if x == 1:
        return float(np.exp(w.log_stail(u_of_r(t)))[0])
    return float(w.moments(t, [x])[0])


@dataclass(frozen=True)
class WeightTriple:
    omega: RadialWeight
    nu: RadialWeight
    eta: RadialWeight

    def config(self) -> dict:
        return {"omega": self.omega.config(), "nu": self.nu.config(), "eta": self.eta.config()}


def make_log_example_triple(p: float) -> WeightTriple:
    """Weights for which the weak-type bound holds but the strong one fails."""
    if p <= 1:
        raise WeightError("p must exceed 1")
    return WeightTriple(
        omega=Monomial(1.0),
        nu=PowerLog(p - 1.0, 2.0 * (p - 1.0)),
        eta=PowerLog(p - 1.0, p - 1.0),
    )


def make_counterexample_nu(omega: RadialWeight, K: float = 2.0, grid=None) -> OscillatingProduct:
    """``nu`` with ``t nu(t) = omega(t)`` on alternate tail levels, else 0."""
    if K <= 1:
        raise WeightError("K must exceed 1")
    report = classify_dhat(omega, grid or RadialGrid(levels=40, points_per_level=2))
    if report.verdict != "Member":
        raise WeightError(f"omega must be doubling; classification gave {report.verdict}")
    return OscillatingProduct(omega, K)


def rho_sequence(w: RadialWeight, K: float, r: float, n_max: int) -> list[float]:
    """Radii where the tail first drops to ``tail(w, r) * K**-n``, n = 0..n_max."""
    return [float(r_of_u(u)) for u in rho_sequence_u(w, K, r, n_max)]


def rho_sequence_u(w: RadialWeight, K: float, r: float, n_max: int) -> list[float]:
    if K <= 1:
        raise WeightError("K must exceed 1")
    _check_r(r)
    u0 = float(u_of_r(r))
    l0 = float(w.log_tail(u0)[0])
    out = [u0]
    lo = u0
    for n in range(1, n_max + 1):
        u = _first_crossing(w, l0 - n * math.log(K), lo, tol=1e-15)
        out.append(u)
        lo = u
    return out


# ---------------------------------------------------------------------------
# classification
# ---------------------------------------------------------------------------


STABLE_WINDOW = 8
STABLE_TOL = 1e-3
TREND_R2 = 0.99
DCHECK_THRESHOLD = 1.05


@dataclass
class DoublingReport:
    class_tested: str  # Dhat | Dcheck | Regular
    C_estimate: float
    max_probe_r: float
    verdict: str  # Member | NotMember | Inconclusive
    K: float | None = None
    ratios: np.ndarray = field(default_factory=lambda: np.array([]), repr=False)
    protocol: str = (
        "probe r = 1 - 2**-j, j >= 1; Member needs the running extremum to move "
        "< 0.1% over the last 8 levels or to converge with fitted increments; "
        "NotMember needs a fitted trend (R^2 > 0.99)"
    )

    def as_dict(self):
        return {
            "class_tested": self.class_tested,
            "K": self.K,
            "C_estimate": self.C_estimate,
            "max_probe_r": self.max_probe_r,
            "verdict": self.verdict,
            "protocol": self.protocol,
        }


def _probe(grid: RadialGrid):
    u = grid.u
    keep = grid.node_levels >= 1
    ends = grid.level_end_indices()
    # full levels only, so consecutive probes are one doubling apart
    ends = ends[(ends >= np.argmax(keep)) & (ends < len(u) - 1)]
    return u, keep, ends


def _stable(seq):
    w = min(STABLE_WINDOW, len(seq) - 1)
    a, b = seq[-1 - w], seq[-1]
    return abs(b - a) <= STABLE_TOL * abs(b)


def _trend(u_levels, y, sign):
    """True if ``y`` follows a monotone fitted trend with the given slope sign."""
    y = np.asarray(y, dtype=float)
    ok = np.isfinite(y)
    u_levels, y = u_levels[ok], y[ok]
    if len(y) < 4:
        return False
    for x in (u_levels, np.log(u_levels), np.log1p(u_levels)):
        slope, icpt = np.polyfit(x, y, 1)
        resid = y - slope * x - icpt
        ss = np.sum((y - y.mean()) ** 2)
        if ss > 0 and 1 - np.sum(resid**2) / ss > TREND_R2 and np.sign(slope) == sign:
            return True
    return False


def _settle(run, u_levels):
    if _stable(run):
        return True, float(run[-1])
    return extrapolate_limit(run, u_levels, TREND_R2)


def classify_dhat(w: RadialWeight, grid: RadialGrid) -> DoublingReport:
    """Doubling test ``tail(r) <= C tail((1+r)/2)`` on the probe levels."""
    u, keep, ends = _probe(grid)
    ratio = np.exp(w.log_tail(u) - w.log_tail(u + math.log(2.0)))
    ratio = np.where(keep, ratio, 0.0)
    run = np.maximum.accumulate(ratio)[ends]
    C = float(run[-1])
    if not math.isfinite(C):
        return DoublingReport("Dhat", math.inf, float(grid.nodes[-1]), "NotMember", ratios=ratio[keep])
    settled, limit = _settle(run, u[ends])
    if settled:
        verdict, C = "Member", max(C, limit)
    elif _trend(u[ends], np.log(run), +1):
        verdict = "NotMember"
    else:
        verdict = "Inconclusive"
    return DoublingReport("Dhat", max(C, 1.0), float(grid.nodes[-1]), verdict, ratios=ratio[keep])


def classify_dcheck(w: RadialWeight, K: float, grid: RadialGrid) -> DoublingReport:
    """Reverse doubling test ``tail(r) >= C tail(1 - (1-r)/K)`` with C > 1."""
    if K <= 1:
        raise WeightError("K must exceed 1")
    u, keep, ends = _probe(grid)
    ratio = np.exp(w.log_tail(u) - w.log_tail(u + math.log(K)))
    ratio = np.where(keep, ratio, np.inf)
    run = np.minimum.accumulate(ratio)[ends]
    C = float(run[-1])
    settled, limit = _settle(run, u[ends])
    if settled:
        C = min(C, limit)
    if settled and C >= DCHECK_THRESHOLD:
        verdict = "Member"
    elif (settled and C <= 1.0 + 1e-2 and not _stable(run)) or _trend(u[ends], safe_log(run - 1.0), -1):
        verdict = "NotMember"
    else:
        verdict = "Inconclusive"
    return DoublingReport("Dcheck", max(C, 1.0), float(grid.nodes[-1]), verdict, K=K, ratios=ratio[keep])


def classify_regular(w: RadialWeight, grid: RadialGrid) -> DoublingReport:
    """Regularity test ``tail(r) ~ w(r) (1-r)``."""
    u, keep, ends = _probe(grid)
    ld = w.log_density(u)
    # an oscillating product vanishes on whole intervals, probes or not
    if np.any(np.isneginf(ld[keep])) or isinstance(w, OscillatingProduct):
        return DoublingReport("Regular", math.inf, float(grid.nodes[-1]), "NotMember")
    ratio = np.exp(w.log_tail(u) - ld + u)
    hi = np.maximum.accumulate(np.where(keep, ratio, 0.0))[ends]
    lo = np.minimum.accumulate(np.where(keep, ratio, np.inf))[ends]
    ok_hi, lim_hi = _settle(hi, u[ends])
    ok_lo, lim_lo = _settle(lo, u[ends])
    C = float(max(hi[-1], lim_hi, 1.0 / lo[-1], 1.0 / max(lim_lo, 1e-300)))
    if ok_hi and ok_lo and lim_lo > 0:
        verdict = "Member"
    elif _trend(u[ends], np.log(hi), +1) or _trend(u[ends], np.log(lo), -1):
        verdict = "NotMember"
    else:
        verdict = "Inconclusive"
    return DoublingReport("Regular", max(C, 1.0), float(grid.nodes[-1]), verdict, ratios=ratio[keep])


# ---------------------------------------------------------------------------
# construction helpers and configuration
# ---------------------------------------------------------------------------


def tabulate(w: RadialWeight, knots) -> Tabulated:
    """Piecewise-constant weight whose tail equals ``tail(w)`` at every knot."""
    knots = np.asarray(knots, dtype=float)
    lt = np.exp(w.log_tail(u_of_r(knots)))
    x = 1.0 - knots
    widths = np.append(x[:-1] - x[1:], x[-1])
    mass = np.append(lt[:-1] - lt[1:], lt[-1])
    return Tabulated(knots, mass / widths)


def dyadic_knots(levels: int = 48, per_level: int = 4) -> np.ndarray:
    """Knots ``1 - 2**(-k/per_level)``; the last cell starts at ``1 - 2**-levels``."""
    x = 2.0 ** (-np.arange(levels * per_level + 1) / per_level)
    return np.unique(1.0 - x)


_ALIASES = {"const": ("powerlog", {}), "one": ("powerlog", {})}


def from_config(cfg: dict, base_dir=None) -> RadialWeight:
    """Weight from a flat key-value mapping (dotted keys nest)."""
    cfg = dict(cfg)
    fam = str(cfg.pop("family")).strip().lower()
    if fam in _ALIASES:
        fam, extra = _ALIASES[fam]
        cfg = {**extra, **cfg}
    if fam == "powerlog":
        return PowerLog(float(cfg.get("a", 0.0)), float(cfg.get("b", 0.0)))
    if fam == "monomial":
        return Monomial(float(cfg.get("c", 0.0)), float(cfg.get("coef", 1.0)))
    if fam == "tabulated":
        p = Path(cfg["path"])
        if base_dir is not None and not p.is_absolute():
            p = Path(base_dir) / p
        return Tabulated.read_csv(p)
    if fam == "zero":
        return ZeroWeight()
    if fam == "oscillating":
        base = {k[5:]: v for k, v in cfg.items() if k.startswith("base.")}
        return OscillatingProduct(from_config(base, base_dir), float(cfg.get("K", 2.0)))
    raise WeightError(f"unknown weight family {fam!r}")


def to_config(w: RadialWeight) -> dict:
    return w.config()


def dumps(w: RadialWeight) -> str:
    return "".join(f"{k} = {v}\n" for k, v in w.config().items())


def loads(text: str, base_dir=None) -> RadialWeight:
    cfg = {}
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise WeightError(f"bad configuration line: {line!r}")
        k, v = line.split("=", 1)
        cfg[k.strip()] = v.strip()
    return from_config(cfg, base_dir)


def parse_inline(spec: str) -> RadialWeight:
    """``family:key=val,key=val``, e.g. ``powerlog:a=1,b=0``."""
    fam, _, rest = spec.partition(":")
    cfg = {"family": fam}
    for item in filter(None, rest.split(",")):
        k, _, v = item.partition("=")
        cfg[k.strip()] = v.strip()
    return from_config(cfg)


def load_weight(spec: str) -> RadialWeight:
    """Inline spec or path to a key-value configuration file."""
    p = Path(spec)
    if p.is_file():
        return loads(p.read_text(), base_dir=p.parent)
    return parse_inline(spec)
