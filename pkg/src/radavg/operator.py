"""The radial averaging operator and norms of fields on the unit disc.

``T_omega f(z) = int_{|z|}^1 f(s z/|z|) omega(s) ds / omegahat(|z|)`` averages
``f`` along the outward ray from ``z``.  Fields are functions on the disc;
piecewise-constant ones (steps, sampled grids, constants) expose polar cells
so that averages, norms and level sets are computed exactly up to tails.

Radii are handled through the log-depth ``u = -log(1 - r)``; cells are
``(u_lo, u_hi, theta_lo, theta_hi, value)`` with ``u_hi = inf`` allowed.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .conditions import (
    _mul,
    conjugate,
    head_integrals,
    log_muckenhoupt_density,
    muckenhoupt_tail,
    union_breaks,
)
from .kernels import KernelSeries, build_kernel, falling_factorial
from .numerics import (
    PolarGrid,
    RadialGrid,
    adaptive_gl,
    dumps_json,
    gauss_legendre,
    improper_blocks,
    integrate_log_density,
    integrate_log_density_tail,
    log_product,
    r_of_u,
    safe_log,
    suffix_integrals,
    u_of_r,
)
from .weights import RadialWeight, WeightTriple, rho_sequence

TWO_PI = 2.0 * math.pi
R_BELOW_ONE = float(np.nextafter(1.0, 0.0))


class OriginError(ValueError):
    """``T_omega`` is only defined on the punctured disc."""


class DegenerateFamilyError(ValueError):
    """Every test function of a family has zero or infinite norm."""


# ---------------------------------------------------------------------------
# fields
# ---------------------------------------------------------------------------


class Field:
    """A function on the disc.  Subclasses implement ``__call__(r, theta)``."""

    kind = "abstract"
    radial = False
    nonnegative = False
    angular_hint = 64

    def __call__(self, r, theta):
        raise NotImplementedError

    def at(self, z):
        z = np.asarray(z, dtype=complex)
        return self(np.abs(z), np.angle(z))

    def ray_log_abs(self, u, theta: float):
        """``log |f|`` along the ray at angle ``theta`` as a function of log-depth."""
        r = np.minimum(r_of_u(u), R_BELOW_ONE)
        return safe_log(np.abs(self(r, np.full(np.shape(r), theta))))

    def ray_parts(self, u, theta: float):
        """Values along the ray, for signed or complex fields."""
        r = np.minimum(r_of_u(u), R_BELOW_ONE)
        return np.asarray(self(r, np.full(np.shape(r), theta)))

    def ray_breaks(self, lo: float, hi: float, theta: float) -> Sequence[float]:
        return ()

    def support_u(self) -> float:
        """Log-depth below which the field vanishes."""
        return 0.0

    def cells(self):
        """Polar cells for piecewise-constant fields, else ``None``."""
        return None

    def angular_values(self, r: float, m: int) -> np.ndarray:
        theta = TWO_PI * np.arange(m) / m
        return np.asarray(self(np.full(m, r), theta))

    def sample(self, grid: PolarGrid) -> np.ndarray:
        """Values at the nodes of ``grid``, shape ``(radii, angles)``."""
        r = grid.radial.nodes
        th = grid.angles
        return np.asarray(self(r[:, None], th[None, :]))

    def to_csv(self, grid: PolarGrid) -> str:
        vals = self.sample(grid)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["r", "theta", "value"])
        for i, r in enumerate(grid.radial.nodes):
            for j, th in enumerate(grid.angles):
                v = vals[i, j]
                w.writerow([repr(float(r)), repr(float(th)), _fmt_value(v)])
        return buf.getvalue()


def _fmt_value(v) -> str:
    if np.iscomplexobj(v):
        return repr(complex(v))
    return repr(float(v))


def _in_arc(theta, lo, width):
    if width >= TWO_PI:
        return np.ones(np.shape(theta), dtype=bool)
    return np.mod(np.asarray(theta) - lo, TWO_PI) < width


def _cells_to_rays(cells, theta):
    """Radial pieces ``(u_lo, u_hi, value)`` of a cell list along one ray."""
    out = []
    for ulo, uhi, tlo, thi, v in cells:
        if _in_arc(theta, tlo, thi - tlo):
            out.append((ulo, uhi, v))
    return out


def _ray_profile(cells, theta):
    """Disjoint radial pieces with summed values along the ray at ``theta``."""
    pieces = _cells_to_rays(cells, theta)
    if not pieces:
        return np.array([0.0, math.inf]), np.zeros(1)
    edges = sorted({0.0, math.inf, *[p[0] for p in pieces], *[p[1] for p in pieces]})
    edges = np.asarray(edges)
    vals = np.zeros(len(edges) - 1, dtype=complex if any(np.iscomplexobj(p[2]) for p in pieces) else float)
    mids = 0.5 * (edges[:-1] + np.minimum(edges[1:], edges[:-1] + 1.0))
    for ulo, uhi, v in pieces:
        vals[(mids >= ulo) & (mids < uhi)] += v
    return edges, vals


class CellField(Field):
    """Field given by a list of polar cells whose values add up where they overlap."""

    kind = "Cells"

    def __init__(self, cell_list, nonnegative: bool | None = None):
        self._cells = [tuple(c) for c in cell_list]
        vals = [c[4] for c in self._cells]
        if nonnegative is None:
            nonnegative = all(np.isreal(v) and np.real(v) >= 0 for v in vals)
        self.nonnegative = nonnegative
        self.radial = all(c[3] - c[2] >= TWO_PI for c in self._cells)

    def cells(self):
        return self._cells

    def __call__(self, r, theta):
        r, theta = np.broadcast_arrays(np.asarray(r, dtype=float), np.asarray(theta, dtype=float))
        u = u_of_r(r)
        complex_vals = any(np.iscomplexobj(c[4]) for c in self._cells)
        out = np.zeros(r.shape, dtype=complex if complex_vals else float)
        for ulo, uhi, tlo, thi, v in self._cells:
            inside = (u >= ulo) & (u < uhi) & _in_arc(theta, tlo, thi - tlo)
            out = out + np.where(inside, v, 0.0)
        return out if out.ndim else out[()]

    def ray_breaks(self, lo, hi, theta):
        return [b for c in _cells_to_rays(self._cells, theta) for b in c[:2] if lo < b < hi]

    def angular_edges(self):
        edges = {0.0}
        for _, _, tlo, thi, _ in self._cells:
            if thi - tlo < TWO_PI:
                edges.add(float(np.mod(tlo, TWO_PI)))
                edges.add(float(np.mod(thi, TWO_PI)))
        return np.array(sorted(edges) + [TWO_PI])


class Constant(CellField):
    kind = "Constant"

    def __init__(self, c: float = 1.0):
        self.c = c
        super().__init__([(0.0, math.inf, 0.0, TWO_PI, c)])


@dataclass(frozen=True)
class Rect:
    """Polar rectangle ``A <= |z| < B``, ``theta0 <= arg z < theta1`` with amplitude ``P``."""

    A: float
    B: float
    theta0: float
    theta1: float
    P: float

    def __post_init__(self):
        if not 0 <= self.A <= self.B < 1:
            raise ValueError(f"need 0 <= A <= B < 1, got A={self.A}, B={self.B}")
        if not 0 <= self.theta1 - self.theta0 <= TWO_PI:
            raise ValueError("angular width must lie in [0, 2 pi]")
        if not self.P >= 0:
            raise ValueError("amplitudes must be nonnegative")


class StepField(CellField):
    """Nonnegative step function ``sum_j P_j chi_{R_j}``."""

    kind = "StepFunction"

    def __init__(self, rects: Sequence[Rect]):
        self.rects = tuple(rects)
        super().__init__(
            [(float(u_of_r(q.A)), float(u_of_r(q.B)), q.theta0, q.theta1, q.P) for q in self.rects],
            nonnegative=True,
        )

    @classmethod
    def annulus(cls, t: float, r: float, value: float = 1.0) -> "StepField":
        """Indicator (times ``value``) of ``t <= |z| < r``."""
        return cls([Rect(t, r, 0.0, TWO_PI, value)])


class Sampled(CellField):
    """Piecewise-constant field: node values hold on ``[r_i, r_{i+1}) x [theta_j, theta_{j+1})``."""

    kind = "Sampled"

    def __init__(self, grid: PolarGrid, values):
        self.grid = grid
        vals = np.asarray(values)
        u = grid.radial.u
        if vals.ndim == 1:
            vals = np.repeat(vals[:, None], grid.angular, axis=1)
        if vals.shape != (len(u), grid.angular):
            raise ValueError(f"values must have shape {(len(u), grid.angular)}")
        self.values = vals
        edges = np.append(u, math.inf)
        th = grid.angles
        dth = TWO_PI / grid.angular
        cl = []
        radial = np.all(vals == vals[:, :1])
        for i in range(len(u)):
            if radial:
                cl.append((edges[i], edges[i + 1], 0.0, TWO_PI, vals[i, 0]))
            else:
                cl.extend((edges[i], edges[i + 1], th[j], th[j] + dth, vals[i, j]) for j in range(grid.angular))
        super().__init__(cl)

    def sample(self, grid: PolarGrid) -> np.ndarray:
        if grid == self.grid:
            return self.values
        return super().sample(grid)


class RadialFunction(Field):
    """``f(z) = g(|z|)`` for a vectorized ``g``, optionally given in log form of ``u``."""

    kind = "Radial"
    radial = True

    def __init__(self, g: Callable | None = None, log_abs_u: Callable | None = None,
                 nonnegative: bool = True, breaks: Sequence[float] = ()):
        if (g is None) == (log_abs_u is None):
            raise ValueError("give exactly one of g and log_abs_u")
        self.g = g
        self.log_abs_u = log_abs_u
        self.nonnegative = nonnegative
        self._breaks = tuple(breaks)

    def __call__(self, r, theta=0.0):
        r = np.asarray(r, dtype=float)
        if self.g is not None:
            out = np.asarray(self.g(np.broadcast_arrays(r, theta)[0]))
        else:
            out = np.exp(self.log_abs_u(u_of_r(np.broadcast_arrays(r, theta)[0])))
        return out if out.ndim else out[()]

    def ray_log_abs(self, u, theta=0.0):
        if self.log_abs_u is not None:
            return self.log_abs_u(np.asarray(u, dtype=float))
        return super().ray_log_abs(u, theta)

    def ray_breaks(self, lo, hi, theta):
        return [b for b in self._breaks if lo < b < hi]


class Function(Field):
    """General (possibly complex) field ``f(z)`` given by a vectorized callable of ``z``."""

    kind = "Function"

    def __init__(self, f: Callable, nonnegative: bool = False, angular_hint: int = 256):
        self.f = f
        self.nonnegative = nonnegative
        self.angular_hint = angular_hint

    def __call__(self, r, theta):
        r, theta = np.broadcast_arrays(np.asarray(r, dtype=float), np.asarray(theta, dtype=float))
        out = np.asarray(self.f(r * np.exp(1j * theta)))
        return out if out.ndim else out[()]


class ExtremalFr(Field):
    """``(omega(|z|)/(|z| nu(|z|)))**(p'/p)`` on ``|z| >= r`` and 0 inside.

    ``h`` is ``int_r^1 (omega/(s nu))**p' s nu ds``; ``degenerate`` is
    ``"zero"`` or ``"infinite"`` when ``h`` is, else ``None``.
    """

    kind = "ExtremalFr"
    radial = True
    nonnegative = True

    def __init__(self, omega: RadialWeight, nu: RadialWeight, p: float, r: float):
        if not p > 1:
            raise ValueError("p must exceed 1")
        if not 0 <= r < 1:
            raise ValueError("r must lie in [0, 1)")
        self.omega, self.nu, self.p, self.r = omega, nu, p, r
        self.u_r = float(u_of_r(r))
        self.exponent = conjugate(p) / p
        self.h = float(muckenhoupt_tail(omega, nu, p, [self.u_r])[0])
        self.degenerate = "zero" if self.h == 0 else "infinite" if math.isinf(self.h) else None

    def ray_log_abs(self, u, theta=0.0):
        u = np.asarray(u, dtype=float)
        lsnu = log_product(safe_log(r_of_u(u)), self.nu.log_density(u))
        # 1/0 = inf: a vanishing s*nu yields +inf unless omega vanishes too
        with np.errstate(invalid="ignore"):
            ratio = log_product(self.omega.log_density(u), -lsnu)
        val = self.exponent * ratio
        return np.where(u >= self.u_r, val, -np.inf)

    def __call__(self, r, theta=0.0):
        r = np.broadcast_arrays(np.asarray(r, dtype=float), theta)[0]
        with np.errstate(over="ignore"):
            out = np.exp(self.ray_log_abs(u_of_r(r)))
        return out if out.ndim else out[()]

    def ray_breaks(self, lo, hi, theta):
        return [b for b in [self.u_r, *union_breaks(self.omega, self.nu)(lo, hi)] if lo < b < hi]

    def support_u(self):
        return self.u_r


class KernelImage(Field):
    """``N``-th derivative in ``z`` of the kernel ``B_a``: ``sum_j j^(N) c_j conj(a)^j z^(j-N)``."""

    kind = "KernelImage"

    def __init__(self, series: KernelSeries, N: int, a: complex):
        if abs(a) > series.a_max * (1 + 1e-15):
            raise ValueError("a exceeds the certified radius of the series")
        self.series, self.N, self.a = series, N, a
        j = np.arange(N, series.n_max + 1)
        self.coef = falling_factorial(j, N) * series.coefficients[N:] * np.conj(a) ** j
        m = 64
        while m < 2 * len(self.coef):
            m *= 2
        self.angular_hint = m

    def __call__(self, r, theta):
        r, theta = np.broadcast_arrays(np.asarray(r, dtype=float), np.asarray(theta, dtype=float))
        z = r * np.exp(1j * theta)
        out = np.polyval(self.coef[::-1], z)
        return out if out.ndim else out[()]

    def angular_values(self, r, m):
        n = np.arange(len(self.coef))
        b = self.coef * np.exp(n * math.log(r)) if r > 0 else np.where(n == 0, self.coef, 0)
        if m < len(b):
            raise ValueError("too few angles for the series length")
        return np.fft.ifft(np.concatenate([b, np.zeros(m - len(b))])) * m

    def sup_bound(self) -> float:
        return float(np.sum(np.abs(self.coef)))


class AveragedField(Field):
    """``T_omega f`` as a field (evaluated by :func:`apply_T`)."""

    kind = "Averaged"

    def __init__(self, omega: RadialWeight, f: Field):
        self.omega, self.f = omega, f
        self.radial = f.radial
        self.nonnegative = f.nonnegative

    def __call__(self, r, theta):
        r, theta = np.broadcast_arrays(np.asarray(r, dtype=float), np.asarray(theta, dtype=float))
        flat = [average_on_ray(self.omega, self.f, rr, tt) for rr, tt in zip(r.ravel(), theta.ravel())]
        out = np.asarray(flat).reshape(r.shape)
        return out if out.ndim else out[()]

    def sample(self, grid: PolarGrid) -> np.ndarray:
        if self.radial:
            col = self(grid.radial.nodes, 0.0)
            return np.repeat(np.asarray(col)[:, None], grid.angular, axis=1)
        return super().sample(grid)


def extremal_fr(omega: RadialWeight, nu: RadialWeight, p: float, r: float) -> ExtremalFr:
    """The Muckenhoupt-type test function supported on ``|z| >= r``."""
    return ExtremalFr(omega, nu, p, r)


# ---------------------------------------------------------------------------
# the averaging operator
# ---------------------------------------------------------------------------


def _cell_average(omega, edges, vals, u0):
    lt0 = float(omega.log_tail(u0)[0])
    total = 0.0
    for ulo, uhi, v in zip(edges[:-1], edges[1:], vals):
        if uhi <= u0 or v == 0:
            continue
        a = max(ulo, u0)
        la = float(omega.log_tail(a)[0]) - lt0
        lb = -math.inf if math.isinf(uhi) else float(omega.log_tail(uhi)[0]) - lt0
        mass = math.exp(la) - math.exp(lb)
        if mass > 0:
            total = total + v * mass
    return total


def _nonnegative_ray_integral(omega, log_abs, breaks, u0):
    def lf(u):
        return log_product(log_abs(u), omega.log_density(u))

    return integrate_log_density_tail(lf, u0, breaks=breaks)


def average_on_ray(omega: RadialWeight, f: Field, r: float, theta: float = 0.0):
    """``T_omega f(r e^{i theta})`` for ``0 <= r < 1``; at ``r = 0`` the limit along the ray."""
    if not 0 <= r < 1:
        raise ValueError("radius must lie in [0, 1)")
    u0 = float(u_of_r(r))
    cl = f.cells()
    if cl is not None:
        edges, vals = _ray_profile(cl, theta)
        out = _cell_average(omega, edges, vals, u0)
        return out.item() if hasattr(out, "item") else out
    u0 = max(u0, 0.0)
    start = max(u0, f.support_u())
    brk = union_breaks(omega)

    def breaks(lo, hi):
        return sorted({*brk(lo, hi), *f.ray_breaks(lo, hi, theta)})

    lt0 = float(omega.log_tail(u0)[0])
    if f.nonnegative:
        num = _nonnegative_ray_integral(omega, lambda u: f.ray_log_abs(u, theta), breaks, start)
        return num * math.exp(-lt0) if math.isfinite(num) else num
    parts = []
    for comp in (np.real, np.imag):
        for sign in (1.0, -1.0):
            def la(u, comp=comp, sign=sign):
                return safe_log(np.maximum(sign * comp(f.ray_parts(u, theta)), 0.0))

            parts.append(_nonnegative_ray_integral(omega, la, breaks, start))
    re, im = parts[0] - parts[1], parts[2] - parts[3]
    val = complex(re, im) if parts[2] or parts[3] else re
    return val * math.exp(-lt0)


def apply_T(omega: RadialWeight, f: Field, z: complex):
    """``T_omega f(z)`` on the punctured disc."""
    z = complex(z)
    r = abs(z)
    if r == 0:
        raise OriginError("T_omega is not defined at the origin")
    if r >= 1:
        raise ValueError("z must lie in the unit disc")
    return average_on_ray(omega, f, r, math.atan2(z.imag, z.real))


# ---------------------------------------------------------------------------
# nontangential maximal function
# ---------------------------------------------------------------------------


NT_RADII = 32
NT_ANGLES = 33
NT_REFINEMENTS = 2
NT_TOL = 1e-3
NT_DEPTH_DECADES = 10.0


def _gamma_samples(z: complex, radii: int, decades: float):
    r = abs(z)
    th = math.atan2(z.imag, z.real)
    # depths geometric from r (the origin) to r * 2**-decades near the vertex
    depth = r * 2.0 ** -np.linspace(0.0, decades, radii)
    rho = r - depth
    aperture = 0.5 * (1.0 - rho / r)
    frac = np.linspace(-1.0, 1.0, NT_ANGLES + 2)[1:-1]
    ang = th + aperture[:, None] * frac[None, :]
    return np.repeat(rho[:, None], NT_ANGLES, axis=1), ang


def nontangential_max(f: Field, z: complex, samples: int = NT_RADII, with_history: bool = False):
    """Sampled ``sup |f|`` over ``Gamma(z) = {|arg z - arg xi| < (1 - |xi|/|z|)/2}``.

    Radii cluster geometrically at the vertex ``z``; the sampling is refined
    (more radii, closer to the vertex) until the maximum changes by less than
    0.1%, at most twice.
    """
    z = complex(z)
    if not 0 < abs(z) <= 1:
        raise ValueError("need 0 < |z| <= 1")
    history = []
    n, decades = samples, NT_DEPTH_DECADES
    best = 0.0
    for k in range(NT_REFINEMENTS + 1):
        rho, ang = _gamma_samples(z, n, decades)
        vals = np.abs(np.asarray(f(np.minimum(rho, R_BELOW_ONE), ang)))
        best = max(best, float(np.max(vals)))
        history.append(best)
        if k and abs(history[-1] - history[-2]) <= NT_TOL * max(history[-1], 1e-300):
            break
        n, decades = 2 * n, decades + NT_DEPTH_DECADES
    return (best, history) if with_history else best


TN_PANEL = 0.5
TN_ORDER = 8
TN_SPAN = 40.0
TN_TAIL = 1e-8


def apply_TN(omega: RadialWeight, f: Field, z: complex, samples: int = NT_RADII):
    """``T_omega`` applied to the nontangential maximal function of ``f``.

    Panel Gauss-Legendre along the ray up to the depth where the tail of
    ``omega`` has dropped by ``TN_TAIL`` (at most ``TN_SPAN`` deeper), with
    the maximal function at the last node standing in for the remainder.
    """
    z = complex(z)
    r = abs(z)
    if r == 0:
        raise OriginError("T_omega is not defined at the origin")
    if r >= 1:
        raise ValueError("z must lie in the unit disc")
    th = math.atan2(z.imag, z.real)
    u0 = float(u_of_r(r))
    lt0 = float(omega.log_tail(u0)[0])
    probe = u0 + np.linspace(0.0, TN_SPAN, 161)
    drop = np.nonzero(omega.log_tail(probe) - lt0 < math.log(TN_TAIL))[0]
    hi = float(probe[drop[0]]) if len(drop) else u0 + TN_SPAN
    brk = sorted({*union_breaks(omega)(u0, hi), *f.ray_breaks(u0, hi, th)})
    edges = [u0, *brk, hi]
    fine = []
    for a, b in zip(edges[:-1], edges[1:]):
        k = max(1, int(math.ceil((b - a) / TN_PANEL)))
        fine.extend(np.linspace(a, b, k + 1)[:-1].tolist())
    e = np.asarray(fine + [hi])
    x, w = gauss_legendre(TN_ORDER)
    half = 0.5 * np.diff(e)
    nodes = (e[:-1, None] + half[:, None] * (x[None, :] + 1.0)).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    nf = np.array([nontangential_max(f, r_of_u(uu) * complex(math.cos(th), math.sin(th)), samples) for uu in nodes])
    dens = np.exp(log_product(omega.log_density(nodes), -nodes, -lt0))
    total = float(np.sum(_mul(nf, dens) * weights))
    rem = nontangential_max(f, float(r_of_u(hi)) * complex(math.cos(th), math.sin(th)), samples)
    return total + float(_mul(rem, math.exp(float(omega.log_tail(hi)[0]) - lt0)))


# ---------------------------------------------------------------------------
# norms
# ---------------------------------------------------------------------------


def _cell_measures(cells, w: RadialWeight):
    """``w``-area (normalized, ``dA = dx dy / pi``) of every cell."""
    ulo = np.array([c[0] for c in cells], dtype=float)
    uhi = np.array([c[1] for c in cells], dtype=float)
    frac = np.array([(c[3] - c[2]) / TWO_PI for c in cells], dtype=float)
    s_lo = np.exp(w.log_stail(ulo))
    s_hi = np.where(np.isinf(uhi), 0.0, np.exp(w.log_stail(np.where(np.isinf(uhi), 0.0, uhi))))
    return 2.0 * frac * np.maximum(s_lo - s_hi, 0.0)


def _disjoint_cells(f: CellField):
    """Non-overlapping cells with summed values."""
    cl = f.cells()
    if isinstance(f, Sampled) or len(cl) <= 1:
        return cl
    ang = f.angular_edges()
    out = []
    for a, b in zip(ang[:-1], ang[1:]):
        if b <= a:
            continue
        edges, vals = _ray_profile(cl, 0.5 * (a + b))
        out.extend((lo, hi, a, b, v) for lo, hi, v in zip(edges[:-1], edges[1:], vals) if v != 0)
    return out


def lp_norm(f: Field, nu: RadialWeight, p: float, angles: int | None = None) -> float:
    """``(int_D |f|^p nu dA)^(1/p)`` with the normalized area measure."""
    if not p > 0:
        raise ValueError("p must be positive")
    cl = f.cells()
    if cl is not None:
        dc = _disjoint_cells(f)
        if not dc:
            return 0.0
        mass = _cell_measures(dc, nu)
        v = np.abs(np.array([c[4] for c in dc]))
        with np.errstate(over="ignore"):
            total = float(np.sum(_mul(v ** p, mass)))
        return total ** (1.0 / p)
    if f.radial:
        def lf(u):
            return log_product(p * f.ray_log_abs(u, 0.0), safe_log(r_of_u(u)), nu.log_density(u))

        start = f.support_u()
        brk = union_breaks(nu)

        def breaks(lo, hi):
            return sorted({*brk(lo, hi), *f.ray_breaks(lo, hi, 0.0)})

        if start == 0.0:
            integral = float(suffix_integrals(lf, [0.0], breaks)[0])
        else:
            integral = integrate_log_density_tail(lf, start, breaks=breaks)
        return (2.0 * integral) ** (1.0 / p)
    m = _angle_count(f, angles)

    def g(u):
        out = np.empty(len(u))
        for k, uu in enumerate(u):
            rr = min(float(r_of_u(uu)), R_BELOW_ONE)
            out[k] = np.mean(np.abs(f.angular_values(rr, m)) ** p)
        return _mul(out, np.exp(log_product(nu.log_density(u), safe_log(r_of_u(u)), -u)))

    integral = improper_blocks(g, 0.0, rel_tol=1e-9, breaks=union_breaks(nu))
    return (2.0 * integral) ** (1.0 / p)


def _angle_count(f: Field, angles):
    m = max(angles or 0, f.angular_hint, 64)
    k = 64
    while k < m:
        k *= 2
    return k


def weak_quasinorm(g: Field, eta: RadialWeight, p: float, lambda_grid=None,
                   grid: PolarGrid | None = None) -> float:
    """``sup_lambda lambda * eta({|g| > lambda})**(1/p)``.

    Piecewise-constant fields are handled exactly (the supremum over all
    ``lambda`` is ``max_v v * eta(|g| >= v)**(1/p)`` over the attained values
    ``v``); other fields are first sampled on ``grid``.  ``lambda_grid``
    restricts the supremum to the given levels; ``"auto"`` uses a log-spaced
    grid over ``[1e-6, 1e6]`` times the largest value.
    """
    if not p > 0:
        raise ValueError("p must be positive")
    if g.cells() is None:
        grid = grid or PolarGrid()
        g = Sampled(grid, g.sample(grid))
    dc = _disjoint_cells(g)
    if not dc:
        return 0.0
    vals = np.abs(np.array([c[4] for c in dc]))
    mass = _cell_measures(dc, eta)
    keep = (vals > 0) & (mass > 0)
    vals, mass = vals[keep], mass[keep]
    if len(vals) == 0:
        return 0.0
    if np.any(np.isinf(vals)):
        return math.inf
    if isinstance(lambda_grid, str) and lambda_grid == "auto":
        lambda_grid = np.logspace(-6, 6, 241) * float(vals.max())
    if lambda_grid is not None:
        lam = np.asarray(lambda_grid, dtype=float)
        if np.any(lam <= 0):
            raise ValueError("lambda grid must be positive")
        meas = np.array([mass[vals > x].sum() for x in lam])
        return float(np.max(lam * meas ** (1.0 / p)))
    order = np.argsort(-vals, kind="stable")
    v, m = vals[order], np.cumsum(mass[order])
    # level sets are nested: mu(|g| >= v_k) is the cumulative mass of the top values
    last = np.append(v[1:] != v[:-1], True)
    return float(np.max(v[last] * m[last] ** (1.0 / p)))


def level_set_measure(g: Field, eta: RadialWeight, lam: float, grid: PolarGrid | None = None) -> float:
    """``eta({|g| >= lam})`` for piecewise-constant (or sampled) fields."""
    if g.cells() is None:
        grid = grid or PolarGrid()
        g = Sampled(grid, g.sample(grid))
    dc = _disjoint_cells(g)
    if not dc:
        return 0.0
    vals = np.abs(np.array([c[4] for c in dc]))
    return float(_cell_measures(dc, eta)[vals >= lam].sum())


def lambda_rt(omega: RadialWeight, nu: RadialWeight, p: float, r: float, t: float) -> float:
    """``int_r^1 (omega/(s nu))**p' s nu ds / omegahat(t)`` for ``0 <= t <= r < 1``."""
    if not p > 1:
        raise ValueError("p must exceed 1")
    if not 0 <= t <= r < 1:
        raise ValueError("need 0 <= t <= r < 1")
    A = float(muckenhoupt_tail(omega, nu, p, [float(u_of_r(r))])[0])
    return float(_mul(A, math.exp(-float(omega.log_tail(float(u_of_r(t)))[0]))))


# ---------------------------------------------------------------------------
# norm estimates
# ---------------------------------------------------------------------------


@dataclass
class NormEstimate:
    kind: str  # StrongLower | WeakLower
    value: float
    family: str
    maximizer: dict
    details: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "kind": self.kind,
            "value": self.value,
            "family": self.family,
            "maximizer": self.maximizer,
            "details": self.details,
        }

    def to_json(self) -> str:
        return dumps_json(self.as_dict())


def weak_pair_value(triple: WeightTriple, p: float, t: float, r: float) -> dict:
    """One ``(t, r)`` evaluation of the weak-type testing pipeline.

    ``lambda`` is ``T_omega f_r`` at radius ``t`` (the least value on the
    annulus ``t <= |z| <= r`` since the average is increasing there), the
    level set is the annulus and ``f_r`` is normed in ``L^p_nu``.
    """
    omega, nu, eta = triple.omega, triple.nu, triple.eta
    if not 0 <= t < r < 1:
        raise ValueError("need 0 <= t < r < 1")
    f = extremal_fr(omega, nu, p, r)
    lam = average_on_ray(omega, f, t) if t > 0 else average_on_ray(omega, f, 0.0)
    lam_r = average_on_ray(omega, f, r)
    annulus = StepField.annulus(t, r)
    measure = lp_norm(annulus, eta, 1.0)
    if f.degenerate == "infinite" or math.isinf(lam):
        value = math.inf if measure > 0 else 0.0
        norm = math.inf
    else:
        norm = lp_norm(f, nu, p)
        value = 0.0 if norm == 0 or lam == 0 else lam * measure ** (1.0 / p) / norm
    return {"t": t, "r": r, "lambda": lam, "lambda_at_r": lam_r, "level_set": measure,
            "f_norm": norm, "value": value, "degenerate": f.degenerate}


def estimate_weak_norm(triple: WeightTriple, p: float, rt_grid) -> NormEstimate:
    """Largest weak-type testing ratio ``lambda_{r,t} eta(annulus)^(1/p) / ||f_r||`` over the grid."""
    if not p > 1:
        raise ValueError("p must exceed 1")
    rt_grid = list(rt_grid)
    best, best_row = -1.0, None
    for t, r in rt_grid:
        row = weak_pair_value(triple, p, float(t), float(r))
        if row["value"] > best:
            best, best_row = row["value"], row
    if best_row is None:
        raise ValueError("empty (t, r) grid")
    return NormEstimate("WeakLower", best, "ExtremalFr",
                        {"t": best_row["t"], "r": best_row["r"]}, {"pairs": len(rt_grid)})


@dataclass(frozen=True)
class MuckenhouptTest:
    grid: RadialGrid = RadialGrid(levels=30, points_per_level=4)
    name = "MuckenhouptTest"


@dataclass(frozen=True)
class KernelDerivatives:
    N: int = 1
    a_values: tuple = (0.3, 0.5, 0.7, 0.8, 0.9)
    name = "KernelDerivatives"


@dataclass(frozen=True)
class RandomSteps:
    seed: int = 0
    count: int = 40
    name = "RandomSteps"


@dataclass(frozen=True)
class Constants:
    name = "Constants"


STRONG_SPAN = 60.0


def _muckenhoupt_family(triple, p, fam: MuckenhouptTest):
    """Ratio ``||T f_r||_{L^p_eta} / ||f_r||_{L^p_nu}`` along the grid.

    With ``A`` the Muckenhoupt tail and ``B = int_0^r s eta / omegahat^p``,
    ``T f_r = A(r)/omegahat`` inside ``r`` and ``A/omegahat`` outside, so
    ``ratio^p = A(r)^(p-1) B(r) + int_r^1 (A/omegahat)^p s eta / A(r)``.  The
    outer integral is truncated, which keeps the ratio a lower bound.
    """
    omega, nu, eta = triple.omega, triple.nu, triple.eta
    u_grid = fam.grid.u[1:]
    A = muckenhoupt_tail(omega, nu, p, u_grid)
    B = head_integrals(eta, omega, p, u_grid)
    hi = float(u_grid[-1]) + STRONG_SPAN
    brk = union_breaks(omega, nu, eta)
    edges = sorted({*u_grid.tolist(), *brk(u_grid[0], hi), hi})
    fine = []
    for a, b in zip(edges[:-1], edges[1:]):
        k = max(1, int(math.ceil((b - a) / 0.25)))
        fine.extend(np.linspace(a, b, k + 1)[:-1].tolist())
    e = np.asarray(fine + [hi])
    x, w = gauss_legendre(16)
    half = 0.5 * np.diff(e)
    nodes = e[:-1, None] + half[:, None] * (x[None, :] + 1.0)
    A_nodes = muckenhoupt_tail(omega, nu, p, nodes.ravel()).reshape(nodes.shape)
    lw = omega.log_tail(nodes.ravel()).reshape(nodes.shape)
    with np.errstate(divide="ignore", over="ignore"):
        integrand = np.exp(log_product(p * (safe_log(A_nodes) - lw),
                                       eta.log_density(nodes), safe_log(r_of_u(nodes)), -nodes))
    panel = np.sum(integrand * half[:, None] * w[None, :], axis=1)
    suffix = np.cumsum(panel[::-1])[::-1]
    index = np.searchsorted(e[:-1], u_grid)
    J = suffix[np.minimum(index, len(suffix) - 1)]
    ok = np.isfinite(A) & (A > 0)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        ratio = np.where(ok, (_mul(A ** (p - 1.0), B) + J / A) ** (1.0 / p), -np.inf)
    if not np.any(ok):
        raise DegenerateFamilyError("every f_r has zero or infinite norm")
    k = int(np.argmax(ratio))
    r_nodes = r_of_u(u_grid)
    return float(ratio[k]), {"r": float(r_nodes[k])}, {"ratios": ratio, "r": r_nodes}


KERNEL_RADIAL_ORDER = 8


def _kernel_norms(triple, p, N, a, tol=1e-10):
    omega, nu, eta = triple.omega, triple.nu, triple.eta
    series = build_kernel(nu, a, tol, order=N)
    f = KernelImage(series, N, a)
    m = f.angular_hint
    ua = float(u_of_r(a))
    hi = ua + 12.0
    e = np.linspace(0.0, hi, int(math.ceil(hi / 0.25)) + 1)
    x, w = gauss_legendre(KERNEL_RADIAL_ORDER)
    half = 0.5 * np.diff(e)
    nodes = (e[:-1, None] + half[:, None] * (x[None, :] + 1.0)).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    k = np.arange(len(f.coef), dtype=float)
    f_mean = np.empty(len(nodes))
    tf_mean = np.empty(len(nodes))
    for i, uu in enumerate(nodes):
        t = float(r_of_u(uu))
        f_mean[i] = np.mean(np.abs(f.angular_values(t, m)) ** p)
        mom = np.asarray(omega.moments(t, k), dtype=float) * math.exp(-float(omega.log_tail(uu)[0]))
        b = f.coef * mom
        tf = np.fft.ifft(np.concatenate([b, np.zeros(m - len(b))])) * m
        tf_mean[i] = np.mean(np.abs(tf) ** p)
    s_factor = np.exp(safe_log(r_of_u(nodes)) - nodes)
    f_int = 2.0 * np.sum(f_mean * np.exp(nu.log_density(nodes)) * s_factor * weights)
    tf_int = 2.0 * np.sum(tf_mean * np.exp(eta.log_density(nodes)) * s_factor * weights)
    # |f| <= sum |coef| bounds the neglected outer part of ||f||
    f_int += 2.0 * f.sup_bound() ** p * float(np.exp(nu.log_stail(hi))[0])
    return tf_int ** (1.0 / p), f_int ** (1.0 / p)


def _kernel_family(triple, p, fam: KernelDerivatives):
    rows = []
    for a in fam.a_values:
        tf, fn = _kernel_norms(triple, p, fam.N, float(a))
        rows.append((float(tf / fn) if fn > 0 else -math.inf, float(a)))
    best = max(rows)
    if not math.isfinite(best[0]):
        raise DegenerateFamilyError("kernel test functions have zero norm")
    return best[0], {"a": best[1], "N": fam.N}, {"ratios": [r[0] for r in rows]}


def random_step_field(rng: np.random.Generator, max_rects: int = 3, max_depth: float = 12.0) -> StepField:
    """Random nonnegative step field with 1..max_rects polar rectangles."""
    rects = []
    for _ in range(int(rng.integers(1, max_rects + 1))):
        x = rng.uniform(0.0, max_depth)
        y = rng.uniform(0.2, 4.0)
        A = 1.0 - 2.0 ** -x
        B = 1.0 - 2.0 ** -(x + y)
        t0 = rng.uniform(0.0, TWO_PI)
        width = rng.uniform(0.1, TWO_PI)
        rects.append(Rect(A, B, t0, t0 + width, rng.uniform(0.1, 1.0)))
    return StepField(rects)


def _step_T_norm(omega, eta, f: StepField, p: float) -> float:
    """``||T_omega f||_{L^p_eta}`` for a step field (angular cells exact, radial quadrature)."""
    ang = f.angular_edges()
    total = 0.0
    for a, b in zip(ang[:-1], ang[1:]):
        if b <= a:
            continue
        edges, vals = _ray_profile(f.cells(), 0.5 * (a + b))
        if not np.any(vals):
            continue
        top = float(edges[np.nonzero(vals)[0].max() + 1])
        inner = list(edges[1:-1])

        def lf(u, edges=edges, vals=vals):
            out = np.empty(len(u))
            for k, uu in enumerate(u):
                out[k] = _cell_average(omega, edges, vals, float(uu))
            return log_product(p * safe_log(out), eta.log_density(u), safe_log(r_of_u(u)))

        brk = [x for x in inner + list(union_breaks(omega, eta)(0.0, top)) if 0.0 < x < top]
        part = integrate_log_density(lf, 0.0, top, breaks=sorted(set(brk)), rel_tol=1e-10)
        total += 2.0 * (b - a) / TWO_PI * part
    return total ** (1.0 / p)


def _steps_family(triple, p, fam: RandomSteps):
    rng = np.random.default_rng(fam.seed)
    best, arg = -math.inf, -1
    ratios = []
    for i in range(fam.count):
        f = random_step_field(rng)
        fn = lp_norm(f, triple.nu, p)
        ratio = _step_T_norm(triple.omega, triple.eta, f, p) / fn if fn > 0 else -math.inf
        ratio = float(ratio)
        ratios.append(ratio)
        if ratio > best:
            best, arg = ratio, i
    if not math.isfinite(best):
        raise DegenerateFamilyError("random steps have zero norm")
    return best, {"seed": fam.seed, "index": arg}, {"ratios": ratios}


def _constants_family(triple, p, fam):
    num = lp_norm(Constant(1.0), triple.eta, p)
    den = lp_norm(Constant(1.0), triple.nu, p)
    if den == 0 or math.isinf(den):
        raise DegenerateFamilyError("constant has zero or infinite norm")
    return num / den, {}, {}


_FAMILIES = {
    "MuckenhouptTest": _muckenhoupt_family,
    "KernelDerivatives": _kernel_family,
    "RandomSteps": _steps_family,
    "Constants": _constants_family,
}


def estimate_strong_norm(triple: WeightTriple, p: float, families=(MuckenhouptTest(),)) -> NormEstimate:
    """Best ratio ``||T f||_{L^p_eta} / ||f||_{L^p_nu}`` over the given test families.

    Each ratio is a lower bound for the operator norm.
    """
    if not p > 1:
        raise ValueError("p must exceed 1")
    best = None
    per_family = {}
    errors = []
    for fam in families:
        try:
            value, arg, info = _FAMILIES[fam.name](triple, p, fam)
        except DegenerateFamilyError as exc:
            errors.append(str(exc))
            continue
        value = float(value)
        per_family[fam.name] = value
        if best is None or value > best[0]:
            best = (value, fam.name, arg, info)
    if best is None:
        raise DegenerateFamilyError("; ".join(errors) or "no test families given")
    return NormEstimate("StrongLower", best[0], best[1], best[2], {"families": per_family})


def strong_upper_factor(p: float) -> float:
    """``p (p-1)**((1-p)/p)``, the factor in the upper bound ``||T|| <= factor * M_p``."""
    return p * (p - 1.0) ** ((1.0 - p) / p)


# ---------------------------------------------------------------------------
# radial maximal inequalities
# ---------------------------------------------------------------------------


@dataclass
class RadialMaximalReport:
    lhs1: float
    rhs1: float
    C1: float
    lhs2: float
    rhs2: float
    C2: float

    @property
    def ratio1(self) -> float:
        return self.lhs1 / self.rhs1 if self.rhs1 > 0 else (0.0 if self.lhs1 == 0 else math.inf)

    @property
    def ratio2(self) -> float:
        return self.lhs2 / self.rhs2 if self.rhs2 > 0 else (0.0 if self.lhs2 == 0 else math.inf)

    @property
    def ok(self) -> bool:
        return self.ratio1 <= self.C1 * (1 + 1e-9) and self.ratio2 <= self.C2 * (1 + 1e-9)

    def as_dict(self):
        return {"lhs1": self.lhs1, "rhs1": self.rhs1, "C1": self.C1, "ratio1": self.ratio1,
                "lhs2": self.lhs2, "rhs2": self.rhs2, "C2": self.C2, "ratio2": self.ratio2,
                "ok": self.ok}


def radial_maximal_constants(omega: RadialWeight, p: float, q: float, r: float, K: float = 2.0):
    """``(C1, C2) = (K (K-1)**(p-1) / rho_1, K**(2q-1) (K-1)**(1-q) / rho_1**q)``."""
    rho1 = rho_sequence(omega, K, r, 1)[1]
    return K * (K - 1.0) ** (p - 1.0) / rho1, K ** (2 * q - 1.0) * (K - 1.0) ** (1.0 - q) / rho1 ** q


def radial_maximal_check(omega: RadialWeight, h: CellField, p: float, q: float, r: float = 0.0,
                         theta: float = 0.0, K: float = 2.0) -> RadialMaximalReport:
    """Both radial-maximal inequalities along the ray at ``theta`` from ``r``.

    ``lhs1 = (int_r^1 h omega)^p``, ``rhs1 = int_r^1 (h*)^p omegahat^(p-1) omega t dt``;
    ``lhs2 = int_r^1 h^q omegahat^(q-1) omega``, ``rhs2 = (int_r^1 h* omega t dt)^q``,
    where ``h*`` is the running supremum of ``h`` from the origin.  The
    inequalities are ``lhs <= C rhs``.
    """
    if not (0 < p <= 1 <= q):
        raise ValueError("need 0 < p <= 1 <= q")
    if h.cells() is None:
        raise ValueError("h must be piecewise constant")
    edges, vals = _ray_profile(h.cells(), theta)
    vals = np.abs(vals).astype(float)
    star = np.maximum.accumulate(vals)
    ur = float(u_of_r(r))
    lo = np.maximum(edges[:-1], ur)
    hi = edges[1:]
    keep = hi > lo
    lo, hi, vals, star = lo[keep], hi[keep], vals[keep], star[keep]
    lt = omega.log_tail(lo)
    lt_hi = np.where(np.isinf(hi), -np.inf, omega.log_tail(np.where(np.isinf(hi), 0.0, hi)))
    mass = np.exp(lt) - np.exp(lt_hi)
    lhs1 = float(np.sum(vals * mass)) ** p
    lhs2 = float(np.sum(vals ** q * (np.exp(q * lt) - np.exp(q * lt_hi)) / q))
    st_lo = np.exp(omega.log_stail(lo))
    st_hi = np.where(np.isinf(hi), 0.0, np.exp(omega.log_stail(np.where(np.isinf(hi), 0.0, hi))))
    rhs2 = float(np.sum(star * (st_lo - st_hi))) ** q

    def lf(u):
        u = np.asarray(u, dtype=float)
        return log_product((p - 1.0) * omega.log_tail(u), omega.log_density(u), safe_log(r_of_u(u)))

    parts = np.zeros(len(lo))
    for k in range(len(lo)):
        if star[k] == 0:
            continue
        if math.isinf(hi[k]):
            parts[k] = integrate_log_density_tail(lf, lo[k], breaks=omega.breaks)
        else:
            parts[k] = adaptive_gl(lambda u: np.exp(log_product(lf(u), -u)), lo[k], hi[k],
                                   rel_tol=1e-12, breaks=list(omega.breaks(lo[k], hi[k])))
    rhs1 = float(np.sum(star ** p * parts))
    C1, C2 = radial_maximal_constants(omega, p, q, r, K)
    return RadialMaximalReport(lhs1, rhs1, C1, lhs2, rhs2, C2)
