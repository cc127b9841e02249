"""Reproducing kernels of weighted Bergman spaces with radial weights.

For a radial weight ``nu`` the kernel is ``B_a(z) = sum_n c_n (z conj(a))**n``
with ``c_n = 1 / (2 int_0^1 s**(2n+1) nu(s) ds)``.  The series is truncated at
``n_max`` with a remainder bound obtained from a ratio test on the computed
terms.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .numerics import RadialGrid, integrate_log_density, u_of_r
from .weights import RadialWeight, WeightError, classify_dhat

N_MAX_LIMIT = 2_000_000
RATIO_WINDOW = 64


class TruncationError(ArithmeticError):
    """The kernel series cannot be certified at the requested radius."""


def falling_factorial(j, N: int):
    """``j (j-1) ... (j-N+1)`` for integer arrays ``j``."""
    j = np.asarray(j, dtype=float)
    out = np.ones_like(j)
    for k in range(N):
        out = out * (j - k)
    return out


@dataclass
class KernelSeries:
    nu: RadialWeight
    coefficients: np.ndarray
    a_max: float
    tol: float
    order: int = 2
    tail_bound_at: dict = field(default_factory=dict)

    @property
    def n_max(self) -> int:
        return len(self.coefficients) - 1

    def remainder(self, a: float, N: int = 0) -> float:
        """Bound on ``sum_{n > n_max} n**N c_n a**n`` from the last ratios."""
        return _remainder(self.coefficients, abs(a), N)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["n", "c_n"])
        for n, c in enumerate(self.coefficients):
            w.writerow([n, repr(float(c))])
        return buf.getvalue()


def _remainder(c, a, N):
    if a == 0:
        return 0.0
    if len(c) < RATIO_WINDOW + 2:
        return math.inf
    n = np.arange(len(c) - RATIO_WINDOW - 1, len(c), dtype=float)
    cc = c[-RATIO_WINDOW - 1 :]
    ratios = a * (cc[1:] / cc[:-1]) * ((n[1:] + 1.0) / np.maximum(n[1:], 1.0)) ** N
    q = float(ratios.max())
    if q >= 1:
        return math.inf
    n_last = len(c) - 1
    last = math.exp(math.log(c[-1]) + N * math.log(n_last) + n_last * math.log(a))
    return last * q / (1.0 - q)


def odd_moments(nu: RadialWeight, n) -> np.ndarray:
    """``int_0^1 s**(2n+1) nu(s) ds`` for an integer array ``n``."""
    return nu.moments(0.0, 2.0 * np.asarray(n, dtype=float) + 1.0)


def build_kernel(nu: RadialWeight, a_max: float, tol: float = 1e-12, order: int = 2) -> KernelSeries:
    """Truncated kernel series certified for ``|a| <= a_max`` and derivatives up to ``order``."""
    if not (0 < a_max < 1) or tol <= 0:
        raise ValueError("need 0 < a_max < 1 and tol > 0")
    chunk = 256
    c = np.empty(0)
    while True:
        n = np.arange(len(c), len(c) + chunk)
        mom = odd_moments(nu, n)
        if np.any(~np.isfinite(mom)) or np.any(mom <= 0):
            raise WeightError("kernel moments must be finite and positive")
        c = np.concatenate([c, 1.0 / (2.0 * mom)])
        rems = [_remainder(c, a_max, N) for N in range(order + 1)]
        if max(rems) < tol:
            break
        if len(c) >= N_MAX_LIMIT:
            raise TruncationError(
                f"kernel needs more than {N_MAX_LIMIT} terms at a_max={a_max}, tol={tol}"
            )
        chunk = min(2 * chunk, N_MAX_LIMIT - len(c))
    # trim to the shortest prefix that still meets the tolerance
    lo, hi = RATIO_WINDOW + 2, len(c)
    while lo < hi:
        mid = (lo + hi) // 2
        if max(_remainder(c[:mid], a_max, N) for N in range(order + 1)) < tol:
            hi = mid
        else:
            lo = mid + 1
    c = c[:hi]
    bounds = {a_max: max(_remainder(c, a_max, N) for N in range(order + 1))}
    return KernelSeries(nu, c, a_max, tol, order, bounds)


def eval_kernel_derivative(k: KernelSeries, N: int, a: complex, z) -> complex | np.ndarray:
    """``N``-th derivative in ``z`` of ``B_a(z)``, from the truncated series."""
    if abs(a) > k.a_max * (1 + 1e-15):
        raise ValueError(f"|a| = {abs(a)} exceeds the certified radius {k.a_max}")
    if N < 0:
        raise ValueError("derivative order must be nonnegative")
    z = np.asarray(z, dtype=complex)
    if np.any(np.abs(z) >= 1):
        raise ValueError("z must lie in the unit disc")
    if N > k.order and k.remainder(abs(a), N) > k.tol:
        raise TruncationError(f"derivative order {N} is not certified by this series")
    j = np.arange(N, k.n_max + 1)
    coef = falling_factorial(j, N) * k.coefficients[N:] * np.conj(a) ** j
    out = np.polyval(coef[::-1], z) if len(coef) else np.zeros_like(z)
    return complex(out) if out.ndim == 0 else out


def kernel_norm_bound(nu: RadialWeight, p: float, N: int, a: float, beta: float | None = None):
    """Integral comparable to ``||B_a^(N)||_{A^p_nu}^p`` and its simple upper bound.

    Returns ``(integral, upper)`` with
    ``integral = int_0^a dt / (nuhat(t)**(p-1) (1-t)**(p(N+1)))`` and
    ``upper = 1 / (nuhat(a)**(p-1) (1-a)**(p(N+1)-1))``.  For ``p < 1`` the
    upper bound needs the exponent ``beta`` of the weight and becomes
    ``int_0^a (1-t)**((1-p) beta - p(N+1)) dt / (nuhat(a)**(p-1) (1-a)**((1-p) beta))``.
    """
    if not 0 < a < 1:
        raise ValueError("a must lie in (0, 1)")
    if p <= 0:
        raise ValueError("p must be positive")
    if p < 1 and beta is None:
        raise ValueError("p < 1 needs the weight exponent beta")
    ua = float(u_of_r(a))

    def log_f(u):
        return -(p - 1.0) * nu.log_tail(u) + p * (N + 1) * np.asarray(u)

    integral = integrate_log_density(log_f, 0.0, ua, breaks=list(nu.breaks(0.0, ua)), rel_tol=1e-11)
    lta = float(nu.log_tail(ua)[0])
    if p >= 1:
        upper = math.exp(-(p - 1.0) * lta + (p * (N + 1) - 1.0) * ua)
    else:
        e = p * (N + 1) - (1.0 - p) * beta
        inner = math.expm1((e - 1.0) * ua) / (e - 1.0) if e != 1 else ua
        upper = math.exp(-(p - 1.0) * lta + (1.0 - p) * beta * ua) * inner
    return integral, upper


@dataclass
class MeanBound:
    lhs: float
    rhs: float
    n_max: int
    angles: int

    @property
    def ratio(self) -> float:
        return self.lhs / self.rhs


def kernel_image_mean_bound(
    omega: RadialWeight,
    nu: RadialWeight,
    q: float,
    N: int,
    a: float,
    t: float,
    *,
    tol: float = 1e-12,
    angular_factor: int = 1,
    kernel: KernelSeries | None = None,
    check_doubling: bool = True,
) -> MeanBound:
    """Integral mean over ``|z| = t`` of ``tail(omega, t) * T_omega(B_a^(N))``.

    ``lhs`` is ``(1/2pi) int |sum_j j^(N) a^j c_j omega_{t,j-N} e^{i theta (j-N)}|^q``
    computed by an FFT on ``2**k >= 2 (n_max + 1)`` angles (times
    ``angular_factor``).  ``rhs`` is the lower-bound profile
    ``tail(omega, max(t, a))**q / (tail(nu, a)**q (1-a)**(q(N+1)-1))``.
    """
    if q <= 0 or N < 1:
        raise ValueError("need q > 0 and N >= 1")
    if not (1.0 - 1.0 / (2 * N) <= a < 1):
        raise ValueError(f"a must satisfy 1 - 1/(2N) <= a < 1; got a={a}, N={N}")
    if not 0 <= t < 1:
        raise ValueError("t must lie in [0, 1)")
    if check_doubling and classify_dhat(nu, RadialGrid(40, 2)).verdict == "NotMember":
        raise WeightError("nu must be doubling")
    k = kernel if kernel is not None and kernel.a_max >= a else build_kernel(nu, a, tol, order=N)
    j = np.arange(N, k.n_max + 1)
    om = np.asarray(omega.moments(t, (j - N).astype(float)), dtype=float)
    logb = (
        np.log(falling_factorial(j, N))
        + np.log(k.coefficients[N:])
        + j * math.log(a)
        + np.log(np.maximum(om, 1e-300))
    )
    b = np.where(om > 0, np.exp(logb), 0.0)
    m = 64
    while m < 2 * len(b):
        m *= 2
    m *= angular_factor
    g = np.fft.ifft(np.concatenate([b, np.zeros(m - len(b))])) * m
    lhs = float(np.mean(np.abs(g) ** q))
    ua = float(u_of_r(a))
    l_om = float(omega.log_tail(max(ua, float(u_of_r(t))))[0])
    l_nu = float(nu.log_tail(ua)[0])
    rhs = math.exp(q * l_om - q * l_nu + (q * (N + 1) - 1.0) * ua)
    return MeanBound(lhs, rhs, k.n_max, m)


def lemma4_lower_bound(omega, nu, q, N, a, t, **kw) -> tuple[float, float]:
    """``(lhs, rhs)`` pair of :func:`kernel_image_mean_bound`."""
    mb = kernel_image_mean_bound(omega, nu, q, N, a, t, **kw)
    return mb.lhs, mb.rhs
