"""Deterministic numeric substrate: seeded RNG, order statistics, and the
special functions behind the analytic coverage formula for directional
quantile regions of a standard normal vector.

All functions are pure. ``Rng`` instances are single-owner: parallel code
must create independently seeded instances (see ``Rng.spawn``).
"""

from __future__ import annotations

import math

import numpy as np

__all__ = [
    "Rng",
    "empirical_quantile",
    "std_normal_cdf",
    "std_normal_inv_cdf",
    "chi_squared_cdf",
    "dqr_theoretical_coverage",
]

_GOLDEN64 = 0x9E3779B97F4A7C15
_MASK64 = 0xFFFFFFFFFFFFFFFF


def _splitmix64(state: int) -> int:
    z = (state + _GOLDEN64) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


class Rng:
    """Seeded 64-bit pseudo-random generator.

    Uniform, integer, and permutation draws come from a PCG64 stream;
    standard-normal draws are produced by the Box-Muller transform on
    that stream, so the normal mapping is portable given the uniform
    stream. Identical seeds give identical draw sequences (the sequence
    depends on the sizes requested, as for any buffered generator).
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def spawn(self, tag: int) -> "Rng":
        """Child generator with a stream derived from (seed, tag).

        Does not consume state from the parent, so spawning is
        order-independent.
        """
        return Rng(_splitmix64((self.seed ^ _splitmix64(tag)) & _MASK64))

    def uniform(self, low: float = 0.0, high: float = 1.0, size=None):
        return self._gen.uniform(low, high, size=size)

    def standard_normal(self, size=None):
        """N(0,1) draws via Box-Muller on uniform pairs."""
        n = 1 if size is None else int(np.prod(size))
        m = (n + 1) // 2
        # 1 - U keeps the log argument in (0, 1].
        u1 = 1.0 - self._gen.random(m)
        u2 = self._gen.random(m)
        radius = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * math.pi * u2
        z = np.concatenate([radius * np.cos(theta), radius * np.sin(theta)])[:n]
        if size is None:
            return float(z[0])
        return z.reshape(size)

    def integers(self, low: int, high: int, size=None):
        """Integers from [low, high)."""
        return self._gen.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def subset(self, n: int, k: int) -> np.ndarray:
        """k distinct indices from range(n), in draw order."""
        if not 0 <= k <= n:
            raise ValueError(f"cannot draw {k} distinct indices from {n}")
        return self.permutation(n)[:k]


def empirical_quantile(values, k: int) -> float:
    """k-th smallest value (1-indexed) under an ascending stable sort."""
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 1:
        arr = arr.ravel()
    n = arr.size
    if n == 0:
        raise ValueError("empirical_quantile of an empty sequence")
    if not 1 <= k <= n:
        raise ValueError(f"order statistic index k={k} outside [1, {n}]")
    return float(np.sort(arr, kind="stable")[k - 1])


def std_normal_cdf(x: float) -> float:
    """Standard normal CDF via the error function."""
    return 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))


# Rational approximation coefficients for the inverse normal CDF
# (Acklam's method; relative error ~1e-9 before refinement).
_ICDF_A = (
    -3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
    1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00,
)
_ICDF_B = (
    -5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
    6.680131188771972e01, -1.328068155288572e01,
)
_ICDF_C = (
    -7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
    -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00,
)
_ICDF_D = (
    7.784695709041462e-03, 3.224671290700398e-01,
    2.445134137142996e00, 3.754408661907416e00,
)
_ICDF_P_LOW = 0.02425


def std_normal_inv_cdf(p: float) -> float:
    """Inverse standard normal CDF, |Phi(z) - p| <= 1e-8.

    Rational approximation refined by one Newton step against the
    erf-based CDF.
    """
    if not 0.0 < p < 1.0:
        raise ValueError(f"inverse normal CDF requires p in (0,1), got {p}")
    a, b, c, d = _ICDF_A, _ICDF_B, _ICDF_C, _ICDF_D
    if p < _ICDF_P_LOW:
        q = math.sqrt(-2.0 * math.log(p))
        z = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) / (
            (((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0
        )
    elif p <= 1.0 - _ICDF_P_LOW:
        q = p - 0.5
        r = q * q
        z = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q / (
            ((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0
        )
    else:
        q = math.sqrt(-2.0 * math.log(1.0 - p))
        z = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) / (
            (((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0
        )
    # One Newton step: z' = z - (Phi(z) - p) / phi(z).
    pdf = math.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
    if pdf > 0.0:
        z -= (std_normal_cdf(z) - p) / pdf
    return z


def _lower_gamma_series(a: float, x: float) -> float:
    """Regularized lower incomplete gamma P(a,x) by series, for x < a+1."""
    term = 1.0 / a
    total = term
    n = 0
    while True:
        n += 1
        term *= x / (a + n)
        total += term
        if abs(term) < abs(total) * 1e-16:
            break
        if n > 10_000:
            raise RuntimeError("incomplete gamma series failed to converge")
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _upper_gamma_contfrac(a: float, x: float) -> float:
    """Regularized upper incomplete gamma Q(a,x) by continued fraction
    (modified Lentz), for x >= a+1."""
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    i = 0
    while True:
        i += 1
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-16:
            break
        if i > 10_000:
            raise RuntimeError("incomplete gamma continued fraction failed to converge")
    return math.exp(-x + a * math.log(x) - math.lgamma(a)) * h


def regularized_lower_gamma(a: float, x: float) -> float:
    """P(a, x) = gamma(a, x) / Gamma(a), absolute error <= 1e-8."""
    if a <= 0.0:
        raise ValueError(f"shape parameter must be positive, got {a}")
    if x < 0.0:
        raise ValueError(f"gamma argument must be nonnegative, got {x}")
    if x == 0.0:
        return 0.0
    if x < a + 1.0:
        return _lower_gamma_series(a, x)
    return 1.0 - _upper_gamma_contfrac(a, x)


def chi_squared_cdf(x: float, r: int) -> float:
    """CDF of the chi-squared distribution with r degrees of freedom."""
    if r < 1 or int(r) != r:
        raise ValueError(f"degrees of freedom must be a positive integer, got {r}")
    if x < 0.0:
        raise ValueError(f"chi-squared CDF argument must be nonnegative, got {x}")
    return regularized_lower_gamma(r / 2.0, x / 2.0)


def dqr_theoretical_coverage(alpha: float, r: int) -> float:
    """Mass of a standard normal r-vector inside the intersection of all
    directional level-alpha half-spaces, i.e. the ball of radius
    -Phi^-1(alpha).

    This is the exact population coverage of a directional quantile
    region at nominal per-direction level 1-alpha when the response is
    N(0,1)^r.
    """
    if not 0.0 < alpha <= 0.5:
        raise ValueError(f"alpha must be in (0, 0.5], got {alpha}")
    z = std_normal_inv_cdf(alpha)
    return chi_squared_cdf(z * z, r)
