"""Scalar special functions used by the tube-volume formulas.

All routines are pure functions of their arguments and operate on Python
floats. Accuracy targets are stated per function.
"""

import math
from typing import NamedTuple

__all__ = [
    "SpecFunResult",
    "NonConvergenceError",
    "ln_gamma",
    "reg_inc_beta",
    "gauss_2f1",
    "disc_volume",
]

#: Term cap for the hypergeometric power series.
MAX_SERIES_TERMS = 100_000
#: Iteration cap for the incomplete-beta continued fraction.
MAX_CF_ITERATIONS = 20_000

_TINY = 1e-300


class NonConvergenceError(ArithmeticError):
    """A series or continued fraction did not reach its tolerance."""


class SpecFunResult(NamedTuple):
    value: float
    est_abs_error: float


def ln_gamma(x: float) -> float:
    """Natural log of the Gamma function for ``x > 0``."""
    x = float(x)
    if not x > 0:
        raise ValueError(f"ln_gamma requires x > 0, got {x!r}")
    return math.lgamma(x)


def _beta_cf(a: float, b: float, x: float) -> float:
    # modified Lentz evaluation of the incomplete-beta continued fraction
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < _TINY:
        d = _TINY
    d = 1.0 / d
    h = d
    for m in range(1, MAX_CF_ITERATIONS + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < _TINY:
            d = _TINY
        c = 1.0 + aa / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-16:
            return h
    raise NonConvergenceError(
        f"incomplete beta continued fraction did not converge for a={a}, b={b}, x={x}"
    )


def _stirling_correction(x: float) -> float:
    # lgamma(x) - [(x - 1/2) ln x - x + ln(2 pi)/2], valid for x >= 10
    r = 1.0 / (x * x)
    return (1.0 / 12.0 - r * (1.0 / 360.0 - r * (1.0 / 1260.0 - r * (1.0 / 1680.0 - r / 1188.0)))) / x


_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


def _log_ratio(u, v):
    # log(u / v), accurate when u is close to v
    r = (u - v) / v
    return math.log1p(r) if abs(r) < 0.5 else math.log(u) - math.log(v)


def _log_beta_front(a: float, b: float, x: float) -> float:
    """``log(x**a * (1 - x)**b / B(a, b))`` without cancelling large lgammas."""
    y = 1.0 - x
    if a >= 10.0 and b >= 10.0:
        s = a + b
        x0 = a / s
        return (
            a * _log_ratio(x, x0) + b * _log_ratio(y, 1.0 - x0)
            + 0.5 * math.log(a * b / s) - _HALF_LOG_2PI
            - _stirling_correction(a) - _stirling_correction(b) + _stirling_correction(s)
        )
    if a >= 10.0 or b >= 10.0:
        big, small = (a, b) if a >= 10.0 else (b, a)
        # lgamma(big + small) - lgamma(big), expanded around big
        shift = (
            (big - 0.5) * math.log1p(small / big) + small * math.log(big + small) - small
            + _stirling_correction(big + small) - _stirling_correction(big)
        )
        return a * math.log(x) + b * math.log1p(-x) - math.lgamma(small) + shift
    return (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
        + a * math.log(x) + b * math.log1p(-x)
    )


def reg_inc_beta(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta function ``I_x(a, b)``.

    Uses the continued fraction directly when ``x < (a + 1) / (a + b + 2)``
    and the reflection ``1 - I_{1-x}(b, a)`` otherwise.

    Parameters
    ----------
    a, b : float
        Shape parameters, both strictly positive.
    x : float
        Upper limit in ``[0, 1]``.

    Returns
    -------
    float
        Value in ``[0, 1]``.
    """
    a, b, x = float(a), float(b), float(x)
    if not (a > 0 and b > 0):
        raise ValueError(f"reg_inc_beta requires a, b > 0, got a={a!r}, b={b!r}")
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"reg_inc_beta requires x in [0, 1], got {x!r}")
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0
    front = math.exp(_log_beta_front(a, b, x))
    if x < (a + 1.0) / (a + b + 2.0):
        value = front * _beta_cf(a, b, x) / a
    else:
        value = 1.0 - front * _beta_cf(b, a, 1.0 - x) / b
    return min(1.0, max(0.0, value))


def gauss_2f1(a: float, b: float, c: float, z: float, tol: float = 1e-14) -> SpecFunResult:
    """Gauss hypergeometric function by direct power series.

    Only ``|z| <= 0.99`` is supported; no analytic continuation is attempted.
    The error estimate bounds the remaining tail by a geometric series once
    the term ratio has settled below one. It is an estimate, not a rigorous
    bound.
    """
    a, b, c, z, tol = float(a), float(b), float(c), float(z), float(tol)
    if c <= 0 and c == math.floor(c):
        raise ValueError(f"c must not be a nonpositive integer, got {c!r}")
    if abs(z) > 0.99:
        raise ValueError(f"gauss_2f1 is restricted to |z| <= 0.99, got {z!r}")
    if not tol > 0:
        raise ValueError("tol must be positive")
    if z == 0.0:
        return SpecFunResult(1.0, 0.0)
    if z < 0.0:
        # Pfaff: 2F1(a, b; c; z) = (1 - z)^(-a) 2F1(a, c - b; c; z / (z - 1)),
        # trading an alternating series for one with positive argument
        scale = (1.0 - z) ** (-a)
        inner = _series_2f1(a, c - b, c, z / (z - 1.0), tol / scale if scale > 1 else tol)
        value = scale * inner.value
        return SpecFunResult(value, scale * inner.est_abs_error + 4.4e-16 * abs(value))
    return _series_2f1(a, b, c, z, tol)


def _series_2f1(a, b, c, z, tol):
    total = 1.0
    abs_sum = 1.0
    term = 1.0
    for k in range(MAX_SERIES_TERMS):
        ratio = (a + k) * (b + k) / ((c + k) * (k + 1)) * z
        term *= ratio
        total += term
        abs_sum += abs(term)
        # rounding grows with the largest partial sums, not with the result
        rounding = (k + 2) * 2.2e-16 * abs_sum
        if term == 0.0:
            return SpecFunResult(total, rounding)
        # the term ratio tends to z; bound the tail once it is below 1
        next_ratio = abs((a + k + 1) * (b + k + 1) / ((c + k + 1) * (k + 2)) * z)
        if next_ratio < 1.0:
            tail = abs(term) * next_ratio / (1.0 - next_ratio)
            if tail <= tol * 0.5:
                return SpecFunResult(total, tail + rounding)
    raise NonConvergenceError(
        f"2F1({a}, {b}; {c}; {z}) did not converge in {MAX_SERIES_TERMS} terms"
    )


def disc_volume(q: int, eps: float) -> float:
    """Volume of the ``q``-dimensional Euclidean disc of radius ``eps``."""
    if int(q) != q or q < 1:
        raise ValueError(f"q must be a positive integer, got {q!r}")
    eps = float(eps)
    if eps < 0:
        raise ValueError(f"eps must be nonnegative, got {eps!r}")
    if q < 300:
        unit = math.pi ** (0.5 * q) / math.gamma(0.5 * q + 1.0)
    else:
        unit = math.exp(0.5 * q * math.log(math.pi) - math.lgamma(0.5 * q + 1.0))
    return unit * eps ** q
