"""Chi-square tail probabilities and quantiles from the regularized incomplete gamma."""
from __future__ import annotations

import math
from statistics import NormalDist

_EPS = 1e-15
_TINY = 1e-300
_MAX_ITER = 500


def _gamma_series(a: float, x: float) -> float:
    # lower regularized P(a, x); converges fast for x < a + 1
    term = 1.0 / a
    total = term
    ap = a
    for _ in range(_MAX_ITER):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _EPS:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _gamma_cf(a: float, x: float) -> float:
    # upper regularized Q(a, x) by modified Lentz continued fraction, x >= a + 1
    b = x + 1.0 - a
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for i in range(1, _MAX_ITER):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _TINY:
            d = _TINY
        c = b + an / c
        if abs(c) < _TINY:
            c = _TINY
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _EPS:
            break
    return math.exp(-x + a * math.log(x) - math.lgamma(a)) * h


def gammainc_lower(a: float, x: float) -> float:
    """Regularized lower incomplete gamma P(a, x)."""
    if a <= 0:
        raise ValueError("shape must be positive")
    if x <= 0:
        return 0.0
    if x < a + 1.0:
        return _gamma_series(a, x)
    return 1.0 - _gamma_cf(a, x)


def gammainc_upper(a: float, x: float) -> float:
    """Regularized upper incomplete gamma Q(a, x) = 1 - P(a, x)."""
    if a <= 0:
        raise ValueError("shape must be positive")
    if x <= 0:
        return 1.0
    if x < a + 1.0:
        return 1.0 - _gamma_series(a, x)
    return _gamma_cf(a, x)


def chi2_cdf(x: float, dof: float) -> float:
    return gammainc_lower(dof / 2.0, x / 2.0)


def chi2_sf(x: float, dof: float) -> float:
    """Upper tail P(X > x) for X ~ chi-square(dof)."""
    if math.isinf(x):
        return 0.0
    return gammainc_upper(dof / 2.0, x / 2.0)


def chi2_pdf(x: float, dof: float) -> float:
    if x <= 0:
        return 0.0
    k = dof / 2.0
    return math.exp((k - 1.0) * math.log(x) - x / 2.0 - k * math.log(2.0) - math.lgamma(k))


def chi2_isf(alpha: float, dof: float, tol: float = 1e-12) -> float:
    """Value x with P(X > x) = alpha.

    Newton steps on the tail probability, kept inside a bracket that is
    bisected whenever a step would leave it.
    """
    if not dof > 0:
        raise ValueError(f"dof must be positive, got {dof}")
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    # Wilson-Hilferty start
    z = NormalDist().inv_cdf(1.0 - alpha)
    c = 2.0 / (9.0 * dof)
    x = max(dof * (1.0 - c + z * math.sqrt(c)) ** 3, 1e-8)

    lo, hi = 0.0, x
    while chi2_sf(hi, dof) > alpha:
        lo, hi = hi, hi * 2.0 + 1.0
    x = min(max(x, lo), hi)
    for _ in range(200):
        f = chi2_sf(x, dof) - alpha
        if f > 0:
            lo = x
        else:
            hi = x
        pdf = chi2_pdf(x, dof)
        step = f / pdf if pdf > 0 else math.inf
        nxt = x + step
        if not lo < nxt < hi:
            nxt = 0.5 * (lo + hi)
        if abs(nxt - x) <= tol * max(1.0, abs(x)):
            return nxt
        x = nxt
    return x
