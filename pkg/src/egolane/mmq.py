"""Measurement model quality scores.

A channel's innovation is turned into a normalized innovation squared (NIS),
an outlier penalty is added, and the sum is normalized by the chi-square
quantile for the channel's degrees of freedom before taking ``-log``. The
normalization makes channels with different sample counts comparable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np

MMQ_CAP = 10.0
LOG_FLOOR = 1e-9
DEFAULT_P = 0.95

N_CHANNELS = 8
CHANNEL_NAMES = (
    "ego_left_geometry", "ego_right_geometry", "adjacent_left_geometry", "adjacent_right_geometry",
    "ego_left_type", "ego_right_type", "adjacent_left_type", "adjacent_right_type",
)


class NumericDomainError(ValueError):
    pass


@dataclass(frozen=True)
class Chi2Params:
    p: float = DEFAULT_P
    dof: int = 1

    def __post_init__(self):
        if not 0.0 < self.p < 1.0:
            raise NumericDomainError(f"p must lie in (0, 1), got {self.p}")
        if self.dof < 1:
            raise NumericDomainError(f"dof must be >= 1, got {self.dof}")


def gammainc_lower(a: float, x: float) -> float:
    """Regularized lower incomplete gamma P(a, x)."""
    if x <= 0.0:
        return 0.0
    log_prefix = a * math.log(x) - x - math.lgamma(a)
    if x < a + 1.0:
        # series
        term = total = 1.0 / a
        ap = a
        for _ in range(10000):
            ap += 1.0
            term *= x / ap
            total += term
            if abs(term) < abs(total) * 1e-17:
                break
        return min(1.0, total * math.exp(log_prefix))
    # continued fraction for Q(a, x), modified Lentz
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, 10000):
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
        if abs(delta - 1.0) < 1e-17:
            break
    return max(0.0, 1.0 - math.exp(log_prefix) * h)


def chi2_cdf(x: float, dof: int) -> float:
    return gammainc_lower(dof / 2.0, x / 2.0)


def _chi2_pdf(x: float, dof: int) -> float:
    k = dof / 2.0
    return math.exp((k - 1.0) * math.log(x) - x / 2.0 - k * math.log(2.0) - math.lgamma(k))


@lru_cache(maxsize=4096)
def chi2inv(p: float, dof: int) -> float:
    """Chi-square quantile: x with ``chi2_cdf(x, dof) == p``.

    Newton steps on the CDF, safeguarded by a bisection bracket.
    """
    if not 0.0 <= p < 1.0:
        raise NumericDomainError(f"p must lie in [0, 1), got {p}")
    if dof < 1:
        raise NumericDomainError(f"dof must be >= 1, got {dof}")
    if p == 0.0:
        return 0.0
    if dof == 2:
        return -2.0 * math.log1p(-p)

    # Wilson-Hilferty start
    z = math.sqrt(2.0) * _erfinv(2.0 * p - 1.0)
    h = 2.0 / (9.0 * dof)
    x = max(dof * (1.0 - h + z * math.sqrt(h)) ** 3, 1e-8)

    lo, hi = 0.0, max(2.0 * x, 1.0)
    while chi2_cdf(hi, dof) < p:
        lo, hi = hi, 2.0 * hi
    for _ in range(200):
        f = chi2_cdf(x, dof) - p
        # relative tolerance keeps small quantiles accurate
        if abs(f) <= 1e-15 * p:
            break
        if f < 0:
            lo = x
        else:
            hi = x
        pdf = _chi2_pdf(x, dof) if x > 0 else 0.0
        step = x - f / pdf if pdf > 0 else -1.0
        x = step if lo < step < hi else 0.5 * (lo + hi)
        if hi - lo <= 4e-16 * x:
            break
    return x


def _erfinv(y: float) -> float:
    # Giles' single-precision approximation, refined by two Newton steps
    w = -math.log((1.0 - y) * (1.0 + y))
    if w < 5.0:
        w -= 2.5
        coeffs = (2.81022636e-08, 3.43273939e-07, -3.5233877e-06, -4.39150654e-06,
                  0.00021858087, -0.00125372503, -0.00417768164, 0.246640727, 1.50140941)
    else:
        w = math.sqrt(w) - 3.0
        coeffs = (-0.000200214257, 0.000100950558, 0.00134934322, -0.00367342844,
                  0.00573950773, -0.0076224613, 0.00943887047, 1.00167406, 2.83297682)
    x = 0.0
    for c in coeffs:
        x = x * w + c
    x *= y
    for _ in range(2):
        err = math.erf(x) - y
        x -= err / (2.0 / math.sqrt(math.pi) * math.exp(-x * x))
    return x


def nis(residual, S) -> float:
    """Normalized innovation squared ``r^T S^-1 r``."""
    r = np.atleast_1d(np.asarray(residual, dtype=float))
    S = np.atleast_2d(np.asarray(S, dtype=float))
    if S.shape != (len(r), len(r)):
        raise NumericDomainError(f"S has shape {S.shape}, residual has length {len(r)}")
    if len(r) == 0:
        return 0.0
    if not np.allclose(S, S.T, rtol=1e-10, atol=1e-12):
        raise NumericDomainError("innovation covariance is not symmetric")
    try:
        L = np.linalg.cholesky(S)
    except np.linalg.LinAlgError as exc:
        raise NumericDomainError("innovation covariance is not positive definite") from exc
    w = np.linalg.solve(L, r)
    return float(w @ w)


def penalty(outlier_count: int, params: Chi2Params = Chi2Params()) -> float:
    """Each outlier costs one marginal sample at the consistency boundary."""
    if outlier_count < 0:
        raise ValueError(f"outlier_count must be >= 0, got {outlier_count}")
    return outlier_count * chi2inv(params.p, 1)


def mmq(nis_value: float, penalty_value: float, params: Chi2Params) -> float:
    if nis_value < 0 or penalty_value < 0:
        raise NumericDomainError("nis and penalty must be non-negative")
    ratio = max(nis_value + penalty_value, LOG_FLOOR) / chi2inv(params.p, params.dof)
    return float(min(MMQ_CAP, max(-MMQ_CAP, -math.log(ratio))))


def channel_mmq(nis_value: float, outlier_count: int, dof: int, p: float = DEFAULT_P) -> Optional[float]:
    """MMQ for one channel, or None when nothing was associated."""
    if dof == 0:
        return None
    params = Chi2Params(p, dof)
    return mmq(nis_value, penalty(outlier_count, params), params)


def type_pseudo_nis(observed_types: Sequence, map_types: Sequence, p: float = DEFAULT_P):
    """Pseudo-NIS for discrete types: each mismatch counts ``chi2inv(p, 1)``.

    Returns ``(nis, dof)``; ``None`` when there is nothing to compare. A map
    type of ``None`` (no boundary) counts as a mismatch.
    """
    if len(observed_types) != len(map_types):
        raise ValueError("observed and map type lists differ in length")
    if len(observed_types) == 0:
        return None
    quantum = chi2inv(p, 1)
    mismatches = sum(1 for o, m in zip(observed_types, map_types) if m is None or int(o) != int(m))
    return mismatches * quantum, len(observed_types)


def mmq_array(nis_values: np.ndarray, outliers: np.ndarray, dof: np.ndarray, p: float = DEFAULT_P) -> np.ndarray:
    """Vectorized ``channel_mmq``; NaN where ``dof == 0``."""
    dof = np.asarray(dof, dtype=int)
    top = max(int(dof.max(initial=0)), 1)
    table = np.array([np.nan] + [chi2inv(p, d) for d in range(1, top + 1)])
    total = np.maximum(np.asarray(nis_values) + np.asarray(outliers) * chi2inv(p, 1), LOG_FLOOR)
    with np.errstate(invalid="ignore"):
        score = np.clip(-np.log(total / table[dof]), -MMQ_CAP, MMQ_CAP)
    return np.where(dof > 0, score, np.nan)
