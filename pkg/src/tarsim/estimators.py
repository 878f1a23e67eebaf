"""Pure numeric kernels for recall estimation and gain-curve geometry.

Everything here is a stateless function of its arguments: the model-based
recall estimate built from predicted probabilities, its first-order
(delta-method) variance bound and confidence interval, the knee geometry
of a gain curve, a numerically stable hypergeometric CDF, and the
product-moment correlation. Stopping rules and evaluation compose these.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import gammaln

from .errors import (
    NoKneeError,
    ParameterError,
    UndefinedCorrelationError,
    UndefinedEstimateError,
    UndefinedVarianceError,
)

__all__ = [
    "RecallEstimate",
    "KneeGeometry",
    "quant_counts",
    "quant_recall",
    "quant_variance",
    "quant_ci",
    "knee_point",
    "hypergeometric_cdf",
    "pearson_corr",
]


@dataclass(frozen=True)
class RecallEstimate:
    """Model-based recall estimate with its variance bound and interval.

    ``ci_lower``/``ci_upper`` are the raw symmetric endpoints
    (``point -/+ multiplier * sqrt(variance_bound)``); they may fall
    outside [0, 1]. Stopping comparisons use the raw lower endpoint;
    reporting uses the clamped properties.
    """

    point: float
    variance_bound: float
    ci_lower: float
    ci_upper: float
    r_hat: float
    u_hat: float

    @property
    def ci_lower_clamped(self) -> float:
        return min(max(self.ci_lower, 0.0), 1.0)

    @property
    def ci_upper_clamped(self) -> float:
        return min(max(self.ci_upper, 0.0), 1.0)


@dataclass(frozen=True)
class KneeGeometry:
    """Knee of a gain curve: the interior point of maximum perpendicular
    distance from the chord through the origin and the current endpoint,
    plus the two-segment slope ratio at that point."""

    knee_index: int
    rho: float
    s: int


def _as_prob_array(values: Sequence[float], name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 1:
        arr = arr.ravel()
    if arr.size and (not np.all(np.isfinite(arr)) or arr.min() < 0.0 or arr.max() > 1.0):
        raise ParameterError(f"{name} probabilities must be finite and within [0, 1]")
    return arr


def quant_counts(
    reviewed_probs: Sequence[float], unreviewed_probs: Sequence[float]
) -> tuple[float, float]:
    """Model-based counts of relevant documents on each side of the review
    boundary: the sum of predicted probabilities over reviewed documents
    and over unreviewed documents."""
    reviewed = _as_prob_array(reviewed_probs, "reviewed")
    unreviewed = _as_prob_array(unreviewed_probs, "unreviewed")
    return float(reviewed.sum()), float(unreviewed.sum())


def quant_recall(
    reviewed_probs: Sequence[float],
    unreviewed_probs: Sequence[float],
    reviewed_relevant_count: int = 0,
    mode: str = "estimated-numerator",
) -> float:
    """Point estimate of recall from predicted probabilities.

    ``estimated-numerator`` (default) divides the estimated count of
    relevant documents among the reviewed by the estimated count over the
    whole collection, so systematic calibration error is shared by
    numerator and denominator. ``true-numerator`` instead places the known
    reviewed-relevant count on top.
    """
    r_hat, u_hat = quant_counts(reviewed_probs, unreviewed_probs)
    if mode == "estimated-numerator":
        denom = r_hat + u_hat
        if denom == 0.0:
            raise UndefinedEstimateError("all probabilities are zero")
        return r_hat / denom
    if mode == "true-numerator":
        if reviewed_relevant_count < 0:
            raise ParameterError("reviewed_relevant_count must be >= 0")
        denom = reviewed_relevant_count + u_hat
        if denom == 0.0:
            raise UndefinedEstimateError(
                "no reviewed relevant documents and zero unreviewed mass"
            )
        return reviewed_relevant_count / denom
    raise ParameterError(f"unknown recall mode: {mode!r}")


def quant_variance(
    reviewed_probs: Sequence[float], unreviewed_probs: Sequence[float]
) -> float:
    """First-order variance bound for the recall point estimate.

    Treats each document's relevance as an independent Bernoulli draw with
    its predicted probability, truncates the Taylor expansion of the ratio
    to first order, and drops the negative covariance cross-term, giving

        Var_R / T^2  +  R_hat^2 (Var_R + Var_U) / T^4

    with ``T = R_hat + U_hat`` and ``Var_S = sum p_i (1 - p_i)`` over each
    side. Zero exactly when every probability sits at 0 or 1.
    """
    reviewed = _as_prob_array(reviewed_probs, "reviewed")
    unreviewed = _as_prob_array(unreviewed_probs, "unreviewed")
    r_hat = float(reviewed.sum())
    u_hat = float(unreviewed.sum())
    total = r_hat + u_hat
    # total*total underflows to 0 for subnormal mass; the estimate is
    # meaningless there, so treat it the same as an all-zero input.
    if total * total == 0.0:
        raise UndefinedVarianceError("probability mass is numerically zero")
    var_r = float((reviewed * (1.0 - reviewed)).sum())
    var_u = float((unreviewed * (1.0 - unreviewed)).sum())
    ratio = r_hat / total
    return (var_r + ratio * ratio * (var_r + var_u)) / (total * total)


def quant_ci(
    reviewed_probs: Sequence[float],
    unreviewed_probs: Sequence[float],
    multiplier: float = 2.0,
) -> RecallEstimate:
    """Recall estimate with a symmetric ``multiplier``-standard-deviation
    interval around the point estimate (2 by default, a ~95% interval)."""
    if multiplier <= 0:
        raise ParameterError("multiplier must be positive")
    point = quant_recall(reviewed_probs, unreviewed_probs, mode="estimated-numerator")
    variance = quant_variance(reviewed_probs, unreviewed_probs)
    r_hat, u_hat = quant_counts(reviewed_probs, unreviewed_probs)
    half_width = multiplier * math.sqrt(variance)
    return RecallEstimate(
        point=point,
        variance_bound=variance,
        ci_lower=point - half_width,
        ci_upper=point + half_width,
        r_hat=r_hat,
        u_hat=u_hat,
    )


def knee_point(gain_points: Sequence[tuple[float, float]], s: int) -> KneeGeometry:
    """Locate the knee of a gain curve prefix ending at training size ``s``.

    ``gain_points`` must start at (0, 0), end at ``(s, Rel(s))``, and be
    strictly increasing in the first coordinate. The knee is the interior
    point with maximum perpendicular distance from the chord
    (0,0)-(s, Rel(s)); ties break toward the smaller training size. The
    slope ratio compares the segment before the knee against the segment
    after it, with +1 smoothing in the trailing gain difference.
    """
    pts = [(float(x), float(y)) for x, y in gain_points]
    if len(pts) < 3:
        raise ParameterError("need at least 3 gain points")
    if pts[0] != (0.0, 0.0):
        raise ParameterError("gain curve must start at (0, 0)")
    xs = np.array([p[0] for p in pts])
    ys = np.array([p[1] for p in pts])
    if np.any(np.diff(xs) <= 0):
        raise ParameterError("gain points must be strictly increasing in s")
    if xs[-1] != float(s):
        raise ParameterError(f"last gain point must be at s={s}")
    rel_s = ys[-1]
    if rel_s <= 0:
        raise NoKneeError("Rel(s) = 0: chord through the origin is degenerate")

    # Perpendicular distance from (x, y) to the chord is
    # |Rel(s)*x - s*y| / hypot(s, Rel(s)); the denominator is shared, so
    # compare numerators only.
    interior_x = xs[1:-1]
    interior_y = ys[1:-1]
    numerators = np.abs(rel_s * interior_x - float(s) * interior_y)
    best = int(np.argmax(numerators))  # argmax returns the first (smallest i) tie
    i = interior_x[best]
    rel_i = interior_y[best]
    rho = (rel_i / i) * ((s - i) / (rel_s - rel_i + 1.0))
    return KneeGeometry(knee_index=int(i), rho=float(rho), s=int(s))


def _log_choose(a: np.ndarray | float, b: np.ndarray | float) -> np.ndarray:
    return gammaln(np.asarray(a) + 1.0) - gammaln(np.asarray(b) + 1.0) - gammaln(
        np.asarray(a) - np.asarray(b) + 1.0
    )


def hypergeometric_cdf(population: int, successes: int, draws: int, k: int) -> float:
    """P(X <= k) for X ~ Hypergeometric(population, successes, draws).

    Accumulates probability mass in log space (log-gamma binomials) so
    large parameters stay stable; sums whichever tail is shorter and
    complements when needed. Exact 0 below the support and exact 1 at or
    above its top.
    """
    n_pop, n_succ, n_draws = int(population), int(successes), int(draws)
    if n_pop < 0 or not (0 <= n_succ <= n_pop) or not (0 <= n_draws <= n_pop):
        raise ParameterError(
            f"invalid hypergeometric parameters N={population}, K={successes}, n={draws}"
        )
    lo = max(0, n_draws + n_succ - n_pop)
    hi = min(n_draws, n_succ)
    if k < lo:
        return 0.0
    if k >= hi:
        return 1.0

    def _mass(x_lo: int, x_hi: int) -> float:
        x = np.arange(x_lo, x_hi + 1, dtype=float)
        log_pmf = (
            _log_choose(float(n_succ), x)
            + _log_choose(float(n_pop - n_succ), n_draws - x)
            - _log_choose(float(n_pop), float(n_draws))
        )
        shift = log_pmf.max()
        return float(math.exp(shift) * np.exp(log_pmf - shift).sum())

    if k - lo <= hi - (k + 1):
        cdf = _mass(lo, k)
    else:
        cdf = 1.0 - _mass(k + 1, hi)
    return min(max(cdf, 0.0), 1.0)


def pearson_corr(x: Sequence[float], y: Sequence[float]) -> float:
    """Product-moment correlation of two equal-length sequences."""
    xa = np.asarray(x, dtype=float)
    ya = np.asarray(y, dtype=float)
    if xa.shape != ya.shape or xa.ndim != 1:
        raise ParameterError("inputs must be 1-d sequences of equal length")
    if xa.size < 2:
        raise ParameterError("need at least 2 points")
    xc = xa - xa.mean()
    yc = ya - ya.mean()
    sxx = float((xc * xc).sum())
    syy = float((yc * yc).sum())
    if sxx == 0.0 or syy == 0.0:
        raise UndefinedCorrelationError("zero variance input")
    r = float((xc * yc).sum()) / math.sqrt(sxx * syy)
    return min(max(r, -1.0), 1.0)
