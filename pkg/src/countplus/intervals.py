"""Finite-sample confidence intervals for sketch count estimates.

Three families:

* bootstrap intervals: flip quantiles of the statistic's error distribution
  around the observed statistic.  Coverage is exact in expectation and the
  interval cannot be shortened without losing it.
* order-statistic intervals: for the i-th smallest of r counters the
  quantile transform is Beta(i, r-i+1), so an exact interval comes from Beta
  quantiles pushed through the empirical error quantile function.
* the Markov-inequality baseline every prior analysis reduces to; kept for
  width comparisons.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy import stats

from .empirical import EmpiricalCdf

KIND_BOOTSTRAP = "bootstrap_two_sided"
KIND_ORDER_ONE_SIDED = "order_statistic_one_sided"
KIND_ORDER_TWO_SIDED = "order_statistic_two_sided"
KIND_MARKOV = "markov_baseline"

# sentinel for width ratios against a zero-width interval
RATIO_CAP = float("inf")


@dataclass(frozen=True)
class ConfidenceInterval:
    """[lo, hi] bracket for a count at a stated nominal level.

    achieved is the empirical-mass coverage actually delivered by the
    discrete error distribution (>= nominal); untruncated_lo keeps the raw
    endpoint before clamping at zero so coverage accounting stays honest.
    """

    lo: float
    hi: float
    level: float
    kind: str
    achieved: Optional[float] = None
    untruncated_lo: Optional[float] = None

    def __post_init__(self):
        if self.lo > self.hi + 1e-12:
            raise ValueError(f"lo {self.lo} > hi {self.hi}")
        if not 0 < self.level < 1:
            raise ValueError("level must be in (0, 1)")

    @property
    def width(self) -> float:
        lo = self.lo if self.untruncated_lo is None else self.untruncated_lo
        return self.hi - lo

    def contains(self, truth: float) -> bool:
        return self.lo <= truth <= self.hi


def beta_inv_cdf(q: float, a: int, b: int) -> float:
    """Inverse CDF of Beta(a, b) at q.

    The (1, r) case has the closed form 1 - (1-q)^(1/r) used throughout the
    one-sided Min interval; the general case defers to scipy's regularized
    incomplete beta inversion.  Accuracy, not method, is the contract.
    """
    if not 0 <= q <= 1:
        raise ValueError("q must be in [0, 1]")
    if a == 1:
        return 1.0 - (1.0 - q) ** (1.0 / b)
    return float(stats.beta.ppf(q, a, b))


def bootstrap_ci(
    t_value: float,
    statistic_cdf: EmpiricalCdf,
    a: float,
    b: float,
) -> ConfidenceInterval:
    """Two-sided interval [T - u_b, T - u_a] from the statistic's ECDF.

    t_value is the raw (pre-debias) statistic on the query's counters;
    statistic_cdf is the distribution of the statistic on error-only
    counters (column pre-processing or bootstrap resampling).  Nominal
    level is b - a; the achieved mass G(u_b) - G_strict(u_a) can exceed it
    on discrete data.
    """
    if not 0 <= a < b <= 1:
        raise ValueError("need 0 <= a < b <= 1")
    u_a = float(statistic_cdf.quantile(a))
    u_b = float(statistic_cdf.quantile(b))
    achieved = float(statistic_cdf.cdf(u_b) - statistic_cdf.strict_cdf(u_a))
    raw_lo = t_value - u_b
    return ConfidenceInterval(
        lo=max(0.0, raw_lo),
        hi=max(0.0, t_value - u_a),
        level=b - a,
        kind=KIND_BOOTSTRAP,
        achieved=achieved,
        untruncated_lo=raw_lo,
    )


def order_statistic_ci(
    t_value: float,
    error_cdf: EmpiricalCdf,
    i: int,
    r: int,
    level: float,
    one_sided: bool = False,
) -> ConfidenceInterval:
    """Exact interval for an i-th order-statistic estimator.

    Maps a Beta(i, r-i+1) interval for the uniform order statistic through
    the empirical error quantile function.  With one_sided=True (only
    meaningful for i=1, the Min) the error bound is [0, F^-1(Beta^-1(level))]
    and the upper endpoint equals the Min estimate itself.
    """
    if not 1 <= i <= r:
        raise ValueError(f"order index {i} outside 1..{r}")
    if one_sided:
        if i != 1:
            raise ValueError("one-sided interval is defined for the Min (i=1)")
        b_q = beta_inv_cdf(level, 1, r)
        u_hi = float(error_cdf.quantile(b_q))
        return ConfidenceInterval(
            lo=max(0.0, t_value - u_hi),
            hi=t_value,
            level=level,
            kind=KIND_ORDER_ONE_SIDED,
            untruncated_lo=t_value - u_hi,
        )
    tail = (1.0 - level) / 2.0
    a_q = beta_inv_cdf(tail, i, r - i + 1)
    b_q = beta_inv_cdf(1.0 - tail, i, r - i + 1)
    u_lo = float(error_cdf.quantile(a_q))
    u_hi = float(error_cdf.quantile(b_q))
    raw_lo = t_value - u_hi
    return ConfidenceInterval(
        lo=max(0.0, raw_lo),
        hi=max(0.0, t_value - u_lo),
        level=level,
        kind=KIND_ORDER_TWO_SIDED,
        untruncated_lo=raw_lo,
    )


def markov_width(total_count: int, width: int, r: int, alpha: float) -> float:
    """Markov-inequality interval width: n_tot * alpha^(-1/r) / k."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must be in (0, 1)")
    return total_count * alpha ** (-1.0 / r) / width


def markov_optimized_width(total_count: int, budget: int, alpha: float) -> float:
    """Width when (r, k) are chosen optimally at budget B: -log(alpha) n_tot/B."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must be in (0, 1)")
    return -math.log(alpha) * total_count / budget


def markov_ci(
    min_value: float, total_count: int, width: int, r: int, alpha: float
) -> ConfidenceInterval:
    """The baseline interval (Min - n_tot alpha^(-1/r)/k, Min]."""
    w = markov_width(total_count, width, r, alpha)
    return ConfidenceInterval(
        lo=max(0.0, min_value - w),
        hi=min_value,
        level=1.0 - alpha,
        kind=KIND_MARKOV,
        untruncated_lo=min_value - w,
    )


@dataclass(frozen=True)
class WidthRatioReport:
    """Markov-to-bootstrap width ratios over a query set."""

    ratios: np.ndarray
    median: float
    q1: float
    q3: float
    n_capped: int

    def rows(self):
        yield ("median", self.median)
        yield ("q1", self.q1)
        yield ("q3", self.q3)
        yield ("n_capped", float(self.n_capped))


def width_ratio_report(
    markov_intervals: Sequence[ConfidenceInterval],
    bootstrap_intervals: Sequence[ConfidenceInterval],
) -> WidthRatioReport:
    """Per-item markov/bootstrap width ratios with quartile summary.

    Zero-width bootstrap intervals make the ratio infinite; those are
    reported via the capped sentinel and counted.
    """
    if len(markov_intervals) != len(bootstrap_intervals):
        raise ValueError("interval lists must align")
    ratios = []
    n_capped = 0
    for m, b in zip(markov_intervals, bootstrap_intervals):
        if b.width <= 0:
            if m.width <= 0:
                ratios.append(1.0)
            else:
                ratios.append(RATIO_CAP)
                n_capped += 1
        else:
            ratios.append(m.width / b.width)
    arr = np.array(ratios)
    if arr.size == 0:
        return WidthRatioReport(
            ratios=arr, median=RATIO_CAP, q1=RATIO_CAP, q3=RATIO_CAP, n_capped=0
        )
    q1, med, q3 = np.percentile(arr, [25, 50, 75])
    return WidthRatioReport(
        ratios=arr, median=float(med), q1=float(q1), q3=float(q3), n_capped=n_capped
    )
