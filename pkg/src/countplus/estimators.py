"""Point estimators for sketch count queries.

Every estimator here is built from a base statistic T over the r counters an
item hashes to.  T must satisfy the translation property
T(v + c) = T(v) + c, which is what lets the collision bias be estimated from
error-only counters and subtracted off.  The family covers the classic Min,
quantiles and trimmed means, the shifted-likelihood MLE under a fitted
error density, a Bayes estimator on the integer grid, and the
full-universe counter-braids fixed-point decoder.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .empirical import (
    EmpiricalCdf,
    ErrorSample,
    bootstrap_statistic_distribution,
    column_statistic_distribution,
    error_sample,
)
from .intervals import ConfidenceInterval, KIND_ORDER_ONE_SIDED, beta_inv_cdf
from .logconcave import LogConcaveDensity
from .sketch import CountPlusSketch, IndexSet


class Statistic:
    """A named function over an r-vector of counters.

    All members satisfy T(v + c) = T(v) + c exactly, except the MLE
    statistic whose translation behaviour rides on the shift equivariance
    of the density fit (and its clamp at zero).  None of them truncate
    internally; truncation happens once, on the final estimate.
    """

    def __init__(self, name: str, fn: Callable[[np.ndarray], float],
                 rowwise: Optional[Callable[[np.ndarray], np.ndarray]] = None,
                 order_index: Optional[Callable[[int], int]] = None):
        self.name = name
        self._fn = fn
        self._rowwise = rowwise
        # for pure order statistics: i as a function of r (1-based)
        self.order_index = order_index

    def __call__(self, values: np.ndarray) -> float:
        return float(self._fn(np.asarray(values, dtype=np.float64)))

    def apply_rows(self, matrix: np.ndarray) -> np.ndarray:
        """Apply along axis 1 of a (n, r) matrix."""
        matrix = np.asarray(matrix, dtype=np.float64)
        if self._rowwise is not None:
            return self._rowwise(matrix)
        return np.array([self._fn(row) for row in matrix])

    def apply_columns(self, matrix: np.ndarray) -> np.ndarray:
        """Apply down each column of an (r, k) counter matrix."""
        return self.apply_rows(np.asarray(matrix, dtype=np.float64).T)

    def __repr__(self):
        return f"Statistic({self.name})"


def _order_stat_rowwise(i_of_r):
    def apply(matrix):
        r = matrix.shape[1]
        i = i_of_r(r)
        return np.partition(matrix, i - 1, axis=1)[:, i - 1]
    return apply


def min_statistic() -> Statistic:
    return Statistic("min", np.min, rowwise=lambda m: m.min(axis=1),
                     order_index=lambda r: 1)


def max_statistic() -> Statistic:
    return Statistic("max", np.max, rowwise=lambda m: m.max(axis=1),
                     order_index=lambda r: r)


def mean_statistic() -> Statistic:
    return Statistic("mean", np.mean, rowwise=lambda m: m.mean(axis=1))


def quantile_statistic(p: float) -> Statistic:
    """Lower order statistic at level p: the ceil(p*r)-th smallest counter.

    No interpolation, so the Beta order-statistic interval theory applies
    exactly to it.
    """
    if not 0 < p <= 1:
        raise ValueError("p must be in (0, 1]")

    def i_of_r(r: int) -> int:
        return max(1, math.ceil(p * r))

    def fn(v):
        v = np.sort(v)
        return v[i_of_r(v.size) - 1]

    return Statistic(f"quantile({p})", fn,
                     rowwise=_order_stat_rowwise(i_of_r), order_index=i_of_r)


def median_statistic() -> Statistic:
    stat = quantile_statistic(0.5)
    stat.name = "median"
    return stat


def trimmed_mean_statistic(alpha: float = 0.25) -> Statistic:
    """Mean after dropping the ceil(alpha*r) largest counters."""
    if not 0 <= alpha < 1:
        raise ValueError("alpha must be in [0, 1)")

    def keep_of_r(r: int) -> int:
        return max(1, r - math.ceil(alpha * r))

    def fn(v):
        v = np.sort(v)
        return float(np.mean(v[: keep_of_r(v.size)]))

    def rowwise(m):
        keep = keep_of_r(m.shape[1])
        return np.sort(m, axis=1)[:, :keep].mean(axis=1)

    return Statistic(f"trimmed_mean({alpha})", fn, rowwise=rowwise)


def mle_statistic(density: LogConcaveDensity) -> Statistic:
    def fn(v):
        return _mle_shift(np.asarray(v, dtype=np.float64), density)

    return Statistic("mle", fn)


def _mle_shift(values: np.ndarray, density: LogConcaveDensity) -> float:
    """arg max over theta in [0, min(values)] of sum log f(values - theta).

    The objective is concave piecewise-linear in theta (concave spline
    composed with a shift, summed), so the maximum sits at a breakpoint;
    on flat stretches the largest maximizer is returned, which also makes
    the estimator collapse to the Min exactly for decreasing densities.
    """
    upper = float(np.min(values))
    if upper <= 0.0:
        return 0.0
    if density.is_decreasing():
        return upper
    bps = (values[:, None] - density.knots[None, :]).ravel()
    bps = bps[(bps > 0.0) & (bps < upper)]
    grid = np.unique(np.concatenate([[0.0, upper], bps]))
    resid = values[None, :] - grid[:, None]
    objective = density.log_density(resid).sum(axis=1)
    best = float(np.max(objective))
    tol = 1e-9 * (1.0 + abs(best))
    return float(grid[np.nonzero(objective >= best - tol)[0][-1]])


@dataclass(frozen=True)
class Estimate:
    """A count estimate: truncated value plus the raw statistic behind it."""

    value: float
    raw: float
    statistic: str
    truncated: bool

    @classmethod
    def from_raw(cls, raw: float, statistic: str) -> "Estimate":
        return cls(
            value=max(0.0, raw),
            raw=raw,
            statistic=statistic,
            truncated=raw < 0.0,
        )


@dataclass(frozen=True)
class EstimateWithInterval:
    estimate: Estimate
    interval: ConfidenceInterval


@dataclass(frozen=True)
class DebiasPreprocess:
    """Shared, query-independent debiasing state for one statistic.

    mu is the estimated E T(error counters); cdf is the distribution of the
    statistic on error-only counters, reused for bootstrap intervals.
    """

    statistic_name: str
    mu: float
    cdf: EmpiricalCdf


def preprocess_columns(
    statistic: Statistic, sketch: CountPlusSketch
) -> DebiasPreprocess:
    """Column-statistic pre-processing: Z_i = T(column i), over all columns."""
    cdf, mu = column_statistic_distribution(sketch, statistic)
    return DebiasPreprocess(statistic_name=statistic.name, mu=mu, cdf=cdf)


def preprocess_bootstrap(
    statistic: Statistic,
    errors: ErrorSample,
    r: int,
    n_resamples: int = 1000,
    rng=None,
) -> DebiasPreprocess:
    """Bootstrap pre-processing: T over r-vectors resampled from the errors."""
    cdf = bootstrap_statistic_distribution(errors, statistic, r, n_resamples, rng)
    return DebiasPreprocess(statistic_name=statistic.name, mu=cdf.mean(), cdf=cdf)


def raw_statistic(sketch: CountPlusSketch, item, statistic: Statistic) -> float:
    return statistic(sketch.counter_values(sketch.indices(item)))


def min_estimate(sketch: CountPlusSketch, item) -> Estimate:
    """The classic estimator: smallest of the item's r counters."""
    value = float(np.min(sketch.counter_values(sketch.indices(item))))
    return Estimate(value=value, raw=value, statistic="min", truncated=False)


def debias(
    statistic: Statistic,
    sketch: CountPlusSketch,
    item,
    pre: DebiasPreprocess,
) -> Estimate:
    """T(counters) - mu, truncated at zero."""
    raw = raw_statistic(sketch, item, statistic) - pre.mu
    return Estimate.from_raw(raw, f"debiased_{statistic.name}")


def debiased_min(
    sketch: CountPlusSketch,
    item,
    level: float = 0.95,
    errors: Optional[ErrorSample] = None,
) -> EstimateWithInterval:
    """Debiased Min with its one-sided interval.

    Without an error sample the bias is the k-th smallest of all r*k
    counters, read straight off the sketch; with one it is the principled
    order-statistic mean F^-1(1/(r+1)) of the supplied sample.  The upper
    endpoint is the Min estimate itself, which can never undershoot.
    """
    r = sketch.config.depth
    min_val = float(np.min(sketch.counter_values(sketch.indices(item))))
    if errors is None:
        flat = np.sort(sketch.counters.ravel())
        mu = float(flat[sketch.config.width - 1])
        cdf = EmpiricalCdf.from_values(flat)
    else:
        cdf = errors.ecdf()
        mu = float(cdf.quantile(1.0 / (r + 1)))
    b = beta_inv_cdf(level, 1, r)
    u_b = float(cdf.quantile(b))
    est = Estimate.from_raw(min_val - mu, "debiased_min")
    interval = ConfidenceInterval(
        lo=max(0.0, min_val - u_b),
        hi=min_val,
        level=level,
        kind=KIND_ORDER_ONE_SIDED,
        untruncated_lo=min_val - u_b,
    )
    return EstimateWithInterval(estimate=est, interval=interval)


def mle_estimate(
    sketch: CountPlusSketch, item, density: LogConcaveDensity
) -> Estimate:
    """Shifted-likelihood estimate under the fitted error density.

    For a decreasing density this is exactly the Min estimate; otherwise
    the breakpoint search solves the 1-D concave problem exactly.
    """
    values = sketch.counter_values(sketch.indices(item)).astype(np.float64)
    theta = _mle_shift(values, density)
    return Estimate(value=theta, raw=theta, statistic="mle", truncated=False)


def debiased_mle(
    sketch: CountPlusSketch,
    item,
    density: LogConcaveDensity,
    pre: Optional[DebiasPreprocess] = None,
    errors: Optional[ErrorSample] = None,
    n_resamples: int = 1000,
    rng=None,
) -> Estimate:
    """MLE minus its bootstrapped bias.

    The bias mu is the mean of the MLE statistic over r-vectors resampled
    from the error counters; pass a shared pre-processing object when
    querying many items so it is computed once.
    """
    if pre is None:
        if errors is None:
            errors = error_sample(sketch)
        pre = preprocess_bootstrap(
            mle_statistic(density), errors, sketch.config.depth, n_resamples, rng
        )
    values = sketch.counter_values(sketch.indices(item)).astype(np.float64)
    raw = _mle_shift(values, density) - pre.mu
    return Estimate.from_raw(raw, "debiased_mle")


# -- Bayes ----------------------------------------------------------------

LOSS_SQUARED = "squared"
LOSS_ABSOLUTE = "absolute"
LOSS_ZERO_ONE = "zero-one"


def bayes_estimate(
    sketch: CountPlusSketch,
    item,
    density: LogConcaveDensity,
    prior: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    loss: str = LOSS_SQUARED,
) -> Estimate:
    """Posterior summary on the integer grid [0, min counter].

    posterior(n) ~ prior(n) * prod_i f(V_i - n), with f the fitted density
    (its zero atom, when present, scores exact-zero residuals).  Squared
    loss gives the posterior mean, absolute the median, zero-one the mode.
    The default prior is improper uniform on the grid.
    """
    values = sketch.counter_values(sketch.indices(item)).astype(np.float64)
    return bayes_estimate_from_values(values, density, prior, loss)


def bayes_estimate_from_values(
    values: np.ndarray,
    density: LogConcaveDensity,
    prior: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    loss: str = LOSS_SQUARED,
) -> Estimate:
    values = np.asarray(values, dtype=np.float64)
    upper = int(np.min(values))
    grid = np.arange(upper + 1, dtype=np.float64)
    resid = values[None, :] - grid[:, None]
    lik = density.likelihood_with_atom(resid)
    with np.errstate(divide="ignore"):
        log_post = np.log(lik).sum(axis=1)
    if prior is not None:
        prior_mass = np.asarray(prior(grid), dtype=np.float64)
        if np.any(prior_mass < 0):
            raise ValueError("prior must be non-negative")
        with np.errstate(divide="ignore"):
            log_post = log_post + np.log(prior_mass)
    finite = np.isfinite(log_post)
    if not np.any(finite):
        fallback = float(np.min(values))
        return Estimate(value=fallback, raw=fallback,
                        statistic="bayes_degenerate", truncated=False)
    log_post = log_post - np.max(log_post[finite])
    post = np.where(finite, np.exp(log_post), 0.0)
    total = post.sum()
    if total <= 0 or not np.isfinite(total):
        fallback = float(np.min(values))
        return Estimate(value=fallback, raw=fallback,
                        statistic="bayes_degenerate", truncated=False)
    post = post / total
    if loss == LOSS_SQUARED:
        value = float(np.sum(grid * post))
    elif loss == LOSS_ABSOLUTE:
        value = float(grid[np.searchsorted(np.cumsum(post), 0.5)])
    elif loss == LOSS_ZERO_ONE:
        best = post.max()
        value = float(grid[np.nonzero(post >= best * (1 - 1e-12))[0][-1]])
    else:
        raise ValueError(f"unknown loss {loss!r}")
    return Estimate(value=value, raw=value, statistic=f"bayes_{loss}",
                    truncated=False)


def point_mass_prior(m: int) -> Callable[[np.ndarray], np.ndarray]:
    def prior(grid: np.ndarray) -> np.ndarray:
        return (grid == m).astype(np.float64)

    return prior


# -- counter braids --------------------------------------------------------


@dataclass
class CounterBraidsResult:
    items: list
    lower: np.ndarray
    upper: np.ndarray
    iterations: int
    converged: bool
    consistent: bool

    def exact(self) -> bool:
        return bool(np.all(self.lower == self.upper))


def counter_braids(
    sketch: CountPlusSketch,
    universe: Sequence,
    max_iters: int = 100,
) -> CounterBraidsResult:
    """Joint decode of every count when the whole item universe is known.

    Alternates deterministic upper/lower bounds: an item's upper bound is
    the slack its counters leave after everyone else's lower bounds, and
    vice versa.  The truth is sandwiched at every iteration; on sparse
    instances the bounds typically meet and the counts are exact.
    """
    items = list(universe)
    d = len(items)
    r, k = sketch.config.depth, sketch.config.width
    flat_idx = np.empty((d, r), dtype=np.int64)
    for j, item in enumerate(items):
        flat_idx[j] = sketch.indices(item).flat(k)
    v_flat = sketch.counters.astype(np.float64).ravel()
    n_counters = r * k

    lower = np.zeros(d)
    upper = np.full(d, np.inf)
    iterations = 0
    converged = False
    for iterations in range(1, max_iters + 1):
        sum_lower = np.bincount(
            flat_idx.ravel(), weights=np.repeat(lower, r), minlength=n_counters
        )
        new_upper = lower + np.min(v_flat[flat_idx] - sum_lower[flat_idx], axis=1)
        new_upper = np.minimum(upper, new_upper)
        sum_upper = np.bincount(
            flat_idx.ravel(), weights=np.repeat(new_upper, r), minlength=n_counters
        )
        new_lower = new_upper + np.max(v_flat[flat_idx] - sum_upper[flat_idx], axis=1)
        new_lower = np.maximum(0.0, np.maximum(lower, new_lower))
        if np.array_equal(new_upper, upper) and np.array_equal(new_lower, lower):
            converged = True
            break
        upper, lower = new_upper, new_lower
    consistent = bool(
        np.sum(lower) <= sketch.total_count + 1e-9
        and np.sum(upper) >= sketch.total_count - 1e-9
    )
    return CounterBraidsResult(
        items=items,
        lower=lower,
        upper=upper,
        iterations=iterations,
        converged=converged,
        consistent=consistent,
    )


def translation_check(
    statistic: Statistic, r: int = 4, trials: int = 50, rng=None,
    tol: float = 1e-9,
) -> bool:
    """Verify T(v + c) = T(v) + c on random vectors and shifts."""
    rng = np.random.default_rng(rng)
    for _ in range(trials):
        v = rng.uniform(0, 100, size=r)
        c = float(rng.uniform(-50, 50))
        if abs(statistic(v + c) - (statistic(v) + c)) > tol * (1 + abs(statistic(v))):
            return False
    return True
