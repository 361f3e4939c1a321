"""Empirical error distributions read off the sketch counters.

For a single-item query, only the r counters the item hashes to carry its
count; the remaining r(k-1) counters are exchangeable draws from the
collision-error distribution.  That large sample is summarized here as an
ErrorSample / EmpiricalCdf and feeds debiasing, confidence intervals, and
density fitting.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import special

from .sketch import CountPlusSketch, IndexSet


@dataclass(frozen=True)
class EmpiricalCdf:
    """Weighted step CDF: right-continuous, terminal value 1.

    support: unique sorted values.
    cum: cumulative probabilities, cum[-1] == 1.
    """

    support: np.ndarray
    cum: np.ndarray

    def __post_init__(self):
        if len(self.support) == 0:
            raise ValueError("empty distribution")
        if np.any(np.diff(self.support) <= 0):
            raise ValueError("support must be strictly increasing")
        if np.any(np.diff(self.cum) < -1e-15) or abs(self.cum[-1] - 1.0) > 1e-9:
            raise ValueError("cumulative probabilities must be nondecreasing to 1")

    @classmethod
    def from_values(cls, values: np.ndarray) -> "EmpiricalCdf":
        values = np.asarray(values, dtype=np.float64)
        if values.size == 0:
            raise ValueError("empty sample")
        support, counts = np.unique(values, return_counts=True)
        cum = np.cumsum(counts) / values.size
        cum[-1] = 1.0
        return cls(support=support, cum=cum)

    @property
    def pmf(self) -> np.ndarray:
        return np.diff(self.cum, prepend=0.0)

    def cdf(self, x) -> np.ndarray:
        """P(Z <= x)."""
        idx = np.searchsorted(self.support, np.asarray(x, dtype=np.float64), "right")
        padded = np.concatenate([[0.0], self.cum])
        return padded[idx]

    def strict_cdf(self, x) -> np.ndarray:
        """P(Z < x) — the strict variant used in coverage accounting."""
        idx = np.searchsorted(self.support, np.asarray(x, dtype=np.float64), "left")
        padded = np.concatenate([[0.0], self.cum])
        return padded[idx]

    def quantile(self, q) -> np.ndarray:
        """Generalized inverse inf{x : F(x) >= q}; q=0 gives the smallest value."""
        q = np.asarray(q, dtype=np.float64)
        if np.any(q < 0) or np.any(q > 1):
            raise ValueError("quantile level must be in [0, 1]")
        idx = np.searchsorted(self.cum, np.maximum(q, 1e-300), "left")
        idx = np.minimum(idx, len(self.support) - 1)
        return self.support[idx]

    def mean(self) -> float:
        return float(np.sum(self.support * self.pmf))

    def sup_distance(self, other: "EmpiricalCdf") -> float:
        """Kolmogorov distance between two step CDFs (exact)."""
        grid = np.union1d(self.support, other.support)
        d_right = np.max(np.abs(self.cdf(grid) - other.cdf(grid)))
        d_left = np.max(np.abs(self.strict_cdf(grid) - other.strict_cdf(grid)))
        return float(max(d_right, d_left))

    def to_csv_rows(self):
        for v, c in zip(self.support, self.cum):
            yield float(v), float(c)


@dataclass(frozen=True)
class ErrorSample:
    """Sorted counter values serving as error draws.

    excluded counters (a query's own) are omitted from `values`.
    trim_fraction is recorded here but applied only by consumers that ask
    for the trimmed view (density fitting); quantile queries always use the
    full sample.
    """

    values: np.ndarray
    excluded: Optional[IndexSet] = None
    trim_fraction: float = 0.01
    source_epoch: int = 0

    def __post_init__(self):
        values = np.sort(np.asarray(self.values, dtype=np.float64))
        object.__setattr__(self, "values", values)
        if values.size == 0:
            raise ValueError("error sample is empty (exclusion covered all counters)")
        if np.any(values < 0):
            raise ValueError("error values must be non-negative")
        if not 0 <= self.trim_fraction < 0.5:
            raise ValueError("trim_fraction must be in [0, 0.5)")

    def __len__(self) -> int:
        return int(self.values.size)

    def trimmed_values(self, trim_fraction: Optional[float] = None) -> np.ndarray:
        """Drop the largest floor(trim * n) values (density-fitting view)."""
        frac = self.trim_fraction if trim_fraction is None else trim_fraction
        if not 0 <= frac < 0.5:
            raise ValueError("trim_fraction must be in [0, 0.5)")
        n_drop = int(frac * self.values.size)
        return self.values[: self.values.size - n_drop]

    def ecdf(self) -> EmpiricalCdf:
        return EmpiricalCdf.from_values(self.values)

    def quantile(self, q):
        return self.ecdf().quantile(q)

    def zero_fraction(self) -> float:
        return float(np.mean(self.values == 0))


def error_sample(
    sketch: CountPlusSketch,
    exclude: Optional[IndexSet] = None,
    trim_fraction: float = 0.01,
) -> ErrorSample:
    """Collect counter values as error draws, minus any excluded positions."""
    flat = sketch.counters.astype(np.float64).ravel()
    if exclude is not None and len(exclude) > 0:
        mask = np.ones(flat.size, dtype=bool)
        mask[exclude.flat(sketch.config.width)] = False
        flat = flat[mask]
    if flat.size == 0:
        raise ValueError("exclusion covers every counter")
    return ErrorSample(
        values=flat,
        excluded=exclude,
        trim_fraction=trim_fraction,
        source_epoch=sketch.epoch,
    )


def column_statistic_distribution(
    sketch: CountPlusSketch, statistic: Callable[[np.ndarray], float]
) -> tuple[EmpiricalCdf, float]:
    """Distribution of the statistic applied column-by-column.

    Column i holds one counter per replicate — r independent draws from the
    error law — so T(column) has the same law as T applied to a query's
    counters for a zero-count item.  Returns the ECDF of the k column
    statistics and its mean (the debiasing term).
    """
    cols = sketch.counters.astype(np.float64)  # shape (r, k)
    stat = getattr(statistic, "apply_columns", None)
    if stat is not None:
        z = stat(cols)
    else:
        z = np.array([statistic(cols[:, i]) for i in range(cols.shape[1])])
    cdf = EmpiricalCdf.from_values(z)
    return cdf, float(np.mean(z))


def bootstrap_statistic_distribution(
    errors: ErrorSample,
    statistic: Callable[[np.ndarray], float],
    r: int,
    n_resamples: int = 1000,
    rng=None,
) -> EmpiricalCdf:
    """ECDF of T over n_resamples r-vectors drawn i.i.d. from the errors.

    Deterministic given an explicit rng / seed.
    """
    if n_resamples < 1:
        raise ValueError("need at least one resample")
    rng = np.random.default_rng(rng)
    draws = rng.choice(errors.values, size=(n_resamples, r), replace=True)
    rowwise = getattr(statistic, "apply_rows", None)
    if rowwise is not None:
        stats = rowwise(draws)
    else:
        stats = np.array([statistic(draws[b]) for b in range(n_resamples)])
    return EmpiricalCdf.from_values(stats)


def order_statistic_mean(cdf: EmpiricalCdf, i: int, r: int) -> float:
    """Exact E[Y_(i)] for the i-th smallest of r i.i.d. draws from `cdf`.

    Uses P(Y_(i) <= t) = I_{F(t)}(i, r-i+1) (the Beta–uniform order
    statistic identity), so no Monte Carlo is involved.
    """
    if not 1 <= i <= r:
        raise ValueError(f"order index {i} outside 1..{r}")
    cdf_at = special.betainc(i, r - i + 1, cdf.cum)
    pmf = np.diff(cdf_at, prepend=0.0)
    pmf[-1] += max(0.0, 1.0 - float(np.sum(pmf)))
    return float(np.sum(cdf.support * pmf))


def should_refresh(
    current: ErrorSample, sketch: CountPlusSketch, delta: float
) -> bool:
    """True when the live error ECDF drifted >= delta in sup norm.

    Under multiplicative stream growth this triggers O(log n) times, which
    keeps the amortized cost of keeping the error distribution current
    negligible.
    """
    if delta <= 0:
        raise ValueError("delta must be positive")
    live = error_sample(sketch, exclude=current.excluded,
                        trim_fraction=current.trim_fraction)
    return current.ecdf().sup_distance(live.ecdf()) >= delta
