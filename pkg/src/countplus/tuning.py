"""Sketch parameter selection from a single shallow summary.

Per-counter collision errors are asymptotically compound Poisson with rate
d/k, and raising the rate by a factor r is the same as convolving the pmf
with itself r times.  So one 1 x B summary pins down the error law for
*every* depth/width split of the same budget: grid the empirical pmf,
exponentiate in the frequency domain, and read one-sided Min interval
widths off the convolved quantiles.  The depth minimizing the width at a
requested confidence level is the tuned setting.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .intervals import beta_inv_cdf
from .sketch import CountPlusSketch


@dataclass(frozen=True)
class GriddedDistribution:
    """A pmf on the integer grid [0, len(pmf)-1] plus explicit tail mass."""

    pmf: np.ndarray
    tail_mass: float = 0.0
    overflowed: bool = False

    def __post_init__(self):
        pmf = np.asarray(self.pmf, dtype=np.float64)
        object.__setattr__(self, "pmf", pmf)
        if pmf.ndim != 1 or pmf.size == 0:
            raise ValueError("pmf must be a non-empty vector")
        if np.any(pmf < -1e-12):
            raise ValueError("pmf must be non-negative")
        total = float(pmf.sum() + self.tail_mass)
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"pmf + tail must sum to 1, got {total}")

    @property
    def grid_max(self) -> int:
        return self.pmf.size - 1

    def cdf(self) -> np.ndarray:
        return np.cumsum(self.pmf)

    def quantile(self, q: float) -> float:
        """Smallest grid value with CDF >= q; +inf if q falls in the tail."""
        if not 0 <= q <= 1:
            raise ValueError("q must be in [0, 1]")
        cum = self.cdf()
        idx = np.searchsorted(cum, q - 1e-12, side="left")
        if idx >= self.pmf.size:
            return float("inf")
        return float(idx)

    def mean(self) -> float:
        return float(np.dot(np.arange(self.pmf.size), self.pmf))

    def total_variation(self, other: "GriddedDistribution") -> float:
        n = max(self.pmf.size, other.pmf.size)
        a = np.zeros(n)
        b = np.zeros(n)
        a[: self.pmf.size] = self.pmf
        b[: other.pmf.size] = other.pmf
        return 0.5 * (np.abs(a - b).sum() + abs(self.tail_mass - other.tail_mass))


def convolve_power(
    f: GriddedDistribution, r: int, grid_max: int | None = None
) -> GriddedDistribution:
    """r-fold self-convolution via frequency-domain exponentiation.

    Zero-pads past r * grid_max so the circular transform equals the linear
    convolution, then truncates to the requested output grid; anything cut
    off lands in tail_mass with the overflow flag set.
    """
    if r < 1:
        raise ValueError("r must be >= 1")
    if grid_max is None:
        grid_max = f.grid_max
    if r == 1 and grid_max == f.grid_max:
        return f
    in_mass = float(f.pmf.sum())
    full_len = r * f.grid_max + 1
    n_fft = 1
    while n_fft < full_len:
        n_fft *= 2
    spectrum = np.fft.rfft(f.pmf, n_fft)
    conv = np.fft.irfft(spectrum**r, n_fft)[:full_len]
    conv = np.clip(conv, 0.0, None)
    # mass that never was on the grid stays in the tail: 1 - (1 - tail)^r
    tail = 1.0 - in_mass**r
    out_len = grid_max + 1
    overflow = conv[out_len:].sum() if full_len > out_len else 0.0
    out = conv[:out_len].copy()
    tail += float(overflow)
    # roundoff cleanup: force exact normalization onto the grid
    scale = (1.0 - tail) / out.sum() if out.sum() > 0 else 1.0
    out *= scale
    return GriddedDistribution(
        pmf=out, tail_mass=tail, overflowed=bool(overflow > 0)
    )


def compound_poisson_pmf(
    rate: float, severity: GriddedDistribution, grid_max: int
) -> GriddedDistribution:
    """Gridded Compound-Poisson(rate, severity) via exp(rate * (g_hat - 1)).

    severity is the per-item count pmf; the result is the law of the sum of
    Poisson(rate)-many draws.
    """
    if rate < 0:
        raise ValueError("rate must be non-negative")
    full_len = grid_max + 1
    n_fft = 1
    while n_fft < 2 * full_len:
        n_fft *= 2
    g = np.zeros(n_fft)
    g[: min(severity.pmf.size, full_len)] = severity.pmf[:full_len]
    spectrum = np.fft.rfft(g, n_fft)
    pmf = np.fft.irfft(np.exp(rate * (spectrum - 1.0)), n_fft)[:full_len]
    pmf = np.clip(pmf, 0.0, None)
    tail = max(0.0, 1.0 - pmf.sum())
    return GriddedDistribution(pmf=pmf / max(pmf.sum() + tail, 1e-300), tail_mass=tail)


def empirical_error_pmf(
    sketch: CountPlusSketch, grid_max: int
) -> GriddedDistribution:
    """Histogram of a 1 x B summary's counters, normalized to a pmf.

    With depth 1 every counter is one draw from the error law at rate
    d/B, the starting point for extrapolating to deeper sketches.
    """
    if sketch.config.depth != 1:
        raise ValueError("error pmf extrapolation starts from a depth-1 summary")
    counters = sketch.counters.ravel().astype(np.int64)
    b = counters.size
    inside = counters[counters <= grid_max]
    pmf = np.bincount(inside, minlength=grid_max + 1).astype(np.float64) / b
    tail = float((counters > grid_max).sum()) / b
    return GriddedDistribution(pmf=pmf, tail_mass=tail)


@dataclass(frozen=True)
class TuningCurve:
    """One-sided Min interval width per candidate depth and level."""

    budget: int
    depths: tuple[int, ...]
    levels: tuple[float, ...]
    widths: np.ndarray  # shape (len(levels), len(depths))
    best_depth: dict = field(default_factory=dict)

    def width_at(self, level: float, depth: int) -> float:
        i = self.levels.index(level)
        j = self.depths.index(depth)
        return float(self.widths[i, j])

    def rows(self):
        for i, level in enumerate(self.levels):
            for j, depth in enumerate(self.depths):
                yield level, depth, float(self.widths[i, j]), depth == self.best_depth[level]


def width_curve(
    base_pmf: GriddedDistribution,
    budget: int,
    levels: Sequence[float],
    depths: Sequence[int],
    grid_max: int | None = None,
) -> TuningCurve:
    """Predict interval width for each depth at fixed budget.

    base_pmf is the error pmf of the 1 x budget summary (rate d/B).  At
    depth r the width shrinks to k = B/r, which scales the rate to d*r/B:
    exactly the r-fold convolution of the base pmf.  The width at level l
    is that distribution's quantile at Beta^-1(l; 1, r); ties in the argmin
    break toward the smaller depth.
    """
    depths = tuple(int(r) for r in depths)
    levels = tuple(float(l) for l in levels)
    if any(r < 1 for r in depths):
        raise ValueError("depths must be >= 1")
    if any(budget // r < 1 for r in depths):
        raise ValueError("budget too small for requested depth")
    widths = np.zeros((len(levels), len(depths)))
    for j, r in enumerate(depths):
        dist_r = convolve_power(base_pmf, r, grid_max=grid_max)
        for i, level in enumerate(levels):
            b = beta_inv_cdf(level, 1, r)
            widths[i, j] = dist_r.quantile(b)
    best = {}
    for i, level in enumerate(levels):
        best[level] = depths[int(np.argmin(widths[i]))]
    return TuningCurve(
        budget=budget,
        depths=depths,
        levels=levels,
        widths=widths,
        best_depth=best,
    )
