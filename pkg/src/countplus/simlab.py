"""Synthetic streams, accuracy metrics, and reproducible evaluation runs.

A scenario draws i.i.d. counts for a universe of d items from a chosen
family, sketches the stream, queries the top-m heavy hitters with every
requested estimator, and scores point accuracy (RMSE, signed error,
relative efficiency) plus interval coverage.  Everything is seeded, so a
config maps to byte-identical reports.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from . import estimators as est
from . import intervals as ci
from . import logconcave
from .empirical import ErrorSample, error_sample
from .sketch import CountPlusSketch, SketchConfig


# -- count distributions ----------------------------------------------------


@dataclass(frozen=True)
class CountDistribution:
    """Family of per-item count laws used by the generators."""

    family: str
    params: tuple

    @classmethod
    def zipf_mandelbrot(cls, alpha: float, offset: float = 0.0):
        if alpha <= 1.0:
            raise ValueError("alpha must exceed 1 for a normalizable tail")
        if offset < 0:
            raise ValueError("offset must be non-negative")
        return cls("zipf_mandelbrot", (alpha, offset))

    @classmethod
    def negative_binomial(cls, size: float, p: float):
        if not 0 < p < 1:
            raise ValueError("p must be in (0, 1)")
        if size <= 0:
            raise ValueError("size must be positive")
        return cls("negative_binomial", (size, p))

    @classmethod
    def point(cls, c: int):
        if c < 0:
            raise ValueError("count must be non-negative")
        return cls("point", (c,))

    @classmethod
    def truncated_normal(cls, offset: float, sigma: float):
        if sigma <= 0:
            raise ValueError("sigma must be positive")
        return cls("truncated_normal", (offset, sigma))

    def sample(self, d: int, rng: np.random.Generator) -> np.ndarray:
        if self.family == "zipf_mandelbrot":
            alpha, offset = self.params
            support = np.arange(1, d + 1, dtype=np.float64)
            weights = (offset + support) ** (-alpha)
            cum = np.cumsum(weights / weights.sum())
            u = rng.random(d)
            return np.searchsorted(cum, u, side="left") + 1
        if self.family == "negative_binomial":
            size, p = self.params
            return rng.negative_binomial(size, p, size=d)
        if self.family == "point":
            return np.full(d, self.params[0], dtype=np.int64)
        if self.family == "truncated_normal":
            offset, sigma = self.params
            out = np.empty(d)
            todo = np.arange(d)
            while todo.size:
                draw = rng.normal(offset, sigma, size=todo.size)
                ok = draw >= 0
                out[todo[ok]] = draw[ok]
                todo = todo[~ok]
            return np.rint(out).astype(np.int64)
        raise ValueError(f"unknown family {self.family!r}")

    def finite_universe_mean(self, d: int) -> float:
        """Analytic mean under the d-point normalization (Zipf family)."""
        if self.family != "zipf_mandelbrot":
            raise ValueError("analytic mean implemented for the Zipf family")
        alpha, offset = self.params
        support = np.arange(1, d + 1, dtype=np.float64)
        weights = (offset + support) ** (-alpha)
        return float(np.sum(support * weights) / np.sum(weights))


def generate(dist: CountDistribution, d: int, seed: int) -> list[tuple[str, int]]:
    """d items with i.i.d. counts from dist; deterministic per seed."""
    if d < 1:
        raise ValueError("universe size must be >= 1")
    rng = np.random.default_rng(seed)
    counts = dist.sample(d, rng)
    return [(f"item{i:07d}", int(c)) for i, c in enumerate(counts)]


# -- metrics ----------------------------------------------------------------


def relative_efficiency(errors_1: np.ndarray, errors_2: np.ndarray) -> float:
    """Mean-squared-error ratio of estimator 2 over estimator 1 (>1 favors 1)."""
    errors_1 = np.asarray(errors_1, dtype=np.float64)
    errors_2 = np.asarray(errors_2, dtype=np.float64)
    if errors_1.shape != errors_2.shape:
        raise ValueError("error vectors must align")
    mse1 = float(np.mean(errors_1**2))
    mse2 = float(np.mean(errors_2**2))
    if mse1 == 0.0:
        return 1.0 if mse2 == 0.0 else float("inf")
    return mse2 / mse1


def coverage(intervals: Sequence[ci.ConfidenceInterval], truths: Sequence[float]) -> float:
    """Fraction of closed intervals containing the truth."""
    if len(intervals) != len(truths):
        raise ValueError("intervals and truths must align")
    if not intervals:
        raise ValueError("empty interval list")
    hits = sum(1 for iv, t in zip(intervals, truths) if iv.contains(t))
    return hits / len(intervals)


def rmse(errors: np.ndarray) -> float:
    return float(np.sqrt(np.mean(np.asarray(errors, dtype=np.float64) ** 2)))


# -- scenario driver --------------------------------------------------------

DEFAULT_ESTIMATORS = (
    "min",
    "debiased-min",
    "debiased-mean",
    "debiased-median",
    "mle",
    "debiased-mle",
)


@dataclass
class ScenarioConfig:
    name: str
    distribution: CountDistribution
    d: int
    depth: int
    width: int
    seed: int = 0
    top_m: int = 2000
    levels: tuple[float, ...] = (0.5, 0.9, 0.99)
    estimator_names: tuple[str, ...] = DEFAULT_ESTIMATORS
    trim_fraction: float = 0.01
    n_resamples: int = 1000
    zero_probes: int = 0

    @classmethod
    def from_mapping(cls, kv: dict) -> "ScenarioConfig":
        family = kv.get("distribution", "zipf_mandelbrot")
        if family == "zipf_mandelbrot":
            dist = CountDistribution.zipf_mandelbrot(
                float(kv.get("alpha", 2.0)), float(kv.get("offset", 0.0))
            )
        elif family == "negative_binomial":
            dist = CountDistribution.negative_binomial(
                float(kv.get("size", 30.0)), float(kv.get("p", 0.01))
            )
        elif family == "point":
            dist = CountDistribution.point(int(kv.get("c", 1)))
        elif family == "truncated_normal":
            dist = CountDistribution.truncated_normal(
                float(kv.get("offset", 0.0)), float(kv.get("sigma", 1.0))
            )
        else:
            raise ValueError(f"unknown distribution {family!r}")
        levels = tuple(
            float(x) for x in str(kv.get("levels", "0.5,0.9,0.99")).split(",")
        )
        names = tuple(
            s.strip() for s in str(kv.get("estimators", ",".join(DEFAULT_ESTIMATORS))).split(",")
        )
        return cls(
            name=str(kv.get("name", "scenario")),
            distribution=dist,
            d=int(kv.get("d", 100000)),
            depth=int(kv.get("depth", 4)),
            width=int(kv.get("width", 16384)),
            seed=int(kv.get("seed", 0)),
            top_m=int(kv.get("top_m", 2000)),
            levels=levels,
            estimator_names=names,
            trim_fraction=float(kv.get("trim_fraction", 0.01)),
            n_resamples=int(kv.get("n_resamples", 1000)),
            zero_probes=int(kv.get("zero_probes", 0)),
        )


@dataclass
class EstimatorReport:
    name: str
    rmse: float
    mean_signed_error: float
    coverage: dict
    rel_efficiency: float


@dataclass
class EvalReport:
    scenario: str
    estimator_reports: dict
    reference: str
    wall_time: float
    n_queries: int
    query_rows: list = field(default_factory=list)

    def report_rows(self):
        for name, rep in self.estimator_reports.items():
            base = {
                "scenario": self.scenario,
                "estimator": name,
                "rmse": rep.rmse,
                "mean_signed_error": rep.mean_signed_error,
                "rel_efficiency_vs_ref": rep.rel_efficiency,
            }
            for level, cov in rep.coverage.items():
                base[f"coverage_{level}"] = cov
            yield base


_STAT_BUILDERS = {
    "min": est.min_statistic,
    "mean": est.mean_statistic,
    "median": est.median_statistic,
}


def build_sketch_from_pairs(
    pairs: Iterable[tuple[str, int]], depth: int, width: int, seed: int
) -> CountPlusSketch:
    sketch = CountPlusSketch(SketchConfig.from_master_seed(depth, width, seed))
    for item, count in pairs:
        sketch.update(item, count)
    return sketch


def run_scenario(cfg: ScenarioConfig) -> EvalReport:
    """Build the stream, sketch it, and score every requested estimator."""
    started = time.perf_counter()
    rng = np.random.default_rng(cfg.seed + 1)
    pairs = generate(cfg.distribution, cfg.d, cfg.seed)
    sketch = build_sketch_from_pairs(pairs, cfg.depth, cfg.width, cfg.seed)
    sketch.distinct_hint = cfg.d

    by_count = sorted(pairs, key=lambda p: (-p[1], p[0]))
    queries = [(it, c) for it, c in by_count[: cfg.top_m] if c > 0]
    for j in range(cfg.zero_probes):
        queries.append((f"probe{j:07d}", 0))
    items = [q[0] for q in queries]
    truths = np.array([q[1] for q in queries], dtype=np.float64)

    errors = error_sample(sketch, trim_fraction=cfg.trim_fraction)
    r = cfg.depth
    counter_rows = np.vstack(
        [sketch.counter_values(sketch.indices(it)) for it in items]
    ).astype(np.float64)

    density = None
    mle_pre = None
    if any(n in cfg.estimator_names for n in ("mle", "debiased-mle", "bayes")):
        density = logconcave.fit(errors)
    if "debiased-mle" in cfg.estimator_names:
        mle_pre = est.preprocess_bootstrap(
            est.mle_statistic(density), errors, r, cfg.n_resamples, rng=rng
        )

    reports: dict[str, EstimatorReport] = {}
    query_rows: list[dict] = []
    all_errors: dict[str, np.ndarray] = {}

    for name in cfg.estimator_names:
        estimates, raw_values, cdf = _evaluate_estimator(
            name, sketch, counter_rows, errors, density, mle_pre, cfg, rng
        )
        err = estimates - truths
        all_errors[name] = err
        cov = {}
        for level in cfg.levels:
            a, b = (1 - level) / 2, 1 - (1 - level) / 2
            ivs = [ci.bootstrap_ci(t, cdf, a, b) for t in raw_values]
            cov[level] = coverage(ivs, truths)
            for item, truth, estv, iv in zip(items, truths, estimates, ivs):
                query_rows.append(
                    {
                        "item": item,
                        "truth": truth,
                        "estimator": name,
                        "estimate": estv,
                        "lo": iv.lo,
                        "hi": iv.hi,
                        "level": level,
                        "kind": iv.kind,
                    }
                )
        reports[name] = EstimatorReport(
            name=name,
            rmse=rmse(err),
            mean_signed_error=float(np.mean(err)),
            coverage=cov,
            rel_efficiency=float("nan"),
        )

    reference = (
        "debiased-mle" if "debiased-mle" in reports else cfg.estimator_names[0]
    )
    for name, rep in reports.items():
        rep.rel_efficiency = relative_efficiency(
            all_errors[reference], all_errors[name]
        )

    return EvalReport(
        scenario=cfg.name,
        estimator_reports=reports,
        reference=reference,
        wall_time=time.perf_counter() - started,
        n_queries=len(items),
        query_rows=query_rows,
    )


def _evaluate_estimator(name, sketch, counter_rows, errors, density, mle_pre,
                        cfg, rng):
    """Point estimates, raw statistic values, and the statistic's error CDF."""
    r = sketch.config.depth
    if name == "min":
        stat = est.min_statistic()
        raw = stat.apply_rows(counter_rows)
        pre = est.preprocess_columns(stat, sketch)
        return raw, raw, pre.cdf
    if name.startswith("debiased-") and name != "debiased-mle":
        base = name.split("-", 1)[1]
        if base not in _STAT_BUILDERS:
            raise ValueError(f"unknown estimator {name!r}")
        stat = _STAT_BUILDERS[base]()
        pre = est.preprocess_columns(stat, sketch)
        raw = stat.apply_rows(counter_rows)
        return np.maximum(0.0, raw - pre.mu), raw, pre.cdf
    if name == "mle":
        stat = est.mle_statistic(density)
        raw = stat.apply_rows(counter_rows)
        pre = est.preprocess_bootstrap(stat, errors, r, cfg.n_resamples, rng=rng)
        return raw, raw, pre.cdf
    if name == "debiased-mle":
        stat = est.mle_statistic(density)
        raw = stat.apply_rows(counter_rows)
        return np.maximum(0.0, raw - mle_pre.mu), raw, mle_pre.cdf
    if name == "bayes":
        stat = est.mle_statistic(density)
        values = np.array(
            [
                est.bayes_estimate_from_values(row, density).value
                for row in counter_rows
            ]
        )
        pre = est.preprocess_bootstrap(stat, errors, r, cfg.n_resamples, rng=rng)
        return values, stat.apply_rows(counter_rows), pre.cdf
    raise ValueError(f"unknown estimator {name!r}")
