"""Joint count estimation over an item set.

The counter vector is a linear image of the counts: V = M theta + errors,
with M the sparse 0/1 design whose column for an item has ones at the r
counters it hashes to.  Estimating several heavy hitters jointly removes
their collisions from each other's error terms.  Two solvers:

* least_squares: projected coordinate descent on ||V - M theta||^2 with
  theta >= 0; exact on overdetermined collision-free systems, and the
  baseline the likelihood method is compared against.
* joint_mle: alternate fitting the error density on the residuals over all
  counters with cyclic 1-D concave updates of each count.  Bi-convex, so
  ascent is guaranteed per step but only local optimality overall; the
  final objective is reported so callers can multi-start.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import sparse

from . import logconcave
from .estimators import debiased_min
from .sketch import CountPlusSketch

# residuals are rounded to this many decimals before density fitting so
# float noise does not blow up the distinct-value grid
_RESIDUAL_DECIMALS = 6


@dataclass(frozen=True)
class DesignMatrix:
    """Sparse (r*k) x |S| design; column s = the 0/1 row pattern of item s."""

    matrix: sparse.csc_matrix
    items: tuple

    @classmethod
    def from_sketch(cls, sketch: CountPlusSketch, items: Sequence) -> "DesignMatrix":
        items = tuple(items)
        r, k = sketch.config.depth, sketch.config.width
        rows = np.concatenate(
            [sketch.indices(it).flat(k) for it in items]
        )
        cols = np.repeat(np.arange(len(items)), r)
        data = np.ones(rows.size)
        mat = sparse.csc_matrix((data, (rows, cols)), shape=(r * k, len(items)))
        return cls(matrix=mat, items=items)

    def row_sets(self) -> np.ndarray:
        """(|S|, r) array of flat counter indices per item."""
        r = self.matrix.getnnz(axis=0)[0]
        return self.matrix.indices.reshape(len(self.items), r)


@dataclass
class JointEstimate:
    """theta >= 0 per item, with convergence bookkeeping."""

    items: tuple
    theta: np.ndarray
    converged: bool
    iterations: int
    final_objective: float

    def as_dict(self) -> dict:
        return dict(zip(self.items, self.theta.tolist()))


def least_squares(
    sketch: CountPlusSketch,
    items: Sequence,
    max_iters: int = 1000,
    tol: float = 1e-10,
) -> JointEstimate:
    """min ||V - M theta||^2 subject to theta >= 0.

    Runs projected cyclic coordinate descent on the Gram system, which only
    needs the |S| x |S| collision-count matrix.  Non-convergence within
    max_iters (e.g. rank deficiency) is reported through the flag.
    """
    design = DesignMatrix.from_sketch(sketch, items)
    m = design.matrix
    v = sketch.counters.astype(np.float64).ravel()
    gram = np.asarray((m.T @ m).todense())
    rhs = m.T @ v
    n = len(design.items)
    theta = np.zeros(n)
    converged = False
    sweep = 0
    for sweep in range(1, max_iters + 1):
        max_delta = 0.0
        for s in range(n):
            num = rhs[s] - gram[s] @ theta + gram[s, s] * theta[s]
            new = max(0.0, num / gram[s, s])
            max_delta = max(max_delta, abs(new - theta[s]))
            theta[s] = new
        if max_delta <= tol * (1.0 + np.max(np.abs(theta))):
            converged = True
            break
    resid = v - m @ theta
    return JointEstimate(
        items=design.items,
        theta=theta,
        converged=converged,
        iterations=sweep,
        final_objective=float(resid @ resid),
    )


def _coordinate_maximize(
    residual_plus: np.ndarray, density: logconcave.LogConcaveDensity, floor: float
) -> float:
    """argmax over theta in [0, min(residual_plus) - floor] of the shifted
    log-likelihood; exact breakpoint search, largest maximizer on ties."""
    upper = float(np.min(residual_plus)) - floor
    if upper <= 0.0:
        return 0.0
    if density.is_decreasing():
        return upper
    bps = (residual_plus[:, None] - density.knots[None, :]).ravel()
    bps = bps[(bps > 0.0) & (bps < upper)]
    grid = np.unique(np.concatenate([[0.0, upper], bps]))
    objective = density.log_density(
        residual_plus[None, :] - grid[:, None]
    ).sum(axis=1)
    best = float(np.max(objective))
    tol = 1e-9 * (1.0 + abs(best))
    return float(grid[np.nonzero(objective >= best - tol)[0][-1]])


def joint_mle(
    sketch: CountPlusSketch,
    items: Sequence,
    init: Optional[np.ndarray] = None,
    tol: float = 1e-4,
    max_outer: int = 50,
    trim_fraction: float = 0.01,
    constrain_residuals: bool = False,
) -> tuple[JointEstimate, logconcave.LogConcaveDensity]:
    """Alternating joint estimation of the counts in `items`.

    Each outer iteration refits the error density on the residuals over all
    counters, then cyclically re-maximizes each count given the density.
    The density refit is only accepted if it does not lower the joint
    objective, which keeps the ascent monotone even with trimming in play.
    With constrain_residuals the classic M theta <= V feasible set is
    enforced at every iterate; otherwise residuals are only kept inside the
    fitted density's domain during each coordinate's own update.
    """
    design = DesignMatrix.from_sketch(sketch, items)
    row_sets = design.row_sets()
    v = sketch.counters.astype(np.float64).ravel()
    n = len(design.items)

    if init is None:
        theta = np.array(
            [debiased_min(sketch, it).estimate.value for it in design.items]
        )
    else:
        theta = np.asarray(init, dtype=np.float64).copy()
        if theta.shape != (n,) or np.any(theta < 0):
            raise ValueError("init must be a non-negative length-|S| vector")
    if constrain_residuals:
        theta = _project_feasible(theta, row_sets, v)

    residual = v.copy()
    np.subtract.at(residual, row_sets.ravel(), np.repeat(theta, row_sets.shape[1]))

    def objective(dens):
        val = float(np.sum(dens.log_density(np.round(residual, _RESIDUAL_DECIMALS))))
        if not np.isfinite(val):
            raise FloatingPointError("joint objective became non-finite")
        return val

    density = None
    obj = -np.inf
    converged = False
    outer = 0
    for outer in range(1, max_outer + 1):
        rounded = np.round(residual, _RESIDUAL_DECIMALS)
        if np.ptp(rounded) == 0.0:
            # every counter explained equally: nothing left to fit
            converged = True
            if density is None:
                density = logconcave.fit(rounded, trim_fraction=0.0)
            break
        refit = logconcave.fit(rounded, trim_fraction=trim_fraction)
        if density is None or objective(refit) >= objective(density) - 1e-12:
            density = refit
        floor = float(density.knots[0])
        if constrain_residuals:
            floor = max(0.0, floor)

        max_delta = 0.0
        for s in range(n):
            rows = row_sets[s]
            resid_plus = residual[rows] + theta[s]
            new = _coordinate_maximize(resid_plus, density, floor)
            if new != theta[s]:
                max_delta = max(max_delta, abs(new - theta[s]))
                residual[rows] = resid_plus - new
                theta[s] = new
        obj = objective(density)
        if max_delta <= tol:
            converged = True
            break

    estimate = JointEstimate(
        items=design.items,
        theta=theta,
        converged=converged,
        iterations=outer,
        final_objective=obj if np.isfinite(obj) else objective(density),
    )
    return estimate, density


def _project_feasible(theta, row_sets, v):
    """Scale each count down until M theta <= V row-wise."""
    theta = theta.copy()
    for s in range(len(theta)):
        rows = row_sets[s]
        others = np.zeros_like(v)
        np.add.at(others, row_sets.ravel(), np.repeat(theta, row_sets.shape[1]))
        others[rows] -= theta[s]
        slack = np.min(v[rows] - others[rows])
        theta[s] = max(0.0, min(theta[s], slack))
    return theta
