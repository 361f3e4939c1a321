"""Nonparametric log-concave density estimation for error samples.

The estimated log-density is a concave linear spline: values phi at knots,
linear in between, with linear tails extended beyond the data range so the
log-density is finite everywhere (that linearization is what makes the
downstream count objectives robust to heavy-tailed collision errors).

The maximizer of

    L(phi) = sum_i w_i phi(x_i) - integral exp(phi(t)) dt

over concave piecewise-linear phi with knots at the distinct data points is
the MLE; at the optimum the density integrates to one over the data range.
The solver is an active-set scheme: keep a working set of knots, solve the
smooth restricted problem by Newton (the Hessian is tridiagonal), drop knots
that turn infeasible, and add the data point whose admissible perturbation
has the most positive directional derivative.  The contract is the
optimality certificate, not the particular scheme.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
from scipy.linalg import solve_banded

from .empirical import ErrorSample

# Series cutoff for the segment integral helpers.  Below this the closed
# forms lose digits to cancellation; the 5-term series is exact to ~1e-22.
_SERIES_CUTOFF = 1e-4

_NEWTON_TOL = 1e-11
_FEAS_TOL = 1e-11
_ADD_TOL = 1e-9
_MAX_OUTER = 500


def _f0(u):
    """integral_0^1 exp(u t) dt = (e^u - 1)/u, stable near u = 0."""
    u = np.asarray(u, dtype=np.float64)
    small = np.abs(u) < _SERIES_CUTOFF
    safe = np.where(small, 1.0, u)
    direct = np.expm1(safe) / safe
    series = 1.0 + u / 2 + u**2 / 6 + u**3 / 24 + u**4 / 120
    return np.where(small, series, direct)


def _f1(u):
    """integral_0^1 t exp(u t) dt."""
    u = np.asarray(u, dtype=np.float64)
    small = np.abs(u) < _SERIES_CUTOFF
    safe = np.where(small, 1.0, u)
    direct = (np.exp(safe) * (safe - 1.0) + 1.0) / safe**2
    series = 0.5 + u / 3 + u**2 / 8 + u**3 / 30 + u**4 / 144
    return np.where(small, series, direct)


def _f2(u):
    """integral_0^1 t^2 exp(u t) dt."""
    u = np.asarray(u, dtype=np.float64)
    small = np.abs(u) < _SERIES_CUTOFF
    safe = np.where(small, 1.0, u)
    direct = (np.exp(safe) * (safe**2 - 2 * safe + 2.0) - 2.0) / safe**3
    series = 1.0 / 3 + u / 4 + u**2 / 10 + u**3 / 36 + u**4 / 168
    return np.where(small, series, direct)


def _seg_integrals(a, b, dx):
    """Per-segment integrals of exp(phi) against 1, (1-t) and t.

    a, b: phi at the left/right endpoints; dx: segment lengths.
    Returns (I, I_left, I_right) where I_left = dI/da and I_right = dI/db.
    """
    u = b - a
    ea = np.exp(a)
    f0, f1 = _f0(u), _f1(u)
    i00 = dx * ea * f0
    i_right = dx * ea * f1
    i_left = dx * ea * (f0 - f1)
    return i00, i_left, i_right


def _seg_hessian(a, b, dx):
    """Second derivatives of the per-segment integral wrt (a, b)."""
    u = b - a
    ea = np.exp(a)
    f0, f1, f2 = _f0(u), _f1(u), _f2(u)
    h_aa = dx * ea * (f0 - 2 * f1 + f2)
    h_ab = dx * ea * (f1 - f2)
    h_bb = dx * ea * f2
    return h_aa, h_ab, h_bb


def objective_and_grad(x: np.ndarray, w: np.ndarray, phi: np.ndarray):
    """L(phi) and its gradient with every data point treated as a knot.

    L = sum w_i phi_i - integral exp(phi) over [x_0, x_{m-1}].
    """
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    phi = np.asarray(phi, dtype=np.float64)
    dx = np.diff(x)
    i00, i_left, i_right = _seg_integrals(phi[:-1], phi[1:], dx)
    value = float(np.dot(w, phi) - np.sum(i00))
    grad = w.copy()
    grad[:-1] -= i_left
    grad[1:] -= i_right
    return value, grad


def _restricted_newton(t, c, phi):
    """Maximize c.phi - sum_j dx_j J(phi_j, phi_{j+1}) over phi by Newton.

    t: knot positions; c: linear coefficients (data weights collapsed onto
    knots); phi: start point, modified in place logic-wise (returned).
    Unconstrained and smooth with a tridiagonal Hessian, so Newton with
    backtracking converges globally on this concave problem.
    """
    dx = np.diff(t)
    n = len(t)

    def eval_obj(p):
        i00, _, _ = _seg_integrals(p[:-1], p[1:], dx)
        return float(np.dot(c, p) - np.sum(i00))

    def eval_grad(p):
        _, i_left, i_right = _seg_integrals(p[:-1], p[1:], dx)
        g = c.copy()
        g[:-1] -= i_left
        g[1:] -= i_right
        return g

    obj = eval_obj(phi)
    for _ in range(200):
        grad = eval_grad(phi)
        if np.max(np.abs(grad)) <= _NEWTON_TOL:
            break
        # Newton direction from -H d = grad; -H is positive definite
        # tridiagonal, ridge-damped if the solve degenerates numerically.
        h_aa, h_ab, h_bb = _seg_hessian(phi[:-1], phi[1:], dx)
        diag = np.zeros(n)
        diag[:-1] += h_aa
        diag[1:] += h_bb
        ridge = 0.0
        for _attempt in range(8):
            banded = np.zeros((3, n))
            banded[0, 1:] = h_ab
            banded[1, :] = diag + ridge
            banded[2, :-1] = h_ab
            try:
                step = solve_banded((1, 1), banded, grad)
            except (np.linalg.LinAlgError, ValueError):
                ridge = max(ridge * 10, 1e-10)
                continue
            if np.all(np.isfinite(step)) and np.dot(step, grad) > 0:
                break
            ridge = max(ridge * 10, 1e-10)
        else:
            break
        # cap the first trial step so exp() stays in range during line search
        alpha = min(1.0, 8.0 / max(1e-12, float(np.max(np.abs(step)))))
        slope = float(np.dot(step, grad))
        if slope <= 1e-13 * (1.0 + abs(obj)):
            # quadratic-convergence region: improvement is below measurement
            # noise, so take the plain Newton step to polish the gradient
            phi = phi + step
            obj = eval_obj(phi)
            break
        improved = False
        for _bt in range(60):
            cand = phi + alpha * step
            cand_obj = eval_obj(cand)
            if np.isfinite(cand_obj) and cand_obj >= obj + 1e-4 * alpha * slope:
                phi = cand
                obj = cand_obj
                improved = True
                break
            alpha *= 0.5
        if not improved:
            break
    return phi, obj


def _collapse_weights(x, w, knot_idx):
    """Distribute data weights onto bracketing knots (barycentric)."""
    t = x[knot_idx]
    seg = np.clip(np.searchsorted(t, x, side="right") - 1, 0, len(t) - 2)
    left, right = t[seg], t[seg + 1]
    lam = np.where(right > left, (x - left) / (right - left), 0.0)
    c = np.zeros(len(t))
    np.add.at(c, seg, w * (1.0 - lam))
    np.add.at(c, seg + 1, w * lam)
    return c


def _tent_slacks(x, w, knot_idx, phi_k):
    """Directional derivative of L for raising phi at each non-knot point.

    Lowering a single point would create a convex dip, so the admissible
    way to introduce a kink at data point x_i is an upward tent spanning
    its bracketing knots.  Its derivative is
    sum_l w_l tent(x_l) - integral(tent * exp(phi)); a positive value means
    adding a knot at x_i improves the fit.  Indexed like x, knots set to 0.
    """
    t = x[knot_idx]
    m = len(x)
    is_knot = np.zeros(m, dtype=bool)
    is_knot[knot_idx] = True
    seg = np.clip(np.searchsorted(t, x, side="right") - 1, 0, len(t) - 2)
    t_l, t_r = t[seg], t[seg + 1]
    a, b = phi_k[seg], phi_k[seg + 1]

    # data side: sum_l w_l tent_i(x_l) over the segment.  Segments are
    # contiguous runs of the sorted grid and their boundary knots contribute
    # zero to both sums, so per-segment sums telescope from global cumsums.
    g = np.concatenate([[0.0], np.cumsum(w * x)])
    h = np.concatenate([[0.0], np.cumsum(w)])
    lo = knot_idx[seg]      # left-knot grid index of each point's segment
    hi = knot_idx[seg + 1]  # right-knot grid index
    idx = np.arange(m)
    pref = (g[idx + 1] - g[lo]) - t_l * (h[idx + 1] - h[lo])
    suff = t_r * (h[hi + 1] - h[idx + 1]) - (g[hi + 1] - g[idx + 1])
    with np.errstate(divide="ignore", invalid="ignore"):
        data_term = np.where(idx > lo, pref / (x - t_l), 0.0) + np.where(
            idx < hi, suff / (t_r - x), 0.0
        )

    # model side: integral of the tent against exp(phi)
    span = t_r - t_l
    lam = np.where(span > 0, (x - t_l) / np.where(span > 0, span, 1.0), 0.0)
    phi_x = a + lam * (b - a)
    int_left = (x - t_l) * np.exp(a) * _f1(phi_x - a)
    int_right = (t_r - x) * np.exp(phi_x) * (_f0(b - phi_x) - _f1(b - phi_x))

    slack = data_term - (int_left + int_right)
    slack[is_knot] = 0.0
    return slack


def _active_set_mle(x, w):
    """Solve the full MLE by active-set over the knot set.

    Returns phi on the full grid x and the knot index set actually kinked.
    """
    m = len(x)
    knot_idx = np.array([0, m - 1])
    span = x[-1] - x[0]
    phi_k = np.full(2, -np.log(span))
    for _ in range(_MAX_OUTER):
        # inner: solve restricted problem, dropping infeasible knots in bulk
        while True:
            c = _collapse_weights(x, w, knot_idx)
            t = x[knot_idx]
            phi_k, _ = _restricted_newton(t, c, phi_k)
            if len(knot_idx) <= 2:
                break
            kinks = np.diff(np.diff(phi_k) / np.diff(t))
            if np.max(kinks) <= _FEAS_TOL:
                break
            keep = np.concatenate([[True], kinks <= _FEAS_TOL, [True]])
            knot_idx = knot_idx[keep]
            phi_k = phi_k[keep]
        slack = _tent_slacks(x, w, knot_idx, phi_k)
        if np.max(slack) <= _ADD_TOL:
            break
        # batch adds: the most violating point inside each knot segment
        t = x[knot_idx]
        seg_of = np.clip(np.searchsorted(t, x, side="right") - 1, 0, len(t) - 2)
        new_points = []
        for j in np.unique(seg_of[slack > _ADD_TOL]):
            cand = np.where((seg_of == j) & (slack > _ADD_TOL))[0]
            new_points.append(cand[np.argmax(slack[cand])])
        phi_full = np.interp(x, t, phi_k)
        knot_idx = np.sort(np.concatenate([knot_idx, np.array(new_points)]))
        phi_k = phi_full[knot_idx]
    t = x[knot_idx]
    phi_full = np.interp(x, t, phi_k)
    phi_full[knot_idx] = phi_k
    return phi_full, knot_idx


@dataclass(frozen=True)
class LogConcaveDensity:
    """Fitted error density: concave linear spline in the log domain.

    knots: strictly increasing support points (a subset of the data).
    phi: log-density at the knots; linear in between.
    left_slope / right_slope: tail slopes used to evaluate the log-density
        beyond the knot range (right_slope is strictly negative so shifted
        likelihood objectives stay proper).
    atom_at_zero: optional point mass at zero, used by the Bayes estimator;
        the spline then describes the continuous remainder, scaled by
        (1 - atom_at_zero).
    degenerate: the sample had a single distinct value and a narrow
        triangular surrogate was returned.
    """

    knots: np.ndarray
    phi: np.ndarray
    left_slope: float
    right_slope: float
    atom_at_zero: float = 0.0
    degenerate: bool = False
    objective: float = float("nan")

    def __post_init__(self):
        object.__setattr__(self, "knots", np.asarray(self.knots, dtype=np.float64))
        object.__setattr__(self, "phi", np.asarray(self.phi, dtype=np.float64))
        if len(self.knots) < 2:
            raise ValueError("need at least two knots")
        if np.any(np.diff(self.knots) <= 0):
            raise ValueError("knots must be strictly increasing")
        if self.right_slope >= 0:
            raise ValueError("right tail slope must be negative")

    # -- evaluation --------------------------------------------------------

    def log_density(self, x) -> np.ndarray:
        """phi(x): interpolated inside the knot range, linear tails outside."""
        x = np.asarray(x, dtype=np.float64)
        lo, hi = self.knots[0], self.knots[-1]
        inner = np.interp(x, self.knots, self.phi)
        left = self.phi[0] + self.left_slope * (x - lo)
        right = self.phi[-1] + self.right_slope * (x - hi)
        return np.where(x < lo, left, np.where(x > hi, right, inner))

    def density(self, x) -> np.ndarray:
        return np.exp(self.log_density(x))

    def likelihood_with_atom(self, x) -> np.ndarray:
        """Mixture likelihood: atom at exactly zero, spline elsewhere."""
        x = np.asarray(x, dtype=np.float64)
        cont = (1.0 - self.atom_at_zero) * self.density(x)
        if self.atom_at_zero == 0.0:
            return cont
        return np.where(x == 0.0, self.atom_at_zero, cont)

    @property
    def slopes(self) -> np.ndarray:
        return np.diff(self.phi) / np.diff(self.knots)

    def is_decreasing(self) -> bool:
        """True when the log-density never increases (Min is then the MLE)."""
        return bool(np.all(self.slopes <= 1e-12) and self.left_slope <= 1e-12)

    def mode(self) -> float:
        return float(self.knots[int(np.argmax(self.phi))])

    def range_mass(self) -> float:
        i00, _, _ = _seg_integrals(self.phi[:-1], self.phi[1:], np.diff(self.knots))
        return float(np.sum(i00))

    def total_mass(self) -> float:
        """Probability carried by the density: atom + knot-range mass.

        The tail extensions are an evaluation device for shifted-likelihood
        objectives and carry no probability.
        """
        return self.atom_at_zero + (1.0 - self.atom_at_zero) * self.range_mass()

    def second_differences(self) -> np.ndarray:
        return np.diff(self.slopes)

    def to_csv_rows(self):
        for k, p in zip(self.knots, self.phi):
            yield float(k), float(p)


def _degenerate_density(value: float) -> LogConcaveDensity:
    # Narrow triangular surrogate, half-width 0.5, for all-equal samples.
    # Log-domain: a sharp tent; keeps downstream shift objectives defined.
    floor = np.log(2.0) - 30.0
    return LogConcaveDensity(
        knots=np.array([value - 0.5, value, value + 0.5]),
        phi=np.array([floor, np.log(2.0), floor]),
        left_slope=60.0,
        right_slope=-60.0,
        degenerate=True,
        objective=float("nan"),
    )


_FLAT_SLOPE_FLOOR = 1e-9


def fit_weighted(
    values: np.ndarray, weights: Optional[np.ndarray] = None
) -> LogConcaveDensity:
    """Log-concave MLE of weighted observations (ties collapse into weights)."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise ValueError("empty sample")
    if weights is None:
        x, counts = np.unique(values, return_counts=True)
        w = counts.astype(np.float64)
    else:
        weights = np.asarray(weights, dtype=np.float64)
        order = np.argsort(values)
        x, start = np.unique(values[order], return_index=True)
        w = np.add.reduceat(weights[order], start)
    w = w / w.sum()
    if x.size == 1:
        return _degenerate_density(float(x[0]))

    # standardize to [0, 1] for conditioning; exactly undone below, which
    # also makes the fit exactly shift-equivariant
    x0, span = x[0], x[-1] - x[0]
    u = (x - x0) / span
    phi_u, knot_pos = _active_set_mle(u, w)

    # drop working-set members carrying no real kink so downstream code sees
    # only genuine slope changes (values at the kept knots are untouched)
    knots = x[knot_pos]
    phi = phi_u[knot_pos] - np.log(span)
    if len(knots) > 2:
        kinks = np.diff(np.diff(phi) / np.diff(knots))
        keep = np.concatenate([[True], kinks < -1e-10, [True]])
        knots, phi = knots[keep], phi[keep]

    slopes = np.diff(phi) / np.diff(knots)
    left_slope = float(slopes[0])
    right_slope = float(slopes[-1])
    if right_slope > -_FLAT_SLOPE_FLOOR:
        right_slope = -_FLAT_SLOPE_FLOOR
    obj, _ = objective_and_grad(x, w, np.interp(x, knots, phi))
    return LogConcaveDensity(
        knots=knots,
        phi=phi,
        left_slope=left_slope,
        right_slope=right_slope,
        objective=obj,
    )


def fit(
    sample: Union[ErrorSample, np.ndarray],
    trim_fraction: Optional[float] = None,
    atom_at_zero: bool = False,
) -> LogConcaveDensity:
    """Fit the error density from a sample, trimming the largest values first.

    Trimming (default the sample's trim_fraction) drops the top fraction of
    values so heavy log-convex tails project onto linear ones instead of
    dragging the whole fit.  With atom_at_zero=True the exact-zero mass is
    split out as an atom and the spline is fitted to the positive part.
    """
    if isinstance(sample, ErrorSample):
        values = sample.trimmed_values(trim_fraction)
    else:
        values = np.sort(np.asarray(sample, dtype=np.float64))
        if trim_fraction:
            values = values[: values.size - int(trim_fraction * values.size)]
    if values.size == 0:
        raise ValueError("empty sample after trimming")

    if not atom_at_zero:
        return fit_weighted(values)

    atom = float(np.mean(values == 0.0))
    positive = values[values > 0.0]
    if positive.size < 2 or np.unique(positive).size < 2:
        base = _degenerate_density(float(positive[0]) if positive.size else 0.0)
        return LogConcaveDensity(
            knots=base.knots,
            phi=base.phi,
            left_slope=base.left_slope,
            right_slope=base.right_slope,
            atom_at_zero=atom,
            degenerate=True,
        )
    base = fit_weighted(positive)
    return LogConcaveDensity(
        knots=base.knots,
        phi=base.phi,
        left_slope=base.left_slope,
        right_slope=base.right_slope,
        atom_at_zero=atom,
        objective=base.objective,
    )


def optimality_certificate(
    density: LogConcaveDensity, sample: Union[ErrorSample, np.ndarray],
    trim_fraction: Optional[float] = None,
) -> float:
    """Max positive directional derivative over knot perturbations.

    Raising or lowering phi at one knot (a tent between its neighbours) is
    admissible whenever the move keeps phi concave; a maximizer has no
    admissible direction with positive derivative, so the returned value is
    <= ~1e-6 for a converged fit.
    """
    if isinstance(sample, ErrorSample):
        values = sample.trimmed_values(trim_fraction)
    else:
        values = np.sort(np.asarray(sample, dtype=np.float64))
        if trim_fraction:
            values = values[: values.size - int(trim_fraction * values.size)]
    x, counts = np.unique(values, return_counts=True)
    w = counts / counts.sum()
    t, phi = density.knots, density.phi
    n_k = len(t)

    # data weights collapsed onto the knot basis (tent functions)
    seg = np.clip(np.searchsorted(t, x, side="right") - 1, 0, n_k - 2)
    lam = (x - t[seg]) / (t[seg + 1] - t[seg])
    c = np.zeros(n_k)
    np.add.at(c, seg, w * (1.0 - lam))
    np.add.at(c, seg + 1, w * lam)

    _, i_left, i_right = _seg_integrals(phi[:-1], phi[1:], np.diff(t))
    model = np.zeros(n_k)
    model[:-1] += i_left
    model[1:] += i_right
    grad = c - model  # derivative of L along +tent at each knot

    kinks = np.diff(np.diff(phi) / np.diff(t))
    kink_ok = kinks < -1e-9  # strict concavity slack at interior knots

    violation = 0.0
    for j in range(n_k):
        raise_ok = True
        for nb in (j - 1, j + 1):
            if 1 <= nb <= n_k - 2 and not kink_ok[nb - 1]:
                raise_ok = False
        lower_ok = True
        if 1 <= j <= n_k - 2 and not kink_ok[j - 1]:
            lower_ok = False
        if raise_ok:
            violation = max(violation, grad[j])
        if lower_ok:
            violation = max(violation, -grad[j])
    return float(violation)


def project_decreasing_check(
    support: np.ndarray,
    probs: np.ndarray,
    n_samples: int = 10_000,
    rng=None,
    trim_fraction: float = 0.0,
) -> bool:
    """Sample a decreasing pmf, fit, and report whether the fit decreases.

    Harness for the projection property: the log-concave projection of a
    decreasing mass function stays decreasing, so fits to such samples
    should be decreasing up to sampling noise.
    """
    rng = np.random.default_rng(rng)
    support = np.asarray(support, dtype=np.float64)
    probs = np.asarray(probs, dtype=np.float64)
    probs = probs / probs.sum()
    draws = rng.choice(support, size=n_samples, replace=True, p=probs)
    density = fit(draws, trim_fraction=trim_fraction)
    return density.is_decreasing()
