"""Post-processing of sampler output against a Stein kernel.

Provides the kernel discrepancy of a weighted point set, the optimal
simplex-constrained reweighting (an away-step conditional-gradient solve
of min w^T K w - 2 z^T w over the probability simplex), greedy thinning
to m uniformly weighted points, and the root-kernel importance weights
used as a baseline.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GramTooLarge, InvalidSimplex, NegativeQuadraticForm

__all__ = [
    "WeightedSample",
    "QPResult",
    "uniform_sample",
    "ksd",
    "quadratic_form",
    "optimal_weights",
    "greedy_thin",
    "greedy_thin_indices",
    "snis_weights",
]

GRAM_GUARD = 20_000  # dense Gram guard for the QP


def _as_points(points):
    points = np.asarray(points, dtype=np.float64)
    if points.ndim == 1:
        points = points[:, None]
    if points.ndim != 2:
        raise ValueError(f"points must be (n, d), got shape {points.shape}")
    return points


@dataclass(frozen=True, eq=False)
class WeightedSample:
    """Points with nonnegative weights summing to one."""

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "points", _as_points(self.points))
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=np.float64))
        w = self.weights
        if w.ndim != 1 or w.shape[0] != self.points.shape[0]:
            raise InvalidSimplex("need one weight per point")
        if not np.all(np.isfinite(self.points)) or not np.all(np.isfinite(w)):
            raise InvalidSimplex("points and weights must be finite")
        if np.any(w < 0):
            raise InvalidSimplex("weights must be nonnegative")
        if abs(w.sum() - 1.0) > 1e-10:
            raise InvalidSimplex(f"weights sum to {w.sum()!r}, not 1")

    @property
    def n(self):
        return self.points.shape[0]

    @property
    def dim(self):
        return self.points.shape[1]


def uniform_sample(points):
    """Equal weights 1/n on the given points."""
    points = _as_points(points)
    n = points.shape[0]
    return WeightedSample(points=points, weights=np.full(n, 1.0 / n))


def _neumaier_dot(a, b):
    """Compensated dot product; keeps tiny quadratic forms meaningful."""
    total = 0.0
    comp = 0.0
    for x in a * b:
        t = total + x
        if abs(total) >= abs(x):
            comp += (total - t) + x
        else:
            comp += (x - t) + total
        total = t
    return total + comp


def quadratic_form(gram, weights):
    """w^T K w with compensated accumulation, clamped at tiny negatives.

    Raises NegativeQuadraticForm when the form is negative beyond rounding
    scale, which signals a broken (non-PSD) kernel.
    """
    kw = gram @ weights
    q = _neumaier_dot(weights, kw)
    if q < 0:
        scale = float(np.max(np.abs(gram))) if gram.size else 0.0
        if q < -1e-10 * scale:
            raise NegativeQuadraticForm(f"w^T K w = {q!r} with |K| scale {scale!r}")
        q = 0.0
    return q


def ksd(sample, kernel, gram=None):
    """Kernel discrepancy sqrt(w^T K w) of a weighted sample."""
    if gram is None:
        gram = kernel.gram(sample.points)
    return float(np.sqrt(quadratic_form(gram, sample.weights)))


@dataclass(frozen=True, eq=False)
class QPResult:
    """Solution of the simplex-constrained quadratic program."""

    weights: np.ndarray
    objective: float
    kkt_residual: float
    iterations: int
    converged: bool
    duality_gap: float


def _support_polish(gram, z, w, eps=1e-10, max_peels=12):
    """Fully-corrective step: exact solve on a candidate support.

    Solves the equality-constrained QP on the support of w; while the
    stationary point leaves the simplex, all negative coordinates are
    peeled off and the solve repeated (an active-set inner loop).  The
    caller adopts the candidate only when it lowers the objective, so
    this is purely an acceleration: once the optimal support is reached
    the outer duality-gap test certifies optimality.
    """
    support = np.nonzero(w > eps)[0]
    if len(support) > 400:  # keep the dense solves from dominating
        return None
    for _ in range(max_peels):
        m = len(support)
        if m == 0:
            return None
        system = np.zeros((m + 1, m + 1))
        system[:m, :m] = 2.0 * gram[np.ix_(support, support)]
        system[:m, m] = 1.0
        system[m, :m] = 1.0
        rhs = np.concatenate([2.0 * z[support], [1.0]])
        sol, *_ = np.linalg.lstsq(system, rhs, rcond=None)
        w_sub = sol[:m]
        if abs(w_sub.sum() - 1.0) > 1e-9:
            return None
        keep = w_sub >= -1e-12
        if keep.all():
            cand = np.zeros_like(w)
            cand[support] = np.maximum(w_sub, 0.0)
            cand /= cand.sum()
            return cand
        if not keep.any():
            return None
        support = support[keep]
    return None


def _kkt_residual(gram, z, w, support_tol=1e-8):
    """Max violation of stationarity/complementarity at w.

    On the support the quantity (Kw - z)_i must equal a common multiplier;
    off the support it must not fall below it.
    """
    g = gram @ w - z
    lam = float(g @ w)
    on = w > support_tol
    resid = 0.0
    if np.any(on):
        resid = float(np.max(np.abs(g[on] - lam)))
    if np.any(~on):
        resid = max(resid, float(np.max(np.maximum(lam - g[~on], 0.0))))
    return resid


def optimal_weights(points, kernel, tol=1e-8, max_iter=None, z=None, gram=None):
    """Minimise w^T K w - 2 z^T w over the probability simplex.

    Away-step conditional gradient from the uniform start, with exact line
    search and a relative duality-gap stopping rule
    gap <= tol * max(1, objective).  For Stein kernels the linear term
    vanishes (z = 0); a nonzero z is accepted for generic kernels.  Returns
    the best iterate with ``converged=False`` if the iteration budget runs
    out.  Guarded against Gram matrices larger than 2e4 points.
    """
    points = _as_points(points)
    n = points.shape[0]
    if n > GRAM_GUARD:
        raise GramTooLarge(f"n = {n} exceeds the dense Gram guard {GRAM_GUARD}")
    if gram is None:
        gram = kernel.gram(points)
    z = np.zeros(n) if z is None else np.asarray(z, dtype=np.float64)
    if max_iter is None:
        max_iter = 50 * n
    diag = np.diag(gram)
    w = np.full(n, 1.0 / n)
    kw = gram @ w
    f = float(w @ kw - 2.0 * (z @ w))
    iterations = 0
    for iterations in range(1, max_iter + 1):
        if iterations % 128 == 0:
            kw = gram @ w  # refresh incremental updates
            f = float(w @ kw - 2.0 * (z @ w))
        if iterations % 128 == 32:
            # fully-corrective step: exact solve on the active support
            cand = _support_polish(gram, z, w)
            if cand is not None:
                kw_cand = gram @ cand
                f_cand = float(cand @ kw_cand - 2.0 * (z @ cand))
                if f_cand <= f:
                    w, kw, f = cand, kw_cand, f_cand
        grad = 2.0 * (kw - z)
        i_fw = int(np.argmin(grad))
        gap = float(grad @ w - grad[i_fw])
        if gap <= tol * max(1.0, abs(f)):
            break
        support = np.nonzero(w > 0)[0]
        i_aw = support[int(np.argmax(grad[support]))]
        away_gap = float(grad[i_aw] - grad @ w)
        if away_gap > gap and len(support) > 1:
            # away direction w - e_a, feasible up to gamma w_a / (1 - w_a)
            w_a = w[i_aw]
            gamma_max = w_a / (1.0 - w_a)
            slope = -away_gap
            curv = f + 2.0 * (z @ w) - 2.0 * kw[i_aw] + diag[i_aw]
            gamma = gamma_max if curv <= 0 else min(gamma_max, -slope / (2.0 * curv))
            if gamma <= 0:
                break
            col = gram[:, i_aw]
            w *= 1.0 + gamma
            w[i_aw] -= gamma
            if gamma == gamma_max:
                w[i_aw] = 0.0  # drop step: the coordinate leaves the support
            kw = (1.0 + gamma) * kw - gamma * col
            f = f + gamma * slope + gamma * gamma * curv
        else:
            # toward vertex e_i, feasible up to gamma = 1
            slope = -gap
            curv = f + 2.0 * (z @ w) - 2.0 * kw[i_fw] + diag[i_fw]
            gamma = 1.0 if curv <= 0 else min(1.0, -slope / (2.0 * curv))
            if gamma <= 0:
                break
            col = gram[:, i_fw]
            w *= 1.0 - gamma
            w[i_fw] += gamma
            kw = (1.0 - gamma) * kw + gamma * col
            f = f + gamma * slope + gamma * gamma * curv
    w = np.maximum(w, 0.0)
    w /= w.sum()
    kw = gram @ w
    f = float(w @ kw - 2.0 * (z @ w))
    grad = 2.0 * (kw - z)
    gap = float(grad @ w - grad.min())
    converged = gap <= tol * max(1.0, abs(f))
    return QPResult(
        weights=w,
        objective=f,
        kkt_residual=_kkt_residual(gram, z, w),
        iterations=iterations,
        converged=converged,
        duality_gap=gap,
    )


def greedy_thin_indices(points, kernel, m, gram=None):
    """Indices selected by m steps of greedy discrepancy minimisation.

    Step j picks argmin over candidates y of
    k_P(y)/2 + sum_{i<j} k_P(y, y_i); candidates stay available, so an
    index may repeat.  Ties resolve to the lowest index (strict < scan).
    Running cross sums are cached, so the cost is m Gram columns.
    """
    points = _as_points(points)
    n = points.shape[0]
    if m < 1:
        raise ValueError("m must be >= 1")
    if n == 0:
        raise ValueError("candidate set must be nonempty")
    half_diag = 0.5 * (np.diag(gram) if gram is not None else kernel.diag_values(points))
    running = np.zeros(n)
    chosen = np.empty(m, dtype=np.int64)
    for j in range(m):
        pick = int(np.argmin(half_diag + running))
        chosen[j] = pick
        if j + 1 < m:
            col = gram[:, pick] if gram is not None else kernel.gram(points, points[pick : pick + 1])[:, 0]
            running += col
    return chosen


def greedy_thin(points, kernel, m, gram=None):
    """Greedy thinning to m points with uniform weights 1/m."""
    points = _as_points(points)
    idx = greedy_thin_indices(points, kernel, m, gram=gram)
    return WeightedSample(points=points[idx], weights=np.full(m, 1.0 / m))


def snis_weights(points, kernel):
    """Weights proportional to 1/sqrt(k_P(x_i)), normalised.

    These are the self-normalised importance weights when the points were
    sampled from the over-dispersed target; the caller is responsible for
    that provenance.  A baseline for comparisons, not a production path.
    """
    points = _as_points(points)
    w = 1.0 / np.sqrt(kernel.diag_values(points))
    w /= w.sum()
    return WeightedSample(points=points, weights=w)
