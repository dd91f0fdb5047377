"""Gaussian radial-basis interpolation of reduced coefficients over (mu, t).

Centers live in joint parameter-time space with every coordinate min-max
normalized to [0, 1]; distances are Euclidean there and the kernel is
exp(-gamma * d^2).  Training solves the (optionally ridge-regularized)
symmetric kernel system once per coefficient row; evaluation is a pure
function safe for concurrent queries.

Spread policies: the median-pairwise-distance heuristic is the classic
default; the smallest-gap rule keeps the kernel matrix comfortably
conditioned for exact (lambda = 0) interpolation on dense center sets; the
largest-gap rule widens kernels just enough to bridge the sparsest direction
of the grid, which pairs well with a small ridge term when one axis is much
denser than another.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np
import scipy.linalg as sla
import scipy.spatial.distance as ssd

from .errors import ConditioningError, ConfigurationError, DataError, DimensionError

COND_LIMIT = 1e14


def gaussian_kernel(d, gamma):
    """exp(-gamma * d^2), elementwise."""
    if gamma <= 0.0:
        raise ConfigurationError("kernel spread gamma must be positive")
    d = np.asarray(d, dtype=float)
    return np.exp(-gamma * d * d)


def normalization_ranges(centers):
    """(lo, hi) per coordinate; constant coordinates get span 1 (maps to 0)."""
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    lo = centers.min(axis=0)
    hi = centers.max(axis=0)
    hi = np.where(hi > lo, hi, lo + 1.0)
    return lo, hi


def normalize(points, lo, hi):
    points = np.atleast_2d(np.asarray(points, dtype=float))
    return (points - lo) / (hi - lo)


def _pairwise(normalized):
    if normalized.shape[0] < 2:
        raise DataError("need at least two centers")
    d = ssd.pdist(normalized)
    if d.min() <= 0.0:
        raise DataError("coincident centers")
    return d


def choose_spread(centers):
    """Median-pairwise-distance heuristic: gamma = 1 / (2 d_med^2)."""
    lo, hi = normalization_ranges(centers)
    d = _pairwise(normalize(centers, lo, hi))
    d_med = float(np.median(d))
    return 1.0 / (2.0 * d_med ** 2)


def spread_from_gap(centers, which="largest"):
    """gamma = 1 / (2 g^2) from nearest-neighbour gaps of the center set.

    which="largest" uses the largest nearest-neighbour distance (kernels just
    wide enough to bridge the sparsest region); which="smallest" uses the
    smallest (narrow kernels that keep the kernel matrix well conditioned).
    """
    lo, hi = normalization_ranges(centers)
    pts = normalize(centers, lo, hi)
    d = ssd.squareform(_pairwise(pts))
    np.fill_diagonal(d, np.inf)
    nn = d.min(axis=1)
    gap = float(nn.max() if which == "largest" else nn.min())
    return 1.0 / (2.0 * gap ** 2)


def choose_spread_cond(centers, target_cond=1e12):
    """Smallest spread whose kernel matrix stays below the target condition.

    Wide kernels generalize best but the kernel matrix degenerates; narrow
    kernels are well conditioned but interpolate poorly between centers.
    Bisecting the condition number in log-spread space lands on the widest
    kernel that can still be solved without regularization, which keeps the
    training centers reproduced exactly while retaining most of the smooth
    kernel's accuracy away from them.
    """
    if target_cond < 1e2:
        raise ConfigurationError("target_cond is too small to be reachable")
    hi = spread_from_gap(centers, "smallest")
    if np.linalg.cond(kernel_matrix(centers, hi)) > target_cond:
        raise ConditioningError(
            "kernel is ill-conditioned even at the nearest-neighbour spread; "
            "the centers are too clustered for this target")
    lo = min(choose_spread(centers), hi / 2.0)
    if np.linalg.cond(kernel_matrix(centers, lo)) <= target_cond:
        return float(lo)
    while hi / lo > 1.01:
        mid = np.sqrt(lo * hi)
        if np.linalg.cond(kernel_matrix(centers, mid)) <= target_cond:
            hi = mid
        else:
            lo = mid
    return float(hi)


def resolve_spread(centers, policy):
    """Accepts a number or one of 'median' | 'largest-gap' | 'smallest-gap'
    | 'cond-target'."""
    if isinstance(policy, (int, float)) and not isinstance(policy, bool):
        if policy <= 0:
            raise ConfigurationError("kernel spread gamma must be positive")
        return float(policy)
    if policy == "median":
        return choose_spread(centers)
    if policy == "largest-gap":
        return spread_from_gap(centers, "largest")
    if policy == "smallest-gap":
        return spread_from_gap(centers, "smallest")
    if policy == "cond-target":
        return choose_spread_cond(centers)
    raise ConfigurationError(f"unknown spread policy {policy!r}")


def default_regularization(kernel_matrix):
    """lambda = 1e-10 * trace(Theta) / N."""
    return 1e-10 * float(np.trace(kernel_matrix)) / kernel_matrix.shape[0]


def choose_spread_cv(centers, coefficients, fold_size, candidates=None):
    """Pick gamma by leave-one-block-out cross-validation.

    Folds are contiguous center blocks of fold_size (one parameter line of a
    (parameter, time) grid laid out by joint_centers); only interior blocks
    are predicted so every fold is an interpolation task.  Each candidate is
    scored with the default ridge term, and the widest kernel (smallest
    gamma) among near-optimal scores wins.
    """
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    L = np.atleast_2d(np.asarray(coefficients, dtype=float))
    n = centers.shape[0]
    if fold_size < 1 or n % fold_size:
        raise DataError("fold_size must divide the number of centers")
    n_blocks = n // fold_size
    blocks = list(range(1, n_blocks - 1)) if n_blocks >= 3 else list(range(n_blocks))
    if candidates is None:
        lo_r, hi_r = normalization_ranges(centers)
        d = _pairwise(normalize(centers, lo_r, hi_r))
        g_wide = 1.0 / (2.0 * float(d.max()) ** 2)
        g_narrow = spread_from_gap(centers, "smallest")
        candidates = np.geomspace(g_wide, g_narrow, 12)
    scores = []
    for g in candidates:
        theta = kernel_matrix(centers, g)
        lam = default_regularization(theta)
        total = 0.0
        for b in blocks:
            test = np.arange(b * fold_size, (b + 1) * fold_size)
            keep = np.setdiff1d(np.arange(n), test)
            sub = theta[np.ix_(keep, keep)] + lam * np.eye(keep.size)
            try:
                w = sla.cho_solve(sla.cho_factor(sub), L[:, keep].T)
            except np.linalg.LinAlgError:
                total = np.inf
                break
            pred = theta[np.ix_(test, keep)] @ w
            total += float(np.sum((pred - L[:, test].T) ** 2))
        scores.append(total)
    scores = np.asarray(scores)
    best = scores.min()
    if not np.isfinite(best):
        raise ConditioningError("no cross-validation candidate was solvable")
    ok = np.flatnonzero(scores <= best * (1.0 + 1e-9))
    return float(np.asarray(candidates)[ok[0]])


@dataclass
class RBFInterpolant:
    centers: np.ndarray          # raw coordinates, (N, dim)
    lo: np.ndarray               # normalization ranges per coordinate
    hi: np.ndarray
    gamma: float
    lam_reg: float
    weights: np.ndarray          # (n_rows, N)
    cond_estimate: float = np.nan
    meta: dict = dc_field(default_factory=dict)

    @property
    def n_centers(self):
        return self.centers.shape[0]

    def _kernel_row(self, points):
        x = normalize(points, self.lo, self.hi)
        c = normalize(self.centers, self.lo, self.hi)
        d = ssd.cdist(x, c)
        return gaussian_kernel(d, self.gamma)

    def evaluate(self, mu, t):
        """Interpolated coefficient vector at one (mu, t) query."""
        point = np.concatenate([np.atleast_1d(np.asarray(mu, dtype=float)).ravel(),
                                [float(t)]])
        return self.evaluate_points(point[None, :])[0]

    def evaluate_points(self, points):
        """(n_query, n_rows) values at raw-coordinate query points."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if points.shape[1] != self.centers.shape[1]:
            raise DimensionError(
                f"query has {points.shape[1]} coordinates, centers have "
                f"{self.centers.shape[1]}")
        return self._kernel_row(points) @ self.weights.T

    def in_hull(self, mu, t):
        """Inside the normalized training bounding box (small tolerance)."""
        point = np.concatenate([np.atleast_1d(np.asarray(mu, dtype=float)).ravel(),
                                [float(t)]])
        x = normalize(point[None, :], self.lo, self.hi)[0]
        return bool(np.all(x >= -1e-9) and np.all(x <= 1.0 + 1e-9))


def kernel_matrix(centers, gamma):
    lo, hi = normalization_ranges(centers)
    pts = normalize(centers, lo, hi)
    d = ssd.squareform(_pairwise(pts))
    return gaussian_kernel(d, gamma)


def train(centers, coefficients, gamma, lam_reg=0.0):
    """Fit weights so that (Theta + lam I) w_i = L_i for each coefficient row.

    With lam_reg = 0 the fit interpolates: the training residual must come
    out below 1e-8 relative, and a kernel matrix with condition estimate
    beyond 1e14 raises ConditioningError advising regularization.
    """
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    L = np.atleast_2d(np.asarray(coefficients, dtype=float))
    if L.shape[1] != centers.shape[0]:
        raise DimensionError(
            f"coefficient matrix has {L.shape[1]} columns for "
            f"{centers.shape[0]} centers")
    if lam_reg < 0.0:
        raise ConfigurationError("lam_reg must be non-negative")
    theta = kernel_matrix(centers, gamma)
    cond = float(np.linalg.cond(theta))
    if lam_reg == 0.0 and (not np.isfinite(cond) or cond > COND_LIMIT):
        raise ConditioningError(
            f"kernel matrix condition estimate {cond:.3e} exceeds "
            f"{COND_LIMIT:.0e}; increase gamma or use regularization")
    system = theta + lam_reg * np.eye(theta.shape[0])
    try:
        cho = sla.cho_factor(system)
    except np.linalg.LinAlgError as exc:
        raise ConditioningError(
            f"kernel system not positive definite ({exc}); "
            "increase gamma or use regularization") from exc
    w = sla.cho_solve(cho, L.T)
    # one step of iterative refinement tightens the residual at high condition
    w += sla.cho_solve(cho, L.T - system @ w)
    weights = w.T
    if lam_reg == 0.0:
        resid = np.linalg.norm(theta @ weights.T - L.T)
        scale = max(np.linalg.norm(L), 1e-300)
        if resid > 1e-8 * scale:
            raise ConditioningError(
                f"interpolation residual {resid / scale:.3e} relative exceeds "
                "1e-8; kernel system too ill-conditioned at lam_reg = 0")
    lo, hi = normalization_ranges(centers)
    return RBFInterpolant(centers=centers.copy(), lo=lo, hi=hi, gamma=float(gamma),
                          lam_reg=float(lam_reg), weights=weights,
                          cond_estimate=cond)


def joint_centers(mus, times):
    """Raw (mu..., t) coordinates for every (parameter, time) pair, ordered
    like the snapshot columns (all times of the first mu, then the next)."""
    mus = np.atleast_2d(np.asarray(mus, dtype=float))
    times = np.asarray(times, dtype=float).ravel()
    n_mu, dim = mus.shape
    out = np.empty((n_mu * times.size, dim + 1))
    for k in range(n_mu):
        rows = slice(k * times.size, (k + 1) * times.size)
        out[rows, :dim] = mus[k]
        out[rows, dim] = times
    return out


def save_interpolant(path, interp):
    from .storage import save_arrays

    save_arrays(path, {
        "centers": interp.centers, "lo": interp.lo, "hi": interp.hi,
        "weights": interp.weights,
        "scalars": np.array([interp.gamma, interp.lam_reg,
                             interp.cond_estimate])})


def load_interpolant(path):
    from .storage import load_arrays

    a = load_arrays(path)
    gamma, lam_reg, cond = a["scalars"]
    return RBFInterpolant(centers=a["centers"], lo=a["lo"], hi=a["hi"],
                          gamma=float(gamma), lam_reg=float(lam_reg),
                          weights=a["weights"], cond_estimate=float(cond))
