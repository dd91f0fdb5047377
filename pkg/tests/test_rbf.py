"""Gaussian RBF interpolation: exactness, spread policies, conditioning."""

import numpy as np
import pytest

from romkit import rbf
from romkit.errors import (
    ConditioningError,
    ConfigurationError,
    DataError,
    DimensionError,
)


def _grid_centers(n_mu=6, n_time=8):
    mus = np.column_stack([np.linspace(0.50, 0.60, n_mu),
                           np.linspace(0.70, 0.80, n_mu)])
    times = np.linspace(0.1, 0.1 * n_time, n_time)
    return rbf.joint_centers(mus, times), mus, times


def _smooth_rows(centers, n_rows=3):
    """Smooth test functions of the raw (mu1, mu2, t) coordinates."""
    x, y, t = centers.T
    rows = [np.sin(8 * x) * np.cos(6 * y) + t,
            np.exp(-((x - 0.55) ** 2 + (y - 0.75) ** 2) * 50) * np.cos(t),
            x * y * t + 0.3]
    return np.array(rows[:n_rows])


def test_joint_centers_layout():
    centers, mus, times = _grid_centers(3, 4)
    assert centers.shape == (12, 3)
    # all times of the first parameter point first
    assert np.allclose(centers[:4, :2], mus[0])
    assert np.allclose(centers[:4, 2], times)
    assert np.allclose(centers[4:8, :2], mus[1])


def test_gaussian_kernel_basics():
    assert rbf.gaussian_kernel(0.0, 5.0) == 1.0
    assert rbf.gaussian_kernel(2.0, 0.25) == pytest.approx(np.exp(-1.0))
    with pytest.raises(ConfigurationError):
        rbf.gaussian_kernel(1.0, 0.0)


def test_normalization_handles_constant_coordinate():
    pts = np.array([[1.0, 5.0], [2.0, 5.0], [3.0, 5.0]])
    lo, hi = rbf.normalization_ranges(pts)
    z = rbf.normalize(pts, lo, hi)
    assert np.allclose(z[:, 0], [0.0, 0.5, 1.0])
    assert np.allclose(z[:, 1], 0.0)


def test_train_reproduces_centers_exactly():
    centers, _, _ = _grid_centers()
    L = _smooth_rows(centers)
    gamma = rbf.resolve_spread(centers, "cond-target")
    interp = rbf.train(centers, L, gamma, lam_reg=0.0)
    got = interp.evaluate_points(centers).T
    err = np.abs(got - L).max() / np.abs(L).max()
    assert err < 1e-8
    assert interp.lam_reg == 0.0
    one = interp.evaluate(centers[5, :2], centers[5, 2])
    assert np.allclose(one, L[:, 5], atol=1e-8 * np.abs(L).max())


def test_interpolation_accuracy_between_centers():
    # halving the grid spacing must shrink the midpoint error of a smooth
    # function; exact rates depend on the spread policy so just require decay
    errs = []
    for n_time in (6, 12):
        centers, mus, times = _grid_centers(6, n_time)
        L = _smooth_rows(centers, n_rows=1)
        gamma = rbf.resolve_spread(centers, "largest-gap")
        lam = rbf.default_regularization(rbf.kernel_matrix(centers, gamma))
        interp = rbf.train(centers, L, gamma, lam_reg=lam)
        mid_t = 0.5 * (times[2] + times[3])
        queries = np.column_stack([np.repeat(mus, 1, axis=0),
                                   np.full(len(mus), mid_t)])
        truth = _smooth_rows(queries.reshape(-1, 3), n_rows=1)
        got = interp.evaluate_points(queries).T
        errs.append(np.abs(got - truth).max())
    assert errs[1] < 0.5 * errs[0]


def test_spread_policies_order():
    centers, _, _ = _grid_centers()
    g_small = rbf.resolve_spread(centers, "smallest-gap")
    g_large = rbf.resolve_spread(centers, "largest-gap")
    g_med = rbf.resolve_spread(centers, "median")
    # narrower kernels (larger gamma) come from smaller length scales
    assert g_small >= g_large
    assert g_med <= g_large
    assert rbf.resolve_spread(centers, 12.5) == 12.5
    with pytest.raises(ConfigurationError):
        rbf.resolve_spread(centers, -1.0)
    with pytest.raises(ConfigurationError):
        rbf.resolve_spread(centers, "octopus")


def test_cond_target_policy_bounds_condition():
    centers, _, _ = _grid_centers()
    gamma = rbf.choose_spread_cond(centers, target_cond=1e10)
    cond = np.linalg.cond(rbf.kernel_matrix(centers, gamma))
    assert cond <= 1.1e10
    # and it is the widest such kernel up to the bisection tolerance
    cond_wider = np.linalg.cond(rbf.kernel_matrix(centers, gamma / 1.2))
    assert cond_wider > 1e10
    with pytest.raises(ConfigurationError):
        rbf.choose_spread_cond(centers, target_cond=10.0)


def test_train_rejects_ill_conditioned_interpolation():
    centers, _, _ = _grid_centers()
    g_wide = rbf.choose_spread(centers) / 400.0
    with pytest.raises(ConditioningError):
        rbf.train(centers, _smooth_rows(centers), g_wide, lam_reg=0.0)
    # ridge regularization accepts the same kernel
    lam = rbf.default_regularization(rbf.kernel_matrix(centers, g_wide))
    interp = rbf.train(centers, _smooth_rows(centers), g_wide, lam_reg=lam)
    assert interp.lam_reg == lam


def test_train_validation():
    centers, _, _ = _grid_centers()
    L = _smooth_rows(centers)
    with pytest.raises(DimensionError):
        rbf.train(centers, L[:, :-1], 10.0)
    with pytest.raises(ConfigurationError):
        rbf.train(centers, L, 10.0, lam_reg=-1e-3)
    with pytest.raises(DataError):
        rbf.train(np.vstack([centers, centers[:1]]),
                  np.hstack([L, L[:, :1]]), 10.0)


def test_evaluate_points_query_dimension():
    centers, _, _ = _grid_centers()
    interp = rbf.train(centers, _smooth_rows(centers),
                       rbf.resolve_spread(centers, "smallest-gap"))
    with pytest.raises(DimensionError):
        interp.evaluate_points(np.zeros((2, 2)))


def test_in_hull_bounding_box():
    centers, mus, times = _grid_centers()
    interp = rbf.train(centers, _smooth_rows(centers),
                       rbf.resolve_spread(centers, "smallest-gap"))
    assert interp.in_hull((0.55, 0.75), 0.3)
    assert interp.in_hull(mus[0], times[0])
    assert not interp.in_hull((0.65, 0.75), 0.3)
    assert not interp.in_hull((0.55, 0.75), times[-1] + 0.5)


def test_cross_validation_picks_reasonable_spread():
    centers, mus, times = _grid_centers(6, 8)
    L = _smooth_rows(centers)
    gamma = rbf.choose_spread_cv(centers, L, fold_size=len(times))
    assert gamma > 0.0
    # the CV winner should not be worse than the narrowest candidate at
    # predicting a held-out middle parameter line
    narrow = rbf.spread_from_gap(centers, "smallest")
    hold = slice(3 * len(times), 4 * len(times))
    keep = np.setdiff1d(np.arange(len(centers)), np.arange(hold.start, hold.stop))

    def holdout_error(g):
        lam = rbf.default_regularization(rbf.kernel_matrix(centers[keep], g))
        fit = rbf.train(centers[keep], L[:, keep], g, lam_reg=lam)
        pred = fit.evaluate_points(centers[hold]).T
        return np.abs(pred - L[:, hold]).max()

    assert holdout_error(gamma) <= holdout_error(narrow) * (1.0 + 1e-9)
    with pytest.raises(DataError):
        rbf.choose_spread_cv(centers, L, fold_size=7)


def test_interpolant_storage_roundtrip(tmp_path):
    centers, _, _ = _grid_centers()
    L = _smooth_rows(centers)
    interp = rbf.train(centers, L, rbf.resolve_spread(centers, "cond-target"))
    path = tmp_path / "rbf.bin"
    rbf.save_interpolant(path, interp)
    back = rbf.load_interpolant(path)
    assert np.array_equal(back.centers, interp.centers)
    assert back.gamma == interp.gamma
    assert back.lam_reg == interp.lam_reg
    q = np.array([[0.55, 0.74, 0.33]])
    assert np.allclose(back.evaluate_points(q), interp.evaluate_points(q))
