"""scikit-learn style estimators wrapping the full pipeline.

Feature curves are passed as an array of shape ``(n_samples, n_features,
n_points)`` (or a list of ``(n_samples, n_points)`` arrays); response curves
as ``(n_samples, n_points)``. All curves share one uniform grid on [0, 1].
"""

from __future__ import annotations

import time

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .dal import DalConfig
from .functional import (
    CurveSet,
    Grid,
    compute_fpc,
    project,
    reconstruct_surface,
    standardize,
    ScoreDesign,
)
from .penalty import as_blocks
from .scalar import build_scalar_design, reconstruct_coefficient_curve
from .selection import PathConfig, fit_path, fit_single, fold_assignment, relax

__all__ = [
    "CurveStandardizer",
    "FpcProjector",
    "FunctionOnFunctionRegressor",
    "ScalarOnFunctionRegressor",
    "select_estimation_k",
]


def _check_features(X) -> np.ndarray:
    if isinstance(X, (list, tuple)):
        X = np.stack([np.asarray(x, dtype=float) for x in X], axis=1)
    X = np.asarray(X, dtype=float)
    if X.ndim == 2:
        X = X[:, None, :]
    if X.ndim != 3:
        raise ValueError("feature curves must have shape (n_samples, n_features, n_points)")
    if not np.all(np.isfinite(X)):
        raise ValueError("feature curves contain non-finite values")
    return X


def _grid_for(grid, m) -> Grid:
    if grid is None:
        return Grid.uniform(m)
    g = grid if isinstance(grid, Grid) else Grid(np.asarray(grid, float))
    if g.m != m:
        raise ValueError(f"grid has {g.m} points but curves have {m}")
    return g


class CurveStandardizer(TransformerMixin, BaseEstimator):
    """Pointwise centering and scaling of curves sampled on a common grid."""

    def fit(self, X, y=None):
        X = check_array(X)
        _, rec = standardize(CurveSet(X, Grid.uniform(X.shape[1])))
        self.mean_, self.scale_ = rec.ave, rec.sd
        return self

    def transform(self, X):
        check_is_fitted(self, "mean_")
        X = check_array(X)
        return (X - self.mean_) / self.scale_

    def inverse_transform(self, X):
        check_is_fitted(self, "mean_")
        return np.asarray(X) * self.scale_ + self.mean_


class FpcProjector(TransformerMixin, BaseEstimator):
    """Project curves on the leading functional principal components of the fitted sample.

    Parameters
    ----------
    variance_threshold : float, default=0.9
        Smallest cumulative explained variance to retain.
    k_max : int, default=10
        Upper bound on the number of components.
    n_components : int, optional
        Fixed number of components; overrides the threshold.
    """

    def __init__(self, variance_threshold=0.9, k_max=10, n_components=None):
        self.variance_threshold = variance_threshold
        self.k_max = k_max
        self.n_components = n_components

    def fit(self, X, y=None):
        X = check_array(X)
        grid = Grid.uniform(X.shape[1])
        self.mean_ = X.mean(axis=0)
        self.basis_ = compute_fpc(
            CurveSet(X - self.mean_, grid), self.variance_threshold, self.k_max, self.n_components
        )
        self.n_components_ = self.basis_.k
        return self

    def transform(self, X):
        check_is_fitted(self, "basis_")
        X = check_array(X)
        return project(CurveSet(X - self.mean_, self.basis_.grid), self.basis_)

    def inverse_transform(self, scores):
        check_is_fitted(self, "basis_")
        return np.asarray(scores) @ self.basis_.functions.T + self.mean_


def select_estimation_k(response: CurveSet, features, candidates, folds=5, seed=0, ridge_eps=None):
    """Basis size minimizing the k-fold relaxed prediction error in curve space.

    ``response`` and ``features`` are standardized curve sets; ``features``
    holds only the selected ones. Returns ``(best_k, errors)`` where
    ``errors`` maps each feasible candidate to its mean held-out error.
    """
    w = response.grid.weights
    labels = fold_assignment(response.n, folds, seed)
    errors = {}
    for k in candidates:
        try:
            basis = compute_fpc(response, n_components=int(k))
        except Exception:
            continue
        Y = project(response, basis)
        X = np.hstack([project(f, basis) for f in features])
        if X.shape[1] >= response.n * (folds - 1) / folds:
            continue
        design = ScoreDesign(Y, X, tuple(range(len(features))), basis.k)
        errs = []
        for f in range(folds):
            tr, te = labels != f, labels == f
            B = relax(design.rows(tr), np.arange(len(features)), ridge_eps)
            pred = (X[te] @ B) @ basis.functions.T
            truth = response.values[te]
            num = np.sqrt(np.maximum((truth - pred) ** 2 @ w, 0.0))
            den = np.sqrt(np.maximum(truth**2 @ w, 0.0))
            errs.append(float(np.mean(num / np.where(den > 0, den, 1.0))))
        errors[int(k)] = float(np.mean(errs))
    if not errors:
        raise ValueError("no feasible basis size for the estimation step")
    return min(errors, key=errors.get), errors


class _PathEstimatorMixin:
    def _path_config(self, gcv_scale=None) -> PathConfig:
        solver = DalConfig(
            tol_kkt3=self.tol,
            tol_kkt1=self.tol,
            sigma0=self.sigma0,
            sigma_growth=self.sigma_growth,
        )
        return PathConfig(
            n_lambda=self.n_lambda,
            c_min=self.c_min,
            alpha=self.alpha,
            max_selected=self.max_selected,
            criterion=self.criterion,
            cv_folds=self.cv_folds,
            adaptive=self.adaptive,
            seed=self.random_state if self.random_state is not None else 0,
            gcv_scale=gcv_scale,
            solver=solver,
        )

    def _names(self, p):
        if self.feature_names is None:
            return tuple(f"x{j}" for j in range(p))
        names = tuple(str(n) for n in self.feature_names)
        if len(names) != p:
            raise ValueError(f"{len(names)} feature names for {p} features")
        return names

    def _run(self, design):
        config = self._path_config()
        if self.penalty is not None:
            lambda1, lambda2 = self.penalty
            return fit_single(design, float(lambda1), float(lambda2), config)
        return fit_path(design, config)


class FunctionOnFunctionRegressor(_PathEstimatorMixin, RegressorMixin, BaseEstimator):
    """Sparse function-on-function linear regression.

    Each feature curve acts on the response through a coefficient surface;
    a block elastic-net penalty on the response-FPC scores of the surfaces
    selects the features, solved by a dual augmented Lagrangian method over
    a warm-started penalty path.

    Parameters
    ----------
    variance_threshold : float, default=0.9
        Response variance the FPC basis must explain.
    k_max : int, default=10
        Cap on the basis size.
    n_components : int, optional
        Fixed basis size; overrides the threshold.
    alpha : float, default=0.2
        Share of the group penalty in the total penalty level.
    n_lambda : int, default=50
        Number of path points.
    c_min : float, default=0.01
        Last path point as a fraction of the null-model level.
    criterion : {"gcv", "cv"}, default="gcv"
    cv_folds : int, default=5
    adaptive : {"none", "full", "soft"}, default="none"
        Adaptive reweighting step after the initial path.
    penalty : tuple of float, optional
        Fixed ``(lambda1, lambda2)`` on the standardized score problem;
        skips the path and solves once.
    max_selected : int, optional
        Stop the path once more blocks than this are selected.
    tol : float, default=1e-6
        KKT residual tolerance of the solver.
    sigma0 : float, optional
        Initial augmented Lagrangian parameter; ``None`` means ``max(5/p, 1e-4)``.
    sigma_growth : float, default=5.0
    estimation_k : {"cv", "fixed"}, default="cv"
        In soft mode, re-choose the basis size used for the final estimate by
        5-fold cv; ignored otherwise.
    random_state : int, default=0
        Seed for fold assignment.
    grid : array-like, optional
        Common grid of the curves; defaults to equispaced points on [0, 1].
    feature_names : sequence of str, optional
        Labels of the features in path records; defaults to ``x0, x1, ...``.

    Attributes
    ----------
    selected_ : ndarray of int
        Indices of the selected features.
    surfaces_ : ndarray of shape (n_selected, n_points, n_points)
        Coefficient surfaces of the selected features, on the original scale,
        indexed ``[s, t]``.
    intercept_ : ndarray of shape (n_points,)
    path_ : PathResult
    basis_ : FpcBasis
        Response basis used for selection.
    k_ : int
    """

    def __init__(
        self,
        variance_threshold=0.9,
        k_max=10,
        n_components=None,
        alpha=0.2,
        n_lambda=50,
        c_min=0.01,
        criterion="gcv",
        cv_folds=5,
        adaptive="none",
        penalty=None,
        max_selected=None,
        tol=1e-6,
        sigma0=None,
        sigma_growth=5.0,
        estimation_k="cv",
        random_state=0,
        grid=None,
        feature_names=None,
    ):
        self.variance_threshold = variance_threshold
        self.k_max = k_max
        self.n_components = n_components
        self.alpha = alpha
        self.n_lambda = n_lambda
        self.c_min = c_min
        self.criterion = criterion
        self.cv_folds = cv_folds
        self.adaptive = adaptive
        self.penalty = penalty
        self.max_selected = max_selected
        self.tol = tol
        self.sigma0 = sigma0
        self.sigma_growth = sigma_growth
        self.estimation_k = estimation_k
        self.random_state = random_state
        self.grid = grid
        self.feature_names = feature_names

    def fit(self, X, y):
        t0 = time.perf_counter()
        X = _check_features(X)
        y = check_array(y)
        if X.shape[0] != y.shape[0] or X.shape[2] != y.shape[1]:
            raise ValueError("features and response must share samples and grid")
        grid = _grid_for(self.grid, y.shape[1])
        y_std, rec_y = standardize(CurveSet(y, grid))
        # feature-major copy: slicing the sample-major array per feature is cache-hostile
        per_feature = np.ascontiguousarray(X.transpose(1, 0, 2))
        std = [standardize(CurveSet(x, grid)) for x in per_feature]
        feats = [s[0] for s in std]
        basis = compute_fpc(y_std, self.variance_threshold, self.k_max, self.n_components)
        design = ScoreDesign(
            project(y_std, basis),
            np.hstack([project(f, basis) for f in feats]),
            self._names(X.shape[1]),
            basis.k,
        )
        path = self._run(design)
        selected = np.asarray(path.selected, dtype=int)
        B = path.coef
        est_basis = basis
        self.estimation_errors_ = None
        if path.adaptive == "soft" and self.estimation_k == "cv" and selected.size:
            upper = max(basis.k, self.k_max)
            candidates = range(basis.k, upper + 1)
            k_est, self.estimation_errors_ = select_estimation_k(
                y_std, [feats[j] for j in selected], candidates, 5, self._path_config().seed
            )
            if k_est != basis.k:
                est_basis = compute_fpc(y_std, n_components=k_est)
                sub = ScoreDesign(
                    project(y_std, est_basis),
                    np.hstack([project(feats[j], est_basis) for j in selected]),
                    tuple(range(selected.size)),
                    k_est,
                )
                B_sub = relax(sub, np.arange(selected.size))
                B = np.zeros((X.shape[1] * k_est, k_est))
                B[(selected[:, None] * k_est + np.arange(k_est)).ravel()] = B_sub
        blocks = as_blocks(B, X.shape[1])
        surfaces = np.empty((selected.size, grid.m, grid.m))
        intercept = rec_y.ave.copy()
        w = grid.weights
        for i, j in enumerate(selected):
            std_surface = reconstruct_surface(blocks[j], est_basis)
            surfaces[i] = std_surface * rec_y.sd[None, :] / std[j][1].sd[:, None]
            intercept -= (std[j][1].ave * w) @ surfaces[i]
        self.grid_ = grid
        self.basis_ = basis
        self.estimation_basis_ = est_basis
        self.k_ = basis.k
        self.design_ = design
        self.path_ = path
        self.selected_ = selected
        self.surfaces_ = surfaces
        self.intercept_ = intercept
        self.n_features_in_ = X.shape[1]
        self.fit_time_ms_ = 1e3 * (time.perf_counter() - t0)
        return self

    def coefficient_surface(self, j: int) -> np.ndarray:
        """Surface of feature ``j`` (zero when not selected)."""
        check_is_fitted(self, "selected_")
        hit = np.flatnonzero(self.selected_ == j)
        if hit.size:
            return self.surfaces_[hit[0]]
        return np.zeros((self.grid_.m, self.grid_.m))

    def predict(self, X):
        check_is_fitted(self, "selected_")
        X = _check_features(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        out = np.tile(self.intercept_, (X.shape[0], 1))
        w = self.grid_.weights
        for j, surf in zip(self.selected_, self.surfaces_):
            out += (X[:, j] * w) @ surf
        return out


class ScalarOnFunctionRegressor(_PathEstimatorMixin, RegressorMixin, BaseEstimator):
    """Sparse scalar-on-function linear regression.

    Same penalty and solver as :class:`FunctionOnFunctionRegressor`, with
    each feature represented on its own FPC basis and a scalar response.
    The gcv denominator is ``(n - dof)**2``.

    Attributes
    ----------
    selected_ : ndarray of int
    curves_ : ndarray of shape (n_selected, n_points)
        Coefficient curves of the selected features on the original scale.
    intercept_ : float
    path_ : PathResult
    k_ : int
    """

    def __init__(
        self,
        variance_threshold=0.9,
        k_max=10,
        k=None,
        alpha=0.2,
        n_lambda=50,
        c_min=0.01,
        criterion="gcv",
        cv_folds=5,
        adaptive="none",
        penalty=None,
        max_selected=None,
        tol=1e-6,
        sigma0=None,
        sigma_growth=5.0,
        random_state=0,
        grid=None,
        feature_names=None,
    ):
        self.variance_threshold = variance_threshold
        self.k_max = k_max
        self.k = k
        self.alpha = alpha
        self.n_lambda = n_lambda
        self.c_min = c_min
        self.criterion = criterion
        self.cv_folds = cv_folds
        self.adaptive = adaptive
        self.penalty = penalty
        self.max_selected = max_selected
        self.tol = tol
        self.sigma0 = sigma0
        self.sigma_growth = sigma_growth
        self.random_state = random_state
        self.grid = grid
        self.feature_names = feature_names

    def fit(self, X, y):
        t0 = time.perf_counter()
        X = _check_features(X)
        y = check_array(y, ensure_2d=False).astype(float).ravel()
        if X.shape[0] != y.size:
            raise ValueError("features and response must share samples")
        grid = _grid_for(self.grid, X.shape[2])
        y_mean, y_sd = float(y.mean()), float(y.std())
        if y_sd <= 0:
            raise ValueError("response is constant")
        # feature-major copy: slicing the sample-major array per feature is cache-hostile
        per_feature = np.ascontiguousarray(X.transpose(1, 0, 2))
        std = [standardize(CurveSet(x, grid)) for x in per_feature]
        design = build_scalar_design(
            (y - y_mean) / y_sd,
            [s[0] for s in std],
            self.variance_threshold,
            self.k,
            self.k_max,
            self._names(X.shape[1]),
        )
        path = self._run(design)
        selected = np.asarray(path.selected, dtype=int)
        blocks = as_blocks(path.coef, X.shape[1])
        curves = np.empty((selected.size, grid.m))
        intercept = y_mean
        w = grid.weights
        for i, j in enumerate(selected):
            curve = reconstruct_coefficient_curve(blocks[j], design.bases[j])
            curves[i] = y_sd * curve / std[j][1].sd
            intercept -= float(np.sum(curves[i] * std[j][1].ave * w))
        self.grid_ = grid
        self.design_ = design
        self.k_ = design.k
        self.path_ = path
        self.selected_ = selected
        self.curves_ = curves
        self.intercept_ = intercept
        self.n_features_in_ = X.shape[1]
        self.fit_time_ms_ = 1e3 * (time.perf_counter() - t0)
        return self

    def predict(self, X):
        check_is_fitted(self, "selected_")
        X = _check_features(X)
        out = np.full(X.shape[0], self.intercept_)
        w = self.grid_.weights
        for j, curve in zip(self.selected_, self.curves_):
            out += (X[:, j] * w) @ curve
        return out
