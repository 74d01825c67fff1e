"""Discretized curves, functional principal components and score matrices.

All inner products and norms use the trapezoid rule on a uniform grid.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import DegenerateVariance, DimensionMismatch, GridMismatch, RankDeficient

__all__ = [
    "Grid",
    "CurveSet",
    "FpcBasis",
    "ScoreDesign",
    "StandardizationRecord",
    "standardize",
    "compute_fpc",
    "project",
    "reconstruct_surface",
    "build_design",
    "inner",
    "norm",
]

SD_FLOOR = 1e-12


@dataclass(frozen=True, eq=False)
class Grid:
    """Uniform grid of ``m >= 3`` points in ``[0, 1]``."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 1 or pts.size < 3:
            raise ValueError("a grid needs at least 3 points")
        if not np.all(np.isfinite(pts)):
            raise ValueError("grid points must be finite")
        if pts[0] < 0.0 or pts[-1] > 1.0:
            raise ValueError("grid points must lie in [0, 1]")
        steps = np.diff(pts)
        if np.any(steps <= 0):
            raise ValueError("grid points must be strictly increasing")
        h = (pts[-1] - pts[0]) / (pts.size - 1)
        if np.max(np.abs(steps - h)) > 1e-9 * h:
            raise ValueError("grid must be uniformly spaced")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @classmethod
    def uniform(cls, m: int, start: float = 0.0, end: float = 1.0) -> "Grid":
        return cls(np.linspace(start, end, m))

    @property
    def m(self) -> int:
        return self.points.size

    @property
    def spacing(self) -> float:
        return float((self.points[-1] - self.points[0]) / (self.m - 1))

    @property
    def weights(self) -> np.ndarray:
        """Trapezoid quadrature weights."""
        w = np.full(self.m, self.spacing)
        w[0] *= 0.5
        w[-1] *= 0.5
        return w

    def __eq__(self, other):
        if not isinstance(other, Grid):
            return NotImplemented
        return self.m == other.m and np.allclose(self.points, other.points, rtol=0, atol=1e-12)

    def __hash__(self):
        return hash((self.m, round(self.points[0], 12), round(self.points[-1], 12)))


def inner(f, g, grid: Grid) -> np.ndarray:
    """Quadrature inner product along the last axis."""
    return np.sum(np.asarray(f) * np.asarray(g) * grid.weights, axis=-1)


def norm(f, grid: Grid) -> np.ndarray:
    return np.sqrt(np.maximum(inner(f, f, grid), 0.0))


@dataclass(frozen=True, eq=False)
class CurveSet:
    """``n`` curves sampled on a shared grid; ``values`` is ``n x m``."""

    values: np.ndarray
    grid: Grid

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim == 1:
            vals = vals[None, :]
        if vals.ndim != 2 or vals.shape[1] != self.grid.m:
            raise DimensionMismatch(
                f"curve values of shape {vals.shape} do not match a grid of {self.grid.m} points"
            )
        if not np.all(np.isfinite(vals)):
            raise ValueError("curve values must be finite")
        object.__setattr__(self, "values", vals)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def subset(self, rows) -> "CurveSet":
        return CurveSet(self.values[rows], self.grid)


@dataclass(frozen=True)
class StandardizationRecord:
    ave: np.ndarray
    sd: np.ndarray

    def apply(self, curves: CurveSet) -> CurveSet:
        return CurveSet((curves.values - self.ave) / self.sd, curves.grid)

    def invert(self, values: np.ndarray) -> np.ndarray:
        return np.asarray(values) * self.sd + self.ave


@dataclass(frozen=True)
class FpcBasis:
    """Orthonormal eigenfunctions (columns of ``functions``) on ``grid``.

    ``explained_variance`` is cumulative; ``spectrum`` keeps every nonnegative
    eigenvalue of the covariance operator for later inspection.
    """

    functions: np.ndarray
    eigenvalues: np.ndarray
    explained_variance: np.ndarray
    grid: Grid
    spectrum: np.ndarray = field(default=None, repr=False)

    @property
    def k(self) -> int:
        return self.functions.shape[1]

    def gram(self) -> np.ndarray:
        """Quadrature Gram matrix of the basis (identity up to round-off)."""
        w = self.grid.weights
        return self.functions.T @ (w[:, None] * self.functions)

    def truncate(self, k: int) -> "FpcBasis":
        return FpcBasis(
            self.functions[:, :k],
            self.eigenvalues[:k],
            self.explained_variance[:k],
            self.grid,
            self.spectrum,
        )


@dataclass(frozen=True)
class ScoreDesign:
    """Response scores ``Y`` (n x k) and feature scores ``X`` (n x p*k).

    Block ``j`` of ``X`` is ``X[:, j*k:(j+1)*k]``.
    """

    Y: np.ndarray
    X: np.ndarray
    block_names: tuple
    k: int

    def __post_init__(self):
        if self.X.shape[0] != self.Y.shape[0]:
            raise DimensionMismatch("X and Y must have the same number of rows")
        if self.X.shape[1] != len(self.block_names) * self.k:
            raise DimensionMismatch("X must have p*k columns")
        object.__setattr__(self, "block_names", tuple(self.block_names))

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return len(self.block_names)

    @property
    def block_size(self) -> int:
        return self.k

    @property
    def response_matrix(self) -> np.ndarray:
        return self.Y

    @property
    def gcv_scale(self) -> int:
        """Multiplier on the dof in the gcv denominator ``(n - scale * dof)**2``."""
        return self.k

    def block(self, j: int) -> np.ndarray:
        return self.X[:, j * self.k : (j + 1) * self.k]

    def restrict(self, blocks) -> "ScoreDesign":
        blocks = np.asarray(blocks, dtype=int)
        cols = (blocks[:, None] * self.k + np.arange(self.k)).ravel()
        return ScoreDesign(self.Y, self.X[:, cols], tuple(self.block_names[j] for j in blocks), self.k)

    def rows(self, idx) -> "ScoreDesign":
        return ScoreDesign(self.Y[idx], self.X[idx], self.block_names, self.k)


def _check_same_grid(*curve_sets: CurveSet) -> Grid:
    grid = curve_sets[0].grid
    for cs in curve_sets[1:]:
        if cs.grid != grid:
            raise GridMismatch("all curve sets must share one grid")
    return grid


def standardize(curves: CurveSet) -> tuple[CurveSet, StandardizationRecord]:
    """Center and scale every grid coordinate to mean 0 and sd 1.

    The pointwise sd uses the population divisor ``n``.
    """
    if curves.n < 2:
        raise ValueError("standardization needs at least two curves")
    ave = curves.values.mean(axis=0)
    centered = curves.values - ave
    sd = np.sqrt(np.mean(centered**2, axis=0))
    bad = np.flatnonzero(sd < SD_FLOOR)
    if bad.size:
        raise DegenerateVariance(f"constant coordinate(s) at grid index {bad[:5].tolist()}")
    return CurveSet(centered / sd, curves.grid), StandardizationRecord(ave, sd)


def _sign_fix(functions: np.ndarray) -> np.ndarray:
    idx = np.argmax(np.abs(functions), axis=0)
    signs = np.sign(functions[idx, np.arange(functions.shape[1])])
    signs[signs == 0] = 1.0
    return functions * signs


def compute_fpc(
    curves: CurveSet,
    variance_threshold: float = 0.9,
    k_max: int = 10,
    n_components: int | None = None,
) -> FpcBasis:
    """Leading eigenfunctions of the empirical covariance operator.

    Parameters
    ----------
    curves : CurveSet
        Centered curves.
    variance_threshold : float
        Keep the smallest ``k`` whose cumulative explained variance reaches
        this fraction.
    k_max : int
        Hard cap on ``k``.
    n_components : int, optional
        Force a specific ``k`` instead of using the threshold.
    """
    if not 0.0 < variance_threshold <= 1.0:
        raise ValueError("variance_threshold must be in (0, 1]")
    n, m = curves.values.shape
    w = curves.grid.weights
    sw = np.sqrt(w)
    # A = X W^{1/2} / sqrt(n); covariance operator is A^T A in the symmetrized frame
    A = curves.values * sw / np.sqrt(n)
    if n < m:
        evals, avecs = np.linalg.eigh(A @ A.T)
        order = np.argsort(evals)[::-1]
        evals, avecs = evals[order], avecs[:, order]
        pos = evals > 0
        u = np.zeros((m, evals.size))
        u[:, pos] = (A.T @ avecs[:, pos]) / np.sqrt(evals[pos])
    else:
        evals, u = np.linalg.eigh(A.T @ A)
        order = np.argsort(evals)[::-1]
        evals, u = evals[order], u[:, order]
    evals = np.clip(evals, 0.0, None)
    top = evals[0] if evals.size else 0.0
    n_pos = int(np.sum(evals > max(top, 0.0) * 1e-10)) if top > 0 else 0
    if n_pos < 1:
        raise RankDeficient("covariance operator has no positive eigenvalue")
    spectrum = evals[:n_pos]
    cumulative = np.cumsum(spectrum) / spectrum.sum()
    if n_components is not None:
        if n_components > n_pos:
            raise RankDeficient(f"requested {n_components} components but the rank is {n_pos}")
        k = int(n_components)
    else:
        k = int(np.searchsorted(cumulative, variance_threshold - 1e-12) + 1)
        k = min(k, int(k_max), n_pos)
    functions = _sign_fix(u[:, :k] / sw[:, None])
    return FpcBasis(functions, spectrum[:k].copy(), cumulative[:k].copy(), curves.grid, spectrum)


def project(curves: CurveSet, basis: FpcBasis) -> np.ndarray:
    """Quadrature scores ``<curve_i, e_j>``, shape ``n x k``."""
    if curves.grid != basis.grid:
        raise GridMismatch("curves and basis live on different grids")
    return curves.values @ (basis.grid.weights[:, None] * basis.functions)


def reconstruct_surface(block: np.ndarray, basis: FpcBasis) -> np.ndarray:
    """Surface ``e B e^T`` sampled on the grid tensor.

    Rows index the argument paired with the rows of ``block`` (the feature
    side), columns the argument paired with its columns (the response side).
    """
    block = np.asarray(block, dtype=float)
    if block.shape != (basis.k, basis.k):
        raise DimensionMismatch(f"expected a {basis.k}x{basis.k} block, got {block.shape}")
    E = basis.functions
    return E @ block @ E.T


def build_design(
    response: CurveSet,
    features,
    variance_threshold: float = 0.9,
    k_max: int = 10,
    *,
    standardize_inputs: bool = False,
    block_names=None,
    n_components: int | None = None,
):
    """Score design on the response FPC basis.

    Returns ``(design, basis, records)``; ``records`` holds the response
    record followed by one per feature when ``standardize_inputs`` is set,
    otherwise ``None``.
    """
    features = list(features)
    if not features:
        raise ValueError("at least one feature is required")
    _check_same_grid(response, *features)
    records = None
    if standardize_inputs:
        response, rec_y = standardize(response)
        std = [standardize(f) for f in features]
        features = [s[0] for s in std]
        records = [rec_y] + [s[1] for s in std]
    for f in features:
        if f.n != response.n:
            raise DimensionMismatch("every feature needs one curve per response curve")
    basis = compute_fpc(response, variance_threshold, k_max, n_components=n_components)
    Y = project(response, basis)
    X = np.hstack([project(f, basis) for f in features])
    if block_names is None:
        block_names = tuple(f"x{j}" for j in range(len(features)))
    return ScoreDesign(Y, X, tuple(block_names), basis.k), basis, records
