"""Scalar-on-function regression: scalar responses, curve-valued features.

Each feature is represented on its own FPC basis, coefficient blocks are
``k``-vectors and the dual variable lives in ``R^n``. The solver is the
generic one in :mod:`sparsefof.dal` run with a single response column, so
the Newton system is ``n x n`` whatever ``k`` is.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import dal
from .exceptions import DimensionMismatch, RankDeficient
from .functional import FpcBasis, compute_fpc, project
from .penalty import PenaltyParams
from .selection import lambda_max

__all__ = [
    "ScalarDesign",
    "build_scalar_design",
    "scalar_solve",
    "scalar_lambda_max",
    "reconstruct_coefficient_curve",
]


@dataclass(frozen=True)
class ScalarDesign:
    """Responses ``Y`` (length n) and per-feature score blocks ``X`` (n x p*k)."""

    Y: np.ndarray
    X: np.ndarray
    bases: tuple
    k: int
    block_names: tuple

    def __post_init__(self):
        Y = np.asarray(self.Y, dtype=float).ravel()
        if not np.all(np.isfinite(Y)):
            raise ValueError("responses must be finite")
        if self.X.shape != (Y.size, len(self.block_names) * self.k):
            raise DimensionMismatch("X must be n x p*k")
        object.__setattr__(self, "Y", Y)
        object.__setattr__(self, "block_names", tuple(self.block_names))

    @property
    def n(self) -> int:
        return self.Y.size

    @property
    def p(self) -> int:
        return len(self.block_names)

    @property
    def block_size(self) -> int:
        return self.k

    @property
    def response_matrix(self) -> np.ndarray:
        return self.Y[:, None]

    @property
    def gcv_scale(self) -> int:
        # one scalar observation per sample
        return 1

    def block(self, j: int) -> np.ndarray:
        return self.X[:, j * self.k : (j + 1) * self.k]

    def restrict(self, blocks) -> "ScalarDesign":
        blocks = np.asarray(blocks, dtype=int)
        cols = (blocks[:, None] * self.k + np.arange(self.k)).ravel()
        return ScalarDesign(
            self.Y,
            self.X[:, cols],
            tuple(self.bases[j] for j in blocks),
            self.k,
            tuple(self.block_names[j] for j in blocks),
        )

    def rows(self, idx) -> "ScalarDesign":
        return ScalarDesign(self.Y[idx], self.X[idx], self.bases, self.k, self.block_names)


def build_scalar_design(
    responses,
    features,
    variance_threshold: float = 0.9,
    k: int | None = None,
    k_max: int = 10,
    block_names=None,
) -> ScalarDesign:
    """Project each feature on its own FPC basis with a common size ``k``.

    Without an explicit ``k`` the common size is the largest per-feature
    threshold choice, capped at ``k_max``. A feature whose rank is below the
    common ``k`` raises :class:`RankDeficient`.
    """
    features = list(features)
    if not features:
        raise ValueError("at least one feature is required")
    Y = np.asarray(responses, dtype=float).ravel()
    for f in features:
        if f.n != Y.size:
            raise DimensionMismatch("every feature needs one curve per response")
    if k is None:
        k = max(compute_fpc(f, variance_threshold, k_max).k for f in features)
    bases = []
    for j, f in enumerate(features):
        try:
            bases.append(compute_fpc(f, variance_threshold, k_max, n_components=k))
        except RankDeficient as exc:
            raise RankDeficient(f"feature {j}: {exc}") from exc
    X = np.hstack([project(f, b) for f, b in zip(features, bases)])
    if block_names is None:
        block_names = tuple(f"x{j}" for j in range(len(features)))
    return ScalarDesign(Y, X, tuple(bases), int(k), tuple(block_names))


def scalar_lambda_max(design: ScalarDesign, weights=None) -> float:
    return lambda_max(design, weights)


def scalar_solve(design: ScalarDesign, params: PenaltyParams, config: dal.DalConfig | None = None, warm=None):
    """Solve the scalar-response problem; the coefficient is returned as ``p*k x 1``."""
    return dal.solve(design, params, config, warm)


def reconstruct_coefficient_curve(block, basis: FpcBasis) -> np.ndarray:
    """Coefficient curve ``e(t) @ block`` on the basis grid."""
    block = np.asarray(block, dtype=float).ravel()
    if block.size != basis.k:
        raise DimensionMismatch(f"expected {basis.k} coefficients, got {block.size}")
    return basis.functions @ block
