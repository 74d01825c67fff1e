"""Adaptive group elastic-net penalty, its conjugate and their proximal maps.

A block matrix is an array of shape ``(p * kb, q)`` made of ``p`` stacked
``kb x q`` blocks. Function-on-function problems use ``kb = q = k``; the
scalar-response variant uses ``q = 1``. Every operator here is separable
across blocks, and block norms are Frobenius norms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "PenaltyParams",
    "as_blocks",
    "block_norms",
    "penalty_value",
    "conjugate_value",
    "conjugate_gradient",
    "prox_penalty",
    "prox_conjugate",
]


@dataclass(frozen=True)
class PenaltyParams:
    """Penalty levels ``lambda1`` (group), ``lambda2`` (ridge) and block weights."""

    lambda1: float
    lambda2: float
    weights: np.ndarray

    def __post_init__(self):
        w = np.atleast_1d(np.asarray(self.weights, dtype=float))
        if self.lambda1 < 0:
            raise ValueError("lambda1 must be nonnegative")
        if not self.lambda2 > 0:
            raise ValueError("lambda2 must be strictly positive")
        if w.ndim != 1 or w.size == 0 or np.any(~(w > 0)) or not np.all(np.isfinite(w)):
            raise ValueError("weights must be a nonempty vector of positive finite reals")
        object.__setattr__(self, "lambda1", float(self.lambda1))
        object.__setattr__(self, "lambda2", float(self.lambda2))
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, lambda1: float, lambda2: float, p: int) -> "PenaltyParams":
        return cls(lambda1, lambda2, np.ones(p))

    @property
    def p(self) -> int:
        return self.weights.size


def as_blocks(B: np.ndarray, p: int) -> np.ndarray:
    """View ``B`` (``p*kb x q``, or a flat ``p*kb`` vector) as ``(p, kb, q)``."""
    B = np.asarray(B, dtype=float)
    if B.ndim == 1:
        B = B[:, None]
    if B.shape[0] % p:
        raise ValueError(f"{B.shape[0]} rows cannot be split into {p} blocks")
    return B.reshape(p, B.shape[0] // p, B.shape[1])


def block_norms(B: np.ndarray, p: int) -> np.ndarray:
    blocks = as_blocks(B, p)
    # contiguous last-axis reduction -> numpy pairwise summation
    sq = np.square(blocks).reshape(p, -1)
    return np.sqrt(np.add.reduce(sq, axis=1))


def penalty_value(B: np.ndarray, params: PenaltyParams) -> float:
    nrm = block_norms(B, params.p)
    return float(np.sum(params.weights * (params.lambda1 * nrm + 0.5 * params.lambda2 * nrm**2)))


def conjugate_value(Z: np.ndarray, params: PenaltyParams) -> float:
    nrm = block_norms(Z, params.p)
    w = params.weights
    excess = np.maximum(nrm - w * params.lambda1, 0.0)
    return float(np.sum(excess**2 / (2.0 * w * params.lambda2)))


def conjugate_gradient(Z: np.ndarray, params: PenaltyParams) -> np.ndarray:
    """Gradient of the conjugate; also the primal block recovered from ``Z``."""
    p = params.p
    blocks = as_blocks(Z, p)
    nrm = block_norms(Z, p)
    w = params.weights
    excess = np.maximum(nrm - w * params.lambda1, 0.0)
    scale = np.divide(excess, w * params.lambda2 * nrm, out=np.zeros(p), where=nrm > 0)
    return (blocks * scale[:, None, None]).reshape(np.shape(Z))


def _shrink_factors(nrm, sigma, params):
    w = params.weights
    thresh = sigma * w * params.lambda1
    # exact ties map to zero: the positive part of 0 is 0
    keep = nrm > thresh
    factor = np.zeros_like(nrm)
    factor[keep] = (1.0 - thresh[keep] / nrm[keep]) / (1.0 + sigma * w[keep] * params.lambda2)
    return factor


def prox_penalty(B: np.ndarray, sigma: float, params: PenaltyParams) -> np.ndarray:
    """Blockwise group soft-threshold followed by ridge shrinkage."""
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    B = np.asarray(B, dtype=float)
    p = params.p
    factor = _shrink_factors(block_norms(B, p), sigma, params)
    return (as_blocks(B, p) * factor[:, None, None]).reshape(B.shape)


def prox_conjugate(A: np.ndarray, sigma: float, params: PenaltyParams) -> np.ndarray:
    """Proximal map of ``conjugate / sigma`` through the Moreau decomposition."""
    A = np.asarray(A, dtype=float)
    return A - prox_penalty(sigma * A, sigma, params) / sigma
