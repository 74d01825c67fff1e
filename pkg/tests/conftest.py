"""Shared fixtures and independent reference solvers for the test suite."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pytest

from sparsefof.functional import ScoreDesign


@dataclass(frozen=True)
class RawDesign:
    """Bare problem data accepted by the solver: ``Y`` is ``n x q``."""

    X: np.ndarray
    response_matrix: np.ndarray
    p: int
    block_size: int


def random_design(rng, n=50, p=10, k=2, active=3, noise=0.1) -> ScoreDesign:
    X = rng.standard_normal((n, p * k))
    B = np.zeros((p * k, k))
    for j in rng.choice(p, size=min(active, p), replace=False):
        B[j * k : (j + 1) * k] = rng.standard_normal((k, k))
    Y = X @ B + noise * rng.standard_normal((n, k))
    return ScoreDesign(Y, X, tuple(f"x{j}" for j in range(p)), k)


def group_prox(B, step, l1, l2, w, p):
    """Blockwise elastic-net prox written out with plain loops."""
    out = np.zeros_like(B)
    kb = B.shape[0] // p
    for j in range(p):
        blk = B[j * kb : (j + 1) * kb]
        nrm = np.sqrt(np.sum(blk * blk))
        if nrm > step * w[j] * l1:
            out[j * kb : (j + 1) * kb] = (1 - step * w[j] * l1 / nrm) / (1 + step * w[j] * l2) * blk
    return out


def objective(B, X, Y, l1, l2, w, p):
    R = Y - X @ B
    kb = B.shape[0] // p
    pen = 0.0
    for j in range(p):
        nrm = np.linalg.norm(B[j * kb : (j + 1) * kb])
        pen += w[j] * (l1 * nrm + 0.5 * l2 * nrm**2)
    return 0.5 * float(np.sum(R * R)) + pen


def fista(X, Y, l1, l2, w, p, tol=1e-10, max_iter=200000):
    """Accelerated proximal gradient on the primal objective, run to ``tol`` step size."""
    L = np.linalg.norm(X, 2) ** 2
    B = np.zeros((X.shape[1], Y.shape[1]))
    Zk, t = B.copy(), 1.0
    for _ in range(max_iter):
        G = X.T @ (X @ Zk - Y)
        B_new = group_prox(Zk - G / L, 1.0 / L, l1, l2, w, p)
        t_new = 0.5 * (1 + np.sqrt(1 + 4 * t * t))
        Zk = B_new + (t - 1) / t_new * (B_new - B)
        if np.max(np.abs(B_new - B)) < tol * max(1.0, np.max(np.abs(B_new))):
            return B_new
        B, t = B_new, t_new
    return B


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def _cvx_penalty(U, p, kb, sigma_w, l1, l2):
    import cvxpy as cp

    return sum(
        sigma_w[j] * (l1 * cp.norm(U[j * kb : (j + 1) * kb, :], "fro") + 0.5 * l2 * cp.sum_squares(U[j * kb : (j + 1) * kb, :]))
        for j in range(p)
    )


def cvx_prox(B, sigma, l1, l2, w):
    """Minimizer of 1/2 ||U - B||^2 + sigma * pi(U) by a conic solver."""
    import cvxpy as cp

    p = len(w)
    kb = B.shape[0] // p
    U = cp.Variable(B.shape)
    obj = 0.5 * cp.sum_squares(U - B) + _cvx_penalty(U, p, kb, sigma * np.asarray(w), l1, l2)
    cp.Problem(cp.Minimize(obj)).solve(solver=cp.CLARABEL, tol_gap_abs=1e-10, tol_gap_rel=1e-10, tol_feas=1e-10)
    return U.value


def cvx_conjugate(Z, l1, l2, w):
    """sup_B <Z, B> - pi(B) by a conic solver."""
    import cvxpy as cp

    p = len(w)
    kb = Z.shape[0] // p
    B = cp.Variable(Z.shape)
    obj = cp.sum(cp.multiply(Z, B)) - _cvx_penalty(B, p, kb, np.asarray(w, float), l1, l2)
    prob = cp.Problem(cp.Maximize(obj))
    prob.solve(solver=cp.CLARABEL, tol_gap_abs=1e-10, tol_gap_rel=1e-10, tol_feas=1e-10)
    return prob.value


def random_penalty_case(rng, k_max=3, p_max=3):
    """Random block matrix and penalty settings with scales that straddle the threshold."""
    k = int(rng.integers(1, k_max + 1))
    p = int(rng.integers(1, p_max + 1))
    B = rng.standard_normal((p * k, k)) * rng.uniform(0.2, 3.0)
    sigma = float(rng.uniform(0.1, 3.0))
    w = rng.uniform(0.3, 2.0, size=p)
    l1 = float(rng.uniform(0.0, 2.0))
    l2 = float(rng.uniform(0.05, 2.0))
    return B, sigma, w, l1, l2


def cd_elastic_net(X, y, l1, l2, w, tol=1e-14, max_sweeps=100000):
    """Cyclic coordinate descent for 1/2 ||y - Xb||^2 + sum w_j (l1 |b_j| + l2/2 b_j^2)."""
    b = np.zeros(X.shape[1])
    r = y.astype(float).copy()
    sq = np.sum(X * X, axis=0)
    for _ in range(max_sweeps):
        delta = 0.0
        for j in range(X.shape[1]):
            rho = X[:, j] @ r + sq[j] * b[j]
            new = np.sign(rho) * max(abs(rho) - w[j] * l1, 0.0) / (sq[j] + w[j] * l2)
            if new != b[j]:
                r -= X[:, j] * (new - b[j])
                delta = max(delta, abs(new - b[j]))
                b[j] = new
        if delta < tol:
            break
    return b
