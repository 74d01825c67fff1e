"""Dual augmented Lagrangian solver for block-sparse multivariate regression.

Solves

    min_B  1/2 ||Y - X B||^2 + sum_j w_j (lambda1 ||B_j|| + lambda2/2 ||B_j||^2)

through its Fenchel dual. ``Y`` is ``n x q`` and ``X`` is ``n x p*kb``; the
function-on-function problem has ``kb = q = k`` and the scalar-response
problem has ``q = 1``. Vectorization of ``n x q`` matrices is row-major, so
the lifted design of block ``j`` is ``kron(X_j, I_q)``.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import linalg

from .exceptions import FactorizationFailure, MaxIterations
from .penalty import (
    PenaltyParams,
    as_blocks,
    block_norms,
    conjugate_value,
    penalty_value,
    prox_penalty,
)

logger = logging.getLogger(__name__)

NULL_SLACK = 1e-10

__all__ = [
    "DalConfig",
    "DalState",
    "DalDiagnostics",
    "NewtonSystem",
    "dual_objective_h_star",
    "psi_value",
    "psi_gradient",
    "build_newton_system",
    "newton_direction",
    "z_update",
    "kkt_residuals",
    "primal_objective",
    "dual_objective",
    "solve",
    "solve_screened",
]


@dataclass(frozen=True)
class DalConfig:
    """Solver settings.

    ``sigma0=None`` means ``max(5 / p, 1e-4)``. ``newton_mode`` is one of
    ``"auto"``, ``"direct"`` or ``"woodbury"``.
    """

    tol_kkt3: float = 1e-6
    tol_kkt1: float = 1e-6
    sigma0: float | None = None
    sigma_growth: float = 5.0
    sigma_cap: float = 1e4
    max_outer: int = 100
    max_inner: int = 100
    newton_mode: str = "auto"

    def __post_init__(self):
        if not (self.tol_kkt3 > 0 and self.tol_kkt1 > 0):
            raise ValueError("tolerances must be positive")
        if self.sigma0 is not None and not self.sigma0 > 0:
            raise ValueError("sigma0 must be positive")
        if not self.sigma_growth > 1:
            raise ValueError("sigma_growth must exceed 1")
        if not self.sigma_cap > 0:
            raise ValueError("sigma_cap must be positive")
        if self.max_outer < 1 or self.max_inner < 1:
            raise ValueError("iteration caps must be at least 1")
        if self.newton_mode not in ("auto", "direct", "woodbury"):
            raise ValueError(f"unknown newton_mode {self.newton_mode!r}")

    def initial_sigma(self, p: int) -> float:
        if self.sigma0 is not None:
            return float(self.sigma0)
        return max(5.0 / p, 1e-4)


@dataclass
class DalState:
    V: np.ndarray
    Z: np.ndarray
    B: np.ndarray
    sigma: float
    active: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    # X^T V on the full design when the producer already had it
    XtV: np.ndarray | None = field(default=None, repr=False)

    @property
    def r(self) -> int:
        return int(self.active.size)

    def copy(self) -> "DalState":
        XtV = None if self.XtV is None else self.XtV.copy()
        return DalState(self.V.copy(), self.Z.copy(), self.B.copy(), self.sigma, self.active.copy(), XtV)


@dataclass
class DalDiagnostics:
    converged: bool
    outer_iters: int
    newton_steps: int
    step_halvings: int
    primal_obj: float
    dual_obj: float
    res1: float
    res3: float
    elapsed_ms: float
    history: list = field(default_factory=list)

    @property
    def duality_gap(self) -> float:
        return abs(self.primal_obj + self.dual_obj) / (1.0 + abs(self.primal_obj))

    def to_dict(self) -> dict:
        return {
            "converged": self.converged,
            "outer_iters": self.outer_iters,
            "newton_steps": self.newton_steps,
            "step_halvings": self.step_halvings,
            "primal_obj": self.primal_obj,
            "dual_obj": self.dual_obj,
            "duality_gap": self.duality_gap,
            "res1": self.res1,
            "res3": self.res3,
            "elapsed_ms": self.elapsed_ms,
            "history": list(self.history),
        }


def _unpack(design):
    X = np.asarray(design.X, dtype=float)
    Y = np.asarray(design.response_matrix, dtype=float)
    return X, Y, design.p, design.block_size


def _rowsum_norms(M: np.ndarray) -> float:
    return float(np.sum(np.sqrt(np.sum(M * M, axis=1))))


def dual_objective_h_star(V: np.ndarray, Y: np.ndarray) -> float:
    """Conjugate of the least-squares loss: ``||V||^2 / 2 + <Y, V>``."""
    V = np.asarray(V, dtype=float)
    return float(0.5 * np.sum(V * V) + np.sum(np.asarray(Y) * V))


def _shifted(V, B, sigma, X):
    return B - sigma * (X.T @ V)


def psi_value(V, B, sigma, design, params: PenaltyParams) -> float:
    """Augmented Lagrangian with ``Z`` minimized out, as a function of ``V``."""
    X, Y, p, _ = _unpack(design)
    T = _shifted(V, B, sigma, X)
    PT = prox_penalty(T, sigma, params)
    shrink = 1.0 + sigma * params.weights * params.lambda2
    quad = shrink * block_norms(PT, p) ** 2 - block_norms(B, p) ** 2
    return dual_objective_h_star(V, Y) + float(np.sum(quad)) / (2.0 * sigma)


def psi_gradient(V, B, sigma, design, params: PenaltyParams) -> np.ndarray:
    X, Y, _, _ = _unpack(design)
    T = _shifted(V, B, sigma, X)
    return V + Y - X @ prox_penalty(T, sigma, params)


@dataclass
class NewtonSystem:
    """Hessian ``I + sigma * Xhat_J Q_J Xhat_J^T`` and gradient at one ``V``.

    Each ``P_j`` equals ``alpha_j (beta_j I + (1 - beta_j) u_j u_j^T)`` with
    ``u_j = vec(T_j) / ||T_j||``; only the scalars and unit directions are
    stored.
    """

    X_active: np.ndarray
    active: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    U: np.ndarray
    sigma: float
    grad: np.ndarray
    mode: str
    kb: int

    @property
    def n(self) -> int:
        return self.grad.shape[0]

    @property
    def q(self) -> int:
        return self.grad.shape[1]

    @property
    def r(self) -> int:
        return int(self.active.size)

    def _apply_blocks(self, W, c_identity, c_rank_one):
        # W: (r, kb, q); c*: (r,) coefficients of I and u u^T
        proj = np.einsum("jab,jab->j", self.U, W)
        return c_identity[:, None, None] * W + (c_rank_one * proj)[:, None, None] * self.U

    def apply_Q(self, W):
        return self._apply_blocks(W, self.alpha * self.beta, self.alpha * (1.0 - self.beta))

    def apply_sqrt_Q(self, W):
        sa, sb = np.sqrt(self.alpha), np.sqrt(self.beta)
        return self._apply_blocks(W, sa * sb, sa * (1.0 - sb))

    def P_blocks(self) -> np.ndarray:
        """Dense ``P_j`` blocks, shape ``(r, kb*q, kb*q)``; for inspection and tests."""
        d = self.kb * self.q
        u = self.U.reshape(self.r, d)
        eye = np.eye(d)
        return self.alpha[:, None, None] * (
            self.beta[:, None, None] * eye + (1.0 - self.beta)[:, None, None] * u[:, :, None] * u[:, None, :]
        )

    def lifted_factor(self) -> np.ndarray:
        """``L = Xhat_J Q_J^{1/2}`` of shape ``(n*q, r*kb*q)``."""
        n, q, kb, r = self.n, self.q, self.kb, self.r
        if r == 0:
            return np.zeros((n * q, 0))
        Xb = self.X_active.reshape(n, r, kb)
        sa, sb = np.sqrt(self.alpha), np.sqrt(self.beta)
        # identity part: c1_j * kron(X_j, I_q)
        L = np.einsum("ija,cd->icjad", Xb * (sa * sb)[None, :, None], np.eye(q))
        # rank-one part: c2_j * vec(X_j U_j) vec(U_j)^T
        XU = np.einsum("ija,jab->ijb", Xb, self.U) * (sa * (1.0 - sb))[None, :, None]
        L += np.einsum("ijb,jad->ibjad", XU, self.U)
        return L.reshape(n * q, r * kb * q)

    def hessian(self) -> np.ndarray:
        """Dense ``n*q x n*q`` Hessian.

        Assembled from the structure of ``P_j`` rather than from the lifted
        factor: ``kron(X_J diag(alpha*beta) X_J^T, I_q)`` plus a rank-``r``
        term in ``vec(X_j U_j)``.
        """
        n, q, kb, r = self.n, self.q, self.kb, self.r
        if r == 0:
            return np.eye(n * q)
        c_id = np.repeat(self.alpha * self.beta, kb)
        A = (self.X_active * c_id) @ self.X_active.T
        XU = np.einsum("ija,jab->ibj", self.X_active.reshape(n, r, kb), self.U).reshape(n * q, r)
        H = np.kron(A, np.eye(q)) if q > 1 else A
        H = self.sigma * (H + (XU * (self.alpha * (1.0 - self.beta))) @ XU.T)
        H[np.diag_indices_from(H)] += 1.0
        return H

    def matvec(self, D: np.ndarray) -> np.ndarray:
        """Hessian applied to an ``n x q`` direction, without assembling it."""
        if self.r == 0:
            return D.copy()
        n, q, kb, r = self.n, self.q, self.kb, self.r
        W = (self.X_active.T @ D).reshape(r, kb, q)
        QW = self.apply_Q(W).reshape(r * kb, q)
        return D + self.sigma * (self.X_active @ QW)


def _resolve_mode(mode, r, kb, n):
    if mode != "auto":
        return mode
    # factorize whichever system is smaller: (r*kb*q)^2 vs (n*q)^2
    return "woodbury" if r * kb < n else "direct"


def _newton_system_from(T, nrm, grad, X, sigma, params, kb, mode):
    p = params.p
    w = params.weights
    thresh = sigma * w * params.lambda1
    active = np.flatnonzero(nrm >= thresh)
    n, q = grad.shape
    if active.size:
        t_act = nrm[active]
        with np.errstate(divide="ignore", invalid="ignore"):
            beta = np.where(t_act > 0, 1.0 - thresh[active] / t_act, 1.0)
            U = np.where(t_act[:, None, None] > 0, as_blocks(T, p)[active] / t_act[:, None, None], 0.0)
        beta = np.clip(beta, 0.0, 1.0)
        alpha = 1.0 / (1.0 + sigma * w[active] * params.lambda2)
        cols = (active[:, None] * kb + np.arange(kb)).ravel()
        X_act = X[:, cols]
    else:
        beta = alpha = np.zeros(0)
        U = np.zeros((0, kb, q))
        X_act = np.zeros((n, 0))
    return NewtonSystem(
        X_active=X_act,
        active=active,
        alpha=alpha,
        beta=beta,
        U=U,
        sigma=float(sigma),
        grad=grad,
        mode=_resolve_mode(mode, active.size, kb, n),
        kb=kb,
    )


def build_newton_system(V, B, sigma, design, params: PenaltyParams, mode: str = "auto") -> NewtonSystem:
    X, Y, p, kb = _unpack(design)
    T = _shifted(V, B, sigma, X)
    PT = prox_penalty(T, sigma, params)
    grad = V + Y - X @ PT
    return _newton_system_from(T, block_norms(T, p), grad, X, sigma, params, kb, mode)


def _cholesky(M):
    try:
        return linalg.cho_factor(M, lower=True, check_finite=False)
    except linalg.LinAlgError as exc:
        raise FactorizationFailure(f"Cholesky failed on a {M.shape[0]}x{M.shape[0]} system") from exc


def newton_direction(system: NewtonSystem) -> np.ndarray:
    """Solve ``H vec(D) = -vec(grad)``."""
    n, q = system.grad.shape
    g = -system.grad.ravel()
    if system.r == 0 or not np.any(g):
        return g.reshape(n, q)
    sigma = system.sigma
    if system.mode == "direct":
        d = linalg.cho_solve(_cholesky(system.hessian()), g, check_finite=False)
    elif system.mode == "woodbury":
        L = system.lifted_factor()
        M = sigma * (L.T @ L)
        M[np.diag_indices_from(M)] += 1.0
        d = g - sigma * (L @ linalg.cho_solve(_cholesky(M), L.T @ g, check_finite=False))
    else:
        raise ValueError(f"unresolved newton mode {system.mode!r}")
    if not np.all(np.isfinite(d)):
        raise FactorizationFailure("Newton direction is not finite")
    return d.reshape(n, q)


def z_update(V, B, sigma, design, params: PenaltyParams) -> np.ndarray:
    """Closed-form minimizer of the augmented Lagrangian in ``Z``."""
    X, _, _, _ = _unpack(design)
    T = _shifted(V, B, sigma, X)
    return (T - prox_penalty(T, sigma, params)) / sigma


def _kkt3(XtV, Z, V, p):
    num = float(np.sum(block_norms(XtV + Z, p)))
    den = 1.0 + _rowsum_norms(V) + float(np.sum(block_norms(Z, p)))
    return num / den


def _kkt1_denominator(X, Y, p):
    # a scale factor only, so a plain (non-pairwise) column sum is enough
    col_sq = np.einsum("ij,ij->j", X, X)
    return 1.0 + _rowsum_norms(Y) + float(np.sum(np.sqrt(col_sq.reshape(p, -1).sum(axis=1))))


def kkt_residuals(V, Z, B, design) -> tuple[float, float]:
    """Standardized residuals ``(res3, res1)`` of the dual KKT system."""
    X, Y, p, kb = _unpack(design)
    res3 = _kkt3(X.T @ V, Z, V, p)
    res1 = _rowsum_norms(V + Y - _sparse_product(X, B, block_norms(B, p), kb)) / _kkt1_denominator(X, Y, p)
    return res3, res1


def primal_objective(B, design, params: PenaltyParams) -> float:
    X, Y, p, kb = _unpack(design)
    R = Y - _sparse_product(X, B, block_norms(B, p), kb)
    return float(0.5 * np.sum(R * R)) + penalty_value(B, params)


def dual_objective(V, Z, design, params: PenaltyParams) -> float:
    _, Y, _, _ = _unpack(design)
    return dual_objective_h_star(V, Y) + conjugate_value(Z, params)


def _sparse_product(X, PT, nrm_pt, kb):
    nz = np.flatnonzero(nrm_pt > 0)
    if nz.size == 0:
        return np.zeros((X.shape[0], PT.shape[1]))
    rows = (nz[:, None] * kb + np.arange(kb)).ravel()
    return X[:, rows] @ PT[rows]


def _null_solution(design, params, X, Y, XtY, sigma, t0):
    # B = 0, V = -Y, Z = X^T Y satisfy the KKT system exactly when every
    # ||(X^T Y)_j|| <= w_j lambda1; iterating would only add round-off
    p = params.p
    V = -Y.copy()
    Z = XtY.copy()
    B = np.zeros_like(XtY)
    res3 = _kkt3(-XtY, Z, V, p)
    record = {
        "sigma": sigma,
        "r": 0,
        "res1": 0.0,
        "res3": res3,
        "psi": dual_objective_h_star(V, Y),
        "primal_obj": primal_objective(B, design, params),
        "dual_obj": dual_objective(V, Z, design, params),
        "newton_steps": 0,
        "elapsed_ms": 1e3 * (time.perf_counter() - t0),
    }
    diag = DalDiagnostics(
        converged=True,
        outer_iters=1,
        newton_steps=0,
        step_halvings=0,
        primal_obj=record["primal_obj"],
        dual_obj=record["dual_obj"],
        res1=0.0,
        res3=res3,
        elapsed_ms=record["elapsed_ms"],
        history=[record],
    )
    return DalState(V, Z, B, sigma, np.zeros(0, dtype=int)), diag


def solve(design, params: PenaltyParams, config: DalConfig | None = None, warm: DalState | None = None):
    """Run the dual augmented Lagrangian iterations.

    Returns ``(state, diagnostics)``. ``state.B`` is the primal estimate and
    ``state.active`` lists the blocks with a nonzero estimate.

    Raises
    ------
    MaxIterations
        When ``max_outer`` is exhausted; the last state and diagnostics are
        attached to the exception.
    """
    config = config or DalConfig()
    t0 = time.perf_counter()
    X, Y, p, kb = _unpack(design)
    n, q = Y.shape
    if params.p != p:
        raise ValueError(f"penalty has {params.p} weights but the design has {p} blocks")
    w = params.weights
    if warm is not None:
        V, Z, B = warm.V.copy(), warm.Z.copy(), warm.B.copy()
        sigma = min(float(warm.sigma), config.sigma_cap)
        if B.shape != (p * kb, q) or V.shape != (n, q):
            raise ValueError("warm state does not match the design")
    else:
        # the null model's dual point; unit Newton steps are accepted from here
        V = -Y.copy()
        Z = np.zeros((p * kb, q))
        B = np.zeros((p * kb, q))
        sigma = min(config.initial_sigma(p), config.sigma_cap)

    XtY = X.T @ Y
    # relative slack absorbs round-off at lambda1 = lambda_max; blocks inside
    # it would have optimal norm of that relative order anyway
    if np.all(block_norms(XtY, p) <= w * params.lambda1 * (1.0 + NULL_SLACK)):
        return _null_solution(design, params, X, Y, XtY, sigma, t0)

    den1 = _kkt1_denominator(X, Y, p)
    history = []
    newton_steps = halvings = 0
    converged = False
    res1 = res3 = np.inf
    s = 0

    def evaluate(Vc, sig):
        XtV = X.T @ Vc
        T = B - sig * XtV
        nrm = block_norms(T, p)
        thresh = sig * w * params.lambda1
        keep = nrm > thresh
        factor = np.zeros(p)
        factor[keep] = (1.0 - thresh[keep] / nrm[keep]) / (1.0 + sig * w[keep] * params.lambda2)
        PT = (as_blocks(T, p) * factor[:, None, None]).reshape(T.shape)
        nrm_pt = factor * nrm
        psi = dual_objective_h_star(Vc, Y) + float(
            np.sum((1.0 + sig * w * params.lambda2) * nrm_pt**2) - b_sq
        ) / (2.0 * sig)
        return XtV, T, nrm, PT, nrm_pt, psi

    for s in range(config.max_outer):
        inner_tol = min(config.tol_kkt1, 0.1**s)
        b_sq = float(np.sum(block_norms(B, p) ** 2))
        XtV, T, nrm, PT, nrm_pt, psi = evaluate(V, sigma)
        steps_this = 0
        for m in range(config.max_inner + 1):
            grad = V + Y - _sparse_product(X, PT, nrm_pt, kb)
            res1 = _rowsum_norms(grad) / den1
            if res1 <= inner_tol or m == config.max_inner:
                break
            system = _newton_system_from(T, nrm, grad, X, sigma, params, kb, config.newton_mode)
            D = newton_direction(system)
            step = 1.0
            for _ in range(21):
                cand = evaluate(V + step * D, sigma)
                if cand[-1] <= psi + 1e-10 * max(1.0, abs(psi)):
                    break
                step *= 0.5
                halvings += 1
            V = V + step * D
            XtV, T, nrm, PT, nrm_pt, psi = cand
            steps_this += 1
        newton_steps += steps_this
        Z = (T - PT) / sigma
        res3 = _kkt3(XtV, Z, V, p)
        B = PT
        active = np.flatnonzero(nrm_pt > 0)
        if config.tol_kkt3 >= res3 and res1 <= config.tol_kkt1:
            converged = True
        history.append(
            {
                "sigma": sigma,
                "r": int(active.size),
                "res1": res1,
                "res3": res3,
                "psi": psi,
                "primal_obj": primal_objective(B, design, params),
                "dual_obj": dual_objective(V, Z, design, params),
                "newton_steps": steps_this,
                "elapsed_ms": 1e3 * (time.perf_counter() - t0),
            }
        )
        if converged:
            break
        sigma = min(sigma * config.sigma_growth, config.sigma_cap)

    state = DalState(V, Z, B, sigma, active)
    diag = DalDiagnostics(
        converged=converged,
        outer_iters=s + 1,
        newton_steps=newton_steps,
        step_halvings=halvings,
        primal_obj=history[-1]["primal_obj"],
        dual_obj=history[-1]["dual_obj"],
        res1=res1,
        res3=res3,
        elapsed_ms=1e3 * (time.perf_counter() - t0),
        history=history,
    )
    if not converged:
        logger.debug("DAL stopped after %d outer iterations (res1=%.2e, res3=%.2e)", s + 1, res1, res3)
        raise MaxIterations(f"no convergence in {config.max_outer} outer iterations", state, diag)
    return state, diag


@dataclass(frozen=True)
class _SubDesign:
    X: np.ndarray
    response_matrix: np.ndarray
    p: int
    block_size: int


def _rows_of(idx, kb):
    return (np.asarray(idx)[:, None] * kb + np.arange(kb)).ravel()


def solve_screened(
    design,
    params: PenaltyParams,
    config: DalConfig | None = None,
    warm: DalState | None = None,
    lambda1_prev: float | None = None,
):
    """:func:`solve` on a screened working set, verified on every block.

    The working set holds the blocks active in ``warm`` plus those kept by
    the sequential strong rule ``||(X^T R)_j|| >= w_j (2 lambda1 - lambda1_prev)``.
    After each restricted solve, blocks that violate the zero-block
    condition ``||(X^T V)_j|| <= w_j lambda1`` join the working set and the
    solve is repeated, so the result solves the full problem. Cost per
    round is one pass over the full design instead of one per Newton step.

    When ``warm.XtV`` is set (as on states returned here), the strong rule
    uses ``-X^T V`` in place of ``X^T R``; the two differ by ``X^T`` applied
    to the inner residual, and the final check keeps the result exact.
    """
    config = config or DalConfig()
    X, Y, p, kb = _unpack(design)
    n, q = Y.shape
    w = params.weights
    l1 = params.lambda1
    if warm is None:
        warm = DalState(-Y.copy(), np.zeros((p * kb, q)), np.zeros((p * kb, q)),
                        min(config.initial_sigma(p), config.sigma_cap))
    b_nrm = block_norms(warm.B, p)
    if warm.XtV is not None and warm.XtV.shape == warm.B.shape:
        G = -warm.XtV
    else:
        G = X.T @ (Y - _sparse_product(X, warm.B, b_nrm, kb))
    ref = l1 if lambda1_prev is None else lambda1_prev
    work = (block_norms(G, p) >= w * (2.0 * l1 - ref)) | (b_nrm > 0)

    V, sigma = warm.V, warm.sigma
    totals = dict(outer_iters=0, newton_steps=0, step_halvings=0, history=[])
    t0 = time.perf_counter()
    while True:
        idx = np.flatnonzero(work)
        rows = _rows_of(idx, kb)
        failure = None
        if idx.size:
            sub = _SubDesign(X[:, rows], Y, int(idx.size), kb)
            sub_warm = DalState(V, warm.Z[rows], warm.B[rows], sigma)
            sub_params = PenaltyParams(l1, params.lambda2, w[idx])
            try:
                st, dg = solve(sub, sub_params, config, sub_warm)
            except MaxIterations as exc:
                st, dg, failure = exc.state, exc.diagnostics, exc
            V, sigma = st.V, st.sigma
            for key in ("outer_iters", "newton_steps", "step_halvings"):
                totals[key] += getattr(dg, key)
            totals["history"] += dg.history
        else:
            # empty working set: the null model, V = -Y at B = 0
            st, dg = None, None
            V = -Y.copy()
        XtV = X.T @ V
        xtv_nrm = block_norms(XtV, p)
        viol = ~work & (xtv_nrm > w * l1)
        if failure is None and np.any(viol):
            work |= viol
            continue
        break

    B = np.zeros((p * kb, q))
    Z = -XtV
    if st is not None:
        B[rows] = st.B
        Z[rows] = st.Z
        active = idx[block_norms(st.B, idx.size) > 0]
    else:
        active = np.zeros(0, dtype=int)
    state = DalState(V, Z, B, sigma, active, XtV)
    # excluded blocks have Z_j = -(X^T V)_j, so they add nothing to the kkt3
    # numerator; the restricted res1 has the same numerator over a smaller
    # denominator, an upper bound
    z_nrm = xtv_nrm.copy()
    gap_nrm = 0.0
    if st is not None:
        z_nrm[idx] = block_norms(st.Z, idx.size)
        gap_nrm = float(np.sum(block_norms(XtV[rows] + st.Z, idx.size)))
    res3 = gap_nrm / (1.0 + _rowsum_norms(V) + float(np.sum(z_nrm)))
    res1 = dg.res1 if dg is not None else 0.0
    if failure is None and dg is not None:
        # B vanishes off the working set and, with no violations left, so
        # does the conjugate of every excluded Z block
        primal_obj, dual_obj = dg.primal_obj, dg.dual_obj
    else:
        primal_obj = primal_objective(B, design, params)
        dual_obj = dual_objective(V, Z, design, params)
    diag = DalDiagnostics(
        converged=failure is None and (dg is None or dg.converged),
        outer_iters=totals["outer_iters"],
        newton_steps=totals["newton_steps"],
        step_halvings=totals["step_halvings"],
        primal_obj=primal_obj,
        dual_obj=dual_obj,
        res1=res1,
        res3=res3,
        elapsed_ms=1e3 * (time.perf_counter() - t0),
        history=totals["history"],
    )
    if failure is not None:
        raise MaxIterations(str(failure), state, diag)
    return state, diag


def with_overrides(config: DalConfig, **kwargs) -> DalConfig:
    """Copy of ``config`` with the non-``None`` keyword arguments applied."""
    return replace(config, **{k: v for k, v in kwargs.items() if v is not None})
