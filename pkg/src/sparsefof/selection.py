"""Regularization path, gcv / k-fold cv scoring, relaxation and adaptive reweighting."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import linalg

from . import dal
from .dal import DalConfig, DalState
from .exceptions import (
    DegenerateDof,
    EmptyInitialSelection,
    FactorizationFailure,
    MaxIterations,
    SoftDegenerate,
    ZeroBlock,
)
from .penalty import PenaltyParams, as_blocks, block_norms

logger = logging.getLogger(__name__)

__all__ = [
    "PathConfig",
    "PathRecord",
    "PathResult",
    "lambda_max",
    "lambda_grid",
    "relax",
    "gcv_score",
    "effective_dof",
    "fold_assignment",
    "cv_score",
    "cv_path_scores",
    "adaptive_weights",
    "run_path",
    "run_adaptive",
    "fit_path",
    "fit_single",
]

CRITERIA = ("gcv", "cv")
ADAPTIVE_MODES = ("none", "full", "soft")


@dataclass(frozen=True)
class PathConfig:
    """Settings of a path search.

    ``lambda1 = c * lambda_max`` and ``lambda2 = (1 - alpha) / alpha * c * lambda_max``
    for ``c`` on a geometric grid from 1 down to ``c_min``, so ``alpha`` is the
    share of the group penalty in the total and the first point is the null model.
    ``screening`` solves each point on a strong-rule working set
    (:func:`sparsefof.dal.solve_screened`); the solution is the same.
    """

    n_lambda: int = 50
    c_min: float = 0.01
    alpha: float = 0.2
    max_selected: int | None = None
    criterion: str = "gcv"
    cv_folds: int = 5
    adaptive: str = "none"
    seed: int = 0
    ridge_eps: float | None = None
    gcv_scale: int | None = None
    one_se_rule: bool = True
    screening: bool = True
    solver: DalConfig = field(default_factory=DalConfig)

    def __post_init__(self):
        if self.n_lambda < 1:
            raise ValueError("n_lambda must be positive")
        if not 0.0 < self.c_min < 1.0:
            raise ValueError("c_min must lie in (0, 1)")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if self.max_selected is not None and self.max_selected < 0:
            raise ValueError("max_selected must be nonnegative")
        if self.criterion not in CRITERIA:
            raise ValueError(f"criterion must be one of {CRITERIA}")
        if self.cv_folds < 2:
            raise ValueError("cv_folds must be at least 2")
        if self.adaptive not in ADAPTIVE_MODES:
            raise ValueError(f"adaptive must be one of {ADAPTIVE_MODES}")


@dataclass
class PathRecord:
    c_lambda: float
    lambda1: float
    lambda2: float
    selected: tuple
    B_raw: np.ndarray
    B_relaxed: np.ndarray | None = None
    criterion_score: float | None = None
    criterion_se: float | None = None
    dof: float | None = None
    outer_iters: int = 0
    newton_steps: int = 0
    step_halvings: int = 0
    elapsed_ms: float = 0.0
    converged: bool = True
    flags: list = field(default_factory=list)
    # per-outer-iteration solver records; not part of the JSON record
    history: list = field(default_factory=list, repr=False)

    def to_dict(self, block_names, kb) -> dict:
        def blocks(B):
            if B is None:
                return None
            p = len(block_names)
            bl = as_blocks(B, p)
            return {block_names[j]: bl[j].tolist() for j in self.selected}

        return {
            "c_lambda": self.c_lambda,
            "lambda1": self.lambda1,
            "lambda2": self.lambda2,
            "selected_blocks": [block_names[j] for j in self.selected],
            "selected_index": [int(j) for j in self.selected],
            "B_raw": blocks(self.B_raw),
            "B_relaxed": blocks(self.B_relaxed),
            "criterion_score": _finite_or_none(self.criterion_score),
            "criterion_se": _finite_or_none(self.criterion_se),
            "dof": _finite_or_none(self.dof),
            "outer_iters": self.outer_iters,
            "newton_steps": self.newton_steps,
            "step_halvings": self.step_halvings,
            "elapsed_ms": self.elapsed_ms,
            "converged": self.converged,
            "flags": list(self.flags),
        }


def _finite_or_none(x):
    if x is None or not np.isfinite(x):
        return None
    return float(x)


@dataclass
class PathResult:
    """Outcome of a path search, optionally followed by an adaptive step.

    ``records`` is the path whose criterion picked ``best_index`` (the
    adaptive path in full mode). ``final`` is the model to report; in soft
    mode it is the single reweighted fit rather than a path point.
    ``uses_relaxation`` tells whether the reported coefficients are the
    least-squares refit (soft mode) or the penalized estimate; relaxed fits
    are always kept for scoring and weighting.
    """

    records: list
    best_index: int
    weights_used: np.ndarray
    block_names: tuple
    block_size: int
    lambda_max: float
    criterion: str
    adaptive: str = "none"
    uses_relaxation: bool = True
    initial: "PathResult | None" = None
    final: PathRecord | None = None
    flags: list = field(default_factory=list)

    @property
    def best(self) -> PathRecord:
        if self.final is not None:
            return self.final
        return self.records[self.best_index]

    @property
    def selected(self) -> tuple:
        return self.best.selected

    @property
    def coef(self) -> np.ndarray:
        """Score-space coefficient matrix of the reported model."""
        rec = self.best
        if self.uses_relaxation and rec.B_relaxed is not None:
            return rec.B_relaxed
        return rec.B_raw

    def to_dict(self) -> dict:
        names, kb = self.block_names, self.block_size
        return {
            "schema_version": "1.0",
            "criterion": self.criterion,
            "adaptive": self.adaptive,
            "uses_relaxation": self.uses_relaxation,
            "lambda_max": self.lambda_max,
            "block_names": list(names),
            "block_size": kb,
            "best_index": self.best_index,
            "weights_used": [_finite_or_none(w) for w in self.weights_used],
            "records": [r.to_dict(names, kb) for r in self.records],
            "final": self.best.to_dict(names, kb),
            "initial": None if self.initial is None else self.initial.to_dict(),
            "flags": list(self.flags),
        }


def _problem(design):
    return np.asarray(design.X, float), np.asarray(design.response_matrix, float), design.p, design.block_size


def _cols(blocks, kb):
    blocks = np.asarray(blocks, dtype=int)
    return (blocks[:, None] * kb + np.arange(kb)).ravel()


def lambda_max(design, weights=None) -> float:
    """Smallest group level at which every block is thresholded to zero."""
    X, Y, p, _ = _problem(design)
    w = np.ones(p) if weights is None else np.asarray(weights, float)
    return float(np.max(block_norms(X.T @ Y, p) / w))


def lambda_grid(anchor: float, config: PathConfig):
    """``(c, lambda1, lambda2)`` triples along the path."""
    cs = np.geomspace(1.0, config.c_min, config.n_lambda)
    ratio = (1.0 - config.alpha) / config.alpha
    return [(float(c), float(c * anchor), float(ratio * c * anchor)) for c in cs]


def _default_ridge(G):
    d = G.shape[0]
    return 1e-10 * float(np.trace(G)) / max(d, 1)


def relax(design, selected, ridge_eps: float | None = None) -> np.ndarray:
    """Least-squares refit on the selected blocks; zero elsewhere."""
    X, Y, p, kb = _problem(design)
    selected = np.asarray(selected, dtype=int)
    B = np.zeros((p * kb, Y.shape[1]))
    if selected.size == 0:
        raise ValueError("relaxation needs at least one selected block")
    cols = _cols(selected, kb)
    XJ = X[:, cols]
    G = XJ.T @ XJ
    eps = _default_ridge(G) if ridge_eps is None else float(ridge_eps)
    G[np.diag_indices_from(G)] += eps
    rhs = XJ.T @ Y
    try:
        B[cols] = linalg.cho_solve(linalg.cho_factor(G, check_finite=False), rhs, check_finite=False)
    except linalg.LinAlgError:
        try:
            B[cols] = linalg.lstsq(G, rhs)[0]
        except linalg.LinAlgError as exc:
            raise FactorizationFailure("relaxation system is singular") from exc
    return B


def effective_dof(design, selected, lambda2: float) -> float:
    """``tr(X_J (X_J^T X_J + lambda2 I)^{-1} X_J^T)`` from the eigenvalues of the Gram."""
    X, _, _, kb = _problem(design)
    selected = np.asarray(selected, dtype=int)
    if selected.size == 0:
        return 0.0
    XJ = X[:, _cols(selected, kb)]
    # X^T X and X X^T share their nonzero eigenvalues; use the smaller one
    gram = XJ.T @ XJ if XJ.shape[1] <= XJ.shape[0] else XJ @ XJ.T
    ev = np.clip(np.linalg.eigvalsh(gram), 0.0, None)
    if lambda2 == 0:
        return float(np.sum(ev > 1e-12 * max(ev.max(), 1.0)))
    return float(np.sum(ev / (ev + lambda2)))


def gcv_score(design, selected, B, lambda2: float, scale: int | None = None) -> float:
    """``rss / (n - scale * dof)**2``; ``scale`` defaults to the design's."""
    X, Y, _, kb = _problem(design)
    scale = design.gcv_scale if scale is None else scale
    selected = np.asarray(selected, dtype=int)
    if selected.size:
        cols = _cols(selected, kb)
        R = Y - X[:, cols] @ np.asarray(B)[cols]
    else:
        R = Y
    rss = float(np.sum(R * R))
    nu = effective_dof(design, selected, lambda2)
    denom = design.n - scale * nu
    if denom <= 0:
        raise DegenerateDof(f"n - {scale}*dof = {denom:.3g} is not positive")
    return rss / denom**2


def fold_assignment(n: int, folds: int, seed) -> np.ndarray:
    """Balanced fold label per row, a deterministic function of ``seed``."""
    rng = np.random.default_rng(seed)
    labels = np.empty(n, dtype=int)
    labels[rng.permutation(n)] = np.arange(n) % folds
    return labels


def _prediction_error(Y, Yhat) -> float:
    """Mean relative prediction error on held-out rows.

    Multi-column responses average ``||y_i - yhat_i|| / ||y_i||`` over rows;
    single-column responses use ``sum (y - yhat)^2 / sum y^2`` because
    per-row ratios of scalars are unstable.
    """
    R = Y - Yhat
    if Y.shape[1] == 1:
        den = float(np.sum(Y * Y))
        return float(np.sum(R * R)) / den if den > 0 else 0.0
    num = np.linalg.norm(R, axis=1)
    den = np.linalg.norm(Y, axis=1)
    ok = den > 0
    return float(np.mean(num[ok] / den[ok])) if np.any(ok) else 0.0


def _safe_solve(design, params, solver, warm, lambda1_prev=None, screening=True):
    """Solve, keeping the last iterate on iteration-cap failures."""
    try:
        if screening:
            state, diag = dal.solve_screened(design, params, solver, warm, lambda1_prev)
        else:
            state, diag = dal.solve(design, params, solver, warm)
        return state, diag, None
    except MaxIterations as exc:
        return exc.state, exc.diagnostics, "max_iterations"


def _sequence_fits(design, lambdas, weights, solver, screening=True):
    """Warm-started solves over ``lambdas``; yields ``(state, diag, error)``."""
    state = None
    prev = None
    for _, l1, l2 in lambdas:
        params = PenaltyParams(l1, l2, weights)
        try:
            state_new, diag, err = _safe_solve(design, params, solver, state, prev, screening)
            prev = l1
        except FactorizationFailure as exc:
            logger.warning("factorization failure at lambda1=%.3g: %s", l1, exc)
            yield state, None, "factorization_failure"
            continue
        state = state_new
        yield state, diag, err


def cv_path_scores(
    design,
    lambdas,
    weights=None,
    folds: int = 5,
    seed=0,
    relax_fits: bool = True,
    solver: DalConfig | None = None,
    ridge_eps: float | None = None,
    screening: bool = True,
):
    """Mean and standard error of the held-out error at every path point."""
    X, Y, p, kb = _problem(design)
    w = np.ones(p) if weights is None else np.asarray(weights, float)
    labels = fold_assignment(design.n, folds, seed)
    errors = np.full((folds, len(lambdas)), np.inf)
    for f in range(folds):
        train = design.rows(labels != f)
        test = labels == f
        for i, (state, _, _) in enumerate(_sequence_fits(train, lambdas, w, solver, screening)):
            if state is None:
                continue
            sel = np.flatnonzero(block_norms(state.B, p) > 0)
            B = state.B
            if relax_fits and sel.size:
                try:
                    B = relax(train, sel, ridge_eps)
                except FactorizationFailure:
                    pass
            errors[f, i] = _prediction_error(Y[test], X[test] @ B)
    mean = errors.mean(axis=0)
    se = errors.std(axis=0, ddof=1) / np.sqrt(folds)
    return mean, se


def cv_score(design, lambda1, lambda2, folds=5, seed=0, weights=None, relax_fits=True, solver=None) -> float:
    """k-fold held-out error at a single ``(lambda1, lambda2)`` pair."""
    mean, _ = cv_path_scores(design, [(1.0, lambda1, lambda2)], weights, folds, seed, relax_fits, solver)
    return float(mean[0])


def adaptive_weights(B_relaxed, selected, p: int, mode: str = "full") -> np.ndarray:
    """Weights for the selected blocks, inversely proportional to their norms.

    ``mode="soft"`` multiplies by the sample standard deviation (divisor
    ``r - 1``) of the selected norms.
    """
    selected = np.asarray(selected, dtype=int)
    norms = block_norms(B_relaxed, p)[selected]
    if np.any(norms < 1e-12):
        raise ZeroBlock("a selected block has zero norm")
    if mode == "full":
        return 1.0 / norms
    if mode == "soft":
        if norms.size < 2:
            raise SoftDegenerate("soft weights need at least two selected blocks")
        sd = float(np.std(norms, ddof=1))
        if sd < 1e-12:
            raise SoftDegenerate("selected block norms have zero spread")
        return sd / norms
    raise ValueError(f"unknown adaptive mode {mode!r}")


def _pick_best(scores, se, criterion, one_se_rule):
    scores = np.asarray(scores, float)
    if not np.any(np.isfinite(scores)):
        return 0
    i_min = int(np.nanargmin(np.where(np.isfinite(scores), scores, np.inf)))
    if criterion == "cv" and one_se_rule and se is not None and np.isfinite(se[i_min]):
        bound = scores[i_min] + se[i_min]
        # path is ordered from sparse to dense: first point under the bound
        return int(np.flatnonzero(scores <= bound)[0])
    return i_min


def run_path(design, config: PathConfig, weights=None, *, relax_scores: bool = True) -> PathResult:
    """Warm-started path from the null model down to ``c_min``."""
    X, Y, p, kb = _problem(design)
    w = np.ones(p) if weights is None else np.asarray(weights, float)
    anchor = lambda_max(design, w)
    grid = lambda_grid(anchor, config)
    scale = design.gcv_scale if config.gcv_scale is None else config.gcv_scale
    records = []
    if anchor <= 0:
        # response orthogonal to every block: only the null model exists
        grid = [(1.0, 0.0, 1e-12)]
    state: DalState | None = None
    prev_l1 = None
    for c, l1, l2 in grid:
        t0 = time.perf_counter()
        params = PenaltyParams(l1, l2, w)
        flags = []
        try:
            new_state, diag, err = _safe_solve(design, params, config.solver, state, prev_l1, config.screening)
            prev_l1 = l1
        except FactorizationFailure:
            logger.warning("factorization failure at c=%.4g; skipping point", c)
            flags.append("factorization_failure")
            new_state, diag, err = state, None, None
            if new_state is None:
                continue
        if err:
            flags.append(err)
        state = new_state
        selected = tuple(int(j) for j in np.flatnonzero(block_norms(state.B, p) > 0))
        if config.max_selected is not None and len(selected) > config.max_selected:
            break
        B_rel = None
        if relax_scores and selected:
            B_rel = relax(design, selected, config.ridge_eps)
        rec = PathRecord(
            c_lambda=c,
            lambda1=l1,
            lambda2=l2,
            selected=selected,
            B_raw=state.B.copy(),
            B_relaxed=B_rel,
            outer_iters=diag.outer_iters if diag else 0,
            newton_steps=diag.newton_steps if diag else 0,
            step_halvings=diag.step_halvings if diag else 0,
            converged=diag.converged if diag else False,
            flags=flags,
            history=diag.history if diag else [],
        )
        if config.criterion == "gcv":
            B_score = B_rel if B_rel is not None else state.B
            try:
                rec.dof = effective_dof(design, selected, l2)
                rec.criterion_score = gcv_score(design, selected, B_score, l2, scale)
            except DegenerateDof:
                rec.criterion_score = np.inf
                rec.flags.append("degenerate_dof")
        rec.elapsed_ms = 1e3 * (time.perf_counter() - t0)
        records.append(rec)

    if config.criterion == "cv" and records:
        lambdas = [(r.c_lambda, r.lambda1, r.lambda2) for r in records]
        mean, se = cv_path_scores(
            design, lambdas, w, config.cv_folds, config.seed, relax_scores, config.solver, config.ridge_eps,
            config.screening,
        )
        for r, m_, s_ in zip(records, mean, se):
            r.criterion_score, r.criterion_se = float(m_), float(s_)

    if records:
        scores = [r.criterion_score for r in records]
        ses = [r.criterion_se if r.criterion_se is not None else np.nan for r in records]
        best = _pick_best(scores, np.asarray(ses), config.criterion, config.one_se_rule)
    else:
        best = 0
    return PathResult(
        records=records,
        best_index=best,
        weights_used=w.copy(),
        block_names=tuple(design.block_names),
        block_size=kb,
        lambda_max=anchor,
        criterion=config.criterion,
        adaptive="none",
        uses_relaxation=False,
    )


def _lift(B_sub, blocks, p, kb):
    if B_sub is None:
        return None
    B = np.zeros((p * kb, B_sub.shape[1]))
    B[_cols(blocks, kb)] = B_sub
    return B


def _lift_record(rec: PathRecord, blocks, p, kb) -> PathRecord:
    blocks = np.asarray(blocks, dtype=int)
    return replace(
        rec,
        selected=tuple(int(blocks[j]) for j in rec.selected),
        B_raw=_lift(rec.B_raw, blocks, p, kb),
        B_relaxed=_lift(rec.B_relaxed, blocks, p, kb),
        flags=list(rec.flags),
    )


def run_adaptive(design, config: PathConfig, initial: PathResult | None = None) -> PathResult:
    """Adaptive step started from the best model of an unweighted path.

    ``config.adaptive == "full"`` runs a new weighted path restricted to the
    initially selected blocks and scores it without relaxation.
    ``"soft"`` re-solves once at the best penalty pair with soft weights and
    relaxes the result.
    """
    mode = config.adaptive if config.adaptive != "none" else "full"
    X, Y, p, kb = _problem(design)
    if initial is None:
        initial = run_path(design, replace(config, adaptive="none"), relax_scores=True)
    best = initial.best
    if not best.selected:
        raise EmptyInitialSelection("the unweighted path selected no block")
    J0 = np.asarray(best.selected, dtype=int)
    B_R = best.B_relaxed if best.B_relaxed is not None else relax(design, J0, config.ridge_eps)
    sub = design.restrict(J0)
    B_R_sub = B_R[_cols(J0, kb)]
    flags = []
    weights_full = np.full(p, np.inf)

    if mode == "full":
        omega = adaptive_weights(B_R_sub, np.arange(J0.size), J0.size, "full")
        path = run_path(sub, replace(config, adaptive="none"), omega, relax_scores=False)
        weights_full[J0] = omega
        records = [_lift_record(r, J0, p, kb) for r in path.records]
        return PathResult(
            records=records,
            best_index=path.best_index,
            weights_used=weights_full,
            block_names=tuple(design.block_names),
            block_size=kb,
            lambda_max=path.lambda_max,
            criterion=config.criterion,
            adaptive="full",
            uses_relaxation=False,
            initial=initial,
            flags=flags,
        )

    try:
        omega = adaptive_weights(B_R_sub, np.arange(J0.size), J0.size, "soft")
    except SoftDegenerate:
        omega = adaptive_weights(B_R_sub, np.arange(J0.size), J0.size, "full")
        flags.append("soft_degenerate_fallback_full")
    weights_full[J0] = omega
    t0 = time.perf_counter()
    params = PenaltyParams(best.lambda1, best.lambda2, omega)
    state, diag, err = _safe_solve(sub, params, config.solver, None)
    sel_sub = np.flatnonzero(block_norms(state.B, J0.size) > 0)
    B_rel_sub = relax(sub, sel_sub, config.ridge_eps) if sel_sub.size else None
    final = _lift_record(
        PathRecord(
            c_lambda=best.c_lambda,
            lambda1=best.lambda1,
            lambda2=best.lambda2,
            selected=tuple(int(j) for j in sel_sub),
            B_raw=state.B.copy(),
            B_relaxed=B_rel_sub if B_rel_sub is not None else np.zeros_like(state.B),
            outer_iters=diag.outer_iters,
            newton_steps=diag.newton_steps,
            step_halvings=diag.step_halvings,
            converged=diag.converged,
            flags=[err] if err else [],
            history=diag.history,
            elapsed_ms=1e3 * (time.perf_counter() - t0),
        ),
        J0,
        p,
        kb,
    )
    return PathResult(
        records=list(initial.records),
        best_index=initial.best_index,
        weights_used=weights_full,
        block_names=tuple(design.block_names),
        block_size=kb,
        lambda_max=initial.lambda_max,
        criterion=config.criterion,
        adaptive="soft",
        uses_relaxation=True,
        initial=initial,
        final=final,
        flags=flags,
    )


def fit_single(design, lambda1: float, lambda2: float, config: PathConfig | None = None, weights=None) -> PathResult:
    """One solve at a fixed penalty pair, packaged as a one-point path."""
    config = config or PathConfig()
    X, Y, p, kb = _problem(design)
    w = np.ones(p) if weights is None else np.asarray(weights, float)
    anchor = lambda_max(design, w)
    t0 = time.perf_counter()
    state, diag, err = _safe_solve(design, PenaltyParams(lambda1, lambda2, w), config.solver, None)
    selected = tuple(int(j) for j in np.flatnonzero(block_norms(state.B, p) > 0))
    rec = PathRecord(
        c_lambda=lambda1 / anchor if anchor > 0 else 1.0,
        lambda1=lambda1,
        lambda2=lambda2,
        selected=selected,
        B_raw=state.B.copy(),
        B_relaxed=relax(design, selected, config.ridge_eps) if selected else None,
        outer_iters=diag.outer_iters,
        newton_steps=diag.newton_steps,
        step_halvings=diag.step_halvings,
        converged=diag.converged,
        flags=[err] if err else [],
        history=diag.history,
    )
    if selected:
        try:
            rec.dof = effective_dof(design, selected, lambda2)
            rec.criterion_score = gcv_score(design, selected, rec.B_relaxed, lambda2, config.gcv_scale)
        except DegenerateDof:
            rec.flags.append("degenerate_dof")
    rec.elapsed_ms = 1e3 * (time.perf_counter() - t0)
    return PathResult(
        records=[rec],
        best_index=0,
        weights_used=w,
        block_names=tuple(design.block_names),
        block_size=kb,
        lambda_max=anchor,
        criterion="gcv",
        uses_relaxation=False,
    )


def fit_path(design, config: PathConfig) -> PathResult:
    """Path search followed by the adaptive step requested in ``config``.

    An empty unweighted best model short-circuits the adaptive step; the
    result is flagged and reports the null model.
    """
    initial = run_path(design, replace(config, adaptive="none"), relax_scores=True)
    if config.adaptive == "none":
        return initial
    try:
        return run_adaptive(design, config, initial)
    except EmptyInitialSelection:
        initial.flags.append("empty_initial_selection")
        return initial
