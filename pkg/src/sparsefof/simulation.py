"""Synthetic function-on-function scenarios and evaluation metrics.

Features and errors are zero-mean Gaussian processes with a Matérn
covariance; nonzero coefficient surfaces are mixtures of Gaussian bumps.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .exceptions import FactorizationFailure, UnsupportedSmoothness
from .functional import CurveSet, Grid

__all__ = [
    "MaternParams",
    "ScenarioConfig",
    "GroundTruth",
    "Scenario",
    "Metrics",
    "matern_cov",
    "matern_matrix",
    "sample_gp",
    "gen_coefficients",
    "gen_scenario",
    "predict_curves",
    "evaluate",
    "replicate_seed",
]

FEATURE_KERNEL = dict(eta2=1.0, length=0.25, nu=3.5)
ERROR_KERNEL = dict(eta2=1.0, length=0.25, nu=2.5)
AMPLITUDE_RANGE = (1.0, 3.0)

# polynomial coefficients of the half-integer Matérn closed forms, in powers of x
_HALF_INTEGER = {
    0.5: (1.0,),
    1.5: (1.0, 1.0),
    2.5: (1.0, 1.0, 1.0 / 3.0),
    3.5: (1.0, 1.0, 2.0 / 5.0, 1.0 / 15.0),
}


@dataclass(frozen=True)
class MaternParams:
    eta2: float = 1.0
    length: float = 0.25
    nu: float = 3.5

    def __post_init__(self):
        if not self.eta2 > 0 or not self.length > 0:
            raise ValueError("eta2 and length must be positive")
        if float(self.nu) not in _HALF_INTEGER:
            raise UnsupportedSmoothness(f"nu={self.nu} is not one of {sorted(_HALF_INTEGER)}")


def matern_cov(t, s, params: MaternParams):
    """Matérn covariance between locations ``t`` and ``s`` (broadcasting)."""
    d = np.abs(np.asarray(t, float) - np.asarray(s, float))
    x = np.sqrt(2.0 * params.nu) * d / params.length
    poly = np.polynomial.polynomial.polyval(x, _HALF_INTEGER[float(params.nu)])
    return params.eta2 * poly * np.exp(-x)


def matern_matrix(grid: Grid, params: MaternParams) -> np.ndarray:
    t = grid.points
    return matern_cov(t[:, None], t[None, :], params)


def _jittered_cholesky(C, eta2):
    jitter = 1e-10 * eta2
    while jitter <= 1e-6 * eta2 * (1 + 1e-12):
        try:
            return np.linalg.cholesky(C + jitter * np.eye(C.shape[0]))
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise FactorizationFailure("gridded covariance is not positive definite even with jitter")


def sample_gp(n: int, grid: Grid, params: MaternParams, seed) -> CurveSet:
    """``n`` independent zero-mean draws on ``grid``."""
    rng = np.random.default_rng(seed)
    L = _jittered_cholesky(matern_matrix(grid, params), params.eta2)
    return CurveSet(rng.standard_normal((n, grid.m)) @ L.T, grid)


def _draw_gp(rng, n, L):
    return rng.standard_normal((n, L.shape[0])) @ L.T


@dataclass(frozen=True)
class ScenarioConfig:
    n: int
    p: int
    p0: int
    snr: float = 10.0
    regime: str = "easy"
    seed: int = 0
    m: int = 100

    def __post_init__(self):
        if self.n < 2 or self.p < 1 or self.p0 < 0:
            raise ValueError("need n >= 2, p >= 1 and p0 >= 0")
        if self.p0 > self.p:
            raise ValueError(f"p0={self.p0} exceeds p={self.p}")
        if not self.snr > 0:
            raise ValueError("snr must be positive")
        if self.regime not in ("easy", "difficult"):
            raise ValueError("regime must be 'easy' or 'difficult'")
        if self.m < 3:
            raise ValueError("m must be at least 3")

    @property
    def n_test(self) -> int:
        return self.n // 3


@dataclass
class GroundTruth:
    """True support and surfaces; ``surfaces[i]`` belongs to ``active[i]``.

    Surfaces are indexed ``[s, t]``: feature argument first, response second.
    """

    active: np.ndarray
    surfaces: np.ndarray
    y_true: np.ndarray
    noise_variance: float
    p: int
    bumps: list = field(default_factory=list)

    def full_surfaces(self, m) -> np.ndarray:
        out = np.zeros((self.p, m, m))
        out[self.active] = self.surfaces
        return out


@dataclass
class Scenario:
    config: ScenarioConfig
    grid: Grid
    train_features: list
    train_response: CurveSet
    test_features: list
    test_response: CurveSet
    truth: GroundTruth

    @property
    def feature_names(self):
        return tuple(f"x{j}" for j in range(self.config.p))


def replicate_seed(seed: int, replicate: int) -> int:
    """Independent child seed for replicate ``replicate`` of a run seeded ``seed``."""
    return int(np.random.SeedSequence([seed, replicate]).generate_state(1)[0])


def gen_coefficients(p0: int, regime: str, grid: Grid, seed):
    """Gaussian-bump surfaces on the grid tensor.

    Returns ``(surfaces, bumps)``: an array ``p0 x m x m`` and, per surface,
    the list of ``(amplitude, center_s, center_t, sd)`` bumps.
    """
    rng = np.random.default_rng(seed)
    t = grid.points
    S, T = np.meshgrid(t, t, indexing="ij")
    surfaces = np.zeros((p0, grid.m, grid.m))
    bumps = []
    for i in range(p0):
        if regime == "easy":
            count, sd_range = 1, (0.2, 0.3)
        elif regime == "difficult":
            count, sd_range = int(rng.integers(2, 4)), (0.01, 0.15)
        else:
            raise ValueError(f"unknown regime {regime!r}")
        these = []
        for _ in range(count):
            sd = rng.uniform(*sd_range)
            cs, ct = rng.uniform(0.0, 1.0, size=2)
            amp = rng.uniform(*AMPLITUDE_RANGE) * rng.choice((-1.0, 1.0))
            surfaces[i] += amp * np.exp(-((S - cs) ** 2 + (T - ct) ** 2) / (2.0 * sd**2))
            these.append((float(amp), float(cs), float(ct), float(sd)))
        bumps.append(these)
    return surfaces, bumps


def _apply_surfaces(features, surfaces, active, w):
    """``sum_j int B_j(s, t) X_j(s) ds`` for the active features."""
    out = np.zeros_like(features[0])
    for surf, j in zip(surfaces, active):
        out += (features[j] * w) @ surf
    return out


def gen_scenario(config: ScenarioConfig, grid: Grid | None = None) -> Scenario:
    """Train and test data plus ground truth, a pure function of ``config``."""
    grid = grid or Grid.uniform(config.m)
    rng = np.random.default_rng(config.seed)
    n, n_test, p = config.n, config.n_test, config.p
    Lx = _jittered_cholesky(matern_matrix(grid, MaternParams(**FEATURE_KERNEL)), 1.0)
    Le = _jittered_cholesky(matern_matrix(grid, MaternParams(**ERROR_KERNEL)), 1.0)
    feats = [_draw_gp(rng, n + n_test, Lx) for _ in range(p)]
    active = np.sort(rng.choice(p, size=config.p0, replace=False)).astype(int)
    surfaces, bumps = gen_coefficients(config.p0, config.regime, grid, int(rng.integers(2**32)))
    w = grid.weights
    y_true = _apply_surfaces(feats, surfaces, active, w)
    unit_noise = _draw_gp(rng, n + n_test, Le)
    signal_var = float(np.var(y_true[:n])) if config.p0 else 1.0
    target = signal_var / config.snr
    # scale so the pooled training error variance is exactly the target
    scale = np.sqrt(target / float(np.var(unit_noise[:n])))
    noise = scale * unit_noise
    y = y_true + noise
    truth = GroundTruth(active, surfaces, y_true, target, p, bumps)
    tr, te = slice(0, n), slice(n, n + n_test)
    return Scenario(
        config=config,
        grid=grid,
        train_features=[CurveSet(f[tr], grid) for f in feats],
        train_response=CurveSet(y[tr], grid),
        test_features=[CurveSet(f[te], grid) for f in feats],
        test_response=CurveSet(y[te], grid),
        truth=truth,
    )


def predict_curves(features, surfaces, selected, intercept, grid: Grid) -> np.ndarray:
    """Response curves implied by surfaces ``[s, t]`` for the selected features."""
    vals = [f.values if isinstance(f, CurveSet) else np.asarray(f) for f in features]
    n = vals[0].shape[0]
    out = np.zeros((n, grid.m)) if intercept is None else np.tile(np.asarray(intercept, float), (n, 1))
    w = grid.weights
    for j, surf in zip(selected, surfaces):
        out += (vals[j] * w) @ surf
    return out


def _surface_norm(S, w):
    return float(np.sqrt(np.einsum("s,t,st->", w, w, S * S)))


@dataclass
class Metrics:
    false_pos: int
    false_neg: int
    mse_B: float | None
    mse_out: float
    flags: list = field(default_factory=list)
    elapsed_ms: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate(selected, surfaces, intercept, truth: GroundTruth, test_features, test_response: CurveSet) -> Metrics:
    """Selection, estimation and prediction metrics of an estimate.

    ``surfaces[i]`` is the estimated surface of feature ``selected[i]``.
    The estimation error averages only over true positives; the prediction
    error is the mean per-curve relative quadrature error on the test set.
    """
    grid = test_response.grid
    w = grid.weights
    selected = [int(j) for j in selected]
    sel, act = set(selected), set(int(j) for j in truth.active)
    fp, fn = len(sel - act), len(act - sel)
    flags = []
    true_by_idx = {int(j): s for j, s in zip(truth.active, truth.surfaces)}
    ratios = []
    for j, est in zip(selected, surfaces):
        if j in true_by_idx:
            ref = true_by_idx[j]
            ratios.append(_surface_norm(ref - est, w) / _surface_norm(ref, w))
    if ratios:
        mse_B = float(np.mean(ratios))
    else:
        mse_B = None
        flags.append("no_true_positive")
    pred = predict_curves(test_features, surfaces, selected, intercept, grid)
    Y = test_response.values
    num = np.sqrt(np.maximum((Y - pred) ** 2 @ w, 0.0))
    den = np.sqrt(np.maximum(Y**2 @ w, 0.0))
    mse_out = float(np.mean(num / den))
    return Metrics(fp, fn, mse_B, mse_out, flags)
