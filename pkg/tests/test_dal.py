import time

import numpy as np
import pytest
from scipy import optimize

from conftest import fista, objective, random_design
from sparsefof import dal
from sparsefof.dal import (
    DalConfig,
    build_newton_system,
    dual_objective_h_star,
    kkt_residuals,
    newton_direction,
    psi_gradient,
    psi_value,
    solve,
    solve_screened,
    z_update,
)
from sparsefof.exceptions import MaxIterations
from sparsefof.penalty import PenaltyParams, block_norms, conjugate_value, prox_penalty
from sparsefof.selection import lambda_max


def lagrangian(V, Z, B, sigma, design, params):
    """Augmented Lagrangian of the dual, written out term by term."""
    X, Y = design.X, design.Y
    C = X.T @ V + Z
    return (
        dual_objective_h_star(V, Y)
        + conjugate_value(Z, params)
        - np.sum(B * C)
        + 0.5 * sigma * np.sum(C * C)
    )


def random_point(rng, design, scale=0.3):
    n, q = design.Y.shape
    V = scale * rng.standard_normal((n, q))
    B = scale * rng.standard_normal((design.X.shape[1], q))
    return V, B


def moderate_params(design, rng=None, frac=0.3):
    lm = lambda_max(design)
    w = np.ones(design.p) if rng is None else rng.uniform(0.5, 1.5, design.p)
    return PenaltyParams(frac * lm, 0.5 * frac * lm, w)


# --- h* -------------------------------------------------------------------


def test_h_star_examples(rng):
    Y = rng.standard_normal((5, 2))
    assert dual_objective_h_star(np.zeros_like(Y), Y) == 0.0
    assert dual_objective_h_star(-Y, Y) == pytest.approx(-0.5 * np.sum(Y**2))
    V = rng.standard_normal((5, 2))
    loop = sum(0.5 * V[i, a] ** 2 + Y[i, a] * V[i, a] for i in range(5) for a in range(2))
    assert dual_objective_h_star(V, Y) == pytest.approx(loop, rel=1e-12)


# --- psi and its derivatives ----------------------------------------------


def test_psi_all_thresholded(rng):
    design = random_design(rng, n=10, p=4, k=2)
    V, B = random_point(rng, design, 0.01)
    params = PenaltyParams(1e3, 1.0, np.ones(4))
    expect = dual_objective_h_star(V, design.Y) - np.sum(B**2) / (2 * 0.7)
    assert psi_value(V, B, 0.7, design, params) == pytest.approx(expect, rel=1e-12)
    assert psi_value(np.zeros_like(V), np.zeros_like(B), 0.7, design, params) == 0.0


def test_psi_equals_lagrangian_at_z_update(rng):
    design = random_design(rng, n=15, p=5, k=2)
    params = moderate_params(design, rng)
    for sigma in (0.1, 1.0, 7.0):
        V, B = random_point(rng, design)
        Z = z_update(V, B, sigma, design, params)
        assert psi_value(V, B, sigma, design, params) == pytest.approx(
            lagrangian(V, Z, B, sigma, design, params), rel=1e-9, abs=1e-9
        )


def test_z_update_minimizes_lagrangian(rng):
    design = random_design(rng, n=8, p=2, k=1)
    params = PenaltyParams(0.4, 0.6, np.array([1.0, 1.5]))
    V, B = random_point(rng, design, 1.0)
    sigma = 0.8
    Z = z_update(V, B, sigma, design, params)

    def f(z):
        return lagrangian(V, z.reshape(2, 1), B, sigma, design, params)

    res = optimize.minimize(f, np.zeros(2), method="BFGS", options={"gtol": 1e-12})
    np.testing.assert_allclose(Z.ravel(), res.x, atol=1e-5)


def test_z_update_examples(rng):
    design = random_design(rng, n=8, p=3, k=2)
    params = PenaltyParams(1e4, 1.0, np.ones(3))
    V, B = random_point(rng, design)
    T = B - 0.5 * design.X.T @ V
    np.testing.assert_allclose(z_update(V, B, 0.5, design, params), T / 0.5, atol=1e-14)
    np.testing.assert_array_equal(z_update(0 * V, 0 * B, 0.5, design, params), 0.0)


def test_gradient_empty_active_set(rng):
    design = random_design(rng, n=8, p=3, k=2)
    params = PenaltyParams(1e4, 1.0, np.ones(3))
    V, B = random_point(rng, design)
    np.testing.assert_allclose(psi_gradient(V, B, 0.5, design, params), V + design.Y)


def fd_gradient(f, V, h=1e-6):
    G = np.zeros_like(V)
    for idx in np.ndindex(V.shape):
        E = np.zeros_like(V)
        E[idx] = h
        G[idx] = (f(V + E) - f(V - E)) / (2 * h)
    return G


def test_gradient_finite_differences(rng):
    for _ in range(10):
        design = random_design(rng, n=8, p=4, k=2)
        params = moderate_params(design, rng)
        V, B = random_point(rng, design)
        sigma = float(rng.uniform(0.2, 3))
        G = psi_gradient(V, B, sigma, design, params)
        fd = fd_gradient(lambda v: psi_value(v, B, sigma, design, params), V)
        assert np.linalg.norm(G - fd) <= 1e-5 * np.linalg.norm(G)


def test_hessian_vector_finite_differences(rng):
    for _ in range(10):
        design = random_design(rng, n=8, p=4, k=2)
        params = moderate_params(design, rng)
        V, B = random_point(rng, design)
        sigma = float(rng.uniform(0.2, 3))
        D = rng.standard_normal(V.shape)
        h = 1e-6
        fd = (psi_gradient(V + h * D, B, sigma, design, params) - psi_gradient(V - h * D, B, sigma, design, params)) / (2 * h)
        system = build_newton_system(V, B, sigma, design, params)
        hv = system.matvec(D)
        assert np.linalg.norm(hv - fd) <= 1e-4 * np.linalg.norm(fd)
        dense = (system.hessian() @ D.ravel()).reshape(D.shape)
        np.testing.assert_allclose(dense, hv, rtol=1e-10, atol=1e-12)


def test_gradient_vanishes_at_optimum(rng):
    design = random_design(rng, n=30, p=6, k=2)
    params = moderate_params(design)
    state, _ = solve(design, params, DalConfig(tol_kkt1=1e-10, tol_kkt3=1e-10))
    G = psi_gradient(state.V, state.B, state.sigma, design, params)
    assert np.max(np.abs(G)) < 1e-8


# --- Newton system --------------------------------------------------------


def test_P_blocks_ridge_only(rng):
    design = random_design(rng, n=10, p=3, k=2)
    params = PenaltyParams(0.0, 0.4, np.array([1.0, 2.0, 0.5]))
    V, B = random_point(rng, design)
    system = build_newton_system(V, B, 1.5, design, params)
    assert system.r == 3
    for j, P in enumerate(system.P_blocks()):
        np.testing.assert_allclose(P, np.eye(4) / (1 + 1.5 * params.weights[j] * 0.4), atol=1e-15)


def test_P_blocks_formula_and_active_set(rng):
    design = random_design(rng, n=10, p=5, k=2)
    params = moderate_params(design, rng, frac=0.05)
    V, B = random_point(rng, design)
    sigma = 0.9
    system = build_newton_system(V, B, sigma, design, params)
    T = B - sigma * design.X.T @ V
    nrm = block_norms(T, 5)
    w = params.weights
    np.testing.assert_array_equal(system.active, np.flatnonzero(nrm >= sigma * w * params.lambda1))
    for P, j in zip(system.P_blocks(), system.active):
        t = T[2 * j : 2 * j + 2].ravel()
        c = sigma * w[j] * params.lambda1
        expect = ((1 - c / nrm[j]) * np.eye(4) + c / nrm[j] ** 3 * np.outer(t, t)) / (1 + sigma * w[j] * params.lambda2)
        np.testing.assert_allclose(P, expect, atol=1e-13)
        assert np.min(np.linalg.eigvalsh(P)) >= -1e-14


def test_hessian_spd_and_shape(rng):
    for _ in range(10):
        design = random_design(rng, n=12, p=4, k=3)
        params = moderate_params(design, rng, frac=0.1)
        V, B = random_point(rng, design)
        H = build_newton_system(V, B, float(rng.uniform(0.1, 5)), design, params).hessian()
        assert H.shape == (36, 36)
        np.testing.assert_allclose(H, H.T, atol=1e-12)
        assert np.min(np.linalg.eigvalsh(H)) >= 1 - 1e-10


def test_hessian_matches_lifted_form(rng):
    design = random_design(rng, n=9, p=4, k=2)
    params = moderate_params(design, rng, frac=0.05)
    V, B = random_point(rng, design)
    system = build_newton_system(V, B, 1.3, design, params)
    # oracle: I + sigma * Xhat_J blockdiag(P_j) Xhat_J^T with Xhat_j = kron(X_j, I_q)
    q = 2
    H = np.eye(9 * q)
    for P, j in zip(system.P_blocks(), system.active):
        Xh = np.kron(design.block(j), np.eye(q))
        H += 1.3 * Xh @ P @ Xh.T
    np.testing.assert_allclose(system.hessian(), H, atol=1e-12)


def test_newton_direction_trivial_cases(rng):
    design = random_design(rng, n=8, p=3, k=2)
    V, B = random_point(rng, design)
    empty = build_newton_system(V, B, 1.0, design, PenaltyParams(1e4, 1.0, np.ones(3)))
    np.testing.assert_array_equal(newton_direction(empty), -empty.grad)
    system = build_newton_system(V, B, 1.0, design, PenaltyParams(0.0, 1.0, np.ones(3)))
    system.grad = np.zeros_like(system.grad)
    np.testing.assert_array_equal(newton_direction(system), 0.0)


def test_woodbury_matches_direct(rng):
    design = random_design(rng, n=8, p=4, k=2)
    params = PenaltyParams(0.0, 0.5, np.ones(4))
    V, B = random_point(rng, design)
    for sigma in (0.1, 1.0, 10.0):
        sys_d = build_newton_system(V, B, sigma, design, params, mode="direct")
        sys_w = build_newton_system(V, B, sigma, design, params, mode="woodbury")
        d_ref = np.linalg.solve(sys_d.hessian(), -sys_d.grad.ravel())
        dw, dd = newton_direction(sys_w), newton_direction(sys_d)
        assert np.linalg.norm(dw.ravel() - d_ref) <= 1e-8 * np.linalg.norm(d_ref)
        assert np.linalg.norm(dd.ravel() - d_ref) <= 1e-8 * np.linalg.norm(d_ref)


def test_newton_steps_decrease_psi(rng):
    design = random_design(rng, n=20, p=6, k=2)
    params = moderate_params(design)
    V, B = random_point(rng, design, 0.1)
    sigma = 2.0
    psi = psi_value(V, B, sigma, design, params)
    for _ in range(8):
        D = newton_direction(build_newton_system(V, B, sigma, design, params))
        # unit step first, halved while psi rises, as the solver does
        step = 1.0
        while psi_value(V + step * D, B, sigma, design, params) > psi + 1e-10 and step > 2**-20:
            step *= 0.5
        V = V + step * D
        new = psi_value(V, B, sigma, design, params)
        assert new <= psi + 1e-12
        psi = new
    assert np.max(np.abs(psi_gradient(V, B, sigma, design, params))) < 1e-8


def test_newton_solve_cost_does_not_grow_with_p(rng):
    n, k, active = 60, 3, 5

    def median_solve_time(p):
        X = rng.standard_normal((n, p * k))
        B = np.zeros((p * k, k))
        B[: active * k] = rng.standard_normal((active * k, k))
        design = random_design(rng, n=n, p=1, k=k)
        design = type(design)(X @ B + 0.1 * rng.standard_normal((n, k)), X, tuple(range(p)), k)
        params = PenaltyParams(0.2 * lambda_max(design), 0.1, np.ones(p))
        state, _ = solve(design, params)
        system = build_newton_system(state.V, state.B, state.sigma, design, params)
        times = []
        for _ in range(30):
            t0 = time.perf_counter()
            newton_direction(system)
            times.append(time.perf_counter() - t0)
        return np.median(times), system.r

    t_small, r_small = median_solve_time(50)
    t_large, r_large = median_solve_time(200)
    if r_small == r_large:
        assert t_large < 1.5 * t_small + 2e-4


# --- KKT residuals --------------------------------------------------------


def test_kkt_residual_examples(rng):
    design = random_design(rng, n=10, p=3, k=2)
    X, Y = design.X, design.Y
    V = -Y
    Z = -X.T @ V
    B = np.zeros((6, 2))
    assert kkt_residuals(V, Z, B, design) == (0.0, 0.0)
    res3, res1 = kkt_residuals(np.zeros_like(Y), np.zeros((6, 2)), B, design)
    assert res3 == 0.0
    row_sum = np.sum(np.linalg.norm(Y, axis=1))
    blocks = sum(np.linalg.norm(design.block(j)) for j in range(3))
    assert res1 == pytest.approx(row_sum / (1 + row_sum + blocks), rel=1e-12)


# --- solve ----------------------------------------------------------------


def test_solve_above_lambda_max_is_null(rng):
    design = random_design(rng)
    lm = lambda_max(design)
    state, diag = solve(design, PenaltyParams(1.0001 * lm, 1e-8 * lm, np.ones(design.p)))
    assert state.r == 0
    np.testing.assert_array_equal(state.B, 0.0)


def test_solve_zero_response(rng):
    design = random_design(rng)
    design = type(design)(np.zeros_like(design.Y), design.X, design.block_names, design.k)
    state, _ = solve(design, PenaltyParams(0.1, 0.1, np.ones(design.p)))
    np.testing.assert_array_equal(state.B, 0.0)
    np.testing.assert_array_equal(state.V, 0.0)


@pytest.mark.parametrize("seed", range(3))
def test_solve_matches_proximal_gradient(seed):
    rng = np.random.default_rng(seed)
    design = random_design(rng, n=50, p=10, k=2)
    params = moderate_params(design, rng)
    state, diag = solve(design, params)
    ref = fista(design.X, design.Y, params.lambda1, params.lambda2, params.weights, design.p)
    f_ref = objective(ref, design.X, design.Y, params.lambda1, params.lambda2, params.weights, design.p)
    assert diag.primal_obj == pytest.approx(f_ref, rel=1e-4)
    assert diag.res1 <= 1e-6 and diag.res3 <= 1e-6
    assert diag.duality_gap <= 1e-4


def test_warm_start_converges_quickly(rng):
    design = random_design(rng, n=40, p=8, k=2)
    params = moderate_params(design)
    state, _ = solve(design, params)
    _, diag = solve(design, params, warm=state)
    assert diag.outer_iters <= 2


def test_active_set_endpoint_trend(rng):
    for _ in range(5):
        design = random_design(rng, n=40, p=15, k=2)
        _, diag = solve(design, moderate_params(design, frac=0.2))
        assert diag.history[-1]["r"] <= diag.history[0]["r"] or diag.outer_iters == 1


def test_max_iterations_carries_state(rng):
    design = random_design(rng, n=40, p=8, k=2)
    with pytest.raises(MaxIterations) as info:
        solve(design, moderate_params(design), DalConfig(max_outer=1, tol_kkt3=1e-14, tol_kkt1=1e-14))
    assert info.value.state.B.shape == (16, 2)
    assert info.value.diagnostics.outer_iters == 1


def test_direct_and_woodbury_solves_agree(rng):
    design = random_design(rng, n=30, p=8, k=2)
    params = moderate_params(design)
    s_d, _ = solve(design, params, DalConfig(newton_mode="direct"))
    s_w, _ = solve(design, params, DalConfig(newton_mode="woodbury"))
    np.testing.assert_allclose(s_d.B, s_w.B, atol=1e-7)


def test_screened_solve_matches_full(rng):
    design = random_design(rng, n=40, p=30, k=2, active=4)
    lm = lambda_max(design)
    warm = None
    prev = None
    for c in (0.8, 0.5, 0.3, 0.15):
        params = PenaltyParams(c * lm, c * lm, np.ones(30))
        full, _ = solve(design, params)
        screened, diag = solve_screened(design, params, warm=warm, lambda1_prev=prev)
        np.testing.assert_array_equal(full.active, screened.active)
        np.testing.assert_allclose(screened.B, full.B, atol=1e-5)
        # zero blocks satisfy the optimality condition on the full design
        XtV = design.X.T @ screened.V
        zero = block_norms(screened.B, 30) == 0
        assert np.all(block_norms(XtV, 30)[zero] <= c * lm * (1 + 1e-6))
        assert diag.duality_gap <= 1e-4
        warm, prev = screened, c * lm


def test_diagnostics_record_fields(rng):
    design = random_design(rng)
    _, diag = solve(design, moderate_params(design))
    keys = {"sigma", "r", "res1", "res3", "psi", "primal_obj", "dual_obj", "newton_steps", "elapsed_ms"}
    assert all(keys <= set(h) for h in diag.history)
    assert diag.to_dict()["outer_iters"] == diag.outer_iters


def test_config_validation():
    with pytest.raises(ValueError):
        DalConfig(sigma_growth=1.0)
    with pytest.raises(ValueError):
        DalConfig(newton_mode="lu")
    assert DalConfig().initial_sigma(10) == 0.5
    assert DalConfig().initial_sigma(10**6) == 1e-4


def test_prox_of_t_is_primal(rng):
    # the multiplier update B <- prox(T) keeps B equal to the primal iterate
    design = random_design(rng)
    params = moderate_params(design)
    state, _ = solve(design, params)
    T = state.B - state.sigma * design.X.T @ state.V
    np.testing.assert_allclose(prox_penalty(T, state.sigma, params), state.B, atol=1e-6)
    assert dal.primal_objective(state.B, design, params) == pytest.approx(
        objective(state.B, design.X, design.Y, params.lambda1, params.lambda2, params.weights, design.p)
    )
