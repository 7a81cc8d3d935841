from hypothesis import given, strategies as st
import numpy as np
import pytest

from skpd_mcca.linalg import RidgeCovariance, inv_sqrt_sym, quad_form, sample_covariance
from skpd_mcca.solvers import (
    PenalizedQuadProblem,
    kkt_residual,
    normalize_to_unit_variance,
    soft_threshold,
    solve_lasso_cd,
    solve_ridge_ls,
)


def _problem(seed: int, dim: int = 10, n: int = 30, lam: float = 0.05) -> PenalizedQuadProblem:
    rng = np.random.default_rng(seed)
    latent = rng.standard_normal((n, 1))
    x = rng.standard_normal((n, dim)) + 0.7 * latent
    x -= x.mean(axis=0)
    y = x[:, :3].sum(axis=1) + 0.3 * rng.standard_normal(n)
    return PenalizedQuadProblem(sample_covariance(x, 0.01), x.T @ y / n, lam)


def _prox_grad(problem: PenalizedQuadProblem, n_iters: int = 20000) -> np.ndarray:
    g = problem.gram.matrix
    step = 1.0 / np.linalg.eigvalsh(g)[-1]
    v = np.zeros(problem.dim)
    for _ in range(n_iters):
        nxt = soft_threshold(v - step * (g @ v - problem.linear), step * problem.lam)
        if np.max(np.abs(nxt - v)) < 1e-15:
            return nxt
        v = nxt
    return v


def _random_problem(seed: int) -> PenalizedQuadProblem:
    rng = np.random.default_rng(seed)
    dim = 8 + seed % 13
    n = 4 * dim + 10
    x = rng.standard_normal((n, dim)) + 0.5 * rng.standard_normal((n, 1))
    x -= x.mean(axis=0)
    y = x @ (rng.standard_normal(dim) * (rng.random(dim) < 0.4)) + rng.standard_normal(n)
    linear = x.T @ y / n
    return PenalizedQuadProblem(sample_covariance(x, 0.01), linear, 0.2 * np.abs(linear).max())


def test_soft_threshold():
    np.testing.assert_array_equal(
        soft_threshold(np.array([-3.0, -0.5, 0.0, 0.5, 3.0]), 1.0),
        [-2.0, 0.0, 0.0, 0.0, 2.0],
    )


def test_lasso_matches_proximal_gradient_oracle():
    problem = _problem(0)
    res = solve_lasso_cd(problem, tol=1e-10, max_iter=10000)
    oracle = _prox_grad(problem)
    assert res.converged
    np.testing.assert_allclose(res.coef, oracle, atol=1e-6)
    assert abs(problem.objective(res.coef) - problem.objective(oracle)) < 1e-9


@pytest.mark.parametrize("seed", range(100))
def test_lasso_matches_oracle_on_random_problems(seed):
    problem = _random_problem(seed)
    res = solve_lasso_cd(problem, tol=1e-10, max_iter=10000)
    oracle = _prox_grad(problem)
    assert res.converged
    np.testing.assert_allclose(res.coef, oracle, atol=1e-5)
    assert abs(problem.objective(res.coef) - problem.objective(oracle)) < 1e-6


def test_lasso_on_identity_gram_is_soft_thresholding():
    problem = PenalizedQuadProblem(RidgeCovariance(np.eye(2), 0.0), np.array([3.0, 0.5]), 1.0)
    res = solve_lasso_cd(problem)
    assert res.converged
    np.testing.assert_allclose(res.coef, [2.0, 0.0], atol=1e-12)


def test_lasso_converged_solution_satisfies_kkt():
    problem = _problem(1)
    res = solve_lasso_cd(problem, tol=1e-8)
    assert res.converged
    assert res.kkt_residual <= 1e-8
    assert kkt_residual(problem, res.coef) == res.kkt_residual


def test_lasso_objective_is_monotone():
    res = solve_lasso_cd(_problem(2, lam=0.01), tol=1e-12)
    trace = np.array(res.objective_trace)
    assert np.all(np.diff(trace) <= 1e-12)


def test_lasso_large_penalty_gives_zero_without_sweeps():
    problem = _problem(3)
    big = PenalizedQuadProblem(problem.gram, problem.linear, float(np.abs(problem.linear).max()))
    res = solve_lasso_cd(big)
    assert res.converged
    assert res.n_sweeps == 0
    assert not np.any(res.coef)


def test_lasso_warm_start_at_solution_needs_no_sweeps():
    problem = _problem(4)
    first = solve_lasso_cd(problem, tol=1e-8)
    again = solve_lasso_cd(problem, tol=1e-8, warm_start=first.coef)
    assert again.converged
    assert again.n_sweeps == 0
    np.testing.assert_array_equal(again.coef, first.coef)


def test_lasso_returns_best_iterate_when_not_converged():
    problem = _problem(5, lam=0.001)
    res = solve_lasso_cd(problem, tol=0.0, max_iter=2)
    assert not res.converged
    assert res.n_sweeps == 2
    assert problem.objective(res.coef) <= min(res.objective_trace) + 1e-12


@given(st.integers(min_value=0, max_value=10_000))
def test_gram_form_equals_whitened_least_squares(seed):
    # 1/2 v'Gv - b'v = 1/2 ||G^{1/2} v - G^{-1/2} b||^2 - 1/2 b'G^{-1}b
    problem = _problem(seed, dim=6)
    g = problem.gram.matrix
    w, vecs = np.linalg.eigh(g)
    root = (vecs * np.sqrt(w)) @ vecs.T
    target = inv_sqrt_sym(g) @ problem.linear
    rng = np.random.default_rng(seed)
    for _ in range(3):
        v = rng.standard_normal(6)
        whitened = 0.5 * np.sum((root @ v - target) ** 2) + problem.lam * np.abs(v).sum()
        const = 0.5 * float(target @ target)
        assert abs(problem.objective(v) - (whitened - const)) < 1e-8


def test_ridge_ls_matches_dense_solve():
    rng = np.random.default_rng(6)
    a = rng.standard_normal((5, 5))
    gram = RidgeCovariance(a @ a.T + np.eye(5), 0.0)
    b = rng.standard_normal(5)
    np.testing.assert_allclose(solve_ridge_ls(gram, b), np.linalg.solve(gram.matrix, b), atol=1e-10)


def test_normalize_to_unit_variance():
    sigma = RidgeCovariance(np.diag([1.0, 4.0]), 0.0)
    v = normalize_to_unit_variance(np.array([3.0, 1.0]), sigma)
    assert abs(quad_form(sigma, v) - 1.0) < 1e-12
    assert not np.any(normalize_to_unit_variance(np.zeros(2), sigma))
