import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from irgnm4pi import tikhonov
from irgnm4pi.tikhonov import LinearProblem, SsnConfig
from oracles import enumerate_active_sets, natural_residual


def random_instance(seed, n=None, m=None):
    rng = np.random.default_rng(seed)
    n = n or int(rng.integers(3, 11))
    m = m or int(rng.integers(n, n + 6))
    T = rng.standard_normal((m, n))
    y = rng.standard_normal(m)
    x0 = rng.standard_normal(n)
    mask = rng.random(n) < 0.8
    x0[mask] = np.abs(x0[mask])
    alpha = 10 ** rng.uniform(-3, 0)
    return T, y, x0, alpha, mask


@pytest.mark.parametrize("seed", range(20))
def test_solve_matches_active_set_enumeration(seed):
    T, y, x0, alpha, mask = random_instance(seed)
    x, rep = tikhonov.solve(LinearProblem.from_matrix(T, y, x0, alpha, mask))
    ref = enumerate_active_sets(T, y, x0, alpha, mask)
    assert rep.converged
    assert np.linalg.norm(x - ref) <= 1e-8 * max(1.0, np.linalg.norm(ref))


@pytest.mark.parametrize("seed", range(8))
def test_primal_phase_alone_reaches_the_minimiser(seed):
    T, y, x0, alpha, mask = random_instance(100 + seed)
    p = LinearProblem.from_matrix(T, y, x0, alpha, mask)
    b = T.T @ y + alpha * x0
    scale = np.linalg.norm(T.T @ y) + alpha * np.linalg.norm(x0)
    start = np.where(mask, np.abs(np.random.default_rng(seed).standard_normal(x0.size)), 0.0)
    x, rep = tikhonov._primal_phase(p, start, b, scale, 1e-12, SsnConfig(), 0, 0)
    ref = enumerate_active_sets(T, y, x0, alpha, mask)
    assert rep.converged
    assert np.allclose(x, ref, atol=1e-8)
    assert np.all(x[mask] >= 0)


def test_unconstrained_mask_gives_normal_equation_solution(rng):
    T = rng.standard_normal((12, 8))
    y, x0 = rng.standard_normal(12), rng.standard_normal(8)
    alpha = 0.3
    x, rep = tikhonov.solve(LinearProblem.from_matrix(T, y, x0, alpha, np.zeros(8, bool)))
    want = np.linalg.solve(T.T @ T + alpha * np.eye(8), T.T @ y + alpha * x0)
    assert np.allclose(x, want, atol=1e-9)
    assert rep.converged


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0.1, 3.0), min_size=4, max_size=12),
       st.floats(1e-3, 10.0), st.integers(0, 10_000))
def test_diagonal_operator_closed_form(diag, alpha, seed):
    rng = np.random.default_rng(seed)
    t = np.array(diag)
    y = rng.standard_normal(t.size)
    x0 = np.abs(rng.standard_normal(t.size))
    x, _ = tikhonov.solve(LinearProblem.from_matrix(np.diag(t), y, x0, alpha))
    want = np.maximum(0.0, (t * y + alpha * x0) / (t ** 2 + alpha))
    assert np.allclose(x, want, atol=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 100_000))
def test_kkt_conditions_hold_at_the_solution(seed):
    T, y, x0, alpha, mask = random_instance(seed)
    cfg = SsnConfig()
    x, rep = tikhonov.solve(LinearProblem.from_matrix(T, y, x0, alpha, mask), cfg)
    assert rep.converged
    grad = T.T @ (T @ x - y) + alpha * (x - x0)
    scale = np.linalg.norm(T.T @ y) + alpha * np.linalg.norm(x0)
    assert np.all(x[mask] >= 0)
    assert rep.feasibility_violation == 0.0
    assert np.all(rep.multiplier[mask] >= -1e-9 * scale)
    assert np.allclose(rep.multiplier[~mask], 0.0)
    assert np.max(np.abs(x * rep.multiplier)) <= 1e-8 * scale
    assert natural_residual(T, y, x0, alpha, mask, x) <= 1e-8 * scale
    assert rep.stationarity_residual <= cfg.kkt_tol * scale
    assert np.linalg.norm(grad[~mask]) <= 1e-7 * scale


def test_solution_beats_projected_unconstrained_solution(rng):
    T = rng.standard_normal((20, 15))
    y, x0 = rng.standard_normal(20), np.zeros(15)
    p = LinearProblem.from_matrix(T, y, x0, 0.05)
    x, _ = tikhonov.solve(p)
    free = np.linalg.solve(T.T @ T + 0.05 * np.eye(15), T.T @ y)
    assert np.any(free < 0)
    assert p.objective(x) <= p.objective(np.maximum(free, 0.0)) + 1e-12


def test_zero_data_and_anchor_give_zero():
    p = LinearProblem.from_matrix(np.eye(3), np.zeros(3), np.zeros(3), 1.0)
    x, rep = tikhonov.solve(p)
    assert np.array_equal(x, np.zeros(3))
    assert rep.converged and rep.outer_iters == 0


def test_conjugate_gradient_matches_dense_solve(rng):
    A = rng.standard_normal((30, 30))
    A = A @ A.T + 30 * np.eye(30)
    b = rng.standard_normal(30)
    x, its, res = tikhonov.conjugate_gradient(lambda v: A @ v, b, np.zeros(30), 1e-12, 500)
    assert np.allclose(x, np.linalg.solve(A, b), atol=1e-10)
    assert its <= 30 + 5 and res <= 1e-12


def test_adjoint_mismatch_is_detected(rng):
    T = rng.standard_normal((5, 4))
    p = LinearProblem(lambda x: T @ x, lambda y: 2.0 * T.T @ y, np.ones(5), np.zeros(4), 1.0,
                      np.ones(4, bool))
    with pytest.raises(tikhonov.AdjointMismatch):
        tikhonov.solve(p)


@pytest.mark.parametrize("kwargs", [dict(max_outer=0), dict(kkt_tol=-1.0), dict(cg_tol=0.0)])
def test_ssn_config_validation(kwargs):
    with pytest.raises(ValueError):
        SsnConfig(**kwargs)


def test_problem_validation():
    with pytest.raises(ValueError):
        LinearProblem.from_matrix(np.eye(2), np.ones(2), np.zeros(2), 0.0)
    with pytest.raises(ValueError):
        LinearProblem.from_matrix(np.eye(2), np.ones(2), np.zeros(2), 1.0, np.ones(3, bool))


def test_max_outer_exhaustion_is_reported(rng):
    T = rng.standard_normal((40, 40))
    y = rng.standard_normal(40)
    p = LinearProblem.from_matrix(T, y, np.zeros(40), 1e-4)
    x, rep = tikhonov.solve(p, SsnConfig(max_outer=1))
    assert not rep.converged
    assert rep.outer_iters == 1
    assert np.all(x >= 0)


def test_stability_bound_small_case(rng):
    T = rng.standard_normal((8, 6))
    y1 = rng.standard_normal(8)
    chk = tikhonov.verify_stability(T, y1, y1 + 0.1 * rng.standard_normal(8), np.zeros(6), 0.5)
    assert chk.holds
    assert chk.distance <= chk.bound


def test_approximation_table_for_exact_source():
    rng = np.random.default_rng(1)
    T = rng.standard_normal((10, 10))
    omega = rng.standard_normal(10)
    tab = tikhonov.verify_approximation(T, omega, np.zeros(10), [1e-1, 1e-2, 1e-3])
    assert tab.holds()
    assert np.all(np.diff(tab.errors) < 0)
    assert np.array_equal(tab.x_true, np.maximum(T.T @ omega, 0.0))


def test_operator_perturbation_needs_distance_for_matrix_free():
    T = np.eye(3)
    pair = (lambda x: x, lambda y: y)
    with pytest.raises(ValueError, match="operator_distance"):
        tikhonov.verify_operator_perturbation(pair, T, np.ones(3), np.zeros(3), 1.0)
    chk = tikhonov.verify_operator_perturbation(pair, pair, np.ones(3), np.zeros(3), 1.0,
                                                operator_distance=0.0)
    assert chk.distance == 0.0 and chk.holds
