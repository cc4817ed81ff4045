import numpy as np
import pytest
from scipy.optimize import linprog

from sprlab import simplex


def random_inequality_lp(rng, n_vars, n_rows):
    a = rng.normal(size=(n_rows, n_vars))
    # bounding rows guarantee full column rank and a bounded optimum
    a = np.vstack([a, np.eye(n_vars), -np.eye(n_vars)])
    x0 = rng.normal(size=n_vars)
    b = a @ x0 + rng.uniform(0.5, 3.0, size=len(a))
    c = rng.normal(size=n_vars)
    return c, a, b


def test_matches_scipy_on_random_inequality_lps():
    rng = np.random.Generator(np.random.Philox(123))
    for _ in range(40):
        c, a, b = random_inequality_lp(rng, rng.integers(2, 5), rng.integers(3, 10))
        res = simplex.solve_inequality_form(c, a, b)
        ref = linprog(c, A_ub=a, b_ub=b, bounds=(None, None), method="highs")
        assert ref.status == 0
        assert res.objective == pytest.approx(ref.fun, abs=1e-7)
        assert (res.slacks >= -1e-8).all()
        assert (res.y >= 0.0).all()


def test_duals_certify_optimality():
    rng = np.random.Generator(np.random.Philox(5))
    for _ in range(20):
        c, a, b = random_inequality_lp(rng, 3, 6)
        res = simplex.solve_inequality_form(c, a, b)
        # stationarity and complementary slackness
        assert np.abs(a.T @ res.y + c).max() <= 1e-8
        assert np.abs(res.y * res.slacks).max() <= 1e-6


def test_infeasible_detected():
    a = np.array([[1.0], [-1.0]])
    b = np.array([1.0, -2.0])  # x <= 1 and x >= 2
    with pytest.raises(simplex.LpInfeasible):
        simplex.solve_inequality_form(np.array([1.0]), a, b)


def test_unbounded_detected():
    a = np.array([[1.0]])
    b = np.array([1.0])  # x <= 1, minimize +x -> unbounded below
    with pytest.raises(simplex.LpUnbounded):
        simplex.solve_inequality_form(np.array([1.0]), a, b)


def test_standard_form_basic():
    # min x1 + x2 st x1 + 2 x2 = 4, x >= 0  -> x = (0, 2)
    res = simplex.solve_standard_form(
        np.array([1.0, 1.0]), np.array([[1.0, 2.0]]), np.array([4.0])
    )
    assert res.objective == pytest.approx(2.0)
    assert np.allclose(res.y, [0.0, 2.0])


def test_warm_start_reuses_basis():
    rng = np.random.Generator(np.random.Philox(9))
    c, a, b = random_inequality_lp(rng, 3, 8)
    first = simplex.solve_inequality_form(c, a, b)
    warm = simplex.solve_inequality_form(c, a, b + 0.5, basis=first.basis)
    cold = simplex.solve_inequality_form(c, a, b + 0.5)
    assert warm.objective == pytest.approx(cold.objective, abs=1e-8)
    assert warm.iterations <= cold.iterations


def test_deterministic():
    rng = np.random.Generator(np.random.Philox(77))
    c, a, b = random_inequality_lp(rng, 4, 12)
    r1 = simplex.solve_inequality_form(c, a, b)
    r2 = simplex.solve_inequality_form(c, a, b)
    assert np.array_equal(r1.basis, r2.basis)
    assert np.array_equal(r1.x, r2.x)
