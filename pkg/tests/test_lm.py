import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import lsq_linear

from contactrefine.lm import NonFiniteEnergyError, projected_gradient, projected_lm


def _linear(A, b):
    return (lambda x: A @ x - b), (lambda x: A)


@given(st.integers(0, 10_000))
def test_bounded_linear_matches_scipy(seed):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(12, 6))
    b = rng.normal(size=12)
    fun, jac = _linear(A, b)
    lower = np.zeros(6)
    upper = np.full(6, np.inf)
    res = projected_lm(fun, jac, np.zeros(6), lower, upper, max_iterations=200, gradient_tolerance=1e-12)
    ref = lsq_linear(A, b, bounds=(lower, upper), tol=1e-14)
    assert np.all(res.x >= 0)
    assert res.cost <= float(ref.fun @ ref.fun) + 1e-9
    assert all(b <= a for a, b in zip(res.history, res.history[1:]))


def test_rosenbrock_converges():
    def fun(x):
        return np.array([10 * (x[1] - x[0] ** 2), 1 - x[0]])

    def jac(x):
        return np.array([[-20 * x[0], 10.0], [-1.0, 0.0]])

    res = projected_lm(fun, jac, np.array([-1.2, 1.0]), np.full(2, -np.inf), np.full(2, np.inf), max_iterations=200)
    assert res.converged
    assert np.allclose(res.x, [1, 1], atol=1e-6)


def test_fixed_variables_do_not_move():
    A = np.eye(3)
    b = np.array([1.0, 2.0, 3.0])
    fun, jac = _linear(A, b)
    fixed = np.array([False, True, False])
    res = projected_lm(fun, jac, np.zeros(3), np.full(3, -np.inf), np.full(3, np.inf), fixed=fixed)
    assert res.x[1] == 0.0
    assert np.allclose(res.x[[0, 2]], [1, 3], atol=1e-8)


def test_upper_bound_respected():
    fun, jac = _linear(np.eye(2), np.array([5.0, -5.0]))
    res = projected_lm(fun, jac, np.zeros(2), np.array([-1.0, -1.0]), np.array([1.0, 1.0]))
    assert np.array_equal(res.x, [1.0, -1.0])
    assert res.converged


def test_non_finite_raises():
    with pytest.raises(NonFiniteEnergyError, match="non-finite energy"):
        projected_lm(lambda x: np.array([np.nan]), lambda x: np.ones((1, 1)), np.zeros(1), np.zeros(1), np.ones(1))


def test_cost_tolerance_stops_early():
    def fun(x):
        return np.array([np.exp(x[0]) - 2.0, x[0]])

    def jac(x):
        return np.array([[np.exp(x[0])], [1.0]])

    lo, hi = np.full(1, -np.inf), np.full(1, np.inf)
    tight = projected_lm(fun, jac, np.array([3.0]), lo, hi, gradient_tolerance=1e-14)
    loose = projected_lm(fun, jac, np.array([3.0]), lo, hi, gradient_tolerance=1e-14, cost_tolerance=1e-2)
    assert loose.converged
    assert loose.iterations < tight.iterations
    assert loose.cost <= loose.history[0]


def test_projected_gradient_zeroes_outward_components():
    x = np.array([0.0, 0.5, 1.0, 0.0])
    g = np.array([1.0, 1.0, -1.0, -1.0])
    fixed = np.array([False, True, False, False])
    pg = projected_gradient(x, g, np.zeros(4), np.ones(4), fixed)
    assert np.array_equal(pg, [0.0, 0.0, 0.0, -1.0])
