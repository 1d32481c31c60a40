import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from monoldp import (ControlPath, EndpointBall, ExactPath, OptimizerOptions, RateProblem,
                     TimeGrid, action, adjoint_gradient, default_initial_state, fourier_basis,
                     heat_model, hyperbolic_model, linear_model, linear_system_matrices,
                     minimize_rate, minimize_terminal_cost, objective, rate_closed_form_linear,
                     scalar_basis, solve_skeleton)


def scalar_model(lam=-1.0, c=0.0, s=1.0):
    return linear_model(c=c, sigma=(s,), basis=scalar_basis([lam]))


def dense_min_energy(model, x0, y, grid):
    A, B = linear_system_matrices(model, grid)
    n = grid.n_steps
    G = np.zeros((model.dim, model.dim))
    Ak = np.eye(model.dim)
    for _ in range(n):
        M = Ak @ B
        G += M @ M.T
        Ak = A @ Ak
    r = y - np.linalg.matrix_power(A, n) @ x0
    return 0.5 * grid.dt * float(r @ np.linalg.solve(G, r))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10 ** 6), a=st.floats(-4, 4))
def test_action_properties(seed, a):
    grid = TimeGrid(1.5, 30)
    rng = np.random.default_rng(seed)
    u = ControlPath(grid, rng.standard_normal((30, 2)))
    v = ControlPath(grid, rng.standard_normal((30, 2)))
    assert action(u) >= 0
    assert math.isclose(action(u.scaled(a)), a * a * action(u), rel_tol=1e-12, abs_tol=1e-14)
    # parallelogram law of the quadratic form
    lhs = action(u + v) + action(u - v)
    assert math.isclose(lhs, 2 * action(u) + 2 * action(v), rel_tol=1e-12)
    assert math.isclose(action(u), 0.5 * u.energy(), rel_tol=1e-12)


@pytest.mark.parametrize("factory", [lambda: heat_model(n_modes=12),
                                     lambda: hyperbolic_model(n_pairs=6, sigma=(1.0, 0.5)),
                                     lambda: linear_model(c=0.3, sigma=(1.0, 0.7), n_modes=4)])
def test_adjoint_gradient_matches_finite_differences(factory):
    m = factory()
    grid = TimeGrid(1.0, 40)
    rng = np.random.default_rng(0)
    x0 = default_initial_state(m.basis)
    target = EndpointBall(x0 + 0.5, 0.05)
    prob = RateProblem(m, x0, target, grid)
    u = ControlPath(grid, rng.standard_normal((40, m.m_noise)))
    g = adjoint_gradient(m, u, prob, weight=10.0)
    h = 1e-6
    for j, k in [(0, 0), (13, m.m_noise - 1), (39, 0), (25, 0)]:
        e = np.zeros_like(u.values)
        e[j, k] = h
        fd = (objective(prob, ControlPath(grid, u.values + e), 10.0)
              - objective(prob, ControlPath(grid, u.values - e), 10.0)) / (2 * h)
        assert abs(g[j, k] - fd) <= 1e-4 * max(1.0, abs(fd))


def test_gradient_of_action_alone():
    m = heat_model(n_modes=8)
    grid = TimeGrid(1.0, 20)
    x0 = default_initial_state(m.basis)
    # unconstrained ball: only the action contributes u_j dt
    prob = RateProblem(m, x0, EndpointBall(np.zeros(8), 1e6), grid)
    u = ControlPath.constant(grid, 0.7)
    assert np.allclose(adjoint_gradient(m, u, prob), 0.7 * grid.dt)


def test_exact_path_penalty_gradient():
    m = heat_model(n_modes=8)
    grid = TimeGrid(1.0, 30)
    x0 = default_initial_state(m.basis)
    ref = solve_skeleton(m, x0, ControlPath.constant(grid, 1.0))
    prob = RateProblem(m, x0, ExactPath(ref), grid)
    u = ControlPath.constant(grid, 0.2)
    g = adjoint_gradient(m, u, prob, weight=5.0)
    e = np.zeros_like(u.values)
    e[7, 0] = 1e-6
    fd = (objective(prob, ControlPath(grid, u.values + e), 5.0)
          - objective(prob, ControlPath(grid, u.values - e), 5.0)) / 2e-6
    assert abs(g[7, 0] - fd) < 1e-6
    # the reference control attains zero penalty
    assert prob.residual(ref.states) == 0.0


def test_free_endpoint_gives_zero():
    m = heat_model(n_modes=8)
    grid = TimeGrid(1.0, 50)
    x0 = default_initial_state(m.basis)
    sol = minimize_rate(RateProblem(m, x0, EndpointBall(np.zeros(8), 1e3), grid,
                                    options=OptimizerOptions(n_restarts=0)))
    assert sol.I_value == 0.0 and sol.residual == 0.0 and not np.any(sol.u_star.values)
    J, u, zT = minimize_terminal_cost(m, x0, grid, lambda z: (0.0, np.zeros_like(z)),
                                      OptimizerOptions(n_restarts=0))
    assert J == 0.0 and not np.any(u.values)


def test_scalar_rate_matches_closed_form():
    m = scalar_model(-1.0)
    grid = TimeGrid(1.0, 200)
    y = np.array([1.0])
    cf = rate_closed_form_linear(m, [0.0], y, grid)
    # continuous oracle: lam / (sigma^2 (e^{2 lam T} - 1)) y^2 with lam = -1
    cont = -1.0 / (np.exp(-2.0) - 1.0) * 1.0
    assert np.isclose(rate_closed_form_linear(m, [0.0], y, grid, continuous=True), cont, rtol=1e-12)
    sol = minimize_rate(RateProblem(m, [0.0], EndpointBall(y, 0.0), grid,
                                    options=OptimizerOptions(n_restarts=1)))
    assert sol.residual <= 1e-3
    assert abs(sol.I_value - cf) <= 0.01 * cf


def test_unreachable_target_is_infinite():
    m = linear_model(c=0.0, sigma=(1.0,), n_modes=2)
    grid = TimeGrid(1.0, 50)
    y = np.array([0.0, 0.5])
    assert rate_closed_form_linear(m, np.zeros(2), y, grid) == math.inf
    sol = minimize_rate(RateProblem(m, np.zeros(2), EndpointBall(y, 0.0), grid,
                                    options=OptimizerOptions(n_restarts=0)))
    assert sol.I_value == math.inf and sol.residual > 0.1


def test_closed_form_trivia():
    m = linear_model(c=0.2, sigma=(1.0, 0.5, 2.0), n_modes=3)
    grid = TimeGrid(1.0, 100)
    x0 = np.array([0.3, -0.1, 0.2])
    free = solve_skeleton(m, x0, None, grid).final
    assert rate_closed_form_linear(m, x0, free, grid) < 1e-20
    I1 = rate_closed_form_linear(m, x0, free + 0.1, grid)
    I2 = rate_closed_form_linear(m, x0, free + 0.2, grid)
    assert np.isclose(I2, 4 * I1, rtol=1e-10)


@pytest.mark.parametrize("model", [
    linear_model(c=0.2, sigma=(1.0, 0.5, 2.0), n_modes=3),
    linear_model(c=-0.3, sigma=(1.0, 0.4, 0.8, 1.5), basis=fourier_basis(2, a=1.0, b=-0.2)),
    linear_model(c=0.0, sigma=(1.0, 1.0), basis=scalar_basis([0.0, 0.5])),
])
def test_closed_form_matches_dense_gramian(model):
    grid = TimeGrid(1.0, 60)
    rng = np.random.default_rng(5)
    x0, y = rng.standard_normal(model.dim), rng.standard_normal(model.dim)
    cf = rate_closed_form_linear(model, x0, y, grid)
    assert abs(cf - dense_min_energy(model, x0, y, grid)) <= 1e-8 * max(1.0, cf)


def test_discrete_closed_form_approaches_continuous():
    m = linear_model(c=0.1, sigma=(1.0, 0.5), n_modes=2)
    x0, y = np.array([0.2, 0.0]), np.array([1.0, 0.3])
    cont = rate_closed_form_linear(m, x0, y, TimeGrid(1.0, 10), continuous=True)
    vals = [rate_closed_form_linear(m, x0, y, TimeGrid(1.0, n)) for n in (500, 1000, 2000)]
    errs = np.abs(np.array(vals) - cont)
    # first order in dt, Richardson extrapolation recovers the limit
    assert np.all(np.abs(np.log2(errs[:-1] / errs[1:]) - 1) < 0.05)
    assert abs(2 * vals[2] - vals[1] - cont) < 1e-3 * cont


def test_closed_form_rejections():
    grid = TimeGrid(1.0, 10)
    with pytest.raises(ValueError, match="linear drift"):
        rate_closed_form_linear(heat_model(n_modes=4), np.zeros(4), np.ones(4), grid)
    m = heat_model(n_modes=4, lambda_dw=0.0, mu_dw=0.0)
    with pytest.raises(ValueError):
        rate_closed_form_linear(m, np.zeros(4), np.ones(4), grid)


def test_problem_validation():
    m = heat_model(n_modes=4)
    grid = TimeGrid(1.0, 10)
    with pytest.raises(ValueError):
        RateProblem(m, np.zeros(4), EndpointBall(np.ones(4)), grid, penalties=(10.0, 1.0))
    with pytest.raises(ValueError):
        RateProblem(m, np.zeros(4), EndpointBall(np.ones(4)), grid, penalties=())
    with pytest.raises(TypeError):
        RateProblem(m, np.zeros(4), np.ones(4), grid)
    with pytest.raises(ValueError):
        RateProblem(m, np.zeros(4), EndpointBall(np.ones(5)), grid)
    with pytest.raises(ValueError):
        EndpointBall(np.ones(4), -1.0)
    with pytest.raises(ValueError):
        minimize_rate(RateProblem(m, np.zeros(4), EndpointBall(np.ones(4)), grid,
                                  options=OptimizerOptions(method="newton", n_restarts=0)))


def heat_problem(radius, n_steps=60, method="lbfgs", seed=0):
    m = heat_model(n_modes=8)
    x0 = default_initial_state(m.basis)
    grid = TimeGrid(1.0, n_steps)
    free = solve_skeleton(m, x0, None, grid).final
    target = EndpointBall(free + 0.4 * np.eye(8)[0], radius)
    return RateProblem(m, x0, target, grid, options=OptimizerOptions(method=method, n_restarts=1),
                       seed=seed)


def test_penalized_objective_history_is_monotone():
    sol = minimize_rate(heat_problem(0.1))
    assert len(sol.history) >= 4
    for stage in sol.history:
        J = np.array(stage["J"])
        assert np.all(np.diff(J) <= 1e-12 * np.maximum(1.0, np.abs(J[:-1])))


def test_nested_balls_monotone_rate():
    vals = [minimize_rate(heat_problem(r)).I_value for r in (0.3, 0.2, 0.1, 0.05)]
    assert all(a <= b + 1e-6 for a, b in zip(vals, vals[1:]))
    assert vals[0] > 0


def test_rate_solver_is_deterministic():
    a, b = minimize_rate(heat_problem(0.1, seed=3)), minimize_rate(heat_problem(0.1, seed=3))
    assert a.I_value == b.I_value and np.array_equal(a.u_star.values, b.u_star.values)
    assert len(a.restart_values) == 2


def test_gradient_descent_option_agrees():
    lb = minimize_rate(heat_problem(0.1)).I_value
    gd = minimize_rate(heat_problem(0.1, method="gd")).I_value
    assert abs(gd - lb) <= 0.02 * lb
