import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from monoldp import (BlowUpError, ControlPath, TimeGrid, apriori_bound, cauchy_bound,
                     coefficient_growth_bounds, default_initial_state, dirichlet_basis,
                     energy_inequality_check, heat_model, integrate, linear_model, scalar_basis,
                     semigroup_apply, solve_skeleton, solve_skeleton_yosida, truncate_control)


def scalar_model(lam=-1.0, c=0.0, s=1.0):
    return linear_model(c=c, sigma=(s,), basis=scalar_basis([lam]))


def test_zero_drift_zero_control_is_semigroup():
    m = linear_model(c=0.0, sigma=(0.0,), n_modes=8)
    x0 = np.linspace(1, -1, 8)
    grid = TimeGrid(0.5, 50)
    traj = solve_skeleton(m, x0, None, grid)
    for j in (0, 17, 50):
        assert np.allclose(traj.states[j], semigroup_apply(m.basis, grid.times[j], x0), rtol=1e-12)


def test_scalar_closed_form_first_order():
    lam, c, s, u, x0, T = -1.0, 0.5, 2.0, 0.7, 1.3, 1.0
    r = lam + c
    exact = np.exp(r * T) * x0 + s * u * np.expm1(r * T) / r
    errs = []
    for n in (100, 200, 400, 800):
        grid = TimeGrid(T, n)
        z = solve_skeleton(scalar_model(lam, c, s), [x0], ControlPath.constant(grid, u)).final[0]
        errs.append(abs(z - exact))
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(np.abs(rates - 1) < 0.1)
    # O(dt) with constant about 1
    assert errs[-1] * 800 < 1.5


def test_yosida_linear_case_closed_form():
    lam, k, u, x0, T = -4.0, 10.0, 0.5, 1.0, 1.0
    lk = k * lam / (k - lam)
    grid = TimeGrid(T, 4000)
    z = solve_skeleton_yosida(scalar_model(lam), k, [x0], ControlPath.constant(grid, u)).final[0]
    exact = np.exp(lk * T) * x0 + u * np.expm1(lk * T) / lk
    assert abs(z - exact) < 5e-4


def test_yosida_zero_case_and_validation():
    m = heat_model(n_modes=8)
    grid = TimeGrid(1.0, 100)
    traj = solve_skeleton_yosida(m, 100.0, np.zeros(8), ControlPath.zeros(grid, 1))
    assert not np.any(traj.states)
    with pytest.raises(ValueError):
        solve_skeleton_yosida(m, -1.0, np.zeros(8), ControlPath.zeros(grid, 1))


def test_control_path_api():
    grid = TimeGrid(2.0, 4)
    u = ControlPath(grid, [1.0, 2.0, 0.0, -1.0])
    assert u.m_noise == 1
    assert np.isclose(u.energy(), 0.5 * (1 + 4 + 0 + 1))
    assert u.in_level_set(3.0) and not u.in_level_set(2.9)
    assert np.isclose((u - u.scaled(0.5)).energy(), u.energy() / 4)
    assert np.isclose(u.l2_distance(ControlPath.zeros(grid, 1)), np.sqrt(3.0))
    fine = u.on_grid(grid.refine(2))
    assert np.isclose(fine.energy(), u.energy())
    with pytest.raises(ValueError):
        u.on_grid(TimeGrid(2.0, 6))
    with pytest.raises(ValueError):
        ControlPath(grid, np.zeros(5))
    with pytest.raises(ValueError):
        u.values[0] = 3.0
    mid = ControlPath.from_function(grid, lambda t: t)
    assert np.allclose(mid.values[:, 0], [0.25, 0.75, 1.25, 1.75])


@settings(max_examples=30, deadline=None)
@given(level=st.floats(0.1, 5), seed=st.integers(0, 1000))
def test_truncation_respects_level(level, seed):
    grid = TimeGrid(1.0, 20)
    u = ControlPath(grid, 3 * np.random.default_rng(seed).standard_normal((20, 2)))
    ut = truncate_control(u, level)
    assert np.all(np.linalg.norm(ut.values, axis=1) <= level * (1 + 1e-12))
    assert ut.energy() <= u.energy() + 1e-12
    assert np.allclose(truncate_control(u, 1e9).values, u.values)


def test_truncation_rejects_nonpositive_level():
    with pytest.raises(ValueError):
        truncate_control(ControlPath.zeros(TimeGrid(1, 2), 1), 0.0)


def test_cauchy_bound_holds():
    m = heat_model(n_modes=16)
    grid = TimeGrid(1.0, 500)
    x0 = default_initial_state(m.basis)
    u = ControlPath.from_function(grid, lambda t: 4 * np.sin(7 * t))
    for n_, m_ in ((1.0, 2.0), (2.0, 8.0)):
        dist2, bound = cauchy_bound(m, x0, u, n_, m_)
        assert np.all(dist2 <= bound * (1 + 1e-9))
        assert dist2[-1] > 0


def test_energy_inequality_random_paths():
    basis = dirichlet_basis(12)
    grid = TimeGrid(1.0, 200)
    rng = np.random.default_rng(4)
    x0 = rng.standard_normal((20, 12))
    a = 5 * rng.standard_normal((20, 200, 12))
    rep = energy_inequality_check(basis, x0, a, grid)
    assert rep.n_violations == 0 and rep.first_violation is None
    assert rep.margin >= 0


def test_energy_inequality_detects_violation():
    basis = dirichlet_basis(4)
    grid = TimeGrid(1.0, 50)
    rep = energy_inequality_check(basis, np.ones(4), np.zeros((50, 4)), grid)
    # tamper: claim a larger lhs
    rep.lhs[5] += 10.0
    rep.violations[:] = rep.lhs > rep.rhs + rep.tol
    assert rep.first_violation == (5,) and rep.violating_paths == 1


def test_apriori_bound_dominates():
    m = heat_model(n_modes=16)
    grid = TimeGrid(1.0, 400)
    rng = np.random.default_rng(11)
    x0 = default_initial_state(m.basis)
    for _ in range(10):
        u = ControlPath(grid, rng.standard_normal((400, 1)))
        u = u.scaled(np.sqrt(10.0 / u.energy()) * rng.random())
        traj = solve_skeleton(m, x0, u)
        assert traj.sup_norm() ** 2 <= apriori_bound(m, u, x0)


def test_coefficient_growth_bounds():
    m = heat_model(n_modes=16)
    grid = TimeGrid(1.0, 200)
    traj = solve_skeleton(m, default_initial_state(m.basis), ControlPath.constant(grid, 2.0))
    b = coefficient_growth_bounds(m, traj)
    assert b["f_sup"] <= b["f_ceiling"] and b["g_sup"] <= b["g_ceiling"]


def test_blowup_raise_and_flag():
    m = scalar_model(lam=60.0)
    grid = TimeGrid(1.0, 100)
    with pytest.raises(BlowUpError) as info:
        integrate(m, [1.0], grid)
    assert info.value.step > 0
    x0 = np.array([[1.0], [0.0]])
    traj = integrate(m, x0, grid, on_blowup="flag")
    assert traj.blown.tolist() == [True, False]
    assert np.isnan(traj.final[0, 0]) and traj.final[1, 0] == 0.0


def test_noise_required_when_eps_nonzero():
    m = heat_model(n_modes=4)
    with pytest.raises(ValueError, match="dW"):
        integrate(m, np.zeros(4), TimeGrid(1.0, 10), eps=0.1)
    with pytest.raises(ValueError):
        integrate(m, np.zeros(4), TimeGrid(1.0, 10), eps=0.1, dW=np.zeros((9, 1)))


def test_control_dimension_checked():
    m = heat_model(n_modes=4)
    grid = TimeGrid(1.0, 10)
    with pytest.raises(ValueError):
        solve_skeleton(m, np.zeros(4), ControlPath.zeros(grid, 2))


def test_return_inputs_reconstruct_step():
    m = heat_model(n_modes=6)
    grid = TimeGrid(1.0, 20)
    dW = np.random.default_rng(0).normal(0, np.sqrt(grid.dt), (20, 1))
    u = ControlPath.constant(grid, 0.3)
    traj, d, q = integrate(m, default_initial_state(m.basis), grid, u, eps=0.5, dW=dW,
                           return_inputs=True)
    from monoldp.skeleton import propagator
    P = propagator(m, grid.dt)
    assert np.allclose(P.apply(traj.states[3] + d[3] + q[3]), traj.states[4], atol=1e-13)
