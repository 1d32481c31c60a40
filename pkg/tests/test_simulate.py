import numpy as np
import pytest
from scipy import stats

from monoldp import (CHUNK, ControlPath, TimeGrid, burkholder_check, burkholder_ensemble,
                     default_initial_state, fmean, girsanov_log_weights, heat_model, integrate,
                     ito_ensemble, ito_inequality_check, linear_model, moment_bound_estimate,
                     run_ensemble, sample_noise, scalar_basis, simulate_controlled, simulate_mild,
                     solve_skeleton, summarize)


def ou_model(lam=-1.0, s=1.0):
    return linear_model(c=0.0, sigma=(s,), basis=scalar_basis([lam], domain_length=np.pi))


def test_noise_is_deterministic_and_nested():
    grid = TimeGrid(1.0, 50)
    a = sample_noise(grid, 2, 7, n_paths=600)
    b = sample_noise(grid, 2, 7, n_paths=600)
    assert np.array_equal(a.increments, b.increments)
    small = sample_noise(grid, 2, 7, n_paths=300)
    assert np.array_equal(small.increments, a.increments[:300])
    assert np.array_equal(sample_noise(grid, 2, 7).increments, a.increments[0])
    assert not np.array_equal(sample_noise(grid, 2, 8, n_paths=5).increments, a.increments[:5])
    assert a.n_paths == 600 and a.endpoint().shape == (600, 2)
    assert CHUNK == 256


def test_noise_moments():
    grid = TimeGrid(2.0, 40)
    dW = sample_noise(grid, 1, 3, n_paths=5000).increments
    assert abs(dW.mean()) < 4 * np.sqrt(grid.dt / dW.size)
    assert np.isclose(dW.var(), grid.dt, rtol=0.02)


def test_eps_zero_is_bitwise_skeleton():
    m = heat_model(n_modes=16)
    grid = TimeGrid(1.0, 100)
    x0 = default_initial_state(m.basis)
    u = ControlPath.constant(grid, 0.8)
    noise = sample_noise(grid, 1, 0)
    a = simulate_controlled(m, x0, 0.0, u, noise).states
    assert np.array_equal(a, solve_skeleton(m, x0, u).states)


def test_u_zero_is_bitwise_mild():
    m = heat_model(n_modes=16)
    grid = TimeGrid(1.0, 100)
    x0 = default_initial_state(m.basis)
    noise = sample_noise(grid, 1, 5)
    a = simulate_controlled(m, x0, 0.3, ControlPath.zeros(grid, 1), noise).states
    assert np.array_equal(a, simulate_mild(m, x0, 0.3, noise).states)


def test_grid_mismatch_rejected():
    m = heat_model(n_modes=4)
    noise = sample_noise(TimeGrid(1.0, 10), 1, 0)
    with pytest.raises(ValueError):
        simulate_mild(m, np.zeros(4), 0.1, noise, grid=TimeGrid(1.0, 20))


def test_ou_moments():
    # dX = -X dt + eps dW: mean e^{-T} x0, variance eps^2 (1 - e^{-2T}) / 2 (up to O(dt))
    m, grid, eps, x0 = ou_model(), TimeGrid(1.0, 200), 0.5, 1.0
    XT = run_ensemble(m, [x0], grid, 20000, 1, eps, lambda tr, dW: tr.final[:, 0])
    mean, var = np.exp(-1.0) * x0, eps ** 2 * (1 - np.exp(-2.0)) / 2
    assert abs(XT.mean() - mean) < 4 * np.sqrt(var / XT.size) + grid.dt
    assert np.isclose(XT.var(), var, rtol=0.04)
    assert stats.normaltest(XT).pvalue > 1e-3


def test_girsanov_reweighting_recovers_uncontrolled_law():
    m, grid, eps = ou_model(), TimeGrid(1.0, 100), 0.5
    u = ControlPath.constant(grid, 1.0)

    def fn(ctrl):
        def f(tr, dW):
            return {"x": tr.final[:, 0], "lw": girsanov_log_weights(ctrl, dW, eps)}
        return f

    c = run_ensemble(m, [0.2], grid, 100_000, 2, eps, fn(u), control=u)
    w = np.exp(c["lw"])
    plain = run_ensemble(m, [0.2], grid, 100_000, 3, eps, lambda tr, dW: tr.final[:, 0])
    est = w * c["x"]
    se = np.sqrt(est.var() / est.size + plain.var() / plain.size)
    assert abs(est.mean() - plain.mean()) < 4 * se
    assert abs(w.mean() - 1) < 4 * w.std() / np.sqrt(w.size)


def test_girsanov_zero_control_zero_weight():
    grid = TimeGrid(1.0, 10)
    dW = sample_noise(grid, 2, 0, n_paths=4).increments
    assert np.array_equal(girsanov_log_weights(ControlPath.zeros(grid, 2), dW, 0.3), np.zeros(4))


def test_ito_check_trivial_cases():
    m = heat_model(n_modes=8)
    grid = TimeGrid(1.0, 100)
    rep = ito_inequality_check(m.basis, np.zeros(8), np.zeros((100, 8)), np.zeros((100, 8)), grid)
    assert rep.n_violations == 0 and rep.margin >= 0
    out = ito_ensemble(m, default_initial_state(m.basis), 0.3, grid, 64, seed=1)
    assert out["fraction"] == 0.0 and out["n_paths"] == 64


def test_burkholder_zero_and_doob():
    m = ou_model(lam=0.0)
    grid = TimeGrid(1.0, 100)
    zero = burkholder_check(m.basis, np.zeros((10, 100, 1)), 1, grid)
    assert zero["ratio"] == 0.0 and zero["passed"]
    # lam = 0: E sup M^2 <= 4 E M_T^2 = 4 E [M]_T (Doob)
    rep = burkholder_ensemble(m, [0.0], 1.0, grid, 4000, seed=2, nested=(1000,))
    assert rep["ratio"] <= 4.0 and rep["passed"]
    assert 1.0 < rep["ratio"]
    assert rep["nested"][1000]["n_paths"] == 1000


def test_moment_estimate_trivia_and_ladder():
    m = linear_model(c=0.0, sigma=(0.0,), n_modes=4)
    grid = TimeGrid(1.0, 50)
    with pytest.raises(ValueError):
        moment_bound_estimate(m, np.zeros(4), [0.0, 0.5], 2, 10, grid)
    est = moment_bound_estimate(m, np.zeros(4), [0.5, 1.0], 2, 10, grid)
    assert all(v["mean"] == 0.0 for v in est.functionals.values())
    h = heat_model(n_modes=8)
    est = moment_bound_estimate(h, default_initial_state(h.basis), [0.1, 0.5], 2, 300, grid, seed=4)
    lo, hi = est.mean("eps=0.1"), est.mean("eps=0.5")
    assert lo < hi and est.flags["uniform"] and est.flags["blowups"] == 0


def test_workers_do_not_change_results():
    m = heat_model(n_modes=8)
    grid = TimeGrid(1.0, 50)
    x0 = default_initial_state(m.basis)
    f = lambda tr, dW: tr.final
    a = run_ensemble(m, x0, grid, 600, 9, 0.4, f, workers=1)
    b = run_ensemble(m, x0, grid, 600, 9, 0.4, f, workers=3)
    assert np.array_equal(a, b)


def test_summarize_and_fmean():
    s = summarize([1.0, 2.0, 3.0, 4.0])
    assert s["mean"] == 2.5 and np.isclose(s["var"], 5 / 3)
    assert s["ci_lo"] < 2.5 < s["ci_hi"] and s["n"] == 4
    assert fmean([1e16, 1.0, -1e16]) == 1 / 3
