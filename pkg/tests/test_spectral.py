import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from monoldp import (TimeGrid, composite_gauss_legendre, dirichlet_basis, discrete_gronwall,
                     fourier_basis, generator_apply, scalar_basis, semigroup_apply,
                     yosida_apply, yosida_eigenvalues, yosida_semigroup_apply)

finite = st.floats(-5, 5, allow_nan=False)


def test_time_grid():
    g = TimeGrid(2.0, 8)
    assert g.dt == 0.25
    assert np.allclose(g.times, np.linspace(0, 2, 9))
    assert g.refine(4).n_steps == 32
    with pytest.raises(ValueError):
        TimeGrid(-1.0, 10)
    with pytest.raises(ValueError):
        TimeGrid(1.0, 0)


def test_quadrature_integrates_polynomials():
    x, w = composite_gauss_legendre(64, 3.0)
    assert np.isclose(w.sum(), 3.0)
    assert np.isclose(np.sum(w * x ** 5), 3.0 ** 6 / 6)


@pytest.mark.parametrize("basis", [dirichlet_basis(32), fourier_basis(16),
                                   fourier_basis(8, domain_length=3.0, a=2.0, b=-0.5),
                                   scalar_basis([0.0, -1.0, 2.0])])
def test_gram_matrix_is_identity(basis):
    assert basis.gram_error() < 1e-12


def test_dirichlet_semigroup_per_mode():
    b = dirichlet_basis(5, domain_length=2.0)
    v = np.arange(1.0, 6.0)
    k = np.arange(1, 6)
    assert np.allclose(semigroup_apply(b, 0.3, v), np.exp(-0.3 * (k * np.pi / 2) ** 2) * v,
                       rtol=1e-14)
    assert b.growth == (1.0, 0.0)


def test_fourier_generator_is_derivative():
    # A u = a u' + b u, checked on the reconstructed function
    a, b = 1.7, -0.3
    basis = fourier_basis(6, domain_length=2.5, a=a, b=b)
    rng = np.random.default_rng(0)
    v = rng.standard_normal(basis.dim)
    x = np.linspace(0.1, 2.4, 50)
    h = 1e-6
    du = (basis.evaluate(v, x + h) - basis.evaluate(v, x - h)) / (2 * h)
    Av = basis.evaluate(generator_apply(basis, v), x)
    assert np.allclose(Av, a * du + b * basis.evaluate(v, x), atol=1e-6)


def test_fourier_transport_semigroup_shifts():
    # exp(tA) with A = a d/dx is the shift u(x) -> u(x + a t)
    basis = fourier_basis(5, domain_length=2 * np.pi, a=1.3)
    v = np.random.default_rng(1).standard_normal(basis.dim)
    x = np.linspace(0, 6, 40)
    t = 0.7
    assert np.allclose(basis.evaluate(semigroup_apply(basis, t, v), x),
                       basis.evaluate(v, x + 1.3 * t), atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(s=st.floats(0, 2), t=st.floats(0, 2), v=arrays(float, 12, elements=finite))
def test_semigroup_property(s, t, v):
    for basis in (dirichlet_basis(12), fourier_basis(6, b=0.2)):
        lhs = semigroup_apply(basis, s, semigroup_apply(basis, t, v))
        assert np.allclose(lhs, semigroup_apply(basis, s + t, v), atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(t=st.floats(0, 3), v=arrays(float, 12, elements=finite))
def test_growth_bound(t, v):
    for basis in (dirichlet_basis(12), fourier_basis(6, b=0.2), fourier_basis(6, b=-0.4)):
        L, lam = basis.growth
        assert np.linalg.norm(semigroup_apply(basis, t, v)) <= L * np.exp(lam * t) * np.linalg.norm(v) * (1 + 1e-12) + 1e-300


@settings(max_examples=30, deadline=None)
@given(v=arrays(float, 10, elements=finite), w=arrays(float, 10, elements=finite))
def test_transpose_is_adjoint(v, w):
    basis = fourier_basis(5, a=0.8, b=0.1)
    lhs = semigroup_apply(basis, 0.4, v) @ w
    rhs = v @ semigroup_apply(basis, 0.4, w, transpose=True)
    assert np.isclose(lhs, rhs, atol=1e-10)


def test_generator_matches_semigroup_derivative():
    basis = dirichlet_basis(4)
    v = np.array([1.0, -0.5, 0.2, 0.1])
    h = 1e-7
    fd = (semigroup_apply(basis, h, v) - v) / h
    assert np.allclose(fd, generator_apply(basis, v), rtol=1e-5)


def test_negative_time_rejected():
    with pytest.raises(ValueError):
        semigroup_apply(dirichlet_basis(3), -0.1, np.zeros(3))


def test_yosida_eigenvalues():
    mu = np.array([-1.0, -100.0, 2j])
    assert np.allclose(yosida_eigenvalues(mu, 1e8), mu, rtol=1e-5)
    # A_k = k A (k - A)^{-1}
    assert np.isclose(yosida_eigenvalues(-3.0, 2.0), 2 * -3.0 / (2 + 3.0))
    with pytest.raises(ValueError):
        yosida_eigenvalues(np.array([2.0]), 2.0)
    with pytest.raises(ValueError):
        yosida_eigenvalues(-1.0, -5.0)


def test_yosida_semigroup_converges():
    basis = dirichlet_basis(8)
    v = np.ones(8)
    errs = [np.linalg.norm(yosida_semigroup_apply(basis, k, 0.1, v) - semigroup_apply(basis, 0.1, v))
            for k in (1e2, 1e3, 1e4, 1e5)]
    assert all(a > b for a, b in zip(errs, errs[1:]))
    assert errs[-1] < 1e-3
    assert np.allclose(yosida_apply(basis, 1e12, v), generator_apply(basis, v), rtol=1e-6)


def test_check_state_dimension():
    with pytest.raises(ValueError):
        dirichlet_basis(4).reconstruct(np.zeros(5))


def test_discrete_gronwall_constant_case():
    dt = 0.01
    n = 101
    bound = discrete_gronwall(np.full(n, 2.0), np.full(n, 0.5), dt)
    assert np.allclose(bound, 2.0 * np.exp(0.5 * dt * np.arange(n)))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10 ** 6))
def test_discrete_gronwall_majorizes(seed):
    # any y with y_j <= alpha_j + sum_{i<j} beta_i y_i dt lies below the bound
    rng = np.random.default_rng(seed)
    n, dt = 60, 0.05
    alpha = np.cumsum(rng.random(n))
    beta = 3 * rng.random(n)
    y = np.empty(n)
    for j in range(n):
        y[j] = (alpha[j] + np.sum(beta[:j] * y[:j]) * dt) * rng.random()
    assert np.all(y <= discrete_gronwall(alpha, beta, dt) * (1 + 1e-12))
    with pytest.raises(ValueError):
        discrete_gronwall(-alpha, beta, dt)
