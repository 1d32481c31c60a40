"""Equation models: generator basis, pointwise drift and pointwise diffusion.

Drift and diffusion act as Nemytskii maps: they are evaluated at the
quadrature nodes of the basis and projected back onto it.  Every diffusion
channel has the separable form ``g_i(x, y) = sigma_i * h(y) * phi_i(x)`` with
``phi_i`` the i-th basis function, so the action on a noise vector ``u`` is
``P[h(v(x)) * sum_i sigma_i u_i phi_i(x)]`` and costs one projection.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .spectral import SpectralBasis, dirichlet_basis, fourier_basis

__all__ = [
    "ZeroDrift",
    "LinearDrift",
    "SaturatedDoubleWell",
    "SeparableDiffusion",
    "EquationModel",
    "HypothesisReport",
    "make_model",
    "heat_model",
    "hyperbolic_model",
    "linear_model",
    "default_initial_state",
    "MODEL_CATALOG",
    "drift_apply",
    "diffusion_apply",
    "diffusion_matrix",
    "verify_hypotheses",
]


def _finite(*values):
    for v in values:
        if not np.all(np.isfinite(v)):
            raise ValueError(f"model parameters must be finite, got {v!r}")


# drifts -------------------------------------------------------------------

class ZeroDrift:
    name = "zero"
    semimonotone = 0.0
    growth = 0.0
    zero_value = 0.0

    def __call__(self, y):
        return np.zeros_like(y)

    def dy(self, y):
        return np.zeros_like(y)

    def params(self):
        return {}


class LinearDrift:
    """``f(y) = c * y``."""

    name = "linear"

    def __init__(self, c):
        _finite(c)
        self.c = float(c)
        self.semimonotone = max(self.c, 0.0)
        self.growth = abs(self.c)
        self.zero_value = 0.0

    def __call__(self, y):
        return self.c * y

    def dy(self, y):
        return np.full_like(y, self.c)

    def params(self):
        return {"c": self.c}


class SaturatedDoubleWell:
    """``f(y) = 2 mu y - 4 lam y**3 / (1 + y**2)``.

    Same local shape as the quartic double-well force but with linear growth;
    ``f'(y) = 2 mu - 4 lam y**2 (3 + y**2) / (1 + y**2)**2 <= 2 mu``.
    """

    name = "double_well"

    def __init__(self, lambda_dw, mu_dw):
        _finite(lambda_dw, mu_dw)
        if lambda_dw < 0 or mu_dw < 0:
            raise ValueError("lambda_dw and mu_dw must be non-negative")
        self.lambda_dw = float(lambda_dw)
        self.mu_dw = float(mu_dw)
        self.semimonotone = 2 * self.mu_dw + 4 * self.lambda_dw
        self.growth = 2 * self.mu_dw + 4 * self.lambda_dw
        self.zero_value = 0.0

    def __call__(self, y):
        y2 = y * y
        return 2 * self.mu_dw * y - 4 * self.lambda_dw * y * y2 / (1 + y2)

    def dy(self, y):
        y2 = y * y
        return 2 * self.mu_dw - 4 * self.lambda_dw * y2 * (3 + y2) / (1 + y2) ** 2

    def params(self):
        return {"lambda_dw": self.lambda_dw, "mu_dw": self.mu_dw}


# diffusions ----------------------------------------------------------------

class SeparableDiffusion:
    """``g_i(x, y) = sigma_i * h(y) * phi_i(x)``.

    ``kind="multiplicative"`` uses ``h(y) = 1 + sin(y)``; ``kind="additive"``
    uses ``h = 1`` (state-independent noise).
    """

    def __init__(self, sigma, kind="multiplicative"):
        sigma = np.atleast_1d(np.asarray(sigma, dtype=float))
        if sigma.ndim != 1 or sigma.size < 1:
            raise ValueError("at least one noise channel is required")
        _finite(sigma)
        if kind not in ("multiplicative", "additive"):
            raise ValueError(f"unknown diffusion kind {kind!r}")
        self.sigma = sigma
        self.sigma.flags.writeable = False
        self.kind = kind
        self.name = kind
        self.h_lipschitz = 1.0 if kind == "multiplicative" else 0.0
        self.h_zero = 1.0

    @property
    def m_noise(self):
        return self.sigma.size

    def h(self, y):
        if self.kind == "additive":
            return np.ones_like(y)
        return 1.0 + np.sin(y)

    def dh(self, y):
        if self.kind == "additive":
            return np.zeros_like(y)
        return np.cos(y)

    def params(self):
        return {"sigma": self.sigma.tolist()}


# model ---------------------------------------------------------------------

@dataclass(frozen=True)
class EquationModel:
    """Generator, drift, diffusion and the declared structural constants.

    ``M`` is the semimonotone parameter of the drift, ``D`` the Lipschitz
    constant of the diffusion into Hilbert-Schmidt operators, ``C_growth`` and
    ``m_growth`` the drift growth bound ``||f(x)|| <= C (1 + ||x||**m)``, and
    ``C_diffusion`` the linear growth bound of ``||g(x)||_2``.
    """

    basis: SpectralBasis
    drift: object
    diffusion: SeparableDiffusion
    M: float
    D: float
    C_growth: float
    m_growth: int = 1
    C_diffusion: float = 0.0
    name: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.diffusion.m_noise > self.basis.dim:
            raise ValueError("more noise channels than basis functions")
        shapes = self.basis.modes[:, : self.m_noise] * self.diffusion.sigma
        shapes.flags.writeable = False
        object.__setattr__(self, "_channel_shapes", shapes)

    @property
    def m_noise(self) -> int:
        return self.diffusion.m_noise

    @property
    def dim(self) -> int:
        return self.basis.dim

    def with_constants(self, **kwargs) -> "EquationModel":
        return dataclasses.replace(self, **kwargs)

    # node-level kernels ----------------------------------------------------
    def drift_values(self, U):
        vals = self.drift(U)
        if not np.all(np.isfinite(vals)):
            idx = np.argwhere(~np.isfinite(vals))[0]
            x = self.basis.nodes[idx[-1]]
            raise ValueError(f"drift is not finite at node x={x:.6g} (index {tuple(idx)})")
        return vals

    def noise_field(self, w):
        """``sum_i sigma_i w_i phi_i(x)`` at the nodes, shape ``(..., n_nodes)``."""
        return np.asarray(w) @ self._channel_shapes.T

    def increment(self, v, dt, w):
        """``dt * f(v) + g(v) w`` projected, with ``w`` of shape ``(..., m_noise)``."""
        U = self.basis.reconstruct(v)
        vals = dt * self.drift_values(U) + self.diffusion.h(U) * self.noise_field(w)
        return self.basis.project(vals)


def make_model(basis, drift, diffusion, name="custom", params=None) -> EquationModel:
    """Build a model and derive its declared constants from the families."""
    m = diffusion.m_noise
    sup = basis.sup_norms[:m]
    D = diffusion.h_lipschitz * float(np.sqrt(np.sum((diffusion.sigma * sup) ** 2)))
    C_diff = max(diffusion.h_zero * float(np.linalg.norm(diffusion.sigma)), D)
    return EquationModel(basis=basis, drift=drift, diffusion=diffusion,
                         M=float(drift.semimonotone), D=D,
                         C_growth=float(drift.growth), m_growth=1,
                         C_diffusion=C_diff, name=name, params=dict(params or {}))


def heat_model(lambda_dw=0.25, mu_dw=1.0, sigma=(1.0,), n_modes=32, domain_length=1.0,
               diffusion="multiplicative") -> EquationModel:
    """Dirichlet heat equation with saturated double-well drift."""
    _finite(lambda_dw, mu_dw, domain_length)
    basis = dirichlet_basis(n_modes, domain_length)
    drift = (ZeroDrift() if lambda_dw == 0 and mu_dw == 0
             else SaturatedDoubleWell(lambda_dw, mu_dw))
    params = dict(lambda_dw=float(lambda_dw), mu_dw=float(mu_dw),
                  sigma=list(map(float, np.atleast_1d(sigma))), n_modes=int(n_modes),
                  domain_length=float(domain_length), diffusion=diffusion)
    return make_model(basis, drift, SeparableDiffusion(sigma, diffusion), "heat", params)


def hyperbolic_model(a=1.0, b=0.0, lambda_dw=0.25, mu_dw=1.0, sigma=(1.0,), n_pairs=16,
                     domain_length=2 * np.pi, diffusion="multiplicative",
                     drift=None) -> EquationModel:
    """Periodic transport ``u_t = a u_x + b u + f(u) + g(u) dW``.

    ``drift`` may be given explicitly (any drift family); otherwise the
    saturated double well with ``lambda_dw``, ``mu_dw`` is used.
    """
    _finite(a, b, lambda_dw, mu_dw, domain_length)
    basis = fourier_basis(n_pairs, domain_length, a=a, b=b)
    if drift is None:
        drift = (ZeroDrift() if lambda_dw == 0 and mu_dw == 0
                 else SaturatedDoubleWell(lambda_dw, mu_dw))
    params = dict(a=float(a), b=float(b), drift=drift.name, **drift.params(),
                  sigma=list(map(float, np.atleast_1d(sigma))), n_pairs=int(n_pairs),
                  domain_length=float(domain_length), diffusion=diffusion)
    return make_model(basis, drift, SeparableDiffusion(sigma, diffusion), "hyperbolic", params)


def linear_model(c=0.0, sigma=(1.0,), basis=None, n_modes=4, domain_length=1.0) -> EquationModel:
    """Linear drift ``f = c y`` with additive noise ``g_i = sigma_i phi_i``.

    Channel ``i`` forces basis function ``i`` only, so the modes decouple.
    """
    _finite(c)
    if basis is None:
        basis = dirichlet_basis(n_modes, domain_length)
    drift = ZeroDrift() if c == 0 else LinearDrift(c)
    params = dict(c=float(c), sigma=list(map(float, np.atleast_1d(sigma))),
                  basis=basis.kind, dim=basis.dim, domain_length=basis.domain_length)
    return make_model(basis, drift, SeparableDiffusion(sigma, "additive"), "linear", params)


def default_initial_state(basis: SpectralBasis):
    """Reference initial condition used by the demos and acceptance runs.

    Coefficients ``(0.8, 0.3, -0.2)`` on the first three basis functions.
    """
    x0 = np.zeros(basis.dim)
    head = np.array([0.8, 0.3, -0.2])[: basis.dim]
    x0[: head.size] = head
    return x0


MODEL_CATALOG = {
    "heat": heat_model,
    "hyperbolic": hyperbolic_model,
    "linear": linear_model,
}


# coefficient-level maps -----------------------------------------------------

def drift_apply(model: EquationModel, v):
    """Nemytskii drift ``P[f(v(x))]``."""
    U = model.basis.reconstruct(v)
    return model.basis.project(model.drift_values(U))


def diffusion_apply(model: EquationModel, v, u):
    """Action ``g(v) u`` of the diffusion operator on a noise vector."""
    u = np.asarray(u, dtype=float)
    if u.shape[-1:] != (model.m_noise,):
        raise ValueError(f"noise vector has length {u.shape[-1:]}, model has m_noise={model.m_noise}")
    U = model.basis.reconstruct(v)
    return model.basis.project(model.diffusion.h(U) * model.noise_field(u))


def diffusion_matrix(model: EquationModel, v):
    """Columns of ``g(v)`` as a ``(..., dim, m_noise)`` array."""
    U = model.basis.reconstruct(v)
    hU = model.diffusion.h(U)
    cols = (hU[..., :, None] * model._channel_shapes)  # (..., Q, m)
    return np.einsum("...qm,qd->...dm", cols, model.basis.weighted_modes)


def hs_norm(G):
    return np.sqrt(np.sum(G ** 2, axis=(-2, -1)))


def operator_norm(G):
    return np.linalg.norm(G, ord=2, axis=(-2, -1)) if G.shape[-1] > 1 else np.linalg.norm(G[..., 0], axis=-1)


# hypothesis sampler ------------------------------------------------------------

@dataclass
class HypothesisReport:
    """Per-clause outcome of :func:`verify_hypotheses`.

    ``clauses`` maps a clause id to ``{"passed", "empirical", "declared",
    "excess"}``; ``margin`` style values are ``declared - empirical``.
    """

    clauses: dict
    n_samples: int
    radius: float
    seed: int
    tolerance: float

    @property
    def passed(self) -> bool:
        return all(c["passed"] for c in self.clauses.values())

    def failures(self):
        return [k for k, c in self.clauses.items() if not c["passed"]]


def _sample_states(rng, n, dim, radius):
    """Random states in the ball, radii mixing uniform-in-ball and log-uniform."""
    d = rng.standard_normal((n, dim))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    r = np.where(rng.random(n) < 0.5,
                 radius * rng.random(n) ** (1.0 / dim),
                 radius * 10.0 ** rng.uniform(-4, 0, n))
    return d * r[:, None]


def verify_hypotheses(model: EquationModel, n_samples=10_000, radius=10.0, seed=0,
                      tol=1e-6, batch=2048) -> HypothesisReport:
    """Sample the structural hypotheses on the ball of the given radius.

    Half of the pairs are independent draws; the other half are close pairs
    ``y = x + delta e`` probing the local (derivative) quotients.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0x4859,)))
    dim = model.dim
    worst = dict(semimonotone=-np.inf, lipschitz_g=-np.inf, lipschitz_g_operator=-np.inf,
                 growth_f=-np.inf, one_sided_f=-np.inf, growth_g=-np.inf,
                 growth_g_operator=-np.inf)
    f0 = float(np.linalg.norm(drift_apply(model, np.zeros(dim))))
    done = 0
    while done < n_samples:
        n = min(batch, n_samples - done)
        x = _sample_states(rng, n, dim, radius)
        y = _sample_states(rng, n, dim, radius)
        close = rng.random(n) < 0.5
        step = _sample_states(rng, n, dim, 1e-2 * radius)
        y = np.where(close[:, None], x + step, y)
        diff = x - y
        nd2 = np.sum(diff ** 2, axis=1)
        keep = nd2 > 1e-300
        fx, fy = drift_apply(model, x), drift_apply(model, y)
        semi = np.sum((fx - fy) * diff, axis=1)[keep] / nd2[keep]
        Gx, Gy = diffusion_matrix(model, x), diffusion_matrix(model, y)
        nd = np.sqrt(nd2[keep])
        lip = hs_norm(Gx - Gy)[keep] / nd
        lip_op = operator_norm(Gx - Gy)[keep] / nd
        nx = np.linalg.norm(x, axis=1)
        grow = np.linalg.norm(fx, axis=1) / (1 + nx ** model.m_growth)
        one_sided = np.sum(fx * x, axis=1) / (1 + nx ** 2)
        grow_g = hs_norm(Gx) / (1 + nx)
        grow_g_op = operator_norm(Gx) / (1 + nx)
        for key, vals in (("semimonotone", semi), ("lipschitz_g", lip),
                          ("lipschitz_g_operator", lip_op), ("growth_f", grow),
                          ("one_sided_f", one_sided), ("growth_g", grow_g),
                          ("growth_g_operator", grow_g_op)):
            if vals.size:
                worst[key] = max(worst[key], float(vals.max()))
        done += n

    declared = dict(semimonotone=model.M, lipschitz_g=model.D, lipschitz_g_operator=model.D,
                    growth_f=model.C_growth, one_sided_f=model.M + f0,
                    growth_g=model.C_diffusion, growth_g_operator=model.C_diffusion)
    clauses = {}
    for key, emp in worst.items():
        dec = float(declared[key])
        emp = 0.0 if not np.isfinite(emp) else emp
        clauses[key] = dict(passed=bool(emp <= dec + tol), empirical=emp, declared=dec,
                            excess=max(0.0, emp - dec))
    return HypothesisReport(clauses=clauses, n_samples=int(n_samples), radius=float(radius),
                            seed=int(seed), tolerance=tol)
