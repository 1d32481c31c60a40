"""Truncated eigenbasis representation of the state space.

States are plain ``numpy`` arrays of basis coefficients; any leading axes are
treated as batch axes, so an ensemble of states has shape ``(n_paths, dim)``.

Two families of bases are provided:

* :func:`dirichlet_basis` -- sine modes of the Dirichlet Laplacian on
  ``[0, L]``; every block is a scalar eigenvalue ``-(k pi / L)**2``.
* :func:`fourier_basis` -- cosine/sine pairs on the periodic interval for the
  transport generator ``a d/dx + b``; every block is a 2x2 rotation-dilation.

A rotation block acting on the pair ``(c, s)`` is stored as the complex
number ``mu = b + i a kappa``; it acts on ``c - i s`` by multiplication.
Functions of the generator (semigroup, Yosida approximation, resolvents) are
therefore evaluated by applying a scalar function to ``mu``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "TimeGrid",
    "SpectralBasis",
    "BlockMultiplier",
    "dirichlet_basis",
    "fourier_basis",
    "scalar_basis",
    "semigroup_apply",
    "generator_apply",
    "yosida_eigenvalues",
    "yosida_apply",
    "yosida_semigroup_apply",
    "discrete_gronwall",
    "composite_gauss_legendre",
]

PANEL_NODES = 32


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``t_j = j * T / n_steps`` on ``[0, T]``."""

    T: float
    n_steps: int

    def __post_init__(self):
        if not (np.isfinite(self.T) and self.T > 0):
            raise ValueError(f"horizon T must be positive, got {self.T}")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ValueError(f"n_steps must be a positive integer, got {self.n_steps}")
        object.__setattr__(self, "n_steps", int(self.n_steps))

    @property
    def dt(self) -> float:
        return self.T / self.n_steps

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt

    def refine(self, factor: int) -> "TimeGrid":
        return TimeGrid(self.T, self.n_steps * int(factor))


def composite_gauss_legendre(n_nodes, length, panel_nodes=PANEL_NODES):
    """Nodes and weights of a composite Gauss-Legendre rule on ``[0, length]``."""
    panel_nodes = min(panel_nodes, n_nodes)
    n_panels = -(-n_nodes // panel_nodes)
    xg, wg = np.polynomial.legendre.leggauss(panel_nodes)
    h = length / n_panels
    x = (np.arange(n_panels)[:, None] * h + (xg[None, :] + 1.0) * (h / 2)).ravel()
    w = np.tile(wg * (h / 2), n_panels)
    return x, w


class BlockMultiplier:
    """A block-diagonal linear map with scalar and rotation-dilation blocks.

    ``apply(v) = diag * v + off * v[..., partner]``; scalar blocks have
    ``off = 0`` and ``partner[i] = i``.
    """

    def __init__(self, diag, off, partner):
        self.diag = diag
        self.off = off
        self.partner = partner

    def apply(self, v):
        return self.diag * v + self.off * v[..., self.partner]

    def transpose(self) -> "BlockMultiplier":
        return BlockMultiplier(self.diag, -self.off, self.partner)

    def matrix(self) -> np.ndarray:
        dim = self.diag.shape[0]
        m = np.diag(self.diag).astype(float)
        m[np.arange(dim), self.partner] += self.off
        return m


class SpectralBasis:
    """Orthonormal eigenbasis of a diagonalizable generator, truncated.

    Parameters
    ----------
    domain_length : float
        Length of the spatial interval.
    scalar_index : array of int
        Coefficient positions carrying scalar blocks.
    scalar_eigs : array of float
        Eigenvalue of each scalar block.
    pair_index : array of int, shape (n_pairs, 2)
        Coefficient positions ``(cos, sin)`` of each rotation block.
    pair_eigs : array of complex
        ``b + i a kappa`` for each rotation block.
    mode_functions : callable
        ``mode_functions(x) -> (len(x), dim)`` values of the basis functions.
    growth : (float, float)
        Constants ``(L, lam)`` with ``||exp(tA)|| <= L exp(lam t)``.
    n_nodes : int, optional
        Quadrature nodes for pointwise (Nemytskii) maps; default ``4 * dim``
        (at least one 32-node panel).
    """

    def __init__(self, domain_length, scalar_index, scalar_eigs, pair_index,
                 pair_eigs, mode_functions, growth, kind="custom", n_nodes=None):
        if not (np.isfinite(domain_length) and domain_length > 0):
            raise ValueError(f"domain_length must be positive, got {domain_length}")
        self.domain_length = float(domain_length)
        self.kind = kind
        self.scalar_index = np.asarray(scalar_index, dtype=int).reshape(-1)
        self.scalar_eigs = np.asarray(scalar_eigs, dtype=float).reshape(-1)
        self.pair_index = np.asarray(pair_index, dtype=int).reshape(-1, 2)
        self.pair_eigs = np.asarray(pair_eigs, dtype=complex).reshape(-1)
        if self.scalar_index.size != self.scalar_eigs.size:
            raise ValueError("scalar_index and scalar_eigs differ in length")
        if self.pair_index.shape[0] != self.pair_eigs.size:
            raise ValueError("pair_index and pair_eigs differ in length")
        self.dim = self.scalar_index.size + 2 * self.pair_index.shape[0]
        used = np.concatenate([self.scalar_index, self.pair_index.ravel()])
        if np.sort(used).tolist() != list(range(self.dim)):
            raise ValueError("block positions must partition range(dim)")
        self.growth = (float(growth[0]), float(growth[1]))
        self._mode_functions = mode_functions

        n_nodes = max(4 * self.dim, PANEL_NODES) if n_nodes is None else int(n_nodes)
        self.nodes, self.weights = composite_gauss_legendre(n_nodes, self.domain_length)
        self.modes = np.ascontiguousarray(mode_functions(self.nodes))
        self.weighted_modes = np.ascontiguousarray(self.weights[:, None] * self.modes)
        self.sup_norms = np.abs(mode_functions(
            np.linspace(0.0, self.domain_length, 4097))).max(axis=0)
        for arr in (self.scalar_index, self.scalar_eigs, self.pair_index, self.pair_eigs,
                    self.nodes, self.weights, self.modes, self.weighted_modes, self.sup_norms):
            arr.flags.writeable = False

    def __repr__(self):
        return (f"SpectralBasis(kind={self.kind!r}, dim={self.dim}, "
                f"domain_length={self.domain_length}, growth={self.growth})")

    @property
    def n_nodes(self) -> int:
        return self.nodes.size

    def with_nodes(self, n_nodes) -> "SpectralBasis":
        """Same basis with a different quadrature node count."""
        return SpectralBasis(self.domain_length, self.scalar_index, self.scalar_eigs,
                             self.pair_index, self.pair_eigs, self._mode_functions,
                             self.growth, kind=self.kind, n_nodes=n_nodes)

    def eigenvalue_multiplier(self, fn) -> BlockMultiplier:
        """Block map of ``fn(A)`` for an analytic scalar function ``fn``."""
        diag = np.zeros(self.dim)
        off = np.zeros(self.dim)
        partner = np.arange(self.dim)
        if self.scalar_index.size:
            diag[self.scalar_index] = np.real(fn(self.scalar_eigs.astype(complex)))
        if self.pair_eigs.size:
            vals = fn(self.pair_eigs)
            i0, i1 = self.pair_index[:, 0], self.pair_index[:, 1]
            diag[i0] = vals.real
            diag[i1] = vals.real
            off[i0] = vals.imag
            off[i1] = -vals.imag
            partner[i0] = i1
            partner[i1] = i0
        return BlockMultiplier(diag, off, partner)

    def check_state(self, v):
        v = np.asarray(v, dtype=float)
        if v.shape[-1:] != (self.dim,):
            raise ValueError(f"state has trailing dimension {v.shape[-1:]}, basis dim is {self.dim}")
        return v

    # pointwise evaluation -------------------------------------------------
    def reconstruct(self, v):
        """Function values at the quadrature nodes, shape ``(..., n_nodes)``."""
        return self.check_state(v) @ self.modes.T

    def project(self, values):
        """Quadrature projection of node values onto the basis."""
        return np.asarray(values) @ self.weighted_modes

    def evaluate(self, v, x):
        """Function values at arbitrary points ``x``."""
        return self.check_state(v) @ np.asarray(self._mode_functions(np.asarray(x, float))).T

    def quadrature_norm(self, v):
        """L2 norm of the reconstructed function by quadrature."""
        return np.sqrt(np.sum(self.weights * self.reconstruct(v) ** 2, axis=-1))

    def gram_error(self) -> float:
        """Max deviation of the discrete Gram matrix from the identity."""
        gram = self.modes.T @ self.weighted_modes
        return float(np.abs(gram - np.eye(self.dim)).max())


def dirichlet_basis(n_modes=32, domain_length=1.0, n_nodes=None) -> SpectralBasis:
    """Sine eigenmodes of the Dirichlet Laplacian on ``[0, domain_length]``."""
    n_modes = int(n_modes)
    if n_modes < 1:
        raise ValueError("n_modes must be positive")
    L = float(domain_length)
    k = np.arange(1, n_modes + 1)

    def modes(x):
        return np.sqrt(2.0 / L) * np.sin(np.pi * np.outer(x, k) / L)

    return SpectralBasis(L, np.arange(n_modes), -(k * np.pi / L) ** 2,
                         np.zeros((0, 2), int), [], modes, growth=(1.0, 0.0),
                         kind="dirichlet", n_nodes=n_nodes)


def fourier_basis(n_pairs=16, domain_length=2 * np.pi, a=1.0, b=0.0, n_nodes=None) -> SpectralBasis:
    """Cosine/sine pairs for ``A u = a u' + b u`` on the periodic interval.

    Coefficients are ordered ``(c_1, s_1, c_2, s_2, ...)`` with wavenumbers
    ``kappa_j = 2 pi j / L``; the mean mode is not included.
    """
    n_pairs = int(n_pairs)
    if n_pairs < 1:
        raise ValueError("n_pairs must be positive")
    if not (np.isfinite(a) and np.isfinite(b)):
        raise ValueError("a and b must be finite")
    L = float(domain_length)
    kappa = 2 * np.pi * np.arange(1, n_pairs + 1) / L

    def modes(x):
        arg = np.outer(x, kappa)
        out = np.empty((arg.shape[0], 2 * n_pairs))
        out[:, 0::2] = np.sqrt(2.0 / L) * np.cos(arg)
        out[:, 1::2] = np.sqrt(2.0 / L) * np.sin(arg)
        return out

    pair_index = np.arange(2 * n_pairs).reshape(n_pairs, 2)
    return SpectralBasis(L, [], [], pair_index, b + 1j * a * kappa, modes,
                         growth=(1.0, float(b)), kind="fourier", n_nodes=n_nodes)


def scalar_basis(eigenvalues, domain_length=1.0, n_nodes=None) -> SpectralBasis:
    """Sine modes carrying arbitrary real eigenvalues (test and oracle models)."""
    eigs = np.asarray(eigenvalues, dtype=float).reshape(-1)
    L = float(domain_length)
    k = np.arange(1, eigs.size + 1)

    def modes(x):
        return np.sqrt(2.0 / L) * np.sin(np.pi * np.outer(x, k) / L)

    return SpectralBasis(L, np.arange(eigs.size), eigs, np.zeros((0, 2), int), [], modes,
                         growth=(1.0, max(0.0, float(eigs.max()))), kind="scalar",
                         n_nodes=n_nodes)


# operator actions ----------------------------------------------------------

def semigroup_apply(basis: SpectralBasis, t, v, transpose=False):
    """``exp(tA) v``, exact per block."""
    if not t >= 0:
        raise ValueError(f"semigroup time must be non-negative, got {t}")
    v = basis.check_state(v)
    mult = basis.eigenvalue_multiplier(lambda mu: np.exp(t * mu))
    return (mult.transpose() if transpose else mult).apply(v)


def generator_apply(basis: SpectralBasis, v):
    """``A v`` on the truncated basis."""
    v = basis.check_state(v)
    return basis.eigenvalue_multiplier(lambda mu: mu).apply(v)


def yosida_eigenvalues(mu, k):
    """Eigenvalue ``k mu / (k - mu)`` of the Yosida approximation."""
    _check_k(k)
    mu = np.asarray(mu, dtype=complex)
    gap = k - mu
    if np.any(np.abs(gap) <= 1e-12 * max(1.0, abs(k))):
        bad = mu[np.abs(gap) <= 1e-12 * max(1.0, abs(k))]
        raise ValueError(f"resolvent (I - A/k) is singular at k={k} for eigenvalue(s) {bad}")
    return k * mu / gap


def _check_k(k):
    if not (np.isfinite(k) and k > 0):
        raise ValueError(f"Yosida parameter must be a positive real, got {k}")


def yosida_apply(basis: SpectralBasis, k, v):
    """``A_k v`` with ``A_k = A (I - A/k)^{-1}``."""
    _check_k(k)
    v = basis.check_state(v)
    return basis.eigenvalue_multiplier(lambda mu: yosida_eigenvalues(mu, k)).apply(v)


def yosida_semigroup_apply(basis: SpectralBasis, k, t, v, transpose=False):
    """``exp(t A_k) v``; ``A_k`` is bounded so this is an exact exponential."""
    _check_k(k)
    if not t >= 0:
        raise ValueError(f"semigroup time must be non-negative, got {t}")
    v = basis.check_state(v)
    mult = basis.eigenvalue_multiplier(lambda mu: np.exp(t * yosida_eigenvalues(mu, k)))
    return (mult.transpose() if transpose else mult).apply(v)


def discrete_gronwall(alpha, beta, dt):
    """Discrete Gronwall bound for ``f_j <= alpha_j + sum_{i<j} beta_i f_i dt``.

    Returns ``alpha_j + sum_{i<j} alpha_i beta_i exp(sum_{i<r<j} beta_r dt) dt``;
    for constant ``alpha`` the closed form ``alpha exp(sum_{i<j} beta_i dt)``.
    """
    alpha = np.asarray(alpha, dtype=float)
    beta = np.asarray(beta, dtype=float)
    if alpha.shape != beta.shape or alpha.ndim != 1:
        raise ValueError("alpha and beta must be 1-d sequences of equal length")
    if not dt > 0:
        raise ValueError("dt must be positive")
    if np.any(alpha < 0) or np.any(beta < 0):
        raise ValueError("alpha and beta must be non-negative")
    # B_j = sum_{i<j} beta_i dt
    B = np.concatenate([[0.0], np.cumsum(beta * dt)[:-1]])
    if alpha.size and np.all(alpha == alpha[0]):
        return alpha[0] * np.exp(B)
    # sum_{i<r<j} beta_r dt = B_j - B_{i+1}
    B_next = B + beta * dt
    bound = alpha.copy()
    terms = alpha * beta * dt
    for j in range(1, alpha.size):
        bound[j] += np.sum(terms[:j] * np.exp(B[j] - B_next[:j]))
    return bound
