"""Deterministic controlled equation and the exponential-Euler kernel.

Every path solver in the package goes through :func:`integrate`, which steps

    z_{j+1} = P (z_j + dt f(z_j) + g(z_j) w_j),    w_j = dt u_j + eps dW_j,

with ``P`` the exact one-step propagator (semigroup or its Yosida
approximation).  Sharing the kernel makes the ``eps = 0`` and ``u = 0``
reductions between the skeleton, the mild solution and the controlled SPDE
bitwise exact.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .models import EquationModel, drift_apply, diffusion_matrix, operator_norm
from .spectral import TimeGrid, discrete_gronwall, yosida_eigenvalues

__all__ = [
    "OVERFLOW_GUARD",
    "BlowUpError",
    "ControlPath",
    "Trajectory",
    "integrate",
    "propagator",
    "solve_skeleton",
    "solve_skeleton_yosida",
    "truncate_control",
    "cauchy_bound",
    "energy_inequality_check",
    "apriori_bound",
    "coefficient_growth_bounds",
]

OVERFLOW_GUARD = 1e12


class BlowUpError(FloatingPointError):
    """Raised when a state norm exceeds the overflow guard."""

    def __init__(self, step, norm):
        super().__init__(f"state norm {norm:.3g} exceeded the overflow guard "
                         f"{OVERFLOW_GUARD:g} at step {step}")
        self.step = step


@dataclass(frozen=True)
class ControlPath:
    """Piecewise-constant control; ``values[j]`` acts on ``[t_j, t_{j+1})``."""

    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2 or values.shape[0] != self.grid.n_steps:
            raise ValueError(f"control values must have shape (n_steps={self.grid.n_steps}, m), "
                             f"got {values.shape}")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @classmethod
    def zeros(cls, grid, m_noise):
        return cls(grid, np.zeros((grid.n_steps, m_noise)))

    @classmethod
    def constant(cls, grid, value):
        value = np.atleast_1d(np.asarray(value, dtype=float))
        return cls(grid, np.tile(value, (grid.n_steps, 1)))

    @classmethod
    def from_function(cls, grid, fn, rule="midpoint"):
        """Sample ``fn(t) -> (m,)`` at interval midpoints (or left endpoints)."""
        t = grid.times[:-1] + (0.5 * grid.dt if rule == "midpoint" else 0.0)
        return cls(grid, np.array([np.atleast_1d(fn(s)) for s in t], dtype=float))

    @property
    def m_noise(self) -> int:
        return self.values.shape[1]

    def energy(self) -> float:
        """``int_0^T ||u||^2 dt``."""
        return float(np.sum(self.values ** 2) * self.grid.dt)

    def in_level_set(self, N) -> bool:
        return self.energy() <= N

    def __add__(self, other: "ControlPath") -> "ControlPath":
        return ControlPath(self.grid, self.values + other.values)

    def __sub__(self, other: "ControlPath") -> "ControlPath":
        return ControlPath(self.grid, self.values - other.values)

    def scaled(self, factor) -> "ControlPath":
        return ControlPath(self.grid, factor * self.values)

    def on_grid(self, grid: TimeGrid) -> "ControlPath":
        """Left-endpoint injection onto a grid that refines this one."""
        if grid == self.grid:
            return self
        ratio = grid.n_steps // self.grid.n_steps
        if not np.isclose(grid.T, self.grid.T) or ratio * self.grid.n_steps != grid.n_steps:
            raise ValueError("control grid and solve grid are incompatible; "
                             "the solve grid must refine the control grid")
        return ControlPath(grid, np.repeat(self.values, ratio, axis=0))

    def l2_distance(self, other: "ControlPath") -> float:
        return float(np.sqrt(np.sum((self.values - other.values) ** 2) * self.grid.dt))


@dataclass
class Trajectory:
    """States at the grid times; ``states`` has shape ``(..., n_steps + 1, dim)``.

    ``blown`` marks ensemble paths that crossed the overflow guard (their
    states after the crossing are NaN).
    """

    grid: TimeGrid
    states: np.ndarray
    blown: np.ndarray = field(default=None)

    @property
    def final(self):
        return self.states[..., -1, :]

    def norms(self):
        return np.linalg.norm(self.states, axis=-1)

    def sup_norm(self):
        return self.norms().max(axis=-1)

    def sup_distance(self, other: "Trajectory"):
        return np.linalg.norm(self.states - other.states, axis=-1).max(axis=-1)


def propagator(model: EquationModel, dt, yosida_k=None):
    """One-step map ``exp(dt A)`` or ``exp(dt A_k)`` as a block multiplier."""
    if yosida_k is None:
        return model.basis.eigenvalue_multiplier(lambda mu: np.exp(dt * mu))
    if not (np.isfinite(yosida_k) and yosida_k > 0):
        raise ValueError(f"Yosida parameter must be a positive real, got {yosida_k}")
    return model.basis.eigenvalue_multiplier(
        lambda mu: np.exp(dt * yosida_eigenvalues(mu, yosida_k)))


def integrate(model: EquationModel, x0, grid: TimeGrid, control: ControlPath | None = None,
              eps=0.0, dW=None, yosida_k=None, on_blowup="raise", return_inputs=False):
    """Exponential-Euler integration of the controlled stochastic equation.

    Parameters
    ----------
    x0 : array, shape (dim,) or (n_paths, dim)
    control : ControlPath, optional
        Deterministic control ``u``; omitted means ``u = 0``.
    eps : float
        Noise intensity.
    dW : array, shape (n_steps, m) or (n_paths, n_steps, m), optional
        Brownian increments; required when ``eps != 0``.
    on_blowup : {"raise", "flag"}
        ``"flag"`` marks offending paths and continues with the others.
    return_inputs : bool
        Also return the pre-propagation increments ``dt f(z_j)`` and
        ``eps g(z_j) dW_j`` (drift part includes ``dt g(z_j) u_j``).
    """
    basis = model.basis
    x0 = basis.check_state(x0)
    n, dt = grid.n_steps, grid.dt
    if control is not None:
        control = control.on_grid(grid)
        if control.m_noise != model.m_noise:
            raise ValueError("control dimension does not match m_noise")
        uvals = control.values
    noisy = eps != 0
    if noisy:
        if dW is None:
            raise ValueError("eps != 0 requires Brownian increments dW")
        dW = np.asarray(dW, dtype=float)
        if dW.shape[-2:] != (n, model.m_noise):
            raise ValueError(f"noise increments must have trailing shape ({n}, {model.m_noise}), "
                             f"got {dW.shape}")
    batch = np.broadcast_shapes(x0.shape[:-1], dW.shape[:-2] if noisy else ())
    prop = propagator(model, dt, yosida_k)

    states = np.empty(batch + (n + 1, basis.dim))
    states[..., 0, :] = x0
    z = np.broadcast_to(x0, batch + (basis.dim,)).copy()
    blown = np.zeros(batch, dtype=bool)
    zero_w = np.zeros(model.m_noise)
    if return_inputs:
        drift_inc = np.empty(batch + (n, basis.dim))
        mart_inc = np.empty(batch + (n, basis.dim))
    for j in range(n):
        w = dt * uvals[j] if control is not None else None
        if noisy:
            nw = eps * dW[..., j, :]
            w = nw if w is None else w + nw
        if w is None:
            w = zero_w
        if return_inputs:
            det_w = dt * uvals[j] if control is not None else zero_w
            d_part = model.increment(z, dt, det_w)
            m_part = model.increment(z, 0.0, eps * dW[..., j, :]) if noisy else np.zeros_like(z)
            drift_inc[..., j, :] = d_part
            mart_inc[..., j, :] = m_part
        inc = model.increment(z, dt, w)
        z = prop.apply(z + inc)
        norms = np.linalg.norm(z, axis=-1)
        bad = ~(norms <= OVERFLOW_GUARD)
        if np.any(bad):
            if on_blowup == "raise":
                raise BlowUpError(j + 1, float(np.nanmax(np.where(bad, norms, 0.0)))
                                  if np.any(np.isfinite(norms)) else np.inf)
            blown |= bad
            z[blown] = 0.0
        states[..., j + 1, :] = z
        if np.any(blown):
            states[blown, j + 1, :] = np.nan
    traj = Trajectory(grid, states, blown if batch else None)
    if return_inputs:
        return traj, drift_inc, mart_inc
    return traj


def solve_skeleton(model: EquationModel, x0, u: ControlPath | None, grid: TimeGrid | None = None):
    """Skeleton equation ``z' = A z + f(z) + g(z) u`` by exponential Euler."""
    grid = grid or u.grid
    return integrate(model, x0, grid, control=u)


def solve_skeleton_yosida(model: EquationModel, k, x0, u: ControlPath | None,
                          grid: TimeGrid | None = None):
    """Skeleton equation with ``A`` replaced by its Yosida approximation ``A_k``."""
    grid = grid or u.grid
    return integrate(model, x0, grid, control=u, yosida_k=k)


def truncate_control(u: ControlPath, level) -> ControlPath:
    """Radial projection of every ``u_j`` onto the ball of radius ``level``."""
    if not level > 0:
        raise ValueError("truncation level must be positive")
    norms = np.linalg.norm(u.values, axis=1, keepdims=True)
    scale = np.minimum(1.0, level / np.where(norms > 0, norms, 1.0))
    return ControlPath(u.grid, u.values * scale)


def cauchy_bound(model: EquationModel, x0, u: ControlPath, level_n, level_m):
    """Distance of two truncated-control solutions against its Gronwall bound.

    Returns ``(dist2, bound)``: ``||z^n_t - z^m_t||^2`` on the grid and the
    discrete Gronwall bound with ``alpha(t) = int_0^t ||u^n - u^m||^2`` and
    ``beta = 2 lam + 2 M + ||g(z^n)||_L^2 + 2 D ||u^m||``.
    """
    un, um = truncate_control(u, level_n), truncate_control(u, level_m)
    zn = solve_skeleton(model, x0, un)
    zm = solve_skeleton(model, x0, um)
    dist2 = np.sum((zn.states - zm.states) ** 2, axis=-1)
    dt = u.grid.dt
    du2 = np.sum((un.values - um.values) ** 2, axis=1)
    alpha = np.concatenate([[0.0], np.cumsum(du2 * dt)])
    g_op = operator_norm(diffusion_matrix(model, zn.states[:-1]))
    beta = (2 * model.basis.growth[1] + 2 * model.M + g_op ** 2
            + 2 * model.D * np.linalg.norm(um.values, axis=1))
    beta = np.append(beta, beta[-1])
    return dist2, discrete_gronwall(alpha, beta, dt)


@dataclass
class InequalityReport:
    """Pathwise comparison ``lhs <= rhs + tol`` at every grid time."""

    lhs: np.ndarray
    rhs: np.ndarray
    tol: np.ndarray
    violations: np.ndarray

    @property
    def n_violations(self) -> int:
        return int(np.sum(self.violations))

    @property
    def violating_paths(self) -> int:
        v = self.violations
        return int(np.sum(v.any(axis=-1))) if v.ndim > 1 else int(v.any())

    @property
    def margin(self) -> float:
        """Smallest ``rhs + tol - lhs`` over all times and paths."""
        return float(np.min(self.rhs + self.tol - self.lhs))

    @property
    def first_violation(self):
        idx = np.argwhere(self.violations)
        return None if idx.size == 0 else tuple(int(i) for i in idx[0])


def _weighted_running_sum(terms, lam, times):
    """``sum_{i<j} exp(2 lam (t_j - t_i)) terms_i`` for every j (terms on axis -1)."""
    n = terms.shape[-1]
    out = np.zeros(terms.shape[:-1] + (n + 1,))
    acc = np.zeros(terms.shape[:-1])
    decay = np.exp(2 * lam * (times[1] - times[0]))
    for j in range(n):
        acc = decay * (acc + terms[..., j])
        out[..., j + 1] = acc
    return out


def energy_inequality_check(basis, x0, a_path, grid: TimeGrid, rtol=1e-12) -> InequalityReport:
    """Check the energy inequality for ``X = S(t) x0 + int S(t-s) a(s) ds``.

    ``a_path`` holds ``a(t_j)``, shape ``(..., n_steps, dim)``.  The discrete
    slack ``dt * sum_{i<j} e^{2 lam (t_j - t_i)} ||a_i||^2 dt`` is the exact
    second-order remainder of one exponential-Euler step.
    """
    a = basis.check_state(a_path)
    x0 = basis.check_state(x0)
    dt = grid.dt
    lam = basis.growth[1]
    prop = basis.eigenvalue_multiplier(lambda mu: np.exp(dt * mu))
    batch = np.broadcast_shapes(x0.shape[:-1], a.shape[:-2])
    X = np.empty(batch + (grid.n_steps + 1, basis.dim))
    X[..., 0, :] = x0
    z = np.broadcast_to(x0, batch + (basis.dim,)).copy()
    for j in range(grid.n_steps):
        z = prop.apply(z + dt * a[..., j, :])
        X[..., j + 1, :] = z
    times = grid.times
    lhs = np.sum(X ** 2, axis=-1)
    inner = np.sum(X[..., :-1, :] * a, axis=-1)
    x0n = np.sum(np.broadcast_to(x0, batch + (basis.dim,)) ** 2, axis=-1)
    rhs = (np.exp(2 * lam * times) * x0n[..., None]
           + 2 * dt * _weighted_running_sum(inner, lam, times))
    tol = dt * dt * _weighted_running_sum(np.sum(a ** 2, axis=-1), lam, times)
    tol = tol + rtol * (np.abs(rhs) + lhs)
    return InequalityReport(lhs, rhs, tol, lhs > rhs + tol)


def apriori_bound(model: EquationModel, u: ControlPath, x0) -> float:
    """Guaranteed ceiling on ``sup_t ||z_t||^2`` for the skeleton solver.

    Discrete Gronwall recursion for one exponential-Euler step:
    ``y_{j+1} <= s^2 [(1 + dt a_j + dt^2 c_j) y_j + dt b + dt^2 c_j]`` with
    ``a_j = 2M + 1 + 2 C_g^2 + ||u_j||^2``, ``b = ||f(0)||^2 + 2 C_g^2``,
    ``c_j = 4 (C_f^2 + C_g^2 ||u_j||^2)`` and ``s = ||exp(dt A)||``.  In
    continuous time this is ``C exp(int (C + ||u||^2))``.
    """
    grid = u.grid
    dt = grid.dt
    if model.m_growth != 1:
        raise NotImplementedError("a priori bound is implemented for linear drift growth")
    s = float(np.max(np.abs(np.exp(dt * np.concatenate(
        [model.basis.scalar_eigs.astype(complex), model.basis.pair_eigs])))))
    slack = 1.0 + 1e-9
    M = model.M * slack
    Cg2 = (model.C_diffusion * slack) ** 2
    Cf2 = (model.C_growth * slack) ** 2
    f0 = float(np.sum(drift_apply(model, np.zeros(model.dim)) ** 2))
    u2 = np.sum(u.values ** 2, axis=1)
    a = 2 * M + 1 + 2 * Cg2 + u2
    b = f0 + 2 * Cg2
    c = 4 * (Cf2 + Cg2 * u2)
    y = float(np.sum(np.asarray(x0, float) ** 2))
    peak = y
    for j in range(grid.n_steps):
        y = s * s * ((1 + dt * a[j] + dt * dt * c[j]) * y + dt * b + dt * dt * c[j])
        peak = max(peak, y)
    return peak * slack


def coefficient_growth_bounds(model: EquationModel, traj: Trajectory):
    """Sup of ``||f(z_t)||`` and ``||g(z_t)||_2`` along a path, with their ceilings."""
    z = traj.states
    f_sup = float(np.linalg.norm(drift_apply(model, z), axis=-1).max())
    G = diffusion_matrix(model, z)
    g_sup = float(np.sqrt(np.sum(G ** 2, axis=(-2, -1))).max())
    zs = float(traj.sup_norm().max())
    return dict(f_sup=f_sup, f_ceiling=model.C_growth * (1 + zs),
                g_sup=g_sup, g_ceiling=model.C_diffusion * (1 + zs))
