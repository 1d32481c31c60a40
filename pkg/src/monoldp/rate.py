"""Rate functional ``I(u) = 1/2 int ||u||^2`` and its minimization.

The endpoint-constrained infimum is computed by penalty continuation: at
each weight ``w`` the smooth objective ``J(u) = action(u) + w * penalty(z(u))``
is minimized with a discrete adjoint gradient, warm-starting from the
previous weight.  Linear models with additive noise have an exact
minimum-energy (controllability Gramian) value on the time grid, used as an
oracle.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .models import EquationModel, LinearDrift, ZeroDrift
from .skeleton import ControlPath, Trajectory, integrate, propagator
from .spectral import TimeGrid

__all__ = [
    "EndpointBall",
    "ExactPath",
    "OptimizerOptions",
    "RateProblem",
    "RateSolution",
    "action",
    "objective",
    "adjoint_gradient",
    "minimize_rate",
    "minimize_terminal_cost",
    "rate_closed_form_linear",
    "linear_system_matrices",
]


@dataclass(frozen=True)
class EndpointBall:
    """Target set ``{y : ||y - center|| <= radius}`` for the endpoint."""

    center: np.ndarray
    radius: float = 0.0

    def __post_init__(self):
        if not self.radius >= 0:
            raise ValueError(f"radius must be non-negative, got {self.radius}")
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))

    def residual(self, zT):
        return max(0.0, float(np.linalg.norm(zT - self.center)) - self.radius)

    def penalty(self, states, weight, dt):
        """``(w/2) dist(z_T, ball)^2`` and its gradient with respect to the states."""
        zT = states[-1]
        diff = zT - self.center
        d = float(np.linalg.norm(diff))
        excess = max(0.0, d - self.radius)
        grad = np.zeros_like(states)
        if excess > 0:
            grad[-1] = weight * excess * diff / d
        return 0.5 * weight * excess ** 2, grad


@dataclass(frozen=True)
class ExactPath:
    """Track a whole reference trajectory with a running penalty."""

    path: Trajectory

    def residual_of(self, states):
        return float(np.linalg.norm(states - self.path.states, axis=-1).max())

    def penalty(self, states, weight, dt):
        diff = states - self.path.states
        diff[0] = 0.0
        return 0.5 * weight * dt * float(np.sum(diff ** 2)), weight * dt * diff


@dataclass
class OptimizerOptions:
    """Settings of the inner minimizer and the continuation.

    ``method`` is ``"lbfgs"`` (scipy L-BFGS-B) or ``"gd"`` (steepest descent
    with Armijo backtracking).  ``grad_tol`` bounds the L2 norm of the
    functional gradient at exit; ``feas_tol`` bounds the terminal residual.
    """

    max_iter: int = 500
    method: str = "lbfgs"
    grad_tol: float = 1e-4
    feas_tol: float = 1e-3
    n_restarts: int = 3
    restart_scale: float = 1.0
    max_weight: float = 1e8
    workers: int = 1


@dataclass
class RateProblem:
    model: EquationModel
    x0: np.ndarray
    target: object
    grid: TimeGrid
    penalties: tuple = (1.0, 10.0, 100.0, 1000.0)
    options: OptimizerOptions = field(default_factory=OptimizerOptions)
    seed: int = 0

    def __post_init__(self):
        self.x0 = self.model.basis.check_state(self.x0)
        w = np.asarray(self.penalties, dtype=float)
        if w.size == 0 or np.any(w <= 0) or np.any(np.diff(w) <= 0):
            raise ValueError("penalty weights must be positive and strictly increasing")
        self.penalties = tuple(w.tolist())
        if not (hasattr(self.model.drift, "dy") and hasattr(self.model.diffusion, "dh")):
            raise TypeError("model is not pointwise differentiable; adjoint gradient unavailable")
        if isinstance(self.target, EndpointBall):
            self.model.basis.check_state(self.target.center)
        elif not isinstance(self.target, ExactPath):
            raise TypeError("target must be EndpointBall or ExactPath")

    def residual(self, states):
        if isinstance(self.target, EndpointBall):
            return self.target.residual(states[-1])
        return self.target.residual_of(states)


@dataclass
class RateSolution:
    u_star: ControlPath
    I_value: float
    residual: float
    grad_norm: float
    iterations: int
    converged: bool
    weight: float = 0.0
    history: list = field(default_factory=list)
    restart_index: int = 0
    restart_values: list = field(default_factory=list)
    endpoint: np.ndarray = None


def action(u: ControlPath) -> float:
    """``1/2 sum_j ||u_j||^2 dt``."""
    return 0.5 * float(np.sum(u.values ** 2)) * u.grid.dt


# adjoint --------------------------------------------------------------------------

def _value_and_gradient(model, x0, grid, uvals, cost):
    """``J = action + cost(states)`` and ``dJ/du_j`` by the discrete adjoint.

    ``cost(states) -> (value, dvalue/dstates)`` with states of shape
    ``(n_steps + 1, dim)``.
    """
    dt = grid.dt
    basis = model.basis
    traj = integrate(model, x0, grid, control=ControlPath(grid, uvals))
    states = traj.states
    c_val, c_grad = cost(states)
    J = 0.5 * float(np.sum(uvals ** 2)) * dt + c_val

    Phi, W = basis.modes, basis.weighted_modes
    S = model._channel_shapes
    U = states[:-1] @ Phi.T
    Sw = (dt * uvals) @ S.T
    Dz = dt * model.drift.dy(U) + model.diffusion.dh(U) * Sw
    Hs = model.diffusion.h(U)
    PT = propagator(model, dt).transpose()

    n = grid.n_steps
    Wm = np.empty((n, W.shape[0]))
    lam = c_grad[n].copy()
    for j in range(n - 1, -1, -1):
        mu = PT.apply(lam)
        wm = W @ mu
        Wm[j] = wm
        lam = mu + (Dz[j] * wm) @ Phi + c_grad[j]
    grad = dt * ((Hs * Wm) @ S) + dt * uvals
    return J, grad, states


def objective(problem: RateProblem, u: ControlPath, weight):
    """Penalized objective ``action(u) + w * penalty`` at one weight."""
    J, _, _ = _value_and_gradient(problem.model, problem.x0, problem.grid, u.values,
                                  lambda s: problem.target.penalty(s, weight, problem.grid.dt))
    return J


def adjoint_gradient(model: EquationModel, u: ControlPath, problem: RateProblem, weight=None):
    """Gradient of the penalized objective with respect to each ``u_j``.

    The return value has the shape of ``u.values``; the action contributes
    ``u_j dt``.  ``weight`` defaults to the last entry of the schedule.
    """
    if weight is None:
        weight = problem.penalties[-1]
    grid = problem.grid
    if model is not problem.model:
        problem = RateProblem(model, problem.x0, problem.target, grid, problem.penalties,
                              problem.options, problem.seed)
    u = u.on_grid(grid)
    _, grad, _ = _value_and_gradient(model, problem.x0, grid, u.values,
                                     lambda s: problem.target.penalty(s, weight, grid.dt))
    return grad


# inner minimizer ------------------------------------------------------------------

def _minimize(fun_grad, v0, opts: OptimizerOptions):
    """Minimize over the scaled variable ``v = u sqrt(dt)``; returns (v, history, iters)."""
    history = []
    if opts.method == "lbfgs":
        def f(v):
            val, g = fun_grad(v)
            return val, g

        def cb(intermediate_result):
            history.append(float(intermediate_result.fun))

        res = optimize.minimize(f, v0, jac=True, method="L-BFGS-B", callback=cb,
                                options=dict(maxiter=opts.max_iter, ftol=1e-15,
                                             gtol=opts.grad_tol * 1e-2, maxcor=20))
        return res.x, history, int(res.nit)
    if opts.method == "gd":
        v = v0.copy()
        val, g = fun_grad(v)
        history.append(val)
        step = 1.0
        it = 0
        for it in range(1, opts.max_iter + 1):
            gg = float(g @ g)
            if math.sqrt(gg) <= opts.grad_tol:
                break
            while True:
                trial = v - step * g
                tval, tg = fun_grad(trial)
                if tval <= val - 1e-4 * step * gg or step < 1e-14:
                    break
                step *= 0.5
            if tval > val:
                break
            v, val, g = trial, tval, tg
            history.append(val)
            step = min(1.0, 2.0 * step)
        return v, history, it
    raise ValueError(f"unknown optimizer method {opts.method!r}")


def _continuation(problem: RateProblem, u0):
    model, grid, opts = problem.model, problem.grid, problem.options
    dt = grid.dt
    shape = (grid.n_steps, model.m_noise)
    sq = math.sqrt(dt)
    v = (u0 * sq).ravel()
    history, iters = [], 0

    def run(weight, v):
        def fun_grad(v):
            J, g, _ = _value_and_gradient(model, problem.x0, grid, v.reshape(shape) / sq,
                                          lambda s: problem.target.penalty(s, weight, dt))
            return J, (g / sq).ravel()
        v, hist, it = _minimize(fun_grad, v, opts)
        J, g = fun_grad(v)
        return v, hist, it, float(np.linalg.norm(g))

    weights = list(problem.penalties)
    residual = math.inf
    k = 0
    weight = weights[0]
    while True:
        weight = weights[k] if k < len(weights) else weight * 10.0
        v, hist, it, gnorm = run(weight, v)
        history.append(dict(weight=weight, J=hist, iterations=it))
        iters += it
        states = integrate(model, problem.x0, grid,
                           control=ControlPath(grid, v.reshape(shape) / sq)).states
        new_res = problem.residual(states)
        k += 1
        if k >= len(weights):
            if new_res <= opts.feas_tol:
                residual = new_res
                break
            stalled = new_res > 0.9 * residual
            residual = new_res
            if stalled or weight * 10.0 > opts.max_weight:
                break
        else:
            residual = new_res
    u = ControlPath(grid, v.reshape(shape) / sq)
    feasible = residual <= opts.feas_tol
    I = action(u) if feasible else math.inf
    return RateSolution(u_star=u, I_value=I, residual=residual, grad_norm=gnorm,
                        iterations=iters, converged=bool(feasible and gnorm <= opts.grad_tol),
                        weight=weight, history=history, endpoint=states[-1])


def _restart_inits(problem: RateProblem, u_init=None):
    grid, m = problem.grid, problem.model.m_noise
    inits = [np.zeros((grid.n_steps, m)) if u_init is None else u_init.on_grid(grid).values]
    for i in range(1, problem.options.n_restarts + 1):
        rng = np.random.default_rng(np.random.SeedSequence(problem.seed, spawn_key=(i,)))
        inits.append(problem.options.restart_scale * rng.standard_normal((grid.n_steps, m)))
    return inits


def _select(sols, key):
    """Smallest ``key`` wins; ties within 1e-8 go to the lowest index."""
    best = 0
    for i in range(1, len(sols)):
        if key(sols[i]) < key(sols[best]) - 1e-8:
            best = i
    return best


def minimize_rate(problem: RateProblem, u_init: ControlPath | None = None) -> RateSolution:
    """Smallest action of a control steering the skeleton into the target.

    Runs the penalty continuation from ``u = 0`` (or ``u_init``) and from
    ``n_restarts`` seeded random controls.  The schedule is extended by
    factors of 10 up to ``max_weight`` while the residual exceeds
    ``feas_tol``; if the residual stalls instead, the target is declared
    unreachable and ``I_value = inf``.
    """
    inits = _restart_inits(problem, u_init)
    if problem.options.workers > 1:
        with ThreadPoolExecutor(max_workers=problem.options.workers) as pool:
            sols = list(pool.map(lambda u0: _continuation(problem, u0), inits))
    else:
        sols = [_continuation(problem, u0) for u0 in inits]
    feasible = [s for s in sols if math.isfinite(s.I_value)]
    if feasible:
        idx = _select(sols, lambda s: s.I_value if math.isfinite(s.I_value) else math.inf)
    else:
        idx = _select(sols, lambda s: s.residual)
    sol = sols[idx]
    sol.restart_index = idx
    sol.restart_values = [s.I_value for s in sols]
    return sol


def minimize_terminal_cost(model: EquationModel, x0, grid: TimeGrid, h, options=None,
                           seed=0, u_init=None):
    """``inf_u { h(z_T(u)) + action(u) }`` for a differentiable terminal cost.

    ``h(zT) -> (value, gradient)``.  Returns ``(value, u, zT)``.
    """
    options = options or OptimizerOptions()
    x0 = model.basis.check_state(x0)
    dt = grid.dt
    shape = (grid.n_steps, model.m_noise)
    sq = math.sqrt(dt)

    def cost(states):
        val, g = h(states[-1])
        grad = np.zeros_like(states)
        grad[-1] = g
        return float(val), grad

    def fun_grad(v):
        J, g, _ = _value_and_gradient(model, x0, grid, v.reshape(shape) / sq, cost)
        return J, (g / sq).ravel()

    probe = RateProblem(model, x0, EndpointBall(np.zeros(model.dim), 0.0), grid,
                        options=options, seed=seed)
    results = []
    for u0 in _restart_inits(probe, u_init):
        v, _, _ = _minimize(fun_grad, (u0 * sq).ravel(), options)
        J, _ = fun_grad(v)
        results.append((J, v))
    best = _select(results, lambda r: r[0])
    J, v = results[best]
    u = ControlPath(grid, v.reshape(shape) / sq)
    zT = integrate(model, x0, grid, control=u).final
    return float(J), u, zT


# linear oracle ---------------------------------------------------------------------

def linear_system_matrices(model: EquationModel, grid: TimeGrid):
    """Dense one-step matrices ``z_{j+1} = A z_j + B u_j`` of a linear model."""
    _check_linear(model)
    dt = grid.dt
    c = _linear_coefficient(model)
    P = propagator(model, dt).matrix()
    B = model.basis.project(model._channel_shapes.T).T
    return P @ ((1.0 + dt * c) * np.eye(model.dim)), dt * (P @ B)


def _linear_coefficient(model):
    return model.drift.c if isinstance(model.drift, LinearDrift) else 0.0


def _check_linear(model):
    if not isinstance(model.drift, (ZeroDrift, LinearDrift)):
        raise ValueError("closed form requires a linear drift f(v) = c v")
    if model.diffusion.kind != "additive":
        raise ValueError("closed form requires state-independent (additive) noise")


def _geometric(s, n):
    """``sum_{i<n} exp(i s)`` for complex ``s``, accurate near ``s = 0``."""
    if abs(s) < 1e-300:
        return complex(n)
    return complex(np.expm1(n * s) / np.expm1(s))


def _integral_exp(s, T):
    """``int_0^T exp(s t) dt``."""
    if abs(s) < 1e-300:
        return complex(T)
    return complex(np.expm1(s * T) / s)


def _spin_sum(K, iso, aniso):
    """``sum_i A^i K A^iT`` for rotation-dilation ``A`` from the two scalar sums."""
    alpha = 0.5 * (K[0, 0] + K[1, 1])
    z = complex(0.5 * (K[0, 0] - K[1, 1]), K[0, 1]) * aniso
    return alpha * iso.real * np.eye(2) + np.array([[z.real, z.imag], [z.imag, -z.real]])


def _min_energy(G, r, scale):
    """``1/2 r^T G^+ r * scale``, or ``inf`` when ``r`` leaves the range of ``G``."""
    evals, evecs = np.linalg.eigh(np.atleast_2d(G))
    coef = evecs.T @ np.atleast_1d(r)
    cut = 1e-13 * max(1.0, float(np.abs(evals).max()))
    ok = evals > cut
    if np.any(np.abs(coef[~ok]) > 1e-9 * (1.0 + float(np.abs(r).max()))):
        return math.inf
    return 0.5 * scale * float(np.sum(coef[ok] ** 2 / evals[ok]))


def rate_closed_form_linear(model: EquationModel, x0, y_star, grid: TimeGrid, continuous=False):
    """Minimum of ``1/2 int ||u||^2`` steering ``x0`` to ``y_star`` exactly.

    Linear drift ``c v`` and additive noise.  Each scalar or rotation block
    is solved with its own controllability Gramian in closed form.  The
    default is the exact value for piecewise-constant controls on ``grid``
    under the exponential-Euler recursion; ``continuous=True`` gives the
    continuous-time value.  Returns ``inf`` when the target is unreachable.
    """
    _check_linear(model)
    basis = model.basis
    x0 = basis.check_state(x0)
    y_star = basis.check_state(y_star)
    dt, n, T = grid.dt, grid.n_steps, grid.T
    c = _linear_coefficient(model)
    B = basis.project(model._channel_shapes.T).T
    blocks = [([i], complex(mu)) for i, mu in zip(basis.scalar_index, basis.scalar_eigs)]
    blocks += [(list(p), complex(mu)) for p, mu in zip(basis.pair_index, basis.pair_eigs)]

    BB = B @ B.T
    owner = np.empty(basis.dim, dtype=int)
    for b, (idx, _) in enumerate(blocks):
        owner[idx] = b
    cross = owner[:, None] != owner[None, :]
    if np.any(np.abs(BB[cross]) > 1e-10 * max(1.0, float(np.abs(BB).max()))):
        raise ValueError("noise channels couple different blocks; per-mode decoupling fails")

    total = 0.0
    for idx, mu in blocks:
        Bk = B[idx]
        if continuous:
            s = mu + c
            zT = np.exp(s * T)
            gram_scale = 1.0
            iso = _integral_exp(2 * s.real, T)
            aniso = _integral_exp(2 * s.real - 2j * s.imag, T)
            K = Bk @ Bk.T
        else:
            a = np.exp(dt * mu) * (1.0 + dt * c)
            zT = a ** n
            gram_scale = dt
            s = complex(np.log(a))
            iso = _geometric(2 * s.real, n)
            aniso = _geometric(2 * s.real - 2j * s.imag, n)
            Pb = np.exp(dt * mu)
            if len(idx) == 1:
                PB = Pb.real * Bk
            else:
                PB = np.array([[Pb.real, Pb.imag], [-Pb.imag, Pb.real]]) @ Bk
            K = dt * dt * (PB @ PB.T)
        if len(idx) == 1:
            G = K * iso.real
            r = y_star[idx] - zT.real * x0[idx]
        else:
            G = _spin_sum(K, iso, aniso)
            R = np.array([[zT.real, zT.imag], [-zT.imag, zT.real]])
            r = y_star[idx] - R @ x0[idx]
        val = _min_energy(G, r, gram_scale)
        if not math.isfinite(val):
            return math.inf
        total += val
    return total
