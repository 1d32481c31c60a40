"""Empirical checks of the large deviation and Laplace principles.

Rare endpoint events are estimated with importance sampling: paths of the
controlled equation driven by a tilt ``u`` are reweighted by the Girsanov
likelihood ratio.  Convergence experiments couple all runs through common
noise.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.special import logsumexp

from .rate import (EndpointBall, OptimizerOptions, RateProblem, action,
                   minimize_rate, minimize_terminal_cost)
from .simulate import fmean, girsanov_log_weights, noise_chunks, run_ensemble, summarize
from .skeleton import ControlPath, integrate, solve_skeleton, solve_skeleton_yosida
from .spectral import TimeGrid

__all__ = [
    "LogProbEstimate",
    "LdpEstimate",
    "ConstantFunctional",
    "CappedQuadratic",
    "estimate_log_prob",
    "ldp_scaling_experiment",
    "weight_normalization",
    "laplace_check",
    "HalfSquareTerminal",
    "WienerFunctional",
    "variational_representation_check",
    "riccati_feedback_value",
    "feedback_control_estimate",
    "perturbed_family",
    "oscillating_family",
    "small_noise_convergence",
    "oscillating_controls",
    "weak_continuity_experiment",
    "sinusoid_convolution",
]

Z95 = float(stats.norm.ppf(0.975))


# log-mean estimators --------------------------------------------------------------

def _log_mean_exp(logs):
    """``log mean exp(logs)`` with a delta-method standard error of the log.

    Entries equal to ``-inf`` contribute zero.  Returns ``(log_mean, se_log,
    ess)``; ``ess`` is the effective sample size of the nonzero terms.
    """
    logs = np.asarray(logs, float).ravel()
    n = logs.size
    finite = np.isfinite(logs)
    if not np.any(finite):
        return -math.inf, math.inf, 0.0
    lm = float(logsumexp(logs[finite])) - math.log(n)
    r = np.zeros(n)
    r[finite] = np.exp(logs[finite] - lm)
    var = math.fsum((r - 1.0) ** 2) / max(n - 1, 1)
    se = math.sqrt(var / n)
    l1 = float(logsumexp(logs[finite]))
    l2 = float(logsumexp(2 * logs[finite]))
    ess = math.exp(2 * l1 - l2)
    return lm, se, ess


@dataclass
class LogProbEstimate:
    log_p: float
    ci_lo: float
    ci_hi: float
    se_log: float
    n_paths: int
    n_hits: int
    method: str
    ess: float
    flags: list = field(default_factory=list)


def _endpoint_hits(event: EndpointBall, final):
    return np.linalg.norm(final - event.center, axis=-1) <= event.radius


def estimate_log_prob(model, event: EndpointBall, eps, n_paths, method="naive",
                      u_tilt: ControlPath | None = None, seed=0, x0=None, grid=None,
                      ess_floor=50.0, workers=1) -> LogProbEstimate:
    """``log P(||X^eps_T - center|| <= radius)`` with a 95% CI.

    ``method="naive"`` counts hits of the mild solution; ``"importance"``
    runs the controlled equation with ``u_tilt`` and averages the Girsanov
    weight over hits.  A naive run without hits reports ``log(1/n)`` as an
    upper bound and the flag ``"zero_hits"``; an importance run whose
    effective sample size falls below ``ess_floor`` is flagged
    ``"low_ess"``.
    """
    if method not in ("naive", "importance"):
        raise ValueError(f"unknown method {method!r}")
    if method == "importance" and u_tilt is None:
        raise ValueError("importance sampling requires u_tilt")
    if not eps > 0:
        raise ValueError("eps must be positive")
    grid = grid or (u_tilt.grid if u_tilt is not None else None)
    if grid is None:
        raise ValueError("a time grid is required")
    x0 = np.zeros(model.dim) if x0 is None else x0
    control = u_tilt.on_grid(grid) if method == "importance" else None

    def functional(traj, dW):
        hit = _endpoint_hits(event, traj.final) & ~traj.blown
        lw = girsanov_log_weights(control, dW, eps) if control is not None else np.zeros(hit.shape)
        return {"logs": np.where(hit, lw, -np.inf), "hit": hit}

    res = run_ensemble(model, x0, grid, n_paths, seed, eps, functional, control=control,
                       workers=workers)
    n_hits = int(res["hit"].sum())
    lm, se, ess = _log_mean_exp(res["logs"])
    flags = []
    if n_hits == 0:
        flags.append("zero_hits")
        bound = -math.log(n_paths)
        return LogProbEstimate(bound, -math.inf, bound, math.inf, int(n_paths), 0, method,
                               0.0, flags)
    if method == "importance" and ess < ess_floor:
        flags.append("low_ess")
    se_log = se if se > 0 else 0.0
    return LogProbEstimate(lm, lm - Z95 * se_log, lm + Z95 * se_log, se_log, int(n_paths),
                           n_hits, method, ess, flags)


def weight_normalization(model, u: ControlPath, eps, n_paths, seed=0, x0=None):
    """Mean and standard error of the Girsanov weights (should be 1)."""
    grid = u.grid
    sums = []
    for _, dW in noise_chunks(grid, model.m_noise, seed, n_paths):
        sums.append(np.exp(girsanov_log_weights(u, dW, eps)))
    s = summarize(np.concatenate(sums))
    return s["mean"], s["se"]


@dataclass
class LdpEstimate:
    """Per-eps ``log P`` estimates against the reference ``-I``."""

    eps: np.ndarray
    log_p: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    eps2_logp: np.ndarray
    minus_I: float
    method: str
    ess: np.ndarray
    intercept: float
    slope: float
    monotone: bool
    flags: list = field(default_factory=list)
    ess_floor: float = 50.0

    def rows(self):
        for i in range(self.eps.size):
            yield dict(eps=float(self.eps[i]), log_p_hat=float(self.log_p[i]),
                       ci_lo=float(self.ci_lo[i]), ci_hi=float(self.ci_hi[i]),
                       eps2_logp=float(self.eps2_logp[i]), minus_I=float(self.minus_I),
                       method=self.method, ess=float(self.ess[i]))

    def relative_error(self):
        if self.minus_I == 0:
            return abs(self.intercept)
        return abs(self.intercept - self.minus_I) / abs(self.minus_I)


def ldp_scaling_experiment(model, event: EndpointBall, eps_list, n_paths, seed=0, x0=None,
                           grid=None, rate=None, method="importance", options=None,
                           ess_floor=50.0, workers=1) -> LdpEstimate:
    """Table of ``eps^2 log P`` over an eps ladder and its affine intercept.

    ``rate`` is a :class:`RateSolution` (or ``(I, u_tilt)``) for the event;
    it is computed with :func:`minimize_rate` when omitted.  The intercept
    is the affine fit in ``eps`` through the two smallest eps values.
    """
    x0 = np.zeros(model.dim) if x0 is None else model.basis.check_state(x0)
    if rate is None:
        if grid is None:
            raise ValueError("a time grid is required")
        rate = minimize_rate(RateProblem(model, x0, event, grid,
                                         options=options or OptimizerOptions(), seed=seed))
    if isinstance(rate, tuple):
        I, u_tilt = rate
    else:
        I, u_tilt = rate.I_value, rate.u_star
    grid = grid or u_tilt.grid
    eps = np.asarray(sorted(map(float, eps_list), reverse=True))
    rows = []
    flags = []
    for e in eps:
        est = estimate_log_prob(model, event, e, n_paths, method=method, u_tilt=u_tilt,
                                seed=seed, x0=x0, grid=grid,
                                ess_floor=ess_floor, workers=workers)
        flags += [f"eps={e!r}:{f}" for f in est.flags]
        rows.append(est)
    log_p = np.array([r.log_p for r in rows])
    e2 = eps ** 2 * log_p
    order = np.argsort(eps)
    a, b = eps[order[0]], eps[order[1]]
    ya, yb = e2[order[0]], e2[order[1]]
    slope = (yb - ya) / (b - a)
    intercept = ya - slope * a
    diffs = np.diff(e2[order])
    monotone = bool(np.all(diffs >= 0) or np.all(diffs <= 0))
    if not monotone:
        flags.append("non_monotone")
    return LdpEstimate(eps, log_p, np.array([r.ci_lo for r in rows]),
                       np.array([r.ci_hi for r in rows]), e2, -float(I), method,
                       np.array([r.ess for r in rows]), float(intercept), float(slope),
                       monotone, flags, ess_floor)


# Laplace principle -------------------------------------------------------------------

@dataclass(frozen=True)
class ConstantFunctional:
    c: float = 0.0

    def __call__(self, x):
        return np.full(np.shape(x)[:-1], float(self.c))

    def value_and_grad(self, x):
        return float(self.c), np.zeros_like(x)


@dataclass(frozen=True)
class CappedQuadratic:
    """``h(x) = c min(||x - center||^2, cap)``."""

    c: float
    center: np.ndarray
    cap: float

    def __call__(self, x):
        d2 = np.sum((np.asarray(x) - self.center) ** 2, axis=-1)
        return self.c * np.minimum(d2, self.cap)

    def value_and_grad(self, x):
        diff = np.asarray(x) - self.center
        d2 = float(diff @ diff)
        if d2 >= self.cap:
            return self.c * self.cap, np.zeros_like(diff)
        return self.c * d2, 2 * self.c * diff


def laplace_check(model, h, eps_list, n_paths, seed=0, x0=None, grid=None, options=None,
                  workers=1):
    """``eps^2 log E exp(-h(X_T)/eps^2)`` against ``-inf_u {h(z_T(u)) + action(u)}``.

    The expectation is importance sampled with the minimizing control of
    the right-hand side.  Returns a dict with ``rhs``, per-eps ``lhs``,
    standard errors, effective sample sizes and flags.
    """
    if grid is None:
        raise ValueError("a time grid is required")
    x0 = np.zeros(model.dim) if x0 is None else model.basis.check_state(x0)
    if isinstance(h, ConstantFunctional):
        value, u = float(h.c), ControlPath.zeros(grid, model.m_noise)
    else:
        value, u, _ = minimize_terminal_cost(model, x0, grid, h.value_and_grad,
                                             options or OptimizerOptions(), seed=seed)
    tilt = None if not np.any(u.values) else u
    out = dict(rhs=-value, eps=[], lhs=[], se=[], ess=[], flags=[], u_tilt=u)
    for e in sorted(map(float, eps_list), reverse=True):
        def functional(traj, dW, e=e):
            lw = girsanov_log_weights(tilt, dW, e) if tilt is not None else 0.0
            return -h(traj.final) / e ** 2 + lw

        logs = run_ensemble(model, x0, grid, n_paths, seed, e,
                            functional, control=tilt, workers=workers)
        lm, se, ess = _log_mean_exp(logs)
        out["eps"].append(e)
        out["lhs"].append(e * e * lm)
        out["se"].append(e * e * se)
        out["ess"].append(ess)
        if ess < 50:
            out["flags"].append(f"eps={e!r}:low_ess")
    return out


# variational representation ----------------------------------------------------------

class WienerFunctional:
    """``h`` of a finite-dimensional Brownian path through its grid values.

    Subclasses implement ``value(paths)`` and ``grad(paths)`` for paths of
    shape ``(..., n_steps + 1, dim)``; ``quadratic`` marks functionals of
    the form ``1/2 ||W(T)||^2``.
    """

    quadratic = False

    def value(self, paths):
        raise NotImplementedError

    def grad(self, paths):
        raise NotImplementedError


class HalfSquareTerminal(WienerFunctional):
    """``h(W) = 1/2 ||W(T)||^2``."""

    quadratic = True

    def value(self, paths):
        return 0.5 * np.sum(paths[..., -1, :] ** 2, axis=-1)

    def grad(self, paths):
        g = np.zeros_like(paths)
        g[..., -1, :] = paths[..., -1, :]
        return g


class ConstantWiener(WienerFunctional):
    def __init__(self, c=0.0):
        self.c = float(c)

    def value(self, paths):
        return np.full(paths.shape[:-2], self.c)

    def grad(self, paths):
        return np.zeros_like(paths)


class CappedTerminal(WienerFunctional):
    """``h(W) = c min(||W(T) - y||^2, cap)``."""

    def __init__(self, c, y, cap):
        self.c, self.y, self.cap = float(c), np.asarray(y, float), float(cap)

    def value(self, paths):
        d2 = np.sum((paths[..., -1, :] - self.y) ** 2, axis=-1)
        return self.c * np.minimum(d2, self.cap)

    def grad(self, paths):
        diff = paths[..., -1, :] - self.y
        inside = np.sum(diff ** 2, axis=-1) < self.cap
        g = np.zeros_like(paths)
        g[..., -1, :] = 2 * self.c * diff * inside[..., None]
        return g


class MarginalSquares(WienerFunctional):
    """``h(W) = 1/2 mean_k ||W(t_k)||^2`` over a few marginal times."""

    def __init__(self, indices):
        self.indices = list(indices)

    def value(self, paths):
        return 0.5 * np.mean([np.sum(paths[..., k, :] ** 2, axis=-1) for k in self.indices], axis=0)

    def grad(self, paths):
        g = np.zeros_like(paths)
        for k in self.indices:
            g[..., k, :] += paths[..., k, :] / len(self.indices)
        return g


WIENER_CATALOG = {
    "zero": lambda grid, dim: ConstantWiener(0.0),
    "constant": lambda grid, dim: ConstantWiener(0.7),
    "half_square": lambda grid, dim: HalfSquareTerminal(),
    "capped": lambda grid, dim: CappedTerminal(1.0, np.full(dim, 0.5), 2.0),
    "marginals": lambda grid, dim: MarginalSquares([grid.n_steps // 2, grid.n_steps]),
}
__all__ += ["ConstantWiener", "CappedTerminal", "MarginalSquares", "WIENER_CATALOG"]


def _brownian_paths(grid, dim, n_paths, seed):
    inc = np.concatenate([dw for _, dw in noise_chunks(grid, dim, seed, n_paths)])
    paths = np.zeros((n_paths, grid.n_steps + 1, dim))
    np.cumsum(inc, axis=1, out=paths[:, 1:, :])
    return paths


def variational_representation_check(dim, h: WienerFunctional, n_paths, grid: TimeGrid, seed=0,
                                     options=None):
    """``-log E exp(-h(W))`` against ``inf_u E[h(W + int u) + action(u)]``.

    The infimum runs over deterministic piecewise-constant controls, an
    upper bound for the adapted infimum; both sides use the same sample.
    For quadratic ``h`` the two-sided clause asks for agreement within 5%.
    """
    if not 1 <= dim <= 3:
        raise ValueError("dim must be 1, 2 or 3")
    W = _brownian_paths(grid, dim, n_paths, seed)
    hv = h.value(W)
    lhs_log, se_log, _ = _log_mean_exp(-hv)
    lhs = -lhs_log
    dt = grid.dt
    sq = math.sqrt(dt)
    shape = (grid.n_steps, dim)

    def fun_grad(v):
        u = v.reshape(shape) / sq
        shift = np.zeros((grid.n_steps + 1, dim))
        shift[1:] = np.cumsum(u * dt, axis=0)
        P = W + shift
        val = fmean(h.value(P)) + 0.5 * float(np.sum(u ** 2)) * dt
        gs = h.grad(P).mean(axis=0)
        # d shift_k / d u_j = dt for k > j
        gu = dt * np.cumsum(gs[::-1], axis=0)[::-1][1:] + u * dt
        return val, (gu / sq).ravel()

    from .rate import _minimize
    opts = options or OptimizerOptions(max_iter=200)
    v, _, _ = _minimize(fun_grad, np.zeros(grid.n_steps * dim), opts)
    rhs, _ = fun_grad(v)
    u = ControlPath(grid, v.reshape(shape) / sq)
    shift = np.zeros((grid.n_steps + 1, dim))
    shift[1:] = np.cumsum(u.values * dt, axis=0)
    se_rhs = summarize(h.value(W + shift))["se"]
    se = max(se_log, se_rhs)
    out = dict(lhs=lhs, lhs_se=se_log, rhs=rhs, rhs_se=se_rhs, u=u,
               one_sided=bool(lhs <= rhs + 3 * se + 1e-12 * (1.0 + abs(rhs))), quadratic=h.quadratic)
    if h.quadratic:
        out["two_sided"] = bool(abs(rhs - lhs) <= 0.05 * abs(lhs))
    return out


def riccati_feedback_value(T=1.0, dim=1):
    """Optimal adapted value for ``h = 1/2 ||W(T)||^2``: ``(dim/2) log(1 + T)``.

    The feedback ``u = -X / (1 + T - t)`` attains it, where ``X = W + int u``.
    """
    return 0.5 * dim * math.log1p(T)


def feedback_control_estimate(dim, n_paths, grid: TimeGrid, seed=0):
    """MC value of ``E[1/2 ||X_T||^2 + action]`` under the Riccati feedback."""
    n, dt, T = grid.n_steps, grid.dt, grid.T
    total = []
    for _, dW in noise_chunks(grid, dim, seed, n_paths):
        X = np.zeros(dW.shape[0::2])
        cost = np.zeros(dW.shape[0])
        for j in range(n):
            t = j * dt
            u = -X / (1.0 + T - t - 0.5 * dt)
            cost += 0.5 * np.sum(u * u, axis=-1) * dt
            X = X + u * dt + dW[:, j, :]
        total.append(cost + 0.5 * np.sum(X * X, axis=-1))
    return summarize(np.concatenate(total))


# small-noise convergence of the controlled equation ----------------------------------

def perturbed_family(u0: ControlPath, perturbation: ControlPath):
    """``eps -> u0 + eps * perturbation``."""
    return lambda eps: u0 + perturbation.scaled(eps)


def oscillating_family(u0: ControlPath, amplitude=1.0):
    """``eps -> u0 + amplitude * sin(t / eps)`` on every channel (``eps = 0`` gives ``u0``)."""
    def fam(eps):
        if eps == 0:
            return u0
        osc = ControlPath.from_function(u0.grid, lambda t: np.full(u0.m_noise, amplitude * math.sin(t / eps)))
        return u0 + osc
    return fam


def small_noise_convergence(model, u_family, eps_list, n_paths, seed=0, x0=None, grid=None):
    """``E ||z^eps - z^0||_inf`` with common noise, where ``z^eps`` is driven by ``u_family(eps)``.

    Asserts a decreasing sequence over decreasing eps and a final/initial
    ratio of at most 0.25.
    """
    u0 = u_family(0.0)
    grid = grid or u0.grid
    x0 = np.zeros(model.dim) if x0 is None else x0
    z0 = solve_skeleton(model, x0, u0, grid).states
    eps = sorted(map(float, eps_list), reverse=True)
    means, ses = [], []
    for e in eps:
        def functional(traj, dW):
            return np.linalg.norm(traj.states - z0, axis=-1).max(axis=-1)
        d = run_ensemble(model, x0, grid, n_paths, seed, e, functional, control=u_family(e))
        s = summarize(d)
        means.append(s["mean"])
        ses.append(s["se"])
    means = np.array(means)
    decreasing = bool(np.all(np.diff(means) < 0))
    ratio = float(means[-1] / means[0]) if means[0] > 0 else 0.0
    return dict(eps=eps, mean=means, se=np.array(ses), decreasing=decreasing, ratio=ratio,
                passed=bool((decreasing or not np.any(means)) and ratio <= 0.25))


# continuity along weakly converging controls -----------------------------------------

def oscillating_controls(u0: ControlPath, amplitude, ns, direction=None):
    """``u^n = u0 + c sin(n pi t / T) e`` sampled at interval midpoints."""
    grid = u0.grid
    e = np.zeros(u0.m_noise) if direction is None else np.asarray(direction, float)
    if direction is None:
        e[0] = 1.0
    return [u0 + ControlPath.from_function(
        grid, lambda t, n=n: amplitude * math.sin(n * math.pi * t / grid.T) * e) for n in ns]


def weak_continuity_experiment(model, controls, u0: ControlPath, x0=None, ns=None,
                               ks=(1e2, 1e3, 1e4)):
    """Sup distance of the skeleton along weakly converging controls.

    Asserts the last distance is below 10% of the first, and that the sup
    over Yosida parameters ``ks`` of ``||z^{n,k} - z^{0,k}||_inf`` decreases
    in ``n``.
    """
    x0 = np.zeros(model.dim) if x0 is None else x0
    grid = u0.grid
    z0 = solve_skeleton(model, x0, u0, grid)
    dist = np.array([float(solve_skeleton(model, x0, u, grid).sup_distance(z0)) for u in controls])
    table = np.empty((len(controls), len(ks)))
    for b, k in enumerate(ks):
        z0k = solve_skeleton_yosida(model, k, x0, u0, grid)
        for a, u in enumerate(controls):
            table[a, b] = float(solve_skeleton_yosida(model, k, x0, u, grid).sup_distance(z0k))
    sup_k = table.max(axis=1)
    below = bool(dist[-1] <= 0.1 * dist[0]) if dist[0] > 0 else True
    decreasing = bool(np.all(np.diff(sup_k) < 0)) if sup_k[0] > 0 else True
    return dict(ns=ns, distance=dist, yosida=table, sup_k=sup_k, below_10pct=below,
                yosida_decreasing=decreasing, passed=below and decreasing)


def sinusoid_convolution(lam, omega, t):
    """``int_0^t exp(lam (t - s)) sin(omega s) ds`` in closed form."""
    t = np.asarray(t, float)
    return (omega * np.exp(lam * t) - lam * np.sin(omega * t) - omega * np.cos(omega * t)) / (
        lam * lam + omega * omega)
