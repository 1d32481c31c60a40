"""Monte-Carlo simulation of the mild solution and the controlled SPDE.

Randomness is organised in fixed-size chunks of paths.  Chunk ``c`` of a
master seed draws from ``SeedSequence(seed, spawn_key=(c,))``, so path ``i``
always sees the same increments no matter how many paths are requested or
how many workers share the chunks.  Reductions use ``math.fsum`` and are
therefore independent of evaluation order.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .skeleton import ControlPath, Trajectory, integrate, _weighted_running_sum, InequalityReport
from .spectral import TimeGrid

__all__ = [
    "CHUNK",
    "NoisePath",
    "EnsembleStats",
    "sample_noise",
    "noise_chunks",
    "simulate_mild",
    "simulate_controlled",
    "girsanov_log_weights",
    "run_ensemble",
    "summarize",
    "fmean",
    "ito_inequality_check",
    "ito_ensemble",
    "burkholder_path_stats",
    "burkholder_check",
    "burkholder_ensemble",
    "moment_bound_estimate",
]

CHUNK = 256


@dataclass(frozen=True)
class NoisePath:
    """Brownian increments on a grid, shape ``(n_steps, m)`` or ``(n_paths, n_steps, m)``."""

    grid: TimeGrid
    increments: np.ndarray
    seed: int

    @property
    def n_paths(self):
        return 1 if self.increments.ndim == 2 else self.increments.shape[0]

    def endpoint(self):
        """``W(T)`` per path."""
        return self.increments.sum(axis=-2)


def _chunk_rng(seed, chunk):
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(chunk),)))


def noise_chunks(grid: TimeGrid, m_noise, seed, n_paths):
    """Yield ``(first_path_index, increments)`` chunk by chunk."""
    sd = math.sqrt(grid.dt)
    for c, start in enumerate(range(0, n_paths, CHUNK)):
        size = min(CHUNK, n_paths - start)
        yield start, _chunk_rng(seed, c).standard_normal((size, grid.n_steps, m_noise)) * sd


def sample_noise(grid: TimeGrid, m_noise, rng_seed, n_paths=None) -> NoisePath:
    """i.i.d. ``N(0, dt)`` increments per channel, deterministic given the seed.

    With ``n_paths=None`` a single path (the first path of the ensemble) is
    returned with shape ``(n_steps, m)``.
    """
    count = 1 if n_paths is None else int(n_paths)
    inc = np.concatenate([dw for _, dw in noise_chunks(grid, m_noise, rng_seed, count)])
    if n_paths is None:
        inc = inc[0]
    return NoisePath(grid, inc, int(rng_seed))


def simulate_mild(model, x0, eps, noise: NoisePath, grid: TimeGrid | None = None, **kwargs) -> Trajectory:
    """Mild solution ``X_{j+1} = S(dt)(X_j + dt f(X_j) + eps g(X_j) dW_j)``."""
    grid = grid or noise.grid
    if noise.grid != grid:
        raise ValueError("noise grid and solve grid differ")
    return integrate(model, x0, grid, eps=eps, dW=noise.increments, **kwargs)


def simulate_controlled(model, x0, eps, u: ControlPath, noise: NoisePath,
                        grid: TimeGrid | None = None, **kwargs) -> Trajectory:
    """Controlled equation: skeleton drift ``g(z) u`` plus ``eps g(z) dW``."""
    grid = grid or noise.grid
    if noise.grid != grid:
        raise ValueError("noise grid and solve grid differ")
    return integrate(model, x0, grid, control=u, eps=eps, dW=noise.increments, **kwargs)


def girsanov_log_weights(u: ControlPath, dW, eps):
    """``-(1/eps) sum <u_j, dW_j> - (1/(2 eps^2)) sum ||u_j||^2 dt`` per path."""
    vals = u.values
    cross = np.einsum("...jm,jm->...", dW, vals)
    return -cross / eps - 0.5 * np.sum(vals ** 2) * u.grid.dt / eps ** 2


def run_ensemble(model, x0, grid: TimeGrid, n_paths, seed, eps, functional,
                 control: ControlPath | None = None, workers=1, **kwargs):
    """Simulate ``n_paths`` paths chunk-wise and collect ``functional(traj, dW)``.

    ``functional`` returns an array (or a dict of arrays) with one leading
    entry per path; results are concatenated in path order.
    """
    def job(item):
        _, dW = item
        traj = integrate(model, x0, grid, control=control, eps=eps, dW=dW,
                         on_blowup="flag", **kwargs)
        return functional(traj, dW)

    chunks = list(noise_chunks(grid, model.m_noise, seed, n_paths))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(job, chunks))
    else:
        parts = [job(c) for c in chunks]
    if isinstance(parts[0], dict):
        return {k: np.concatenate([p[k] for p in parts]) for k in parts[0]}
    return np.concatenate(parts)


def fmean(x):
    x = np.asarray(x, dtype=float).ravel()
    return math.fsum(x) / x.size


@dataclass
class EnsembleStats:
    """Sample count, seed and per-functional mean/variance/CI."""

    n_samples: int
    seed: int
    functionals: dict = field(default_factory=dict)
    level: float = 0.95
    flags: dict = field(default_factory=dict)

    def mean(self, name):
        return self.functionals[name]["mean"]


def summarize(samples, level=0.95):
    """Mean, variance, standard error and normal CI of a sample."""
    x = np.asarray(samples, dtype=float).ravel()
    n = x.size
    m = fmean(x)
    var = math.fsum((x - m) ** 2) / max(n - 1, 1)
    se = math.sqrt(var / n)
    z = stats.norm.ppf(0.5 + level / 2)
    return dict(mean=m, var=var, se=se, ci_lo=m - z * se, ci_hi=m + z * se, n=n)


# stochastic inequalities ---------------------------------------------------------

def ito_inequality_check(basis, x0, drift_inc, mart_inc, grid: TimeGrid,
                         rtol=1e-12) -> InequalityReport:
    """Pathwise Ito-type inequality for ``X = S(t) x0 + int S(t-s) dZ``.

    ``drift_inc`` (``dt * a_j``) and ``mart_inc`` (``dM_j``) have shape
    ``(..., n_steps, dim)``; ``X`` is rebuilt from them by the one-step map.
    The bracket is ``sum e^{2 lam (t - s_i)} ||dM_i||^2``.  Tolerance is
    ``c sqrt(dt)`` with ``c = w (sqrt(dt) A + 2 sqrt(A [M]))``, ``A =
    int ||a||^2`` and ``w = e^{2 lam T}``, which dominates the discrete
    cross terms ``||dt a||^2 + 2 <dt a, dM>`` by Cauchy-Schwarz.
    """
    d = np.asarray(drift_inc, float)
    m = np.asarray(mart_inc, float)
    x0 = basis.check_state(x0)
    dt, lam = grid.dt, basis.growth[1]
    prop = basis.eigenvalue_multiplier(lambda mu: np.exp(dt * mu))
    dZ = d + m
    batch = np.broadcast_shapes(x0.shape[:-1], dZ.shape[:-2])
    X = np.empty(batch + (grid.n_steps + 1, basis.dim))
    X[..., 0, :] = x0
    z = np.broadcast_to(x0, batch + (basis.dim,)).copy()
    for j in range(grid.n_steps):
        z = prop.apply(z + dZ[..., j, :])
        X[..., j + 1, :] = z
    times = grid.times
    lhs = np.sum(X ** 2, axis=-1)
    x0n = np.sum(np.broadcast_to(x0, batch + (basis.dim,)) ** 2, axis=-1)
    inner = np.sum(X[..., :-1, :] * dZ, axis=-1)
    qv = _weighted_running_sum(np.sum(m ** 2, axis=-1), lam, times)
    rhs = np.exp(2 * lam * times) * x0n[..., None] + 2 * _weighted_running_sum(inner, lam, times) + qv
    A = np.sum(d ** 2, axis=(-2, -1)) / dt
    QV = np.sum(m ** 2, axis=(-2, -1))
    c = np.exp(2 * max(lam, 0.0) * grid.T) * (math.sqrt(dt) * A + 2 * np.sqrt(A * QV))
    tol = (math.sqrt(dt) * c)[..., None] + rtol * (np.abs(rhs) + lhs)
    report = InequalityReport(lhs, rhs, np.broadcast_to(tol, lhs.shape), lhs > rhs + tol)
    report.raw_violations = lhs > rhs + rtol * (np.abs(rhs) + lhs)
    return report


def ito_ensemble(model, x0, eps, grid: TimeGrid, n_paths, seed, workers=1):
    """Run :func:`ito_inequality_check` on simulated mild paths, chunk by chunk.

    Returns the fraction of paths with a violation beyond tolerance, the
    same fraction without tolerance, and the smallest margin.
    """
    def functional(traj, dW):
        _, drift, mart = integrate(model, x0, grid, eps=eps, dW=dW, return_inputs=True)
        rep = ito_inequality_check(model.basis, x0, drift, mart, grid)
        margin = np.min(rep.rhs + rep.tol - rep.lhs, axis=-1)
        return {"bad": rep.violations.any(axis=-1), "raw": rep.raw_violations.any(axis=-1),
                "margin": margin, "tol": rep.tol.max(axis=-1)}

    res = run_ensemble(model, x0, grid, n_paths, seed, 0.0, functional, workers=workers)
    return dict(n_paths=int(n_paths), fraction=fmean(res["bad"]), raw_fraction=fmean(res["raw"]),
                margin=float(res["margin"].min()), tolerance=float(res["tol"].max()))


def burkholder_path_stats(basis, mart_inc, grid: TimeGrid, p=1):
    """Per path ``sup_t ||int S(t-s) dM||^{2p}`` and ``[M]_T^p``."""
    m = np.asarray(mart_inc, float)
    prop = basis.eigenvalue_multiplier(lambda mu: np.exp(grid.dt * mu))
    y = np.zeros(m.shape[:-2] + (basis.dim,))
    sup = np.zeros(m.shape[:-2])
    for j in range(grid.n_steps):
        y = prop.apply(y + m[..., j, :])
        sup = np.maximum(sup, np.sum(y ** 2, axis=-1))
    qv = np.sum(m ** 2, axis=(-2, -1))
    return sup ** p, qv ** p


def _ratio_report(sup_p, qv_p, p, T, lam, C=None):
    n = sup_p.size
    num, den = fmean(sup_p), fmean(qv_p)
    if den == 0.0:
        ratio, se = 0.0, 0.0
    else:
        ratio = num / den
        resid = sup_p - ratio * qv_p
        se = math.sqrt(math.fsum(resid ** 2) / max(n - 1, 1) / n) / den
    C = 4.0 * p if C is None else C
    bound = C * math.exp(lam * T)
    return dict(ratio=ratio, se=se, lhs=num, rhs=den, n_paths=n, p=p,
                bound=bound, passed=bool(ratio <= bound))


def burkholder_check(basis, mart_inc, p, grid: TimeGrid, C=None):
    """Empirical ratio ``E sup ||int S dM||^{2p} / E [M]_T^p`` with its standard error.

    ``passed`` compares the ratio with ``C e^{lam T}`` (default ``C = 4p``);
    the constant is not pinned by theory, so the ratio is the primary output.
    """
    sup_p, qv_p = burkholder_path_stats(basis, mart_inc, grid, p)
    return _ratio_report(sup_p, qv_p, p, grid.T, basis.growth[1], C)


def burkholder_ensemble(model, x0, eps, grid: TimeGrid, n_paths, seed, p=1, C=None, workers=1,
                        nested=()):
    """Burkholder ratio for the martingale ``eps int g(X) dW`` of the mild solution.

    ``nested`` lists smaller sample counts whose reports are computed from
    the leading paths of the same ensemble (path i does not depend on
    ``n_paths``); they are returned under ``report["nested"]``.
    """
    def functional(traj, dW):
        _, _, mart = integrate(model, x0, grid, eps=eps, dW=dW, return_inputs=True)
        sup_p, qv_p = burkholder_path_stats(model.basis, mart, grid, p)
        return {"sup": sup_p, "qv": qv_p}

    res = run_ensemble(model, x0, grid, n_paths, seed, 0.0, functional, workers=workers)
    lam = model.basis.growth[1]
    report = _ratio_report(res["sup"], res["qv"], p, grid.T, lam, C)
    report["nested"] = {int(k): _ratio_report(res["sup"][:k], res["qv"][:k], p, grid.T, lam, C)
                        for k in nested}
    return report


def moment_bound_estimate(model, x0, eps_list, p, n_paths, grid: TimeGrid, seed=0,
                          control: ControlPath | None = None, workers=1) -> EnsembleStats:
    """Estimate ``E sup_t ||X^eps_t||^p`` on an eps ladder with common noise.

    ``flags["uniform"]`` records whether every estimate lies within a factor
    2 of the median over the ladder; ``flags["blowups"]`` counts paths that
    crossed the overflow guard.
    """
    eps_list = [float(e) for e in eps_list]
    if any(not (0 < e <= 1) for e in eps_list):
        raise ValueError("all eps must lie in (0, 1]")

    def functional(traj, dW):
        sup = np.linalg.norm(traj.states, axis=-1).max(axis=-1) ** p
        return {"sup": sup, "blown": traj.blown.astype(float)}

    out = EnsembleStats(n_samples=int(n_paths), seed=int(seed))
    blowups = 0
    for eps in eps_list:
        res = run_ensemble(model, x0, grid, n_paths, seed, eps, functional,
                           control=control, workers=workers)
        nb = int(res["blown"].sum())
        blowups += nb
        vals = res["sup"][res["blown"] == 0]
        out.functionals[f"eps={eps!r}"] = dict(summarize(vals), eps=eps, blowups=nb)
    means = np.array([v["mean"] for v in out.functionals.values()])
    med = float(np.median(means))
    out.flags["median"] = med
    out.flags["uniform"] = bool(np.all(np.isfinite(means)) and np.all(means <= 2 * med)
                                and np.all(means >= 0.5 * med))
    out.flags["blowups"] = blowups
    return out
