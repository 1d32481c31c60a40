"""Config-driven experiment runner.

Config dialect ``monoldp-ini-1`` (``configparser`` INI, no interpolation)::

    [run]
    experiment = inequality-suite   ; optional when given on the command line
    seed = 0                        ; required unless --seed is passed
    out = results                   ; optional, --out overrides
    workers = 1

    [model]
    id = heat                       ; heat | hyperbolic | linear
    lambda_dw = 0.25                ; any keyword of the catalog factory
    sigma = 1.0, 0.5                ; sequences are comma separated
    M_scale = 1.0                   ; multiply the declared M (corruption tests)

    [grid]
    T = 1.0
    n_steps = 1000

    [experiment]
    ...                             ; per-experiment keys, see DEFAULTS

``x0`` is ``default`` (the catalog reference state) or a comma-separated
list of leading coefficients.  Exit status: 0 all checks passed, 1 usage or
config error, 2 a verification check failed.
"""
from __future__ import annotations

import argparse
import configparser
import inspect
import math
import sys
import time

import numpy as np

from . import __version__
from .models import MODEL_CATALOG, default_initial_state, verify_hypotheses
from .rate import (EndpointBall, OptimizerOptions, RateProblem, minimize_rate,
                   rate_closed_form_linear)
from .report import Table, emit_report, write_manifest
from .simulate import (burkholder_ensemble, ito_ensemble, moment_bound_estimate, sample_noise,
                       simulate_mild, summarize, run_ensemble)
from .skeleton import ControlPath, energy_inequality_check, integrate, solve_skeleton, \
    solve_skeleton_yosida
from .spectral import TimeGrid
from .verify import ldp_scaling_experiment

__all__ = ["ConfigError", "RunConfig", "load_config", "run_config", "inequality_suite", "main",
           "EXPERIMENTS", "DIALECT"]

DIALECT = "monoldp-ini-1"

DEFAULTS = {
    "simulate": dict(eps=0.3, n_paths=1, x0="default"),
    "skeleton": dict(u="0", yosida_k="none", x0="default"),
    "rate": dict(x0="default", target_shift=0.4, shift_mode=0, radius=0.1, n_restarts=3),
    "verify-ldp": dict(x0="default", target_shift=0.4, shift_mode=0, radius=0.1,
                       eps_list="0.5, 0.3, 0.2, 0.1", n_paths=10000, method="importance",
                       tolerance=0.15, n_restarts=3),
    "check-hypotheses": dict(n_samples=10000, radius=10.0, tol=1e-6),
    "inequality-suite": dict(x0="default", eps=0.3, n_paths=1000, energy_samples=100,
                             burkholder_eps=1.0, burkholder_paths=2000, p=1,
                             moment_eps="0.1, 0.5, 1.0", moment_paths=1000, moment_p=2,
                             hypothesis_samples=10000, radius=10.0),
}
EXPERIMENTS = tuple(DEFAULTS)


class ConfigError(ValueError):
    """Malformed or inconsistent run configuration."""


class RunConfig:
    """Parsed configuration: model, grid, experiment parameters, seed, output dir."""

    def __init__(self, text, experiment=None, seed=None, out=None, workers=None):
        cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
        cp.optionxform = str
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"malformed config: {exc}") from exc
        self.text = text
        run = dict(cp["run"]) if cp.has_section("run") else {}
        self.experiment = experiment or run.get("experiment")
        if self.experiment is None:
            raise ConfigError("no experiment given (command line or [run] experiment)")
        if self.experiment not in DEFAULTS:
            raise ConfigError(f"unknown experiment id {self.experiment!r}; "
                              f"expected one of {', '.join(EXPERIMENTS)}")
        raw_seed = seed if seed is not None else run.get("seed")
        if raw_seed is None:
            raise ConfigError("seed missing: set [run] seed or pass --seed")
        self.seed = _to_int(raw_seed, "run", "seed")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")
        self.out = out or run.get("out") or "results"
        self.workers = _to_int(workers if workers is not None else run.get("workers", "1"),
                               "run", "workers")
        if not cp.has_section("model"):
            raise ConfigError("missing [model] section")
        self.model_section = dict(cp["model"])
        self.grid = self._grid(dict(cp["grid"]) if cp.has_section("grid") else {})
        params = dict(DEFAULTS[self.experiment])
        given = dict(cp["experiment"]) if cp.has_section("experiment") else {}
        unknown = set(given) - set(params)
        if unknown:
            raise ConfigError(f"unknown [experiment] keys for {self.experiment}: {sorted(unknown)}")
        for k, v in given.items():
            params[k] = _coerce(v, params[k], "experiment", k)
        self.params = params
        self.model = self._model()

    def _grid(self, sec):
        try:
            T = float(sec.get("T", 1.0))
            n = int(sec.get("n_steps", 1000))
        except ValueError as exc:
            raise ConfigError(f"[grid]: {exc}") from exc
        if not (T > 0 and n > 0):
            raise ConfigError("[grid] needs T > 0 and n_steps > 0")
        return TimeGrid(T, n)

    def _model(self):
        sec = dict(self.model_section)
        mid = sec.pop("id", None)
        if mid not in MODEL_CATALOG:
            raise ConfigError(f"unknown model id {mid!r}; expected one of {sorted(MODEL_CATALOG)}")
        scale = _coerce(sec.pop("M_scale", "1.0"), 1.0, "model", "M_scale")
        factory = MODEL_CATALOG[mid]
        sig = inspect.signature(factory).parameters
        kwargs = {}
        for k, v in sec.items():
            if k not in sig or k in ("basis", "drift"):
                raise ConfigError(f"unknown [model] key {k!r} for model {mid!r}")
            kwargs[k] = _coerce(v, sig[k].default, "model", k)
        try:
            model = factory(**kwargs)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[model] {mid}: {exc}") from exc
        if scale != 1.0:
            model = model.with_constants(M=model.M * scale)
        return model

    def echo(self):
        return dict(experiment=self.experiment, seed=self.seed, workers=self.workers,
                    model=self.model_section, grid=dict(T=self.grid.T, n_steps=self.grid.n_steps),
                    params={k: _plain(v) for k, v in self.params.items()}, text=self.text)

    def x0(self):
        spec = self.params.get("x0", "default")
        if spec == "default":
            return default_initial_state(self.model.basis)
        vals = _floats(spec, "experiment", "x0")
        if len(vals) > self.model.dim:
            raise ConfigError(f"x0 has {len(vals)} entries, model dimension is {self.model.dim}")
        x0 = np.zeros(self.model.dim)
        x0[: len(vals)] = vals
        return x0


def _plain(v):
    return list(v) if isinstance(v, tuple) else v


def _to_int(v, sec, key):
    try:
        return int(v)
    except (TypeError, ValueError):
        raise ConfigError(f"[{sec}] {key}: expected an integer, got {v!r}") from None


def _floats(v, sec, key):
    try:
        return [float(s) for s in str(v).split(",") if s.strip()]
    except ValueError:
        raise ConfigError(f"[{sec}] {key}: expected comma-separated numbers, got {v!r}") from None


def _coerce(v, default, sec, key):
    if not isinstance(v, str):
        return v
    if isinstance(default, bool):
        if v.lower() not in ("true", "false"):
            raise ConfigError(f"[{sec}] {key}: expected true/false, got {v!r}")
        return v.lower() == "true"
    if isinstance(default, int):
        return _to_int(v, sec, key)
    if isinstance(default, float):
        vals = _floats(v, sec, key)
        if len(vals) != 1:
            raise ConfigError(f"[{sec}] {key}: expected one number, got {v!r}")
        return vals[0]
    if isinstance(default, tuple):
        return tuple(_floats(v, sec, key))
    return v.strip()


def load_config(path, **overrides) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc.strerror}") from exc
    return RunConfig(text, **overrides)


# experiments ---------------------------------------------------------------------------

def _trajectory_table(name, traj):
    d = traj.states.shape[-1]
    table = Table(name, ["t"] + [f"coeff_{i}" for i in range(d)])
    for t, row in zip(traj.grid.times, traj.states):
        table.add(t=float(t), **{f"coeff_{i}": float(v) for i, v in enumerate(row)})
    return table


def _target(cfg, x0):
    p = cfg.params
    free = solve_skeleton(cfg.model, x0, ControlPath.zeros(cfg.grid, cfg.model.m_noise)).final
    center = free.copy()
    mode = int(p["shift_mode"])
    if not 0 <= mode < cfg.model.dim:
        raise ConfigError(f"shift_mode {mode} outside 0..{cfg.model.dim - 1}")
    center[mode] += p["target_shift"]
    return EndpointBall(center, p["radius"]), mode


def _closed_form(cfg, x0, event: EndpointBall, mode):
    try:
        near = event.center.copy()
        near[mode] -= math.copysign(event.radius, cfg.params["target_shift"])
        if event.radius >= abs(cfg.params["target_shift"]):
            return 0.0
        return rate_closed_form_linear(cfg.model, x0, near, cfg.grid)
    except ValueError:
        return math.nan


def _run_simulate(cfg):
    p = cfg.params
    x0 = cfg.x0()
    noise = sample_noise(cfg.grid, cfg.model.m_noise, cfg.seed)
    tables = [_trajectory_table("trajectory", simulate_mild(cfg.model, x0, p["eps"], noise))]
    if p["n_paths"] > 1:
        def functional(traj, dW):
            return {"final_norm2": np.sum(traj.final ** 2, axis=-1), "sup_norm": traj.sup_norm()}
        res = run_ensemble(cfg.model, x0, cfg.grid, p["n_paths"], cfg.seed, p["eps"], functional,
                           workers=cfg.workers)
        t = Table("ensemble", ["functional", "n", "mean", "var", "ci_lo", "ci_hi", "seed"])
        for name, vals in res.items():
            s = summarize(vals)
            t.add(functional=name, n=s["n"], mean=s["mean"], var=s["var"], ci_lo=s["ci_lo"],
                  ci_hi=s["ci_hi"], seed=cfg.seed)
        tables.append(t)
    return tables, True


def _run_skeleton(cfg):
    p = cfg.params
    x0 = cfg.x0()
    u = _floats(p["u"], "experiment", "u")
    if len(u) == 1:
        u = u * cfg.model.m_noise
    if len(u) != cfg.model.m_noise:
        raise ConfigError(f"u has {len(u)} entries, model has m_noise={cfg.model.m_noise}")
    control = ControlPath.constant(cfg.grid, u)
    if p["yosida_k"] == "none":
        traj = solve_skeleton(cfg.model, x0, control)
    else:
        k = _floats(p["yosida_k"], "experiment", "yosida_k")
        if len(k) != 1:
            raise ConfigError("yosida_k must be one number or 'none'")
        traj = solve_skeleton_yosida(cfg.model, k[0], x0, control)
    return [_trajectory_table("trajectory", traj)], True


def _rate_options(cfg):
    return OptimizerOptions(n_restarts=int(cfg.params["n_restarts"]), workers=cfg.workers)


def _run_rate(cfg):
    x0 = cfg.x0()
    event, mode = _target(cfg, x0)
    sol = minimize_rate(RateProblem(cfg.model, x0, event, cfg.grid, options=_rate_options(cfg),
                                    seed=cfg.seed))
    t = Table("rate", ["I_value", "residual", "grad_norm", "iterations", "converged",
                       "restart_index", "closed_form"])
    t.add(I_value=sol.I_value, residual=sol.residual, grad_norm=sol.grad_norm,
          iterations=sol.iterations, converged=sol.converged, restart_index=sol.restart_index,
          closed_form=_closed_form(cfg, x0, event, mode))
    ctl = Table("control", ["t"] + [f"u_{i}" for i in range(cfg.model.m_noise)])
    for t0, row in zip(cfg.grid.times[:-1], sol.u_star.values):
        ctl.add(t=float(t0), **{f"u_{i}": float(v) for i, v in enumerate(row)})
    return [t, ctl], True


LDP_COLUMNS = ["eps", "log_p_hat", "ci_lo", "ci_hi", "eps2_logp", "minus_I", "method", "ess"]


def _run_verify_ldp(cfg):
    p = cfg.params
    x0 = cfg.x0()
    event, mode = _target(cfg, x0)
    sol = minimize_rate(RateProblem(cfg.model, x0, event, cfg.grid, options=_rate_options(cfg),
                                    seed=cfg.seed))
    est = ldp_scaling_experiment(cfg.model, event, _floats(p["eps_list"], "experiment", "eps_list"),
                                 p["n_paths"], seed=cfg.seed, x0=x0, grid=cfg.grid, rate=sol,
                                 method=p["method"], workers=cfg.workers)
    ldp = Table("ldp", LDP_COLUMNS, list(est.rows()))
    cf = _closed_form(cfg, x0, event, mode)
    ref = -cf if math.isfinite(cf) else est.minus_I
    rel = abs(est.intercept - ref) / abs(ref) if ref != 0 else abs(est.intercept)
    ok = bool(rel <= p["tolerance"] and not est.flags)
    summary = Table("ldp_summary", ["intercept", "slope", "minus_I", "minus_I_closed_form",
                                    "relative_error", "tolerance", "monotone", "flags", "pass"])
    summary.add(intercept=est.intercept, slope=est.slope, minus_I=est.minus_I,
                minus_I_closed_form=-cf if math.isfinite(cf) else math.nan, relative_error=rel,
                tolerance=p["tolerance"], monotone=est.monotone, flags=";".join(est.flags),
                **{"pass": ok})
    return [ldp, summary], ok


HYP_COLUMNS = ["clause", "empirical", "declared", "excess", "pass"]


def _hypothesis_rows(cfg, n_samples, radius, tol=1e-6):
    rep = verify_hypotheses(cfg.model, n_samples=n_samples, radius=radius, seed=cfg.seed, tol=tol)
    t = Table("hypotheses", HYP_COLUMNS)
    for k, c in rep.clauses.items():
        t.add(clause=k, empirical=c["empirical"], declared=c["declared"], excess=c["excess"],
              **{"pass": c["passed"]})
    return rep, t


def _run_check_hypotheses(cfg):
    p = cfg.params
    rep, t = _hypothesis_rows(cfg, p["n_samples"], p["radius"], p["tol"])
    return [t], rep.passed


INEQ_COLUMNS = ["check_id", "n_samples", "margin", "tolerance", "pass"]


def inequality_suite(cfg: RunConfig):
    """Energy, Ito, Burkholder and moment checks plus the hypothesis sampler.

    One row per check: ``margin`` is the smallest slack of the checked
    inequality (negative on failure), ``tolerance`` the allowance used.
    """
    p = cfg.params
    model, grid, seed = cfg.model, cfg.grid, cfg.seed
    x0 = cfg.x0()
    t = Table("inequality", INEQ_COLUMNS)

    # energy inequality along the uncontrolled skeleton, integrand a = f(z)
    traj, drift, _ = integrate(model, x0, grid, return_inputs=True)
    rep = energy_inequality_check(model.basis, x0, drift / grid.dt, grid)
    t.add(check_id="energy_skeleton", n_samples=1, margin=rep.margin, tolerance=float(rep.tol.max()),
          **{"pass": rep.n_violations == 0})
    if p["energy_samples"] > 0:
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0xE,)))
        n = p["energy_samples"]
        xs = rng.standard_normal((n, model.dim))
        a = rng.standard_normal((n, grid.n_steps, model.dim)) * 3.0
        rep = energy_inequality_check(model.basis, xs, a, grid)
        t.add(check_id="energy_random", n_samples=n, margin=rep.margin,
              tolerance=float(rep.tol.max()), **{"pass": rep.n_violations == 0})

    ito = ito_ensemble(model, x0, p["eps"], grid, p["n_paths"], seed, workers=cfg.workers)
    t.add(check_id="ito", n_samples=ito["n_paths"], margin=ito["margin"],
          tolerance=ito["tolerance"], **{"pass": ito["fraction"] <= 0.01})

    nb = p["burkholder_paths"]
    bk = burkholder_ensemble(model, x0, p["burkholder_eps"], grid, nb, seed, p=p["p"],
                             workers=cfg.workers, nested=(nb // 2,))
    t.add(check_id="burkholder", n_samples=nb, margin=bk["bound"] * bk["rhs"] - bk["lhs"],
          tolerance=bk["bound"], **{"pass": bk["passed"]})
    half = bk["nested"][nb // 2]
    change = abs(bk["ratio"] - half["ratio"])
    t.add(check_id="burkholder_doubling", n_samples=nb, margin=0.1 * half["ratio"] - change,
          tolerance=0.1, **{"pass": bool(change <= 0.1 * half["ratio"])})

    eps_list = _floats(p["moment_eps"], "experiment", "moment_eps")
    mb = moment_bound_estimate(model, x0, eps_list, p["moment_p"], p["moment_paths"], grid,
                               seed=seed, workers=cfg.workers)
    means = [v["mean"] for v in mb.functionals.values()]
    med = mb.flags["median"]
    margin = min(2 * med - max(means), min(means) - 0.5 * med)
    t.add(check_id="moment_uniform", n_samples=p["moment_paths"], margin=margin, tolerance=2.0,
          **{"pass": mb.flags["uniform"] and mb.flags["blowups"] == 0})

    hrep, _ = _hypothesis_rows(cfg, p["hypothesis_samples"], p["radius"])
    excess = max(c["excess"] for c in hrep.clauses.values())
    slack = min(c["declared"] - c["empirical"] for c in hrep.clauses.values())
    t.add(check_id="check_hypotheses", n_samples=p["hypothesis_samples"],
          margin=slack if hrep.passed else -excess, tolerance=hrep.tolerance,
          **{"pass": hrep.passed})
    return t


def _run_inequality_suite(cfg):
    t = inequality_suite(cfg)
    return [t], all(r["pass"] for r in t.rows)


RUNNERS = {
    "simulate": _run_simulate,
    "skeleton": _run_skeleton,
    "rate": _run_rate,
    "verify-ldp": _run_verify_ldp,
    "check-hypotheses": _run_check_hypotheses,
    "inequality-suite": _run_inequality_suite,
}


def run_config(path_or_cfg, **overrides):
    """Run one configured experiment; returns ``(manifest, passed)``."""
    cfg = path_or_cfg if isinstance(path_or_cfg, RunConfig) else load_config(path_or_cfg, **overrides)
    start = time.perf_counter()
    tables, passed = RUNNERS[cfg.experiment](cfg)
    digests = emit_report(tables, cfg.out)
    manifest = write_manifest(cfg.out, cfg.echo(), __version__, time.perf_counter() - start,
                              digests, DIALECT)
    return manifest, bool(passed)


# command line --------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def build_parser():
    parser = _Parser(prog="monoldp", description="Run a configured experiment.")
    parser.add_argument("--version", action="version", version=f"monoldp {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in EXPERIMENTS:
        sp = sub.add_parser(name, help=f"run the {name} experiment")
        sp.add_argument("--config", required=True, help="path to the INI run config")
        sp.add_argument("--seed", type=int, default=None, help="override [run] seed")
        sp.add_argument("--out", default=None, help="output directory (overrides [run] out)")
        sp.add_argument("--workers", type=int, default=None, help="worker threads")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, experiment=args.command, seed=args.seed, out=args.out,
                          workers=args.workers)
        manifest, passed = run_config(cfg)
    except ConfigError as exc:
        print(f"monoldp: config error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"monoldp: output error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"monoldp: invalid experiment parameters: {exc}", file=sys.stderr)
        return 1
    for fname, digest in manifest["outputs"].items():
        print(f"{fname}  sha256={digest}")
    print("PASS" if passed else "FAIL: a verification check failed")
    return 0 if passed else 2


if __name__ == "__main__":
    sys.exit(main())
