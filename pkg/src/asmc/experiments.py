"""Config-driven experiments producing deterministic CSV tables.

Every experiment takes a flat configuration mapping and returns a
:class:`Table`.  Replicates use seeds derived from the run seed and the
replicate index, so tables do not depend on the thread count.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import streams
from .annealing import AnnealingSchedule, geometric_schedule, plan_levels, plan_local
from .baselines import run_lmc, run_rejection
from .diagnostics import (
    compute_clbv,
    compute_sc,
    constants_bundle,
    cr_bound,
    cr_empirical,
    cr_separable_check,
    mc_error,
    reference_halfplane_mass,
    run_replicates,
    summarize,
    well_masses,
)
from .driver import LangevinKernel, estimate, run_asmc, run_asmc_counts
from .errors import ConfigError
from .kernels import FiniteLocalModel, arrhenius_chi
from .targets import (
    DoubleWellTorusEnergy,
    GaussianMixtureEnergy,
    energy_from_config,
    isotropic_two_well_mixture,
    normalized_energy,
)

SCHEMA_VERSION = 1

FIG3_TARGET = {
    "weights": [0.7, 0.3],
    "means": [[-1.0, 0.0], [1.0, 0.0]],
    "variances": [[0.09, 0.04], [0.02, 0.18]],
}

_FIG3 = dict(FIG3_TARGET, eta1=100.0, eta=1.0, M=5, N=10000, steps=500, dt=0.001, trace_every=50,
             lmc=True)

DEFAULTS = {
    "fig3_2d": dict(_FIG3, replicates=100),
    "sweep_n": dict(_FIG3, N_list=[100, 1000, 10000], replicates=50, lmc=False),
    "sweep_mt": {
        "dimension": 10, "weights": [0.2, 0.8], "variances": [1 / 16, 1 / 25], "eta1": 10.0,
        "eta": 1.0, "N": 2000, "budget_steps": 1000, "M_list": [1, 2, 5, 10, 20, 50, 100, 250, 1000],
        "dt": 0.002, "replicates": 20,
    },
    "local_model_theorem": {
        "values": [0.0, 0.3, 1.0, 0.0, 0.3, 1.0], "membership": [0, 0, 0, 1, 1, 1],
        "chi_A": 1.0, "chi_gamma": 1.0, "eta1": 1.0, "eta": 0.1, "nu": 1.0, "delta": 0.1,
        "h_domain": 0, "init_state": 0, "replicates": 200,
    },
    "constants_report": {
        "target": {"kind": "torus_double_well", "dimension": 2, "depth": 0.25, "tilt": 0.0,
                   "transverse": 0.5},
        "eta1": 1.0, "eta": 0.25, "nu": 1.0, "delta": 0.1, "alpha": 0.5,
        "sc_grid": [0.25, 0.5, 1.0, 2.0, 4.0], "membership": None,
        "separable_marginal": {"kind": "gaussian_mixture", "weights": [0.5, 0.5],
                               "means": [[-1.0], [1.0]], "variances": [[0.05], [0.05]]},
        "separable_variance": 0.25, "separable_dims": [2, 10, 50],
    },
    "baseline_compare": dict(_FIG3, replicates=20, rejection_budget=10000),
}

COMMON_KEYS = {"experiment", "seed", "replicates"}


def resolve_config(name, overrides):
    """Merge ``overrides`` into the defaults of experiment ``name`` (unknown keys are errors)."""
    if name not in DEFAULTS:
        raise ConfigError(f"unknown experiment {name!r}")
    cfg = json.loads(json.dumps(DEFAULTS[name]))
    cfg["experiment"] = name
    cfg.setdefault("seed", 0)
    for k, v in overrides.items():
        if k not in cfg and k not in COMMON_KEYS:
            raise ConfigError(f"unknown key {k!r} for experiment {name!r}")
        cfg[k] = v
    if cfg.get("experiment") != name:
        raise ConfigError(f"config is for experiment {cfg.get('experiment')!r}, not {name!r}")
    seed = cfg["seed"]
    if not isinstance(seed, int) or isinstance(seed, bool) or not 0 <= seed < 2**64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    r = cfg.get("replicates")
    if r is not None and (not isinstance(r, int) or r < 1):
        raise ConfigError("replicates must be a positive integer")
    return cfg


@dataclass
class Table:
    name: str
    columns: tuple
    rows: list = field(default_factory=list)
    config: dict = field(default_factory=dict)

    @property
    def schema(self):
        return f"asmc.{self.name}/v{SCHEMA_VERSION}"

    def add(self, *values):
        if len(values) != len(self.columns):
            raise ValueError("row width does not match the column schema")
        self.rows.append(values)

    def column(self, name):
        i = self.columns.index(name)
        return [r[i] for r in self.rows]


def _mixture(cfg):
    try:
        return GaussianMixtureEnergy(cfg["weights"], cfg["means"], cfg["variances"])
    except ValueError as e:
        raise ConfigError(str(e)) from None


def _schedule(eta1, eta, M):
    try:
        if M == 1:
            return AnnealingSchedule.single(eta)
        return geometric_schedule(eta1, eta, M)
    except ValueError as e:
        raise ConfigError(f"bad schedule (eta1={eta1}, eta={eta}, M={M}): {e}") from None


def _left(x):
    return (x[:, 0] < 0).astype(float)


def _need(cfg, *keys):
    for k in keys:
        if k not in cfg:
            raise ConfigError(f"missing key {k!r}")


# ---------------------------------------------------------------- fig3_2d


def _asmc_trace_run(model, sch, N, steps, dt, every, h):
    def run(seed):
        trace = []
        kernel = LangevinKernel(dt, observe=lambda lvl, st, x: trace.append((lvl, st, float(np.mean(h(x))))),
                                observe_every=every)
        ens, _ = run_asmc(model, sch, N, steps * dt, kernel, seed=seed)
        return estimate(ens, h), trace

    return run


def _lmc_trace_run(model, eta, N, total_steps, dt, every, h):
    def run(seed):
        res = run_lmc(model, eta, N, total_steps, dt, seed, h=h, checkpoint_every=every)
        return float(np.mean(h(res.samples))), res.trace

    return run


def _trace_rows(table, method, results, reference, steps_per_level, M):
    traces = np.array([[v for *_, v in tr] for _, tr in results])
    keys = results[0][1]
    for j, key in enumerate(keys):
        if method == "asmc":
            level, step = key[0], key[1]
            iteration = (level - 1) * steps_per_level + step
        else:
            iteration = key[0]
            level = min(M, 1 + max(iteration - 1, 0) // steps_per_level)
        col = traces[:, j]
        err = col - reference
        q25, q50, q75 = np.quantile(col, [0.25, 0.5, 0.75])
        table.add(method, iteration, level, col.mean(), q25, q50, q75, np.abs(err).mean(),
                  math.sqrt(np.mean(err * err)), reference)


def _replicate_results(run, R, seed, threads):
    values, errors = run_replicates(run, R, seed, threads)
    ok = [v for v in values if v is not None]
    if len(ok) < R:
        bad = next(e for e in errors if e is not None)
        raise bad
    return ok


def cmd_fig3_2d(cfg, threads=1):
    """ASMC and LMC traces of ``pi(x_1 < 0)`` with quantile bands over replicates."""
    _need(cfg, "eta1", "eta", "M", "N", "steps", "dt", "trace_every")
    model = _mixture(cfg)
    reference = reference_halfplane_mass(model, 0, 0.0, cfg["eta"])
    M, steps, dt, every = cfg["M"], cfg["steps"], cfg["dt"], cfg["trace_every"]
    R, seed = cfg["replicates"], cfg["seed"]
    table = Table("fig3_2d", ("method", "iteration", "level", "mean", "q25", "q50", "q75",
                              "mean_abs_error", "rms", "reference"), config=cfg)
    run = _asmc_trace_run(model, _schedule(cfg["eta1"], cfg["eta"], M), cfg["N"], steps, dt, every, _left)
    _trace_rows(table, "asmc", _replicate_results(run, R, seed, threads), reference, steps, M)
    if cfg.get("lmc", True):
        lrun = _lmc_trace_run(model, cfg["eta"], cfg["N"], M * steps, dt, every, _left)
        lseed = streams.replicate_seed(seed, 2**32)
        _trace_rows(table, "lmc", _replicate_results(lrun, R, lseed, threads), reference, steps, M)
    return table


# ---------------------------------------------------------------- sweep_n


def _loglog_slope(ns, ys):
    ns, ys = np.log(np.asarray(ns, float)), np.log(np.asarray(ys, float))
    return float(np.polyfit(ns, ys, 1)[0])


def cmd_sweep_n(cfg, threads=1):
    """Mean absolute error and spread versus ``N``; footer row holds log-log slopes."""
    _need(cfg, "N_list", "eta1", "eta", "M", "steps", "dt")
    model = _mixture(cfg)
    reference = reference_halfplane_mass(model, 0, 0.0, cfg["eta"])
    sch = _schedule(cfg["eta1"], cfg["eta"], cfg["M"])
    T = cfg["steps"] * cfg["dt"]
    table = Table("sweep_n", ("N", "mean_abs_error", "std_error", "rms", "R", "reference"), config=cfg)
    ns = sorted({int(n) for n in cfg["N_list"]})
    for n in ns:
        def run(s, n=n):
            ens, _ = run_asmc(model, sch, n, T, LangevinKernel(cfg["dt"]), seed=s)
            return estimate(ens, _left)

        summ = mc_error(run, reference, cfg["replicates"], streams.replicate_seed(cfg["seed"], n), threads)
        table.add(n, summ.mean_abs_error, summ.std, summ.rms, summ.R, reference)
    if len(ns) >= 2:
        table.add("slope", _loglog_slope(ns, table.column("mean_abs_error")[: len(ns)]),
                  _loglog_slope(ns, table.column("std_error")[: len(ns)]),
                  _loglog_slope(ns, table.column("rms")[: len(ns)]), "", "")
    return table


# ---------------------------------------------------------------- sweep_mt


def cmd_sweep_mt(cfg, threads=1):
    """Error at a fixed total step budget ``M * T`` as the level count varies."""
    _need(cfg, "dimension", "weights", "variances", "budget_steps", "M_list", "N", "dt", "eta1", "eta")
    model = isotropic_two_well_mixture(cfg["dimension"], cfg["weights"], cfg["variances"])
    reference = reference_halfplane_mass(model, 0, 0.0, cfg["eta"])
    budget = int(cfg["budget_steps"])
    table = Table("sweep_mt", ("M", "T_steps", "MT", "mean_abs_error", "bias", "q25", "q50", "q75", "R",
                               "reference"), config=cfg)
    for M in sorted({int(m) for m in cfg["M_list"]}):
        if budget % M:
            raise ConfigError(f"M={M} does not divide budget_steps={budget}")
        steps = budget // M
        sch = _schedule(cfg["eta1"], cfg["eta"], M)

        def run(s, sch=sch, steps=steps):
            ens, _ = run_asmc(model, sch, cfg["N"], steps * cfg["dt"], LangevinKernel(cfg["dt"]), seed=s)
            return estimate(ens, _left)

        summ = mc_error(run, reference, cfg["replicates"], streams.replicate_seed(cfg["seed"], M), threads)
        q = summ.quantiles()
        table.add(M, steps, M * steps, summ.mean_abs_error, summ.mean_error, q[0], q[1], q[2], summ.R,
                  reference)
    return table


# ---------------------------------------------------------------- local_model_theorem


def local_model_setup(cfg):
    """Finite local model, constants bundle and plan for ``cfg``."""
    model = energy_from_config({"kind": "finite", "values": cfg["values"]})
    spec = FiniteLocalModel(model, cfg["membership"], arrhenius_chi(cfg["chi_A"], cfg["chi_gamma"]))
    eta1, eta, nu, delta = cfg["eta1"], cfg["eta"], cfg["nu"], cfg["delta"]
    M = plan_levels(nu, eta, eta1)
    sch = geometric_schedule(eta1, eta, M)
    C_r = cr_empirical(model, sch)
    clbv = compute_clbv(spec.masses, eta, eta1)
    bundle = constants_bundle(spec.J, max(C_r, 1.0), clbv.value)
    plan = plan_local(delta, nu, eta, eta1, bundle, spec.chi(eta1))
    return model, spec, bundle, plan, clbv


def cmd_local_model_theorem(cfg, threads=1):
    """Planned ASMC on a finite local model; RMS error against the exact Gibbs mass."""
    _need(cfg, "values", "membership", "chi_A", "chi_gamma", "eta1", "eta", "nu", "delta", "h_domain")
    try:
        model, spec, bundle, plan, clbv = local_model_setup(cfg)
    except ValueError as e:
        raise ConfigError(str(e)) from None
    h = (spec.labels == cfg["h_domain"]).astype(float)
    h_osc = float(h.max() - h.min())
    reference = float(np.dot(model.gibbs(cfg["eta"]), h))
    sch = plan.schedule()

    def run(s):
        return run_asmc_counts(spec, sch, plan.N, plan.T, cfg.get("init_state", 0), s).estimate(h)

    summ = mc_error(run, reference, cfg["replicates"], cfg["seed"], threads)
    table = Table("local_model_theorem", (
        "M", "N", "T", "C_r", "C_LBV", "C_beta", "C_T", "C_N", "rms", "mean_abs_error", "delta", "h_osc",
        "reference", "R", "within_bound"), config=cfg)
    table.add(plan.M, plan.N, plan.T, bundle.C_r, bundle.C_LBV, bundle.C_beta, bundle.C_T, bundle.C_N,
              summ.rms, summ.mean_abs_error, plan.delta, h_osc, reference, summ.R,
              int(summ.rms <= plan.delta * h_osc))
    return table


# ---------------------------------------------------------------- constants_report


def cmd_constants_report(cfg, threads=1):
    """Constants, planner outputs and the separable dimension check as key/value rows."""
    _need(cfg, "target", "eta1", "eta", "nu", "delta")
    model = energy_from_config(cfg["target"])
    eta1, eta, nu = cfg["eta1"], cfg["eta"], cfg["nu"]
    table = Table("constants_report", ("section", "name", "value", "verification"), config=cfg)
    u0 = normalized_energy(model, eta1)
    for c in cfg.get("sc_grid", []):
        table.add("s_c", f"c={c!r}", compute_sc(u0, c), "")
    M = plan_levels(nu, eta, eta1)
    sch = geometric_schedule(eta1, eta, M)
    bound = cr_bound(u0, eta1 * sch.inverse_step())
    emp = cr_empirical(model, sch)
    table.add("C_r", "bound", bound.value, f"argmin_c={bound.argmin_c!r}")
    table.add("C_r", "empirical", emp, f"bound_minus_empirical={bound.value - emp!r}")
    if model.domain.kind == "finite":
        if cfg.get("membership") is None:
            raise ConfigError("finite targets need a membership list")
        spec = FiniteLocalModel(model, cfg["membership"], arrhenius_chi())
        masses, J = spec.masses, spec.J
    else:
        masses, J = (lambda e: well_masses(model, e)), 2
    clbv = compute_clbv(masses, eta, eta1)
    table.add("C_LBV", "value", clbv.value, f"coarse={clbv.coarse!r};fine={clbv.fine!r};flagged={int(clbv.flagged)}")
    bundle = constants_bundle(J, max(bound.value, 1.0), clbv.value)
    rt, rn = bundle.identity_residuals()
    table.add("constants", "C_beta", bundle.C_beta, "")
    table.add("constants", "C_T", bundle.C_T, f"identity_rel_residual={rt!r}")
    table.add("constants", "C_N", bundle.C_N, f"identity_rel_residual={rn!r}")
    table.add("plan", "M", M, "")
    table.add("plan", "N", math.ceil(bundle.C_N * M * M / cfg["delta"] ** 2), "")
    if isinstance(model, DoubleWellTorusEnergy):
        table.add("plan", "gamma_hat_r", model.gamma_hat_r(), "")
    marg_cfg = cfg.get("separable_marginal")
    if marg_cfg:
        marg = normalized_energy(energy_from_config(marg_cfg), 1.0)
        var = cfg["separable_variance"]
        sep = cr_separable_check(marg, (1.0 / (2 * var), 2.0, 0.0, 0.0), cfg["separable_dims"])
        for row in sep.rows:
            table.add("separable", f"d={row.d}", row.bound,
                      f"marginal={row.marginal_factor!r};convex={row.convex_factor!r};nu={row.nu!r}")
        table.add("separable", "spread", sep.spread, f"skipped={sep.skipped}")
    return table


# ---------------------------------------------------------------- baseline_compare


def cmd_baseline_compare(cfg, threads=1):
    """Final errors of ASMC, LMC and rejection sampling at matched particle budgets."""
    model = _mixture(cfg)
    eta, eta1 = cfg["eta"], cfg["eta1"]
    reference = reference_halfplane_mass(model, 0, 0.0, eta)
    sch = _schedule(eta1, eta, cfg["M"])
    total = cfg["M"] * cfg["steps"]
    seed, R = cfg["seed"], cfg["replicates"]
    table = Table("baseline_compare", ("method", "budget", "mean_abs_error", "rms", "mean", "R",
                                       "acceptance_rate", "reference"), config=cfg)

    def asmc(s):
        ens, _ = run_asmc(model, sch, cfg["N"], cfg["steps"] * cfg["dt"], LangevinKernel(cfg["dt"]), seed=s)
        return estimate(ens, _left)

    def lmc(s):
        return float(np.mean(_left(run_lmc(model, eta, cfg["N"], total, cfg["dt"], s).samples)))

    for i, (name, fn) in enumerate((("asmc", asmc), ("lmc", lmc))):
        summ = mc_error(fn, reference, R, streams.replicate_seed(seed, i), threads)
        table.add(name, cfg["N"] * total, summ.mean_abs_error, summ.rms, summ.mean, summ.R, "", reference)
    rates = []

    def rej(s):
        res = run_rejection(model, eta, eta1, lambda n, rng: model.sample(n, rng, eta1),
                            cfg["rejection_budget"], s)
        rates.append(res.acceptance_rate)
        return float(np.mean(_left(res.samples))) if res.n_accepted else float("nan")

    vals, _ = run_replicates(rej, R, streams.replicate_seed(seed, 2), 1)
    vals = [v for v in vals if v is not None and not math.isnan(v)]
    rate = float(np.mean(rates)) if rates else 0.0
    if len(vals) >= 2:
        summ = summarize(vals, reference)
        table.add("rejection", cfg["rejection_budget"], summ.mean_abs_error, summ.rms, summ.mean, summ.R,
                  rate, reference)
    else:
        table.add("rejection", cfg["rejection_budget"], "", "", "", len(vals), rate, reference)
    return table


COMMANDS = {
    "fig3_2d": cmd_fig3_2d,
    "sweep_n": cmd_sweep_n,
    "sweep_mt": cmd_sweep_mt,
    "local_model_theorem": cmd_local_model_theorem,
    "constants_report": cmd_constants_report,
    "baseline_compare": cmd_baseline_compare,
}


def run_experiment(name, overrides=None, threads=1):
    cfg = resolve_config(name, overrides or {})
    return COMMANDS[name](cfg, threads=threads)
