"""Annealed sequential Monte Carlo: propagate, reweight and resample down a temperature ladder."""

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from . import streams
from .annealing import AnnealingSchedule
from .errors import DegenerateWeightsError
from .kernels import FiniteLocalModel, langevin_run, local_run, step_count
from .resampler import WeightVector, build_alias, effective_sample_size, inter_level_log_weights
from .targets import estimate_inf

REPORT_FIELDS = ("k", "eta", "ess", "max_log_weight", "mass_fractions", "wall_time")


@dataclass
class Ensemble:
    level: int
    positions: np.ndarray
    seed: int
    log_weights: np.ndarray = None

    @property
    def N(self):
        return self.positions.shape[0]

    def probabilities(self):
        if self.log_weights is None:
            return np.full(self.N, 1.0 / self.N)
        return WeightVector.from_log(self.log_weights).probabilities


@dataclass
class RunReport:
    rows: list = field(default_factory=list)
    estimates: dict = field(default_factory=dict)
    resample_count: int = 0
    kernel_calls: int = 0
    wall_time: float = 0.0

    def add(self, row, path=None):
        self.rows.append(row)
        if path is not None:
            mode = "w" if len(self.rows) == 1 else "a"
            with open(path, mode, newline="") as fh:
                w = csv.writer(fh)
                if mode == "w":
                    w.writerow(REPORT_FIELDS)
                w.writerow([
                    row["k"], repr(row["eta"]), repr(row["ess"]), repr(row["max_log_weight"]),
                    " ".join(repr(float(m)) for m in row["mass_fractions"]), repr(row["wall_time"]),
                ])


class LangevinKernel:
    """Euler-Maruyama propagation for continuous time ``T`` with step ``dt``.

    Noise for level ``k`` comes from per-block streams keyed by
    ``(seed, level)``; ``observe(level, step, x)`` taps the trajectory every
    ``observe_every`` steps.
    """

    def __init__(self, dt, block_size=1024, observe=None, observe_every=None):
        if not 0 < dt <= 0.1:
            raise ValueError("dt must lie in (0, 0.1]")
        self.dt = dt
        self.block_size = block_size
        self.observe = observe
        self.observe_every = observe_every

    def steps(self, T):
        return step_count(T, self.dt)

    def propagate(self, x, model, eps, T, seed, level):
        rng = streams.ParticleStreams(seed, level, x.shape[0], self.block_size)
        obs = None
        if self.observe is not None:
            def obs(step, y):
                self.observe(level, step, y)
        return langevin_run(x, model, eps, T, self.dt, rng, level=level, observe=obs,
                            observe_every=self.observe_every)


class LocalKernel:
    """``T`` steps of the local mixing kernel (``T`` is a step count)."""

    def __init__(self, spec):
        self.spec = spec

    def propagate(self, x, model, eps, T, seed, level):
        return local_run(x, eps, self.spec, int(T), streams.stream(seed, streams.PROPAGATE, level))


def _initial_positions(model, init, N, seed):
    d = model.dimension
    if init is None:
        _, argmin, _ = estimate_inf(model)
        init = argmin
    if callable(init):
        x = np.asarray(init(N, streams.stream(seed, streams.INIT)), dtype=float)
    else:
        x = np.asarray(init, dtype=float)
        if x.ndim <= 1:
            x = np.broadcast_to(x.reshape(1, d), (N, d))
    x = np.array(x.reshape(N, d), dtype=float)
    return model.domain.wrap(x)


def _fractions(x, classifier, J):
    if classifier is None:
        return np.ones(1)
    lab = np.asarray(classifier(x)).ravel()
    return np.bincount(lab, minlength=J or 1) / lab.size


def run_asmc(model, schedule, N, T, kernel, init=None, seed=0, classifier=None, J=None,
             report_path=None, resample_threshold=None, test_functions=None):
    """Run annealed SMC down ``schedule`` and return ``(Ensemble, RunReport)``.

    For ``k = 1..M-1``: propagate for ``T`` at ``eta_k``, weight by
    ``exp(-(1/eta_{k+1} - 1/eta_k) U)`` and resample multinomially; then
    propagate at ``eta_M``.  ``init`` is a point, an ``(N, d)`` array, a
    sampler ``init(N, rng)``, or ``None`` for the global minimizer of ``U``.
    With ``resample_threshold`` set, resampling happens only when ESS/N
    falls below it and weights are carried otherwise.
    """
    if not isinstance(schedule, AnnealingSchedule):
        schedule = AnnealingSchedule(tuple(schedule))
    N = int(N)
    if N < 1 or (schedule.M >= 2 and N < 2):
        raise ValueError("need N >= 2 when M >= 2")
    t0 = time.perf_counter()
    x = _initial_positions(model, init, N, seed)
    report = RunReport()
    logw = None
    temps = schedule.temperatures
    for k, eta_k in enumerate(temps, start=1):
        x = kernel.propagate(x, model, eta_k, T, seed, k)
        report.kernel_calls += 1
        row = {"k": k, "eta": eta_k, "ess": float("nan"), "max_log_weight": float("nan")}
        if k < schedule.M:
            inc = inter_level_log_weights(x, model, eta_k, temps[k], level=k)
            lw = inc.log_weights if logw is None else logw + inc.log_weights
            w = WeightVector.from_log(lw, level=k)
            ess = effective_sample_size(w)
            row["ess"], row["max_log_weight"] = ess, inc.max_log_weight
            if resample_threshold is None or ess < resample_threshold * N:
                idx = build_alias(w.probabilities).sample(N, streams.stream(seed, streams.RESAMPLE, k))
                x = x[idx]
                logw = None
                report.resample_count += 1
            else:
                logw = lw - lw.max()
        row["mass_fractions"] = _fractions(x, classifier, J)
        row["wall_time"] = time.perf_counter() - t0
        report.add(row, report_path)
    ens = Ensemble(schedule.M, x, seed, logw)
    for name, h in (test_functions or {}).items():
        report.estimates[name] = estimate(ens, h)
    report.wall_time = time.perf_counter() - t0
    return ens, report


def estimate(ensemble, h):
    """Weighted (uniform after resampling) average of ``h`` over the ensemble."""
    x = ensemble.positions if isinstance(ensemble, Ensemble) else np.asarray(ensemble)
    vals = np.asarray(h(x), dtype=float).ravel()
    if isinstance(ensemble, Ensemble) and ensemble.log_weights is not None:
        return float(np.dot(ensemble.probabilities(), vals))
    return float(vals.mean())


@dataclass
class CountsResult:
    counts: np.ndarray
    rows: list

    @property
    def N(self):
        return int(self.counts.sum())

    def estimate(self, h_values):
        return float(np.dot(self.counts, h_values) / self.counts.sum())


def _local_counts_step(counts, spec, eps, rng):
    chi = spec.chi(eps)
    stay = rng.binomial(counts, chi)
    out = rng.multinomial(int((counts - stay).sum()), spec.model.gibbs(eps))
    for j in range(spec.J):
        s = spec._states[j]
        n_j = int(stay[s].sum())
        if n_j:
            out[s] += rng.multinomial(n_j, spec.conditional_probs(j, eps))
    return out


def run_asmc_counts(spec, schedule, N, T, init_state=0, seed=0):
    """ASMC with the local kernel on a finite space, tracking occupation counts.

    Equal in law to :func:`run_asmc` with :class:`LocalKernel` (particles are
    exchangeable), but costs ``O(|X|)`` per step instead of ``O(N)``, which
    makes planner-sized ensembles affordable.
    """
    if not isinstance(spec, FiniteLocalModel):
        raise TypeError("run_asmc_counts needs a FiniteLocalModel")
    if not isinstance(schedule, AnnealingSchedule):
        schedule = AnnealingSchedule(tuple(schedule))
    values = spec.model.values
    counts = np.zeros(values.size, dtype=np.int64)
    counts[init_state] = int(N)
    temps = schedule.temperatures
    rows = []
    for k, eta_k in enumerate(temps, start=1):
        rng = streams.stream(seed, streams.PROPAGATE, k)
        for _ in range(int(T)):
            counts = _local_counts_step(counts, spec, eta_k, rng)
        if k < schedule.M:
            lw = -(1.0 / temps[k] - 1.0 / eta_k) * values
            lw = np.where(counts > 0, lw, -np.inf)
            if not np.isfinite(lw).any():
                raise DegenerateWeightsError(f"all weights vanished at level {k}", k)
            p = counts * np.exp(lw - lw.max())
            p /= p.sum()
            counts = streams.stream(seed, streams.RESAMPLE, k).multinomial(int(N), p)
        rows.append({"k": k, "eta": eta_k,
                     "mass_fractions": np.bincount(spec.labels, weights=counts, minlength=spec.J) / N})
    return CountsResult(counts, rows)
