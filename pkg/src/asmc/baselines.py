"""Reference samplers: plain Langevin Monte Carlo and dominated rejection sampling."""

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import streams
from .driver import _initial_positions
from .kernels import langevin_run
from .targets import estimate_inf


@dataclass
class BaselineConfig:
    kind: str
    N: int
    budget: int
    dt: float = None
    eta1: float = None

    def __post_init__(self):
        if self.kind not in ("lmc", "rejection"):
            raise ValueError(f"unknown baseline kind {self.kind!r}")
        if self.N < 1 or self.budget < 0:
            raise ValueError("budgets must be positive")
        if self.kind == "lmc" and not (self.dt and self.dt > 0):
            raise ValueError("lmc needs dt > 0")
        if self.kind == "rejection" and not (self.eta1 and self.eta1 > 0):
            raise ValueError("rejection needs eta1 > 0")


@dataclass
class LMCResult:
    samples: np.ndarray
    trace: list = field(default_factory=list)


def run_lmc(model, eta, N, steps, dt, seed, init=None, h=None, checkpoint_every=None):
    """``N`` independent Euler-Maruyama chains run for ``steps`` steps at ``eta``.

    ``init`` follows the ASMC convention (default: global minimizer).  With
    ``h`` and ``checkpoint_every`` the ensemble average of ``h`` is recorded
    as ``(step, estimate)`` pairs, starting with step 0.
    """
    x = _initial_positions(model, init, int(N), seed)
    trace = []
    if h is not None:
        trace.append((0, float(np.mean(h(x)))))
    if steps == 0:
        return LMCResult(x, trace)
    rng = streams.ParticleStreams(seed, 0, x.shape[0], purpose=streams.BASELINE)
    observe = None
    if h is not None and checkpoint_every:
        def observe(step, y):
            trace.append((step, float(np.mean(h(y)))))
    x = langevin_run(x, model, eta, steps * dt, dt, rng, observe=observe,
                     observe_every=checkpoint_every if observe else None)
    return LMCResult(x, trace)


@dataclass
class RejectionResult:
    samples: np.ndarray
    n_proposed: int

    @property
    def n_accepted(self):
        return self.samples.shape[0]

    @property
    def acceptance_rate(self):
        return self.n_accepted / self.n_proposed if self.n_proposed else 0.0


def run_rejection(model, eta, eta1, proposal_sampler, budget, seed, u_min=None):
    """Turn ``budget`` draws from ``pi_eta1`` into exact ``pi_eta`` draws.

    Each proposal is accepted with probability
    ``exp(-(1/eta - 1/eta1)(U(x) - U_min))``, which is at most one.
    ``proposal_sampler(n, rng)`` must draw from ``pi_eta1``.
    """
    if not 0 < eta <= eta1:
        raise ValueError("need 0 < eta <= eta1")
    if budget < 1:
        raise ValueError("budget must be positive")
    if u_min is None:
        u_min = model.known_inf if model.known_inf is not None else estimate_inf(model)[0]
    rng = streams.stream(seed, streams.BASELINE, 1)
    y = np.atleast_2d(np.asarray(proposal_sampler(int(budget), rng), dtype=float))
    if y.shape[0] != budget and model.dimension == 1:
        y = y.reshape(int(budget), 1)
    log_acc = -(1.0 / eta - 1.0 / eta1) * (model.energy(y) - u_min)
    keep = np.log(rng.random(y.shape[0])) < np.minimum(log_acc, 0.0)
    if eta == eta1:
        keep[:] = True
    out = y[keep]
    if out.shape[0] == 0:
        warnings.warn("rejection sampler accepted no proposals", RuntimeWarning, stacklevel=2)
    return RejectionResult(out, int(budget))


def lmc_burn_in_sampler(model, eta1, burn_time=50.0, dt=0.01, init=None):
    """Approximate ``pi_eta1`` sampler: Langevin chains run for ``burn_time``."""

    def sample(n, rng):
        seed = int(rng.integers(0, 2**63))
        x = _initial_positions(model, init, n, seed)
        return langevin_run(x, model, eta1, burn_time, dt,
                            streams.ParticleStreams(seed, 0, n, purpose=streams.BASELINE))

    return sample
