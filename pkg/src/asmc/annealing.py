"""Geometric annealing ladders and the (M, N, T) planners."""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import PlannerError


@dataclass(frozen=True)
class AnnealingSchedule:
    """Temperatures ``eta_1 > ... > eta_M`` with linearly spaced reciprocals."""

    temperatures: tuple

    def __post_init__(self):
        t = tuple(float(e) for e in self.temperatures)
        object.__setattr__(self, "temperatures", t)
        if len(t) == 0 or min(t) <= 0:
            raise ValueError("temperatures must be positive")
        if len(t) >= 2:
            if any(a <= b for a, b in zip(t, t[1:])):
                raise ValueError("temperatures must be strictly decreasing")
            inv = 1.0 / np.asarray(t)
            step = np.diff(inv)
            if np.max(np.abs(step - step.mean())) > 1e-12 * max(1.0, inv[-1]):
                raise ValueError("reciprocal temperatures are not linearly spaced")

    def __len__(self):
        return len(self.temperatures)

    def __iter__(self):
        return iter(self.temperatures)

    def __getitem__(self, k):
        return self.temperatures[k]

    @property
    def M(self):
        return len(self.temperatures)

    @property
    def eta1(self):
        return self.temperatures[0]

    @property
    def eta(self):
        return self.temperatures[-1]

    def inverse_step(self):
        """Common spacing ``1/eta_{k+1} - 1/eta_k`` (0 for a single level)."""
        if self.M < 2:
            return 0.0
        return (1.0 / self.eta - 1.0 / self.eta1) / (self.M - 1)

    @classmethod
    def single(cls, eta):
        """One-level ladder: propagation at ``eta`` only, no reweighting."""
        return cls((float(eta),))


def geometric_schedule(eta1, eta, M):
    """Ladder from ``eta1`` down to ``eta`` with ``M`` linearly spaced reciprocals.

    With ``eta1 = 1`` this is ``eta_k = (M-1) eta / ((M-1) eta + (k-1)(1-eta))``.
    Both endpoints are returned exactly.
    """
    M = int(M)
    if not 0 < eta < eta1:
        raise ValueError("need 0 < eta < eta1")
    if M < 2:
        raise ValueError("need at least two levels")
    b1, bM = 1.0 / eta1, 1.0 / eta
    k = np.arange(M)
    inv = b1 + k * (bM - b1) / (M - 1)
    temps = 1.0 / inv
    temps[0], temps[-1] = eta1, eta
    return AnnealingSchedule(tuple(temps))


@dataclass
class ParameterPlan:
    mode: str
    delta: float
    nu: float
    eta: float
    eta1: float
    M: int
    N: int
    T: float
    alpha: float = None
    gamma_hat_r: float = None
    C_T: float = None
    C_N: float = None
    notes: list = field(default_factory=list)

    def schedule(self):
        return geometric_schedule(self.eta1, self.eta, self.M)

    def as_dict(self):
        return {
            "mode": self.mode, "delta": self.delta, "nu": self.nu, "eta": self.eta,
            "eta1": self.eta1, "M": self.M, "N": self.N, "T": self.T, "alpha": self.alpha,
            "gamma_hat_r": self.gamma_hat_r, "C_T": self.C_T, "C_N": self.C_N,
        }


def _ceil(x):
    # planned sizes are lower bounds: round up, but do not let 3.0000000000000004 become 4
    return int(math.ceil(x - 1e-9 * max(1.0, abs(x))))


def plan_levels(nu, eta, eta1=1.0):
    """Smallest admissible level count for step bound ``nu``.

    ``ceil(1/(nu eta))``, raised if needed so that the
    reciprocal spacing ``(1/eta - 1/eta1)/(M-1)`` never exceeds ``nu``.
    """
    m = _ceil(1.0 / (nu * eta))
    m_step = 1 + _ceil((1.0 / eta - 1.0 / eta1) / nu)
    return max(2, m, m_step)


def plan_particles(C_N, M, delta):
    return _ceil(C_N * M * M / (delta * delta))


def _check_common(delta, nu, eta, eta1):
    if not (delta > 0 and nu > 0 and eta > 0 and eta1 > 0):
        raise PlannerError("delta, nu, eta and eta1 must be positive")
    if not eta < eta1:
        raise PlannerError("need eta < eta1")


def plan_local(delta, nu, eta, eta1, constants, chi_at_eta1):
    """Plan (M, N, T) for the local mixing model.

    ``T`` is the step count ``ceil(ln(delta / (2 C_T)) / ln chi(eta1))``,
    i.e. the mixing-time bound at accuracy ``delta / C_T``.
    """
    _check_common(delta, nu, eta, eta1)
    if not delta < 1:
        raise PlannerError("need delta < 1")
    if not 0 < chi_at_eta1 < 1:
        raise PlannerError("chi(eta1) must lie in (0, 1)")
    C_T = getattr(constants, "C_T", None)
    C_N = getattr(constants, "C_N", None)
    if C_T is None or C_N is None:
        raise PlannerError("constants bundle lacks C_T or C_N")
    M = plan_levels(nu, eta, eta1)
    N = plan_particles(C_N, M, delta)
    T = max(1, _ceil(math.log(delta / (2 * C_T)) / math.log(chi_at_eta1)))
    return ParameterPlan("local_model", delta, nu, eta, eta1, M, N, T, C_T=C_T, C_N=C_N)


def plan_langevin(delta, nu, eta, alpha, gamma_hat_r, C_T, C_N, eta1=1.0):
    """Plan (M, N, T) for Langevin propagation; ``T`` is continuous time."""
    _check_common(delta, nu, eta, eta1)
    if not gamma_hat_r >= 1:
        raise PlannerError("gamma_hat_r must be >= 1")
    if not alpha > 0:
        raise PlannerError("alpha must be positive")
    if C_T is None or C_N is None or C_T <= 0 or C_N <= 0:
        raise PlannerError("C_T and C_N must be positive")
    M = plan_levels(nu, eta, eta1)
    T = C_T * (M ** ((1 + alpha) * gamma_hat_r) + math.log(1 / delta) + 1 / eta)
    N = plan_particles(C_N, M, delta)
    return ParameterPlan(
        "langevin", delta, nu, eta, eta1, M, N, T,
        alpha=alpha, gamma_hat_r=gamma_hat_r, C_T=C_T, C_N=C_N,
    )
