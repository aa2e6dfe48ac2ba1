"""Annealed sequential Monte Carlo for multimodal Gibbs distributions."""

from .annealing import AnnealingSchedule, ParameterPlan, geometric_schedule, plan_langevin, plan_local
from .driver import Ensemble, LangevinKernel, LocalKernel, RunReport, estimate, run_asmc, run_asmc_counts
from .errors import (
    ASMCError,
    ConfigError,
    DegenerateWeightsError,
    EvaluationError,
    InvariantViolation,
    PlannerError,
    PropagationError,
)
from .targets import (
    DomainSpec,
    DoubleWellTorusEnergy,
    FiniteEnergy,
    GaussianMixtureEnergy,
    QuadraticEnergy,
    normalized_energy,
)

__version__ = "0.1.0"
