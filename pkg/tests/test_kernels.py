import math

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal
from scipy import stats

from asmc import streams
from asmc.errors import InvariantViolation, PropagationError
from asmc.kernels import (
    FiniteLocalModel,
    LangevinConfig,
    arrhenius_chi,
    constant_chi,
    langevin_run,
    langevin_step,
    local_n_step_density,
    local_step,
    mixing_time_bound,
    mixture_halfspace_model,
    worst_case_tv,
)
from asmc.targets import (
    ConstantEnergy,
    DomainSpec,
    FiniteEnergy,
    FunctionEnergy,
    GaussianMixtureEnergy,
    QuadraticEnergy,
)

SIX = FiniteEnergy([0.0, 0.4, 1.0, 0.2, 0.5, 1.5])
LABELS = [0, 0, 0, 1, 1, 1]


class CountingRng:
    def __init__(self, seed):
        self.g = np.random.default_rng(seed)
        self.vectors = 0

    def standard_normal(self, size):
        self.vectors += size[0] * size[1]
        return self.g.standard_normal(size)


def test_langevin_config_guards_dt():
    with pytest.raises(ValueError):
        LangevinConfig(0.5)
    assert LangevinConfig(0.05).noise_scale(2.0) == pytest.approx(math.sqrt(0.2))


def test_pure_drift_step():
    q = QuadraticEnergy([1.0, 1.0])
    x = np.array([1.0, -2.0])
    assert_allclose(langevin_step(x, q, 1.0, 0.1, np.zeros(2)), 0.9 * x)


def test_torus_wrap_step():
    m = ConstantEnergy(DomainSpec("torus", 1), 0.0)
    # displacement sqrt(2 * 0.02 * 1) * 1 = 0.2
    out = langevin_step(np.array([0.9]), m, 0.02, 1.0, np.array([1.0]))
    assert out[0] == pytest.approx(0.1)


def test_nonfinite_gradient_names_particle_and_level():
    dom = DomainSpec("euclidean", 1)
    m = FunctionEnergy(dom, lambda x: x[:, 0], lambda x: np.where(x > 1, np.nan, 1.0))
    with pytest.raises(PropagationError) as ei:
        langevin_step(np.array([[0.0], [2.0]]), m, 1.0, 0.01, np.zeros((2, 1)), level=3)
    assert ei.value.particle == 1 and ei.value.level == 3


def test_run_step_count_and_consumption():
    q = QuadraticEnergy([1.0])
    rng = CountingRng(0)
    langevin_run(np.zeros((3, 1)), q, 1.0, 1.0, 0.5, rng)
    assert rng.vectors == 2 * 3


def test_run_is_deterministic_given_stream():
    q = QuadraticEnergy([1.0, 2.0])
    x0 = np.zeros((5, 2))
    a = langevin_run(x0, q, 0.7, 0.3, 0.01, streams.ParticleStreams(9, 1, 5))
    b = langevin_run(x0, q, 0.7, 0.3, 0.01, streams.ParticleStreams(9, 1, 5))
    assert_array_equal(a, b)


def test_run_chunking_does_not_change_result():
    q = QuadraticEnergy([1.0])
    x0 = np.zeros((4, 1))
    a = langevin_run(x0, q, 1.0, 1.0, 0.01, streams.ParticleStreams(3, 1, 4), chunk=7)
    b = langevin_run(x0, q, 1.0, 1.0, 0.01, streams.ParticleStreams(3, 1, 4), chunk=256)
    assert_allclose(a, b, rtol=0, atol=1e-14)


def test_run_matches_explicit_steps():
    q = QuadraticEnergy([1.0])
    xi = np.random.default_rng(1).standard_normal((10, 2, 1))

    class Fixed:
        def standard_normal(self, size):
            return xi.copy()

    x = np.array([[0.5], [-1.0]])
    ref = x.copy()
    for t in range(10):
        ref = langevin_step(ref, q, 0.5, 0.01, xi[t])
    assert_allclose(langevin_run(x, q, 0.5, 0.1, 0.01, Fixed()), ref, rtol=1e-14)


def test_ou_stationary_variance():
    # unit curvature at eps=0.5: stationary variance eps; many chains started at stationarity
    q = QuadraticEnergy([1.0])
    n = 20000
    g = np.random.default_rng(2)
    x0 = g.normal(scale=math.sqrt(0.5), size=(n, 1))
    samples = []
    langevin_run(x0, q, 0.5, 50 * 0.001 * 1000, 0.001, streams.ParticleStreams(4, 0, n),
                 observe=lambda s, y: samples.append(y[:, 0].copy()), observe_every=1000)
    v = np.var(np.concatenate(samples))
    assert v == pytest.approx(0.5, rel=0.05)


def test_ou_lag_one_autocorrelation():
    q = QuadraticEnergy([1.0])
    n, dt = 200000, 0.05
    x0 = np.random.default_rng(5).standard_normal((n, 1))
    x1 = langevin_run(x0, q, 1.0, dt, dt, streams.ParticleStreams(6, 0, n))
    r = np.corrcoef(x0[:, 0], x1[:, 0])[0, 1]
    assert r == pytest.approx(math.exp(-dt), rel=0.02)


@pytest.mark.slow
def test_long_run_matches_mixture_marginal(fig3_mixture):
    # chains begin at exact draws so the check is about the stationary law, not barrier crossing
    n = 10000
    x0 = fig3_mixture.sample(n, np.random.default_rng(11))
    x = langevin_run(x0, fig3_mixture, 1.0, 1.0, 0.001, streams.ParticleStreams(12, 0, n))

    def cdf(t):
        return sum(a * stats.norm.cdf(t, m, math.sqrt(v)) for a, m, v in
                   zip([0.7, 0.3], [-1.0, 1.0], [0.09, 0.02]))

    assert stats.kstest(x[:, 0], cdf).statistic < 0.05


def test_torus_outputs_in_cell():
    m = ConstantEnergy(DomainSpec("torus", 2, periods=(1.0, 0.5)), 0.0)
    x = langevin_run(np.zeros((100, 2)), m, 1.0, 1.0, 0.01, np.random.default_rng(0))
    assert np.all(x >= 0) and np.all(x < np.array([1.0, 0.5]))


# ---------------------------------------------------------------- local model


def _six(chi=0.6):
    return FiniteLocalModel(SIX, LABELS, constant_chi(chi))


def test_masses_sum_to_one():
    spec = FiniteLocalModel(SIX, LABELS, arrhenius_chi())
    for eps in (0.1, 1.0, 5.0):
        assert spec.masses(eps).sum() == pytest.approx(1.0, abs=1e-10)


def test_arrhenius_chi_range():
    chi = arrhenius_chi(1.0, 1.0)
    assert 0 < chi(0.1) < 1 and chi(0.1) > chi(1.0)


def test_single_domain_gives_global_law():
    spec = FiniteLocalModel(SIX, [0] * 6, constant_chi(0.9))
    assert_allclose(spec.transition_matrix(1.0), np.tile(SIX.gibbs(1.0), (6, 1)), atol=1e-15)


def test_chi_zero_is_independent_sampling():
    spec = _six(0.0)
    assert_allclose(spec.transition_matrix(0.7), np.tile(SIX.gibbs(0.7), (6, 1)), atol=1e-15)


def test_stationarity_of_one_step_matrix():
    spec = _six(0.6)
    p = SIX.gibbs(0.8)
    assert np.abs(p @ spec.transition_matrix(0.8) - p).max() < 1e-10


def test_n_step_weights():
    spec = _six(0.5)
    law = local_n_step_density(spec, 1.0, 3)
    assert (law.global_weight, law.local_weight) == (0.875, 0.125)
    law1 = local_n_step_density(spec, 1.0, 1)
    assert (law1.global_weight, law1.local_weight) == (0.5, 0.5)
    assert law.max_deviation < 1e-10


def test_one_step_frequencies_match_row():
    spec = _six(0.6)
    eps, n = 0.8, 100000
    x = np.full((n, 1), 1.0)
    y = local_step(x, eps, spec, np.random.default_rng(3))[:, 0].astype(int)
    counts = np.bincount(y, minlength=6)
    assert stats.chisquare(counts, n * spec.transition_matrix(eps)[1]).pvalue > 0.001


def test_conditional_sampler_escape_is_detected():
    spec = _six(0.99)
    spec.conditional_sampler = lambda j, n, eps, rng: np.full((n, 1), 5.0 if j == 0 else 0.0)
    with pytest.raises(InvariantViolation):
        local_step(np.zeros((10, 1)), 1.0, spec, np.random.default_rng(0))


def test_mixing_time_bound_examples():
    assert mixing_time_bound(0.5, 0.25) == 3
    assert mixing_time_bound(0.5, 0.5) == 2


@pytest.mark.parametrize("chi,delta", [(0.5, 0.25), (0.9, 0.05), (0.3, 0.01)])
def test_tv_at_mixing_bound(chi, delta):
    spec = _six(chi)
    n = mixing_time_bound(chi, delta)
    assert worst_case_tv(spec, 0.5, n) <= delta


def test_halfspace_model_conditionals_stay_in_domain(fig3_mixture):
    spec = mixture_halfspace_model(fig3_mixture, arrhenius_chi())
    assert spec.masses(1.0).sum() == pytest.approx(1.0, abs=1e-10)
    g = np.random.default_rng(0)
    for j in (0, 1):
        y = spec.conditional_sampler(j, 500, 1.0, g)
        assert np.all(spec.membership(y) == j)
    out = local_step(fig3_mixture.sample(2000, g), 1.0, spec, g)
    assert out.shape == (2000, 2)
