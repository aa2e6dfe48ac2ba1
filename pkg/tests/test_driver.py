import numpy as np
import pytest
from numpy.testing import assert_array_equal, assert_equal

from asmc.annealing import AnnealingSchedule, geometric_schedule
from asmc.driver import LangevinKernel, LocalKernel, estimate, run_asmc, run_asmc_counts
from asmc.errors import DegenerateWeightsError, PropagationError
from asmc.kernels import FiniteLocalModel, constant_chi
from asmc.targets import ConstantEnergy, DomainSpec, FiniteEnergy, FunctionEnergy, QuadraticEnergy

FIN = FiniteEnergy([0.0, 0.5, 1.2, 0.1, 0.6, 1.0])
SPEC = FiniteLocalModel(FIN, [0, 0, 0, 1, 1, 1], constant_chi(0.7))


class CountingKernel:
    def __init__(self, inner):
        self.inner = inner
        self.calls = []

    def propagate(self, x, model, eps, T, seed, level):
        self.calls.append(level)
        return self.inner.propagate(x, model, eps, T, seed, level)


def test_single_level_is_pure_propagation():
    k = CountingKernel(LangevinKernel(0.01))
    ens, rep = run_asmc(QuadraticEnergy([1.0]), AnnealingSchedule.single(0.5), 50, 0.1, k, seed=1)
    assert k.calls == [1] and rep.resample_count == 0 and len(rep.rows) == 1
    assert np.isnan(rep.rows[0]["ess"])


def test_level_structure():
    k = CountingKernel(LocalKernel(SPEC))
    sch = geometric_schedule(1.0, 0.2, 6)
    ens, rep = run_asmc(FIN, sch, 100, 3, k, seed=2, classifier=SPEC.membership, J=2)
    assert k.calls == [1, 2, 3, 4, 5, 6]
    assert rep.resample_count == 5 and len(rep.rows) == 6
    for row in rep.rows:
        assert row["mass_fractions"].sum() == pytest.approx(1.0, abs=1e-9)
    assert ens.N == 100 and ens.level == 6


def test_constant_energy_weights_are_uniform():
    m = ConstantEnergy(DomainSpec("torus", 2), 1.0)
    sch = geometric_schedule(1.0, 0.1, 4)
    ens, rep = run_asmc(m, sch, 64, 0.05, LangevinKernel(0.01), init=[0.5, 0.5], seed=0)
    for row in rep.rows[:-1]:
        assert row["ess"] == pytest.approx(64.0)
        # U = 1 everywhere, so the log weight is -(1/eta_{k+1} - 1/eta_k)
        assert row["max_log_weight"] == pytest.approx(-(1 / sch[row["k"]] - 1 / row["eta"]))


def test_seed_determinism(tmp_path):
    sch = geometric_schedule(2.0, 0.5, 3)
    q = QuadraticEnergy([1.0, 0.5])
    a, ra = run_asmc(q, sch, 40, 0.1, LangevinKernel(0.01), seed=7, report_path=tmp_path / "a.csv")
    b, rb = run_asmc(q, sch, 40, 0.1, LangevinKernel(0.01), seed=7)
    assert_array_equal(a.positions, b.positions)
    for x, y in zip(ra.rows, rb.rows):
        assert_equal((x["ess"], x["max_log_weight"]), (y["ess"], y["max_log_weight"]))
    lines = (tmp_path / "a.csv").read_text().splitlines()
    assert len(lines) == 1 + 3


def test_different_seeds_differ():
    sch = geometric_schedule(2.0, 0.5, 3)
    q = QuadraticEnergy([1.0])
    a, _ = run_asmc(q, sch, 40, 0.1, LangevinKernel(0.01), seed=1)
    b, _ = run_asmc(q, sch, 40, 0.1, LangevinKernel(0.01), seed=2)
    assert not np.array_equal(a.positions, b.positions)


def test_degenerate_weights_abort_with_level():
    dom = DomainSpec("euclidean", 1)
    m = FunctionEnergy(dom, lambda x: np.full(x.shape[0], np.inf), lambda x: np.zeros_like(x))
    with pytest.raises(DegenerateWeightsError) as ei:
        run_asmc(m, geometric_schedule(1.0, 0.5, 3), 10, 0.01, LangevinKernel(0.01), init=[0.0])
    assert ei.value.level == 1


def test_nan_position_aborts_naming_particle():
    dom = DomainSpec("euclidean", 1)
    m = FunctionEnergy(dom, lambda x: x[:, 0] ** 2, lambda x: np.where(x > 0.5, np.inf, 2 * x))
    init = np.zeros((5, 1))
    init[3] = 1.0
    with pytest.raises(PropagationError) as ei:
        run_asmc(m, geometric_schedule(1.0, 0.5, 2), 5, 0.01, LangevinKernel(0.001), init=init)
    assert ei.value.particle == 3 and ei.value.level == 1


def test_estimate_trivial_cases():
    ens, _ = run_asmc(FIN, geometric_schedule(1.0, 0.5, 2), 30, 2, LocalKernel(SPEC), seed=0)
    assert estimate(ens, lambda x: np.ones(x.shape[0])) == 1.0
    assert estimate(ens, lambda x: (x[:, 0] >= 0).astype(float)) == 1.0


def test_init_sampler_is_used():
    q = QuadraticEnergy([1.0])
    ens, _ = run_asmc(q, AnnealingSchedule.single(1.0), 20, 0.01, LangevinKernel(0.01),
                      init=lambda n, rng: np.full((n, 1), 50.0))
    assert np.all(ens.positions > 40)


def test_threshold_off_by_default_and_weights_carried_when_skipped():
    q = QuadraticEnergy([1.0])
    sch = geometric_schedule(1.0, 0.5, 3)
    ens, rep = run_asmc(q, sch, 50, 0.05, LangevinKernel(0.01), seed=0, resample_threshold=0.0)
    assert rep.resample_count == 0 and ens.log_weights is not None
    p = ens.probabilities()
    assert p.sum() == pytest.approx(1.0) and estimate(ens, lambda x: np.ones(len(x))) == pytest.approx(1.0)


def _h(x):
    return (x[:, 0] < 3).astype(float)


def test_counts_driver_matches_particle_driver_in_law():
    sch = geometric_schedule(1.0, 0.2, 4)
    N, T, R = 40, 2, 300
    hv = _h(FIN.states())
    part = [estimate(run_asmc(FIN, sch, N, T, LocalKernel(SPEC), init=[0.0], seed=s)[0], _h) for s in range(R)]
    cnt = [run_asmc_counts(SPEC, sch, N, T, 0, seed=10_000 + s).estimate(hv) for s in range(R)]
    se = np.sqrt(np.var(part) / R + np.var(cnt) / R)
    assert abs(np.mean(part) - np.mean(cnt)) < 4 * se
    assert np.var(cnt) == pytest.approx(np.var(part), rel=0.35)


def test_exchangeability_of_initial_points():
    q = QuadraticEnergy([1.0])
    init = np.linspace(-2, 2, 30)[:, None]
    perm = init[np.random.default_rng(0).permutation(30)]
    sch = geometric_schedule(1.0, 0.5, 3)

    def est(x0, s):
        return estimate(run_asmc(q, sch, 30, 0.05, LangevinKernel(0.01), init=x0, seed=s)[0],
                        lambda x: (x[:, 0] > 0).astype(float))

    a = np.array([est(init, s) for s in range(100)])
    b = np.array([est(perm, 1000 + s) for s in range(100)])
    se = np.sqrt(a.var() / 100 + b.var() / 100)
    assert abs(a.mean() - b.mean()) < 4 * se
