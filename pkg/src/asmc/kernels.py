"""Markov kernels: discretized overdamped Langevin dynamics and the local mixing model."""

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvariantViolation, PropagationError


@dataclass(frozen=True)
class LangevinConfig:
    dt: float = 0.001

    def __post_init__(self):
        if not 0 < self.dt <= 0.1:
            raise ValueError("dt must lie in (0, 0.1]")

    @property
    def steps_per_unit(self):
        return 1.0 / self.dt

    def noise_scale(self, eps):
        return math.sqrt(2.0 * eps * self.dt)

    def n_steps(self, total_time):
        return step_count(total_time, self.dt)


def step_count(total_time, dt):
    """``ceil(total_time / dt)``, robust to representation error in the ratio."""
    if not total_time > 0:
        raise ValueError("total_time must be positive")
    r = total_time / dt
    return int(math.ceil(r - 1e-9 * max(1.0, r)))


def _first_bad(x):
    rows = np.flatnonzero(~np.all(np.isfinite(x), axis=1))
    return int(rows[0]) if rows.size else None


def langevin_step(x, model, eps, dt, xi, level=None):
    """One Euler-Maruyama step ``x - grad U(x) dt + sqrt(2 eps dt) xi``.

    ``x`` and ``xi`` are a single point ``(d,)`` or a batch ``(n, d)``.
    Torus positions are wrapped into the fundamental cell.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    x = np.asarray(x, dtype=float)
    g = np.asarray(model.gradient(x))
    if not np.all(np.isfinite(g)):
        gb = np.atleast_2d(g)
        i = _first_bad(gb)
        raise PropagationError(f"non-finite gradient for particle {i} at level {level}", i, level)
    return model.domain.wrap(x - g * dt + math.sqrt(2.0 * eps * dt) * np.asarray(xi))


def langevin_run(x0, model, eps, total_time, dt, rng, *, level=None, observe=None,
                 observe_every=None, chunk=256):
    """Simulate ``ceil(total_time/dt)`` Euler-Maruyama steps at temperature ``eps``.

    ``rng`` is anything with ``standard_normal(size)``: a numpy Generator or
    :class:`asmc.streams.ParticleStreams`.  Exactly one ``d``-vector per step
    and particle is consumed, in step-major order.  ``observe(step, x)`` is
    called after every ``observe_every`` steps (and after the last step).

    Non-finite positions are detected at chunk boundaries and reported with
    the offending particle index.
    """
    single = np.ndim(x0) == 1
    x = np.array(np.atleast_2d(x0), dtype=float)
    if single and model.dimension == 1 and x.shape[1] != 1:
        x = x.T
        single = False
    n, d = x.shape
    steps = step_count(total_time, dt)
    scale = math.sqrt(2.0 * eps * dt)
    wrap = model.domain.kind == "torus"
    done = 0
    while done < steps:
        m = min(chunk, steps - done)
        if observe_every:
            m = min(m, observe_every - done % observe_every)
        xi = rng.standard_normal((m, n, d))
        xi *= scale
        with np.errstate(invalid="ignore", over="ignore"):
            for t in range(m):
                g = model.gradient(x)
                g *= dt
                x -= g
                x += xi[t]
        done += m
        bad = _first_bad(x)
        if bad is not None:
            raise PropagationError(f"particle {bad} became non-finite at level {level}", bad, level)
        if wrap:
            x = model.domain.wrap(x)
        if observe is not None and observe_every and (done % observe_every == 0 or done == steps):
            observe(done, x)
    return x[0] if single else x


@dataclass
class LocalModelSpec:
    """Partition ``Omega_1..Omega_J`` with exact per-domain and global samplers.

    ``membership(x)`` returns domain labels ``0..J-1`` for a batch;
    ``conditional_sampler(j, n, eps, rng)`` draws ``n`` points from
    ``pi_eps`` restricted to domain ``j``; ``global_sampler(n, eps, rng)``
    draws from ``pi_eps``; ``masses(eps)`` gives ``pi_eps(Omega_j)``.
    """

    J: int
    membership: object
    chi: object
    conditional_sampler: object
    global_sampler: object
    masses: object


def arrhenius_chi(A=1.0, gamma=1.0):
    """Stay probability ``chi(eps) = exp(-A exp(-gamma / eps))``."""
    if A <= 0 or gamma <= 0:
        raise ValueError("A and gamma must be positive")

    def chi(eps):
        return math.exp(-A * math.exp(-gamma / eps))

    return chi


def constant_chi(value):
    def chi(eps):
        return value

    return chi


def local_step(x, eps, spec, rng):
    """One step of the local mixing kernel for a batch of points.

    Each particle stays in its domain (fresh conditional draw) with
    probability ``chi(eps)`` and otherwise jumps to a fresh ``pi_eps`` draw.
    Random numbers are consumed as: ``n`` coin flips, then the global draws,
    then the conditional draws domain by domain.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    n = x.shape[0]
    labels = np.asarray(spec.membership(x))
    chi = spec.chi(eps)
    stay = rng.random(n) < chi
    out = np.empty_like(x)
    move = ~stay
    if move.any():
        out[move] = spec.global_sampler(int(move.sum()), eps, rng)
    for j in range(spec.J):
        idx = stay & (labels == j)
        cnt = int(idx.sum())
        if cnt:
            y = np.atleast_2d(spec.conditional_sampler(j, cnt, eps, rng))
            if np.any(np.asarray(spec.membership(y)) != j):
                raise InvariantViolation(f"conditional sampler for domain {j} left its domain")
            out[idx] = y
    return out


def local_run(x, eps, spec, steps, rng):
    for _ in range(int(steps)):
        x = local_step(x, eps, spec, rng)
    return x


def mixing_time_bound(chi, delta):
    """Step count ``ceil(ln(delta/2) / ln chi)`` after which the local kernel is delta-mixed."""
    if not 0 < chi < 1:
        raise ValueError("chi must lie in (0, 1)")
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    r = math.log(delta / 2) / math.log(chi)
    return max(1, int(math.ceil(r - 1e-9 * max(1.0, r))))


class FiniteLocalModel(LocalModelSpec):
    """Local mixing model on a finite state space with exact categorical draws."""

    def __init__(self, model, membership, chi):
        self.model = model
        self.labels = np.asarray(membership, dtype=np.intp).ravel()
        if self.labels.size != model.values.size:
            raise ValueError("membership must label every state")
        J = int(self.labels.max()) + 1
        if set(np.unique(self.labels)) != set(range(J)):
            raise ValueError("domain labels must be 0..J-1 without gaps")
        self._states = [np.flatnonzero(self.labels == j) for j in range(J)]
        super().__init__(
            J=J,
            membership=lambda x: self.labels[np.asarray(np.atleast_2d(x)[:, 0], dtype=np.intp)],
            chi=chi,
            conditional_sampler=self._conditional,
            global_sampler=self._global,
            masses=self._masses,
        )

    def _masses(self, eps):
        p = self.model.gibbs(eps)
        return np.array([p[s].sum() for s in self._states])

    def conditional_probs(self, j, eps):
        p = self.model.gibbs(eps)[self._states[j]]
        return p / p.sum()

    def _draw(self, states, probs, n, rng):
        cdf = np.cumsum(probs)
        cdf[-1] = 1.0
        return states[np.searchsorted(cdf, rng.random(n), side="right")].astype(float)[:, None]

    def _global(self, n, eps, rng):
        return self._draw(np.arange(self.labels.size), self.model.gibbs(eps), n, rng)

    def _conditional(self, j, n, eps, rng):
        return self._draw(self._states[j], self.conditional_probs(j, eps), n, rng)

    def conditional_matrix(self, eps):
        """``D[x, y] = 1{x, y in same domain} pi(y) / pi(Omega_j)``."""
        p = self.model.gibbs(eps)
        masses = self._masses(eps)
        same = self.labels[:, None] == self.labels[None, :]
        return np.where(same, p[None, :] / masses[self.labels][:, None], 0.0)

    def transition_matrix(self, eps, n=1):
        """Closed-form ``n``-step matrix ``(1 - chi^n) 1 pi^T + chi^n D``."""
        c = self.chi(eps) ** n
        p = self.model.gibbs(eps)
        return (1 - c) * np.broadcast_to(p, (p.size, p.size)) + c * self.conditional_matrix(eps)


@dataclass
class NStepLaw:
    global_weight: float
    local_weight: float
    matrix: np.ndarray = None
    max_deviation: float = None


def local_n_step_density(spec, eps, n):
    """Mixture weights ``(1 - chi^n, chi^n)`` of the ``n``-step local kernel.

    For finite state spaces the full ``n``-step matrix is also returned and
    checked against the ``n``-th power of the one-step matrix.
    """
    if int(n) < 1:
        raise ValueError("n must be >= 1")
    n = int(n)
    c = spec.chi(eps) ** n
    law = NStepLaw(1.0 - c, c)
    if isinstance(spec, FiniteLocalModel):
        closed = spec.transition_matrix(eps, n)
        power = np.linalg.matrix_power(spec.transition_matrix(eps, 1), n)
        dev = float(np.abs(closed - power).max())
        if dev > 1e-10:
            raise InvariantViolation(f"n-step closed form deviates from matrix power by {dev:.3g}")
        law.matrix, law.max_deviation = closed, dev
    return law


def worst_case_tv(spec, eps, n):
    """``max_x TV(p_n(x, .), pi_eps)`` on a finite state space."""
    P = spec.transition_matrix(eps, n)
    p = spec.model.gibbs(eps)
    return float(0.5 * np.abs(P - p[None, :]).sum(axis=1).max())


def mixture_halfspace_model(mixture, chi, axis=0, threshold=0.0, grid_n=512):
    """Local model for a Gaussian mixture with domains ``{x_axis < t}``, ``{x_axis >= t}``.

    Global draws are exact (see :meth:`GaussianMixtureEnergy.sample`);
    conditional draws reject global draws until they land in the domain.
    Domain masses come from 2-D quadrature, so ``d <= 2``.
    """
    from .diagnostics import quadrature_integral_2d

    if mixture.dimension > 2:
        raise NotImplementedError("half-space masses need quadrature (d <= 2)")

    def membership(x):
        return (np.atleast_2d(x)[:, axis] >= threshold).astype(np.intp)

    def global_sampler(n, eps, rng):
        return mixture.sample(n, rng, eps)

    def conditional(j, n, eps, rng):
        out = []
        got = 0
        while got < n:
            y = mixture.sample(max(2 * (n - got), 64), rng, eps)
            y = y[membership(y) == j]
            out.append(y)
            got += y.shape[0]
        return np.concatenate(out)[:n]

    cache = {}

    def masses(eps):
        if eps not in cache:
            lower = quadrature_integral_2d(
                mixture, lambda x: (x[:, axis] < threshold).astype(float), eps, grid_n,
                {axis: [threshold]},
            ).value
            cache[eps] = np.array([lower, 1.0 - lower])
        return cache[eps]

    return LocalModelSpec(2, membership, chi, conditional, global_sampler, masses)
