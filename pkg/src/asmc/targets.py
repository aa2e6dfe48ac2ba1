"""Energy functions, Gibbs densities and the normalized energy U0.

A model exposes ``energy(x)`` and ``gradient(x)`` for a single point of
shape ``(d,)`` or a batch of shape ``(n, d)``.  Gibbs densities are always
handled through their logarithm ``-U(x) / eps``.
"""

import math
import warnings
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy import optimize
from scipy.special import logsumexp

from .errors import ConfigError, EvaluationError, InvariantViolation

# fast-math without the no-nan/no-inf assumptions, so -inf sentinels stay valid
_FASTMATH = {"nsz", "arcp", "contract", "reassoc"}


@dataclass(frozen=True)
class DomainSpec:
    """Configuration space: ``torus``, ``euclidean`` or ``finite``.

    For ``finite`` domains ``dimension`` is 1 and ``size`` is the number of
    states; positions hold the state index in a length-1 coordinate.
    """

    kind: str
    dimension: int
    periods: tuple = None
    size: int = None

    def __post_init__(self):
        if self.kind not in ("torus", "euclidean", "finite"):
            raise ValueError(f"unknown domain kind {self.kind!r}")
        if int(self.dimension) < 1:
            raise ValueError("dimension must be >= 1")
        if self.kind == "torus":
            periods = self.periods
            if periods is None:
                periods = (1.0,) * self.dimension
            elif np.isscalar(periods):
                periods = (float(periods),) * self.dimension
            periods = tuple(float(p) for p in periods)
            if len(periods) != self.dimension or min(periods) <= 0:
                raise ValueError("torus periods must be positive, one per axis")
            object.__setattr__(self, "periods", periods)
        elif self.periods is not None:
            raise ValueError(f"{self.kind} domains carry no period")
        if self.kind == "finite":
            if self.dimension != 1 or self.size is None or self.size < 1:
                raise ValueError("finite domains need dimension 1 and a positive size")

    def wrap(self, x):
        """Map points into the fundamental cell ``[0, period)`` per axis."""
        if self.kind != "torus":
            return x
        p = np.asarray(self.periods)
        y = np.mod(x, p)
        # np.mod can return exactly p for tiny negative inputs
        return np.where(y >= p, y - p, y)


def _as_batch(x, d):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        if d == 1 and x.shape[0] != 1:
            return x[:, None], False
        return x[None, :], True
    return x, False


class EnergyModel:
    """Base class: subclasses implement ``_energy`` and ``_gradient`` on batches."""

    domain: DomainSpec
    known_inf = None

    @property
    def dimension(self):
        return self.domain.dimension

    def energy(self, x):
        xb, single = _as_batch(x, self.dimension)
        u = self._energy(xb)
        return float(u[0]) if single else u

    def gradient(self, x):
        xb, single = _as_batch(x, self.dimension)
        g = self._gradient(xb)
        return g[0] if single else g

    def _gradient(self, x):
        raise NotImplementedError(f"{type(self).__name__} has no gradient")

    def minimizer_starts(self):
        """Starting points for local descent towards ``inf U``."""
        raise NotImplementedError

    def integration_box(self, eps=1.0):
        """Per-axis ``(lo, hi)`` bounds carrying essentially all Gibbs mass."""
        if self.domain.kind == "torus":
            return [(0.0, p) for p in self.domain.periods]
        raise NotImplementedError(f"{type(self).__name__} has no default integration box")


class FunctionEnergy(EnergyModel):
    """Energy given by user callables acting on batches ``(n, d)``."""

    def __init__(self, domain, energy, gradient=None, known_inf=None, starts=None, box=None):
        self.domain = domain
        self._efn = energy
        self._gfn = gradient
        self.known_inf = known_inf
        self._starts = starts
        self._box = box

    def _energy(self, x):
        return np.asarray(self._efn(x), dtype=float)

    def _gradient(self, x):
        if self._gfn is None:
            raise NotImplementedError("no gradient supplied")
        return np.asarray(self._gfn(x), dtype=float)

    def minimizer_starts(self):
        if self._starts is None:
            raise NotImplementedError("no descent starts supplied")
        return np.atleast_2d(np.asarray(self._starts, dtype=float))

    def integration_box(self, eps=1.0):
        if self._box is not None:
            return list(self._box)
        return super().integration_box(eps)


class ConstantEnergy(EnergyModel):
    def __init__(self, domain, value=0.0):
        self.domain = domain
        self.value = float(value)
        self.known_inf = self.value

    def _energy(self, x):
        return np.full(x.shape[0], self.value)

    def _gradient(self, x):
        return np.zeros_like(x)

    def minimizer_starts(self):
        return np.zeros((1, self.dimension))


class QuadraticEnergy(EnergyModel):
    """``U(x) = offset + sum_j (x_j - center_j)^2 / (2 scale_j)`` on R^d."""

    def __init__(self, scales, center=None, offset=0.0):
        self.scales = np.atleast_1d(np.asarray(scales, dtype=float))
        if np.any(self.scales <= 0):
            raise ValueError("scales must be positive")
        d = self.scales.size
        self.center = np.zeros(d) if center is None else np.asarray(center, dtype=float).reshape(d)
        self.offset = float(offset)
        self.domain = DomainSpec("euclidean", d)
        self.known_inf = self.offset

    def _energy(self, x):
        r = x - self.center
        return self.offset + 0.5 * (r * r / self.scales).sum(axis=1)

    def _gradient(self, x):
        return (x - self.center) / self.scales

    def log_partition(self, eps):
        return -self.offset / eps + 0.5 * np.log(2 * np.pi * eps * self.scales).sum()

    def minimizer_starts(self):
        return self.center[None, :]

    def integration_box(self, eps=1.0):
        half = 14.0 * np.sqrt(eps * self.scales)
        return [(c - h, c + h) for c, h in zip(self.center, half)]


class RadialPowerEnergy(EnergyModel):
    """``U(x) = alpha0 * |x - center|^k0`` on R^d (the convex factor of separable energies)."""

    def __init__(self, alpha0, k0, dimension, center=None):
        if alpha0 <= 0 or k0 <= 1:
            raise ValueError("need alpha0 > 0 and k0 > 1")
        self.alpha0 = float(alpha0)
        self.k0 = float(k0)
        self.domain = DomainSpec("euclidean", int(dimension))
        self.center = np.zeros(self.dimension) if center is None else np.asarray(center, float)
        self.known_inf = 0.0

    def _energy(self, x):
        r = np.linalg.norm(x - self.center, axis=1)
        return self.alpha0 * r ** self.k0

    def _gradient(self, x):
        diff = x - self.center
        r = np.linalg.norm(diff, axis=1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            g = self.alpha0 * self.k0 * r ** (self.k0 - 2) * diff
        return np.where(r > 0, g, 0.0)

    def minimizer_starts(self):
        return self.center[None, :]

    def integration_box(self, eps=1.0):
        rmax = (60.0 * eps / self.alpha0) ** (1.0 / self.k0)
        return [(c - rmax, c + rmax) for c in self.center]


class FiniteEnergy(EnergyModel):
    """Energy on the finite set ``{0, ..., n-1}`` with counting measure."""

    def __init__(self, values):
        self.values = np.asarray(values, dtype=float).ravel()
        if not np.all(np.isfinite(self.values)):
            raise ValueError("finite energies must be finite")
        self.domain = DomainSpec("finite", 1, size=self.values.size)
        self.known_inf = float(self.values.min())

    def _energy(self, x):
        return self.values[np.asarray(x[:, 0], dtype=np.intp)]

    def gibbs(self, eps):
        logp = -self.values / eps
        return np.exp(logp - logsumexp(logp))

    def log_partition(self, eps):
        return float(logsumexp(-self.values / eps))

    def minimizer_starts(self):
        return np.array([[float(np.argmin(self.values))]])

    def states(self):
        return np.arange(self.values.size, dtype=float)[:, None]


@numba.njit(cache=True)
def _mix_energy(x, means, inv_var, log_coef):
    n, d = x.shape
    k_count = means.shape[0]
    out = np.empty(n)
    q = np.empty(k_count)
    for i in range(n):
        m = -np.inf
        for k in range(k_count):
            s = 0.0
            for j in range(d):
                r = x[i, j] - means[k, j]
                s += r * r * inv_var[k, j]
            q[k] = log_coef[k] - 0.5 * s
            if q[k] > m:
                m = q[k]
        tot = 0.0
        for k in range(k_count):
            tot += math.exp(q[k] - m)
        out[i] = -(m + math.log(tot))
    return out


@numba.njit(cache=True, fastmath=_FASTMATH)
def _mix_gradient(x, means, inv_var, log_coef):
    n, d = x.shape
    k_count = means.shape[0]
    out = np.empty((n, d))
    q = np.empty(k_count)
    for i in range(n):
        m = -np.inf
        for k in range(k_count):
            s = 0.0
            for j in range(d):
                r = x[i, j] - means[k, j]
                s += r * r * inv_var[k, j]
            q[k] = log_coef[k] - 0.5 * s
            if q[k] > m:
                m = q[k]
        tot = 0.0
        for k in range(k_count):
            q[k] = math.exp(q[k] - m)
            tot += q[k]
        for j in range(d):
            g = 0.0
            for k in range(k_count):
                g += q[k] * inv_var[k, j] * (x[i, j] - means[k, j])
            out[i, j] = g / tot
    return out


class GaussianMixtureEnergy(EnergyModel):
    """``U(x) = -log sum_i a_i G(x; mu_i, diag(var_i))`` on R^d.

    Parameters
    ----------
    weights : array_like, shape (K,)
        Mixture weights, summing to one.
    means : array_like, shape (K, d)
    variances : array_like, shape (K, d) or (K,)
        Diagonal covariance entries; a per-component scalar means isotropic.
    """

    def __init__(self, weights, means, variances):
        a = np.asarray(weights, dtype=float).ravel()
        mu = np.atleast_2d(np.asarray(means, dtype=float))
        var = np.asarray(variances, dtype=float)
        if var.ndim == 1:
            var = np.repeat(var[:, None], mu.shape[1], axis=1)
        if not (a.size == mu.shape[0] == var.shape[0]) or var.shape != mu.shape:
            raise ValueError("weights, means and variances disagree in shape")
        if abs(a.sum() - 1.0) > 1e-12 or np.any(a <= 0):
            raise ValueError("weights must be positive and sum to 1")
        if np.any(var <= 0):
            raise ValueError("variances must be positive")
        self.weights, self.means, self.variances = a, mu, var
        self.domain = DomainSpec("euclidean", mu.shape[1])
        self._inv_var = 1.0 / var
        self._log_coef = np.log(a) - 0.5 * np.log(2 * np.pi * var).sum(axis=1)

    @property
    def n_components(self):
        return self.weights.size

    def _energy(self, x):
        return _mix_energy(np.ascontiguousarray(x), self.means, self._inv_var, self._log_coef)

    def _gradient(self, x):
        return _mix_gradient(np.ascontiguousarray(x), self.means, self._inv_var, self._log_coef)

    def component_log_density(self, x):
        """``log(a_i G_i(x))`` for each component, shape ``(n, K)``."""
        xb, _ = _as_batch(x, self.dimension)
        diff = xb[:, None, :] - self.means[None]
        return self._log_coef - 0.5 * (diff * diff * self._inv_var).sum(axis=2)

    def minimizer_starts(self):
        return self.means.copy()

    def integration_box(self, eps=1.0):
        half = 12.0 * np.sqrt(self.variances * max(eps, 1.0))
        lo = (self.means - half).min(axis=0)
        hi = (self.means + half).max(axis=0)
        return list(zip(lo, hi))

    def sample(self, n, rng, eps=1.0):
        """Exact draws from the Gibbs measure ``exp(-U/eps)``.

        At ``eps = 1`` this is the mixture itself.  Otherwise the tempered
        density ``(sum a_i G_i)^b`` (``b = 1/eps``) is dominated by a
        Gaussian mixture with variances ``var/b``: by convexity of ``t^b``
        for ``b >= 1`` and by subadditivity of ``t^b`` for ``b < 1``.
        Proposals from that envelope are accepted with the exact ratio.
        """
        n = int(n)
        d = self.dimension
        if eps == 1.0:
            comp = rng.choice(self.n_components, size=n, p=self.weights)
            return self.means[comp] + np.sqrt(self.variances[comp]) * rng.standard_normal((n, d))
        b = 1.0 / eps
        log_a = np.log(self.weights) * (1.0 if b >= 1 else b)
        # log of int G_i^b
        log_int = 0.5 * (1 - b) * np.log(2 * np.pi * self.variances).sum(axis=1) - 0.5 * d * np.log(b)
        log_w = log_a + log_int
        w = np.exp(log_w - logsumexp(log_w))
        out = np.empty((n, d))
        filled = 0
        while filled < n:
            m = max(2 * (n - filled), 64)
            comp = rng.choice(self.n_components, size=m, p=w)
            y = self.means[comp] + np.sqrt(self.variances[comp] / b) * rng.standard_normal((m, d))
            logc = self.component_log_density(y)
            log_target = b * logsumexp(logc, axis=1)
            log_env = logsumexp(logc * b + (log_a - b * np.log(self.weights)), axis=1)
            keep = np.log(rng.random(m)) < log_target - log_env
            y = y[keep][: n - filled]
            out[filled : filled + y.shape[0]] = y
            filled += y.shape[0]
        return out


class DoubleWellTorusEnergy(EnergyModel):
    """Two-well energy on the torus with a hyperplane basin boundary.

    ``U(x) = A (1 - cos 2t_1) + C (1 - cos t_1) + B sum_{j>=2} (1 - cos t_j)``
    with ``t_j = 2 pi x_j / p_j``.  For ``0 <= C < 4A`` the only local minima
    are ``x_1 = 0`` (global, ``U = 0``) and ``x_1 = p_1/2`` (``U = 2C``) with
    all other coordinates zero; the saddles sit at ``x_1 = s, p_1 - s`` with
    ``cos(2 pi s / p_1) = -C / (4A)``.  ``C = 0`` gives wells of equal depth.
    """

    def __init__(self, dimension, depth=1.0, tilt=0.0, transverse=1.0, periods=None):
        self.A, self.C, self.B = float(depth), float(tilt), float(transverse)
        if self.A <= 0 or self.B <= 0 or not (0 <= self.C < 4 * self.A):
            raise ValueError("need depth > 0, transverse > 0 and 0 <= tilt < 4 depth")
        self.domain = DomainSpec("torus", int(dimension), periods=periods)
        self.known_inf = 0.0
        self._w = 2 * np.pi / np.asarray(self.domain.periods)
        p1 = self.domain.periods[0]
        self.saddle_x1 = p1 * np.arccos(-self.C / (4 * self.A)) / (2 * np.pi)

    def _energy(self, x):
        t = x * self._w
        u = self.A * (1 - np.cos(2 * t[:, 0])) + self.C * (1 - np.cos(t[:, 0]))
        if self.dimension > 1:
            u = u + self.B * (1 - np.cos(t[:, 1:])).sum(axis=1)
        return u

    def _gradient(self, x):
        t = x * self._w
        g = np.empty_like(x)
        g[:, 0] = self._w[0] * (2 * self.A * np.sin(2 * t[:, 0]) + self.C * np.sin(t[:, 0]))
        if self.dimension > 1:
            g[:, 1:] = self._w[1:] * self.B * np.sin(t[:, 1:])
        return g

    def minimizers(self):
        m = np.zeros((2, self.dimension))
        m[1, 0] = 0.5 * self.domain.periods[0]
        return m

    def minimizer_starts(self):
        return self.minimizers()

    def saddle_height(self):
        c = -self.C / (4 * self.A)
        return 2 * self.A * (1 - c * c) + self.C * (1 - c)

    def gamma_hat_r(self):
        """Ratio of saddle height to the barrier seen from the shallower well."""
        u_hat = self.saddle_height()
        return u_hat / (u_hat - 2 * self.C)

    def classify(self, x):
        """Well index: 0 for the global-minimum basin, 1 for the other."""
        xb, single = _as_batch(x, self.dimension)
        x1 = np.mod(xb[:, 0], self.domain.periods[0])
        s = self.saddle_x1
        lab = ((x1 > s) & (x1 < self.domain.periods[0] - s)).astype(np.intp)
        return int(lab[0]) if single else lab


class NormalizedEnergy(EnergyModel):
    """``U0 = (U - inf U) / eta1`` built by :func:`normalized_energy`."""

    def __init__(self, base, inf_value, eta1, argmin=None, notes=None):
        self.base = base
        self.domain = base.domain
        self.inf_value = float(inf_value)
        self.eta1 = float(eta1)
        self.argmin = argmin
        self.known_inf = 0.0
        self.notes = list(notes or [])

    def _energy(self, x):
        return (self.base._energy(x) - self.inf_value) / self.eta1

    def _gradient(self, x):
        return self.base._gradient(x) / self.eta1

    def minimizer_starts(self):
        return self.base.minimizer_starts()

    def integration_box(self, eps=1.0):
        return self.base.integration_box(eps * self.eta1)

    def log_partition(self, eps):
        base_lp = getattr(self.base, "log_partition", None)
        if base_lp is None:
            raise AttributeError("log_partition")
        return base_lp(eps * self.eta1) + self.inf_value / (eps * self.eta1)

    def gibbs(self, eps):
        return self.base.gibbs(eps * self.eta1)

    def states(self):
        return self.base.states()


def log_unnormalized_density(model, x, eps):
    """``-U(x) / eps``: the log of the unnormalized Gibbs density."""
    if not eps > 0:
        raise ValueError("temperature must be positive")
    u = model.energy(x)
    if not np.all(np.isfinite(u)):
        bad = np.asarray(x)
        if np.ndim(u):
            bad = np.asarray(x)[np.flatnonzero(~np.isfinite(u))[0]]
        raise EvaluationError(f"non-finite energy at x={bad!r}")
    return -u / eps


def estimate_inf(model, starts=None, tol=1e-6):
    """Locate ``inf U`` by local descent from every start; keep the best.

    Returns ``(value, argmin, residual_grad_norm)``.
    """
    if model.domain.kind == "finite":
        i = int(np.argmin(model.values))
        return float(model.values[i]), np.array([float(i)]), 0.0
    starts = model.minimizer_starts() if starts is None else np.atleast_2d(starts)
    best = None
    for s in starts:
        res = optimize.minimize(
            lambda z: model.energy(z),
            np.asarray(s, dtype=float),
            jac=lambda z: model.gradient(z),
            method="BFGS",
            options={"gtol": 1e-12, "maxiter": 2000},
        )
        z = model.domain.wrap(res.x)
        val = model.energy(z)
        if best is None or val < best[0]:
            best = (val, z)
    val, z = best
    resid = float(np.linalg.norm(model.gradient(z)))
    return float(val), z, resid


def normalized_energy(model, eta1, probes=None, rng=None):
    """Return ``U0 = (U - inf U) / eta1`` with ``inf U`` known or estimated.

    A residual gradient norm above ``1e-6`` at the estimated minimizer is
    recorded in ``notes`` (and warned).  Negative ``U0`` at any probe point
    means the descent missed the global minimum and raises
    :class:`InvariantViolation`.
    """
    if not eta1 > 0:
        raise ValueError("eta1 must be positive")
    notes = []
    argmin = None
    if model.known_inf is not None:
        inf_value = float(model.known_inf)
    else:
        inf_value, argmin, resid = estimate_inf(model)
        if resid > 1e-6:
            msg = f"estimated inf U has residual gradient norm {resid:.3g}"
            notes.append(msg)
            warnings.warn(msg, RuntimeWarning, stacklevel=2)
    u0 = NormalizedEnergy(model, inf_value, eta1, argmin=argmin, notes=notes)
    if probes is None:
        probes = default_probes(model, 256, rng if rng is not None else np.random.default_rng(0))
    vals = u0.energy(np.atleast_2d(probes))
    if np.min(vals) < -1e-9 * max(1.0, abs(inf_value)):
        raise InvariantViolation(f"U0 negative ({np.min(vals):.3g}) at a probe: inf U was overestimated")
    return u0


def default_probes(model, n, rng):
    if model.domain.kind == "finite":
        return model.states()
    box = np.asarray(model.integration_box(1.0))
    return box[:, 0] + (box[:, 1] - box[:, 0]) * rng.random((n, model.dimension))


@dataclass
class GradientReport:
    max_rel_error: float
    max_abs_error: float
    n_probes: int
    threshold: float = 1e-5
    worst_probe: np.ndarray = field(default=None, repr=False)

    @property
    def flagged(self):
        return self.max_rel_error > self.threshold


def gradient_check(model, probes, rel_step=1e-5, threshold=1e-5):
    """Compare ``model.gradient`` with central finite differences.

    The step on each axis is ``rel_step * max(1, |x_j|)``; the relative
    error of a probe is ``|fd - g|_inf / max(1, |g|_inf)``.
    """
    x = np.atleast_2d(np.asarray(probes, dtype=float))
    if x.shape[0] == 0:
        raise ValueError("need at least one probe")
    g = model.gradient(x)
    fd = np.empty_like(x)
    for j in range(x.shape[1]):
        h = rel_step * np.maximum(1.0, np.abs(x[:, j]))
        xp, xm = x.copy(), x.copy()
        xp[:, j] += h
        xm[:, j] -= h
        fd[:, j] = (model.energy(xp) - model.energy(xm)) / (xp[:, j] - xm[:, j])
    abs_err = np.abs(fd - g).max(axis=1)
    rel_err = abs_err / np.maximum(1.0, np.abs(g).max(axis=1))
    i = int(np.argmax(rel_err))
    return GradientReport(float(rel_err[i]), float(abs_err.max()), x.shape[0], threshold, x[i])


def energy_from_config(cfg):
    """Build an energy model from a flat config mapping.

    Recognized kinds: ``gaussian_mixture`` (``weights``, ``means``,
    ``variances``), ``torus_double_well`` (``dimension``, ``depth``,
    ``tilt``, ``transverse``), ``finite`` (``values``).
    """
    kind = cfg.get("kind")
    try:
        if kind == "gaussian_mixture":
            model = GaussianMixtureEnergy(cfg["weights"], cfg["means"], cfg["variances"])
            if "dimension" in cfg and cfg["dimension"] != model.dimension:
                raise ConfigError("dimension does not match means")
            return model
        if kind == "torus_double_well":
            return DoubleWellTorusEnergy(
                cfg["dimension"],
                depth=cfg.get("depth", 1.0),
                tilt=cfg.get("tilt", 0.0),
                transverse=cfg.get("transverse", 1.0),
            )
        if kind == "finite":
            return FiniteEnergy(cfg["values"])
    except KeyError as e:
        raise ConfigError(f"target of kind {kind!r} is missing {e.args[0]!r}") from None
    except ValueError as e:
        raise ConfigError(str(e)) from None
    raise ConfigError(f"unknown target kind {kind!r}")


def isotropic_two_well_mixture(d, weights, variances, separation=1.0):
    """Two isotropic Gaussians at ``-separation e_1`` and ``+separation e_1``."""
    means = np.zeros((2, d))
    means[0, 0], means[1, 0] = -separation, separation
    return GaussianMixtureEnergy(weights, means, np.asarray(variances, dtype=float))
