"""Monte Carlo error summaries, the computable constants, and reference oracles."""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, optimize
from scipy.special import gammainc, gammaincc, logsumexp, ndtr

from . import streams
from .annealing import AnnealingSchedule
from .errors import ASMCError
from .targets import (
    ConstantEnergy,
    DoubleWellTorusEnergy,
    NormalizedEnergy,
    QuadraticEnergy,
    RadialPowerEnergy,
    default_probes,
    estimate_inf,
)

# ---------------------------------------------------------------- error summaries


@dataclass
class ErrorSummary:
    reference: float
    R: int
    mean_error: float
    mean_abs_error: float
    rms: float
    std: float
    ci_halfwidth: float
    estimates: np.ndarray = field(repr=False)
    failures: int = 0
    failure_messages: list = field(default_factory=list, repr=False)

    @property
    def mean(self):
        return self.reference + self.mean_error

    def quantiles(self, qs=(0.25, 0.5, 0.75)):
        return np.quantile(self.estimates, qs)


def summarize(estimates, reference, failures=0, messages=None):
    est = np.asarray(estimates, dtype=float)
    R = est.size
    if R < 2:
        raise ValueError("need at least two successful replicates")
    err = est - reference
    std = float(err.std(ddof=1))
    return ErrorSummary(
        reference=float(reference),
        R=R,
        mean_error=float(err.mean()),
        mean_abs_error=float(np.abs(err).mean()),
        rms=float(np.sqrt(np.mean(err * err))),
        std=std,
        ci_halfwidth=1.959963984540054 * std / math.sqrt(R),
        estimates=est,
        failures=failures,
        failure_messages=list(messages or []),
    )


def run_replicates(run_fn, R, seed, threads=1):
    """Call ``run_fn(replicate_seed(seed, r))`` for ``r < R``, in replicate order.

    Returns ``(values, errors)`` where failed replicates hold ``None`` and
    their exception in ``errors``.
    """
    seeds = [streams.replicate_seed(seed, r) for r in range(R)]

    def one(s):
        try:
            return run_fn(s), None
        except ASMCError as e:
            return None, e

    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            out = list(pool.map(one, seeds))
    else:
        out = [one(s) for s in seeds]
    return [o[0] for o in out], [o[1] for o in out]


def mc_error(run_fn, reference, R, seed=0, threads=1):
    """Estimate the Monte Carlo error of a seeded scalar estimator over ``R`` replicates.

    ``run_fn(seed) -> float``.  Replicates that raise an :class:`ASMCError`
    are excluded and counted in ``failures``.
    """
    if R < 2:
        raise ValueError("R must be >= 2")
    values, errors = run_replicates(run_fn, R, seed, threads)
    ok = [v for v in values if v is not None]
    msgs = [str(e) for e in errors if e is not None]
    return summarize(ok, reference, failures=len(msgs), messages=msgs)


# ---------------------------------------------------------------- quadrature


def _nodes_1d(lo, hi, n, periodic, breaks=()):
    cuts = sorted(b for b in breaks if lo < b < hi)
    if cuts:
        # midpoint rule per segment keeps indicator jumps off the nodes
        edges = [lo, *cuts, hi]
        xs, ws = [], []
        for a, b in zip(edges, edges[1:]):
            m = max(8, int(round(n * (b - a) / (hi - lo))))
            h = (b - a) / m
            xs.append(a + h * (np.arange(m) + 0.5))
            ws.append(np.full(m, h))
        return np.concatenate(xs), np.concatenate(ws)
    if periodic:
        # midpoints: spectrally accurate and never on a symmetric basin boundary
        h = (hi - lo) / n
        return lo + h * (np.arange(n) + 0.5), np.full(n, h)
    x = np.linspace(lo, hi, n + 1)
    w = np.full(n + 1, (hi - lo) / n)
    w[0] = w[-1] = 0.5 * w[0]
    return x, w


def quadrature_grid(model, eps, grid_n, breaks=None):
    """Tensor trapezoid nodes and weights over the model's integration box (d <= 2).

    ``breaks`` maps an axis to coordinates where the integrand may jump;
    that axis then uses a segment-wise midpoint rule.
    """
    breaks = breaks or {}
    d = model.dimension
    if d > 2:
        raise NotImplementedError("quadrature is limited to d <= 2")
    periodic = model.domain.kind == "torus"
    axes = [_nodes_1d(lo, hi, grid_n, periodic, breaks.get(i, ()))
            for i, (lo, hi) in enumerate(model.integration_box(eps))]
    if d == 1:
        return axes[0][0][:, None], axes[0][1]
    (x, wx), (y, wy) = axes
    X, Y = np.meshgrid(x, y, indexing="ij")
    return np.column_stack([X.ravel(), Y.ravel()]), np.outer(wx, wy).ravel()


def _quad_log_partition(model, eps, grid_n):
    pts, w = quadrature_grid(model, eps, grid_n)
    return float(logsumexp(-model.energy(pts) / eps, b=w))


def _quad_value(model, h, eps, grid_n, breaks=None):
    pts, w = quadrature_grid(model, eps, grid_n, breaks)
    lp = -model.energy(pts) / eps
    p = w * np.exp(lp - lp.max())
    p /= p.sum()
    return float(np.dot(p, np.asarray(h(pts), dtype=float).ravel()))


@dataclass
class QuadratureResult:
    value: float
    refined: float
    grid_n: int
    tolerance: float = 1e-3

    @property
    def discrepancy(self):
        return abs(self.refined - self.value)

    @property
    def flagged(self):
        return self.discrepancy > self.tolerance


def quadrature_integral_2d(model, h, eps=1.0, grid_n=512, breaks=None):
    """``int h pi_eps`` by tensor trapezoid, self-normalized on the same grid.

    The value at ``2 grid_n`` is reported alongside; a disagreement above
    ``1e-3`` sets ``flagged``.  Pass ``breaks={axis: [t, ...]}`` when ``h``
    jumps across ``x_axis = t``.
    """
    if grid_n < 64:
        raise ValueError("grid_n must be >= 64")
    return QuadratureResult(_quad_value(model, h, eps, grid_n, breaks),
                            _quad_value(model, h, eps, 2 * grid_n, breaks), grid_n)


def reference_halfplane_mass(mixture, axis, threshold, eps=1.0, grid_n=512):
    """``pi_eps({x_axis < threshold})`` for a diagonal Gaussian mixture.

    Closed form at ``eps = 1``; other temperatures use quadrature (d <= 2).
    """
    if eps == 1.0:
        sd = np.sqrt(mixture.variances[:, axis])
        return float(np.dot(mixture.weights, ndtr((threshold - mixture.means[:, axis]) / sd)))
    if mixture.dimension > 2:
        raise NotImplementedError("tempered mixtures are not Gaussian mixtures; quadrature needs d <= 2")
    return quadrature_integral_2d(
        mixture, lambda x: (x[:, axis] < threshold).astype(float), eps, grid_n, {axis: [threshold]}
    ).refined


def torus_well_masses(model, eps, grid_n=4096):
    """Per-well Gibbs masses of a :class:`DoubleWellTorusEnergy`.

    The energy separates, and the basin boundary only involves ``x_1``, so
    the masses reduce to a periodic 1-D quadrature in ``x_1``.
    """
    p1 = model.domain.periods[0]
    x1 = p1 * (np.arange(grid_n) + 0.5) / grid_n
    pts = np.zeros((grid_n, model.dimension))
    pts[:, 0] = x1
    lp = -model.energy(pts) / eps
    w = np.exp(lp - lp.max())
    lab = model.classify(pts)
    m = np.bincount(lab, weights=w, minlength=2)
    return m / m.sum()


def log_partition(model, eps, grid_n=512):
    """``log int exp(-U/eps)`` by closed form where available, else quadrature."""
    if isinstance(model, ConstantEnergy) and model.domain.kind == "torus":
        return math.log(math.prod(model.domain.periods)) - model.value / eps
    lp = getattr(model, "log_partition", None)
    if lp is not None:
        try:
            return float(lp(eps))
        except (AttributeError, NotImplementedError):
            pass
    return _quad_log_partition(model, eps, grid_n)


# ---------------------------------------------------------------- s_c and C_r


def _unwrap_normalized(model):
    if isinstance(model, NormalizedEnergy):
        return model.base
    return model


def compute_sc(model_U0, c, grid_n=1024):
    """Tail-to-core ratio ``int_{U0>c} e^{-U0} / int_{U0<=c} e^{-U0}``.

    Exact for finite spaces, Gaussian (quadratic) and radial-power energies
    (regularized incomplete gamma); tensor quadrature for ``d <= 2``.
    """
    if not c > 0:
        raise ValueError("c must be positive")
    base = _unwrap_normalized(model_U0)
    if isinstance(base, QuadraticEnergy) and (base is not model_U0 or base.offset == 0):
        a = 0.5 * base.dimension
        return float(gammaincc(a, c) / gammainc(a, c))
    if isinstance(base, RadialPowerEnergy):
        a = base.dimension / base.k0
        return float(gammaincc(a, c) / gammainc(a, c))
    if model_U0.domain.kind == "finite":
        u = model_U0.energy(model_U0.states())
        w = np.ones_like(u)
    else:
        pts, w = quadrature_grid(model_U0, 1.0, grid_n)
        u = model_U0.energy(pts)
    e = w * np.exp(-u)
    core = e[u <= c].sum()
    if core <= 0:
        raise ASMCError(f"sublevel set {{U0 <= {c}}} is empty on the grid")
    return float(e[u > c].sum() / core)


@dataclass
class CrBound:
    value: float
    argmin_c: float
    grid: np.ndarray = field(repr=False)
    grid_values: np.ndarray = field(repr=False)


def _max_probe_u0(model_U0, rng):
    if model_U0.domain.kind == "finite":
        return float(model_U0.energy(model_U0.states()).max())
    return float(np.max(model_U0.energy(default_probes(model_U0, 256, rng))))


def cr_bound(model_U0, nu, c_range=None, n_grid=32, refine=True, rng=None):
    """``inf_c (1 + s_c) e^{c nu}`` over a log-spaced ``c`` grid plus a local refinement.

    ``nu`` is the reciprocal-temperature step in ``U0`` units.  The default
    grid spans ``[0.1, 10 max U0]`` over probe points.
    """
    if not nu > 0:
        raise ValueError("nu must be positive")
    if c_range is None:
        umax = _max_probe_u0(model_U0, rng if rng is not None else np.random.default_rng(0))
        if umax <= 0:
            # single-state / constant energy: s_c = 0 for every c, the infimum is the c -> 0 limit
            return CrBound(1.0, 0.0, np.zeros(0), np.zeros(0))
        c_range = (0.1, 10.0 * max(umax, 0.1))
    grid = np.geomspace(c_range[0], c_range[1], n_grid)
    if model_U0.domain.kind == "finite":
        levels = np.unique(model_U0.energy(model_U0.states()))
        grid = np.union1d(grid, levels[(levels > 0) & (levels <= c_range[1])])

    def log_f(c):
        # log space: e^{c nu} overflows long before the minimizer matters
        return math.log1p(compute_sc(model_U0, c)) + c * nu

    logs = np.array([log_f(c) for c in grid])
    i = int(np.argmin(logs))
    best_c, best = float(grid[i]), float(logs[i])
    if refine and model_U0.domain.kind != "finite":
        lo = grid[max(i - 1, 0)]
        hi = grid[min(i + 1, grid.size - 1)]
        if hi > lo:
            res = optimize.minimize_scalar(log_f, bounds=(lo, hi), method="bounded",
                                           options={"xatol": 1e-10 * hi})
            if res.fun < best:
                best_c, best = float(res.x), float(res.fun)
    with np.errstate(over="ignore"):
        vals = np.exp(logs)
    return CrBound(math.exp(best), best_c, grid, vals)


def _probe_points(model, probes, grid_n):
    if probes is not None:
        return np.atleast_2d(np.asarray(probes, dtype=float))
    if model.domain.kind == "finite":
        return model.states()
    pts = quadrature_grid(model, 1.0, min(grid_n, 256))[0]
    try:
        _, argmin, _ = estimate_inf(model)
        pts = np.vstack([pts, np.atleast_2d(argmin)])
    except NotImplementedError:
        pass
    return pts


def cr_empirical(model, schedule, probes=None, grid_n=512):
    """``max_k max_probes pi_{k+1}(x) / pi_k(x)`` with normalized densities.

    Normalizers come from :func:`log_partition`.  The default probe set is a
    quadrature grid plus the located global minimizer, where the ratio of a
    cooling step peaks.
    """
    if not isinstance(schedule, AnnealingSchedule):
        schedule = AnnealingSchedule(tuple(schedule))
    if schedule.M < 2:
        return 1.0
    pts = _probe_points(model, probes, grid_n)
    u = model.energy(pts)
    temps = schedule.temperatures
    logz = [log_partition(model, e, grid_n) for e in temps]
    best = -np.inf
    for k in range(schedule.M - 1):
        lr = -(1 / temps[k + 1] - 1 / temps[k]) * u + logz[k] - logz[k + 1]
        best = max(best, float(lr.max()))
    return float(math.exp(best))


# ---------------------------------------------------------------- C_LBV


@dataclass
class ClbvResult:
    value: float
    coarse: float
    fine: float
    n_grid: int

    @property
    def relative_discrepancy(self):
        # roundoff-level values (constant masses) are not a disagreement
        return abs(self.fine - self.coarse) / max(abs(self.fine), 1e-10)

    @property
    def flagged(self):
        return self.relative_discrepancy > 0.1


def _clbv_on_grid(masses, grid):
    logm = np.log(np.array([np.asarray(masses(e), dtype=float) for e in grid]))
    deriv = np.gradient(logm, grid, axis=0)
    return float(integrate.trapezoid(np.abs(deriv), grid, axis=0).sum())


def compute_clbv(masses, eta, eta_max, n_grid=64):
    """``sum_j int_eta^eta_max |d/de ln pi_e(Omega_j)| de``.

    Central differences and the trapezoid rule on ``n_grid`` log-spaced
    temperatures, then on the once-halved grid; ``value`` is the Richardson
    combination of the two.  Relative disagreement above 10% is flagged.
    """
    if not 0 < eta < eta_max:
        raise ValueError("need 0 < eta < eta_max")
    coarse_grid = np.geomspace(eta, eta_max, n_grid)
    fine_grid = np.geomspace(eta, eta_max, 2 * n_grid - 1)
    coarse = _clbv_on_grid(masses, coarse_grid)
    fine = _clbv_on_grid(masses, fine_grid)
    value = max(0.0, (4 * fine - coarse) / 3)
    return ClbvResult(value, coarse, fine, n_grid)


# ---------------------------------------------------------------- constants bundle


@dataclass
class ConstantsBundle:
    J: int
    C_r: float
    C_LBV: float
    C_beta: float
    C_T: float
    C_N: float
    sc_grid: list = field(default_factory=list)
    notes: dict = field(default_factory=dict)

    def identity_residuals(self):
        """Relative residuals of the ``C_T`` and ``C_N`` identities, recomputed in another order."""
        cb = 2 * self.C_beta + 1
        ct = 4 * self.J * self.C_r * cb
        cn = (self.J * cb * (1 + self.C_r)) ** 2
        return abs(ct - self.C_T) / self.C_T, abs(cn - self.C_N) / self.C_N


def constants_bundle(J, C_r, C_LBV, notes=None, sc_grid=None):
    """Derived constants ``C_beta = exp(2 C_r C_LBV)``, ``C_T``, ``C_N``."""
    if J < 1:
        raise ValueError("J must be >= 1")
    if C_r < 1:
        raise ValueError("C_r must be >= 1")
    if C_LBV < 0:
        raise ValueError("C_LBV must be >= 0")
    C_beta = math.exp(2 * C_r * C_LBV)
    C_T = 4 * J * C_r * (2 * C_beta + 1)
    C_N = J * J * (2 * C_beta + 1) ** 2 * (1 + C_r) ** 2
    return ConstantsBundle(J, C_r, C_LBV, C_beta, C_T, C_N, list(sc_grid or []), dict(notes or {}))


# ---------------------------------------------------------------- ensemble summaries


def mass_fractions(ensemble, classifier, J=None):
    """Fraction of particles in each domain ``0..J-1``."""
    x = getattr(ensemble, "positions", ensemble)
    lab = np.asarray(classifier(np.asarray(x))).ravel()
    J = int(lab.max()) + 1 if J is None else J
    return np.bincount(lab, minlength=J)[:J] / lab.size


# ---------------------------------------------------------------- separable check


@dataclass
class SeparableRow:
    d: int
    nu: float
    marginal_factor: float
    convex_factor: float
    bound: float
    c_marginal: float
    c_convex: float


@dataclass
class SeparableTable:
    rows: list
    skipped: list

    @property
    def spread(self):
        b = [r.bound for r in self.rows]
        return max(b) / min(b)


def _convex_sc(c, a, alpha_b, alpha_u):
    t = c - alpha_u
    if t <= 0:
        return math.inf
    return math.exp(alpha_u - alpha_b) * gammaincc(a, t) / gammainc(a, t)


def cr_separable_check(marginal_U0, convex_part, dims, eta=1.0, nu_rule=None, n_grid=32):
    """Factorized ``C_r`` bound for ``U0 = U~0(x~) + V0(x^)`` across total dimensions.

    ``convex_part = (alpha0, k0, alpha_b, alpha_u)`` with
    ``alpha0 |x|^k0 + alpha_b <= V0 <= alpha0 |x|^k0 + alpha_u``; ``V0``
    lives on the ``d - d~`` coordinates not used by the marginal.  The bound
    is ``T1 * T2`` with each factor ``inf_c (1 + s_c) e^{c nu}``; the convex
    tail ratio uses the regularized incomplete gamma function.  ``nu_rule``
    maps ``(eta, d)`` to the step, default ``eta / d``.  Dimensions with
    ``d < k0`` are skipped.
    """
    alpha0, k0, alpha_b, alpha_u = convex_part
    if k0 <= 1:
        raise NotImplementedError("convex part needs k0 > 1")
    if alpha0 <= 0 or alpha_b > alpha_u:
        raise ValueError("need alpha0 > 0 and alpha_b <= alpha_u")
    nu_rule = nu_rule or (lambda e, d: e / d)
    d_tilde = marginal_U0.dimension
    rows, skipped = [], []
    for d in dims:
        if d < k0 or d <= d_tilde:
            skipped.append(d)
            continue
        nu = nu_rule(eta, d)
        t1 = cr_bound(marginal_U0, nu, n_grid=n_grid)
        a = (d - d_tilde) / k0

        def f(c):
            return (1.0 + _convex_sc(c, a, alpha_b, alpha_u)) * math.exp(c * nu)

        lo = alpha_u + 1e-3
        grid = lo + np.geomspace(1e-3, 20.0 * max(a, 1.0) + 10.0, 4 * n_grid)
        vals = np.array([f(c) for c in grid])
        i = int(np.argmin(vals))
        res = optimize.minimize_scalar(f, bounds=(grid[max(i - 1, 0)], grid[min(i + 1, grid.size - 1)]),
                                       method="bounded")
        t2, c2 = (float(res.fun), float(res.x)) if res.fun < vals[i] else (float(vals[i]), float(grid[i]))
        rows.append(SeparableRow(int(d), nu, t1.value, t2, t1.value * t2, t1.argmin_c, c2))
    return SeparableTable(rows, skipped)


def well_masses(model, eps, grid_n=512):
    """Per-domain Gibbs masses for the provided two-well families."""
    if isinstance(model, DoubleWellTorusEnergy):
        return torus_well_masses(model, eps)
    if model.domain.kind == "finite":
        raise TypeError("use FiniteLocalModel.masses for finite spaces")
    lower = reference_halfplane_mass(model, 0, 0.0, eps, grid_n)
    return np.array([lower, 1.0 - lower])
