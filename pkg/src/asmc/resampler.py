"""Inter-level importance weights and O(N) multinomial resampling via Vose's alias method."""

import math
from dataclasses import dataclass

import numba
import numpy as np

from .errors import DegenerateWeightsError


@dataclass(frozen=True)
class WeightVector:
    """Log weights with their max-shifted, normalized probabilities."""

    log_weights: np.ndarray
    probabilities: np.ndarray

    @classmethod
    def from_log(cls, log_weights, level=None):
        lw = np.asarray(log_weights, dtype=float).ravel()
        if lw.size == 0:
            raise ValueError("empty weight vector")
        if np.any(np.isnan(lw)) or np.any(lw == np.inf):
            raise DegenerateWeightsError(f"non-finite log weight at level {level}", level)
        top = lw.max()
        if top == -np.inf:
            raise DegenerateWeightsError(f"all weights vanished at level {level}", level)
        w = np.exp(lw - top)
        p = w / w.sum()
        return cls(lw, p)

    @classmethod
    def uniform(cls, n):
        return cls(np.zeros(n), np.full(n, 1.0 / n))

    def __len__(self):
        return self.probabilities.size

    @property
    def max_log_weight(self):
        return float(self.log_weights.max())

    def ess(self):
        return effective_sample_size(self)


def inter_level_log_weights(positions, model, eta_k, eta_next, level=None):
    """Weights ``exp(-(1/eta_next - 1/eta_k) U(x_i))`` for moving from ``eta_k`` to ``eta_next``.

    A non-finite energy gives the particle weight zero; if every weight
    vanishes :class:`DegenerateWeightsError` is raised.
    """
    if not eta_next < eta_k:
        raise ValueError("need eta_next < eta_k")
    u = np.atleast_1d(np.asarray(model.energy(positions), dtype=float))
    lw = -(1.0 / eta_next - 1.0 / eta_k) * u
    lw[~np.isfinite(lw)] = -np.inf
    return WeightVector.from_log(lw, level)


def effective_sample_size(weights):
    """``1 / sum p_i^2``, in ``[1, N]``."""
    p = weights.probabilities if isinstance(weights, WeightVector) else np.asarray(weights, float)
    return float(1.0 / np.dot(p, p))


@dataclass(frozen=True)
class AliasTable:
    """Cell ``i`` yields ``i`` with probability ``prob[i]``, else ``alias[i]``."""

    prob: np.ndarray
    alias: np.ndarray

    @property
    def n(self):
        return self.prob.size

    def implied_probabilities(self):
        """Sampling law implied by the table (reconstruction check)."""
        n = self.n
        out = self.prob / n
        np.add.at(out, self.alias, (1.0 - self.prob) / n)
        return out

    def draw_from_uniforms(self, u):
        """Map uniforms in ``[0, 1)`` to indices, one uniform per draw."""
        return _alias_draw(self.prob, self.alias, np.asarray(u, dtype=float))

    def sample(self, n, rng):
        return self.draw_from_uniforms(rng.random(n))


@numba.njit(cache=True)
def _vose(p):
    n = p.size
    # prob starts as the scaled weights; small indices stack from the front
    # of work, large ones from the back, keeping the working set small
    prob = p * n
    alias = np.empty(n, dtype=np.int64)
    work = np.empty(n, dtype=np.int64)
    ns = 0
    nl = 0
    for i in range(n):
        if prob[i] < 1.0:
            work[ns] = i
            ns += 1
        else:
            nl += 1
            work[n - nl] = i
    while ns > 0 and nl > 0:
        ns -= 1
        s = work[ns]
        g = work[n - nl]
        alias[s] = g
        prob[g] = (prob[g] + prob[s]) - 1.0
        if prob[g] < 1.0:
            nl -= 1
            work[ns] = g
            ns += 1
    # leftovers are numerically 1
    for t in range(nl):
        i = work[n - 1 - t]
        prob[i] = 1.0
        alias[i] = i
    for t in range(ns):
        i = work[t]
        prob[i] = 1.0
        alias[i] = i
    return prob, alias


@numba.njit(cache=True)
def _alias_draw(prob, alias, u):
    n = prob.size
    out = np.empty(u.size, dtype=np.int64)
    for t in range(u.size):
        v = u[t] * n
        i = int(v)
        if i >= n:
            i = n - 1
        out[t] = i if v - i < prob[i] else alias[i]
    return out


def build_alias(p):
    """Vose alias table for probabilities ``p`` (must sum to 1)."""
    p = np.ascontiguousarray(p, dtype=float).ravel()
    if p.size == 0:
        raise ValueError("empty probability vector")
    if np.any(p < 0) or not np.all(np.isfinite(p)):
        raise ValueError("probabilities must be finite and non-negative")
    s = p.sum()
    if not math.isclose(s, 1.0, rel_tol=0, abs_tol=1e-9):
        raise ValueError(f"probabilities sum to {s!r}, not 1")
    prob, alias = _vose(p)
    return AliasTable(prob, alias)


def resample(positions, weights, rng):
    """Draw ``N`` particles i.i.d. from ``sum_i p_i delta_{x_i}``, in draw order."""
    positions = np.asarray(positions)
    n = positions.shape[0]
    if n < 1:
        raise ValueError("need at least one particle")
    if len(weights) != n:
        raise ValueError("weights and positions differ in length")
    idx = build_alias(weights.probabilities).sample(n, rng)
    return positions[idx], idx
