"""Deterministic random streams keyed by (seed, purpose, level, block).

Every random draw in a run comes from a generator whose identity is a pure
function of the run seed and a small integer key, so results do not depend
on the order in which particles or replicates are processed.
"""

import numpy as np

PROPAGATE = 0
RESAMPLE = 1
INIT = 2
BASELINE = 3
REPLICATE = 4

MASK64 = (1 << 64) - 1


def stream(seed, *key):
    """Return a ``numpy.random.Generator`` for ``seed`` and integer ``key``."""
    ss = np.random.SeedSequence(int(seed) & MASK64, spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))


def replicate_seed(seed, r):
    """64-bit seed for replicate ``r`` of a batch started from ``seed``."""
    ss = np.random.SeedSequence(int(seed) & MASK64, spawn_key=(REPLICATE, int(r)))
    lo, hi = ss.generate_state(2, dtype=np.uint32)
    return (int(hi) << 32) | int(lo)


def block_slices(n, block_size):
    return [slice(s, min(s + block_size, n)) for s in range(0, n, block_size)]


class ParticleStreams:
    """Per-block generators for an ensemble of ``n`` particles.

    Particles are split into fixed blocks of ``block_size``; block ``b`` at
    level ``level`` draws from ``stream(seed, PROPAGATE, level, b)``.  The
    block layout depends only on ``n`` and ``block_size``.

    ``standard_normal`` mimics the Generator method for sizes of the form
    ``(steps, n, d)`` (or ``(n, d)``), filling each block's slice from that
    block's own generator.  Successive calls continue each block stream, so
    drawing 100 steps twice equals drawing 200 steps once.
    """

    def __init__(self, seed, level, n, block_size=1024, purpose=PROPAGATE):
        self.n = int(n)
        self.slices = block_slices(self.n, int(block_size))
        self.generators = [stream(seed, purpose, level, b) for b in range(len(self.slices))]

    def blocks(self):
        return zip(self.slices, self.generators)

    def standard_normal(self, size):
        size = tuple(size)
        axis = 1 if len(size) == 3 else 0
        if size[axis] != self.n:
            raise ValueError(f"particle axis has length {size[axis]}, expected {self.n}")
        out = np.empty(size)
        for sl, g in self.blocks():
            if axis == 1:
                block = out[:, sl, :]
                block[...] = g.standard_normal(block.shape)
            else:
                out[sl] = g.standard_normal(out[sl].shape)
        return out
