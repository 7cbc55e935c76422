"""Dense 2-D float64 primitives and the seeded random source.

Tensors are plain C-contiguous ``numpy.ndarray`` objects of shape
``(rows, cols)`` and dtype float64, batch-first.  The helpers here add the
shape checking the rest of the package relies on.

Randomness comes from numpy's PCG64 bit generator, seeded through a
``SeedSequence`` so that independent child streams can be spawned for
parallel work.
"""
import numpy as np

from .errors import DimensionError, ParameterError

DTYPE = np.float64


def as_tensor(a):
    """Return ``a`` as a C-contiguous float64 2-D array (no copy if already one)."""
    t = np.ascontiguousarray(a, dtype=DTYPE)
    if t.ndim == 1:
        t = t.reshape(1, -1)
    if t.ndim != 2:
        raise DimensionError(f"expected a 2-D tensor, got shape {t.shape}")
    return t


def matmul(a, b):
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def add_row_broadcast(a, row):
    if row.ndim != 2 or row.shape[0] != 1 or a.shape[1] != row.shape[1]:
        raise DimensionError(f"cannot broadcast row {row.shape} onto {a.shape}")
    return a + row


def transpose(a):
    return np.ascontiguousarray(a.T)


class Rng:
    """Seeded PCG64 stream.

    Two ``Rng`` objects built from the same seed produce bitwise-identical
    draws.  ``spawn`` derives statistically independent children, which is
    how parallel folds and MC-dropout passes get their own streams.
    """

    def __init__(self, seed=0, _seed_seq=None):
        self.seed = int(seed)
        self._seed_seq = _seed_seq if _seed_seq is not None else np.random.SeedSequence(self.seed)
        self.generator = np.random.Generator(np.random.PCG64(self._seed_seq))

    def spawn(self, n):
        return [Rng(self.seed, _seed_seq=s) for s in self._seed_seq.spawn(n)]

    def permutation(self, n):
        return self.generator.permutation(n)

    def random(self, shape):
        return self.generator.random(shape)

    def normal(self, shape):
        return self.generator.standard_normal(shape)

    def __repr__(self):
        return f"Rng(seed={self.seed})"


def uniform(rng, lo, hi, rows, cols):
    """Entries drawn i.i.d. from ``[lo, hi)``."""
    if not lo < hi:
        raise ParameterError(f"uniform needs lo < hi, got lo={lo}, hi={hi}")
    return lo + (hi - lo) * rng.random((rows, cols))


def bernoulli_mask(rng, keep_prob, rows, cols):
    """0/1 float mask where each entry is 1 with probability ``keep_prob``."""
    if not 0.0 < keep_prob <= 1.0:
        raise ParameterError(f"keep_prob must lie in (0, 1], got {keep_prob}")
    if keep_prob == 1.0:
        return np.ones((rows, cols), dtype=DTYPE)
    return (rng.random((rows, cols)) < keep_prob).astype(DTYPE)
