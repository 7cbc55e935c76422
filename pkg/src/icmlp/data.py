"""Feature-vector datasets: CSV I/O, hold-out splits, CV folds, mini-batches.

CSV layout: one sample per line, ``label,f0,f1,...,f{D-1}``.  An optional
header line is recognised by a non-numeric first field.  Labels are dense
integers starting at 0.
"""
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, ParameterError, ParseError
from .numerics import DTYPE, Rng


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    n_classes: int

    def __post_init__(self):
        if self.features.ndim != 2 or self.features.shape[0] != self.labels.shape[0]:
            raise ConfigurationError(
                f"features {self.features.shape} and labels {self.labels.shape} disagree")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise ConfigurationError(f"labels must lie in [0, {self.n_classes})")

    def __len__(self):
        return self.features.shape[0]

    @property
    def dim(self):
        return self.features.shape[1]

    def subset(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(np.ascontiguousarray(self.features[idx]), self.labels[idx], self.n_classes)


def make_dataset(features, labels, n_classes=None):
    features = np.ascontiguousarray(features, dtype=DTYPE)
    labels = np.asarray(labels, dtype=np.int64)
    if n_classes is None:
        n_classes = int(labels.max()) + 1 if labels.size else 1
    return Dataset(features, labels, n_classes)


def _is_number(field):
    try:
        float(field)
    except ValueError:
        return False
    return True


def load_csv(path, expect_dim=None):
    """Parse a labelled feature CSV; ``n_classes`` becomes ``max(label) + 1``."""
    labels, rows = [], []
    dim = expect_dim
    with open(path, encoding="utf-8", newline="") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\r\n")
            if not line.strip():
                continue
            fields = line.split(",")
            if lineno == 1 and not _is_number(fields[0].strip()):
                continue
            try:
                label = int(fields[0])
            except ValueError:
                raise ParseError(f"label {fields[0]!r} is not an integer", lineno) from None
            if label < 0:
                raise ParseError(f"negative label {label}", lineno)
            n_feat = len(fields) - 1
            if dim is None:
                if n_feat < 1:
                    raise ParseError("row has no features", lineno)
                dim = n_feat
            elif n_feat != dim:
                raise ParseError(f"expected {dim} features, found {n_feat}", lineno)
            try:
                values = [float(f) for f in fields[1:]]
            except ValueError as exc:
                raise ParseError(f"non-numeric feature ({exc})", lineno) from None
            if not all(math.isfinite(v) for v in values):
                raise ParseError("non-finite feature value", lineno)
            labels.append(label)
            rows.append(values)
    if not rows:
        raise ParseError("no data rows", 1)
    return make_dataset(np.array(rows, dtype=DTYPE), np.array(labels, dtype=np.int64))


def write_csv(ds, path, header=False):
    """Write ``ds`` in canonical form (``repr`` floats, '\\n' line ends)."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        if header:
            fh.write(",".join(["label"] + [f"f{j}" for j in range(ds.dim)]) + "\n")
        for label, row in zip(ds.labels, ds.features):
            fh.write(f"{int(label)}," + ",".join(repr(float(v)) for v in row) + "\n")


def holdout_split(ds, fraction, rng):
    """Shuffle and split off ``round(fraction * N)`` samples (clamped to [1, N-1]).

    Returns ``(train, held)``.
    """
    n = len(ds)
    if not 0.0 < fraction < 1.0:
        raise ParameterError(f"hold-out fraction must lie in (0, 1), got {fraction}")
    if n < 2:
        raise ParameterError(f"need at least 2 samples to split, got {n}")
    n_held = min(max(int(math.floor(fraction * n + 0.5)), 1), n - 1)
    perm = rng.permutation(n)
    return ds.subset(np.sort(perm[n_held:])), ds.subset(np.sort(perm[:n_held]))


@dataclass(frozen=True)
class FoldPlan:
    """Per repeat, ``k`` disjoint index arrays covering every sample once.

    The first ``N mod k`` folds hold one extra sample.
    """
    k: int
    repeats: int
    seed: int
    assignments: tuple

    def folds(self, repeat):
        return self.assignments[repeat]

    def pairs(self):
        """All (repeat, fold) index pairs, ``k * repeats`` of them."""
        return [(r, f) for r in range(self.repeats) for f in range(self.k)]


def make_folds(ds, k, repeats, seed):
    """Seeded fold plan; each repeat uses a fresh shuffle.  ``ds`` may be a sample count."""
    n_samples = ds if isinstance(ds, (int, np.integer)) else len(ds)
    if k < 2:
        raise ConfigurationError(f"need k >= 2 folds, got {k}")
    if repeats < 1:
        raise ConfigurationError(f"need at least one repeat, got {repeats}")
    if n_samples < k:
        raise ConfigurationError(f"cannot make {k} folds from {n_samples} samples")
    rng = Rng(seed)
    assignments = []
    for _ in range(repeats):
        perm = rng.permutation(n_samples)
        assignments.append(tuple(np.sort(part) for part in np.array_split(perm, k)))
    return FoldPlan(k, repeats, seed, tuple(assignments))


def batches(ds, batch_size, rng):
    """Yield shuffled ``(features, labels)`` mini-batches for one epoch.

    A trailing batch of a single sample is dropped (batch norm needs two rows).
    """
    if batch_size < 2:
        raise ConfigurationError(f"batch size must be >= 2, got {batch_size}")
    perm = rng.permutation(len(ds))
    for start in range(0, len(perm), batch_size):
        idx = perm[start:start + batch_size]
        if idx.size < 2:
            break
        yield ds.features[idx], ds.labels[idx]
