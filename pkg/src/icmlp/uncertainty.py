"""Monte-Carlo dropout inference and predictive-entropy ranking.

MC mode keeps dropout stochastic while batch norm uses its running
statistics, so single samples can be scored.  Entropy (in nats) is taken
of the pass-averaged class probabilities.
"""
import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateModelError, DistributionError, ParameterError
from .layers import Mode, softmax


@dataclass
class PredictiveSummary:
    mean_probs: np.ndarray
    entropy: np.ndarray
    n_passes: int
    per_pass_probs: np.ndarray = None
    variance: np.ndarray = None

    @property
    def predicted_class(self):
        return np.argmax(self.mean_probs, axis=1)


def entropy(probs):
    """Shannon entropy in nats of one distribution, with ``0 ln 0 = 0``."""
    p = np.asarray(probs, dtype=np.float64).ravel()
    if np.any(p < 0.0) or not np.all(np.isfinite(p)):
        raise DistributionError("probabilities must be finite and non-negative")
    if abs(p.sum() - 1.0) > 1e-6:
        raise DistributionError(f"probabilities sum to {p.sum()}, not 1")
    return float(_row_entropy(p.reshape(1, -1))[0])


def _row_entropy(p):
    terms = np.where(p > 0.0, p * np.log(np.where(p > 0.0, p, 1.0)), 0.0)
    h = 0.0 - terms.sum(axis=1)
    return np.clip(h, 0.0, math.log(p.shape[1]))


def has_active_dropout(model):
    ab = model.ablation
    if ab.no_ic or ab.no_dropout or model.dropout_p == 0.0:
        return False
    return bool(model.dropout_layers())


def mc_dropout_predict(model, x, n_passes, rng, force=False, keep_passes=False, threads=1):
    """Average ``n_passes`` stochastic softmax outputs.

    Pass ``t`` draws its dropout masks from the ``t``-th child stream of
    ``rng``, so results do not depend on ``threads`` beyond summation order.
    A model without active dropout raises ``DegenerateModelError`` unless
    ``force`` is set.
    """
    if n_passes < 1:
        raise ParameterError(f"need at least one pass, got {n_passes}")
    if not force and not has_active_dropout(model):
        raise DegenerateModelError("deterministic model, entropy degenerate (use force=True)")
    pass_rngs = rng.spawn(n_passes)

    def run(replica, indices):
        prev = replica.set_mode(Mode.MC)
        try:
            out = [softmax(replica.forward(x, pass_rngs[t])) for t in indices]
        finally:
            replica.set_mode(prev)
        return out

    if threads > 1:
        chunks = [c for c in np.array_split(np.arange(n_passes), threads) if c.size]
        with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
            parts = list(pool.map(lambda c: run(model.copy(), c), chunks))
        probs = [p for part in parts for p in part]
    else:
        probs = run(model, range(n_passes))

    stack = np.stack(probs)
    mean = stack.mean(axis=0)
    return PredictiveSummary(mean_probs=mean, entropy=_row_entropy(mean), n_passes=n_passes,
                             per_pass_probs=stack if keep_passes else None,
                             variance=stack.var(axis=0))


def rank_by_entropy(entropies, top_n, order="lowest"):
    """Indices of the ``top_n`` lowest (or highest) entropies; ties keep index order."""
    h = np.asarray(getattr(entropies, "entropy", entropies), dtype=np.float64)
    if top_n > h.size or top_n < 0:
        raise ParameterError(f"top_n={top_n} out of range for {h.size} samples")
    if order == "lowest":
        idx = np.argsort(h, kind="stable")
    elif order == "highest":
        idx = np.argsort(-h, kind="stable")
    else:
        raise ParameterError(f"order must be 'lowest' or 'highest', got {order!r}")
    return [int(i) for i in idx[:top_n]]


def write_uncertainty_report(summary, path):
    n_classes = summary.mean_probs.shape[1]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_index", "predicted_class", "entropy"]
                   + [f"p_{c}" for c in range(n_classes)])
        for i, (cls, h, row) in enumerate(zip(summary.predicted_class, summary.entropy,
                                              summary.mean_probs)):
            w.writerow([i, int(cls), repr(float(h))] + [repr(float(p)) for p in row])
