"""Training loop, early stopping, cross-validation, ablations and random search."""
import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .data import batches, holdout_split, make_folds
from .errors import (ConfigurationError, DivergenceError, IcMlpError, ParameterError,
                     SearchError)
from .layers import Mode, softmax_cross_entropy
from .model import VARIANTS, AblationFlags, build_model, copy_weights, load_model, save_model
from .numerics import Rng
from .optim import AdamW, ExponentialLR

log = logging.getLogger(__name__)

PRESETS = {
    "gender": dict(n_residual=4, n_downsample=4, batch_size=512, initial_lr=2e-2,
                   weight_decay=4e-3, lr_gamma=6e-2),
    "age": dict(n_residual=2, n_downsample=2, batch_size=128, initial_lr=2e-3,
                weight_decay=1e-4, lr_gamma=4e-1),
}

METRICS = ("train_loss", "train_acc", "val_loss", "val_acc", "test_loss", "test_acc")


@dataclass(frozen=True)
class TrainConfig:
    n_residual: int = 4
    n_downsample: int = 4
    batch_size: int = 512
    initial_lr: float = 2e-2
    weight_decay: float = 4e-3
    lr_gamma: float = 6e-2
    dropout_p: float = 0.05
    patience: int = 5
    max_epochs: int = 100
    seed: int = 0
    no_dropout: bool = False
    no_ic: bool = False
    no_skip: bool = False
    init_weights_path: str = None

    def __post_init__(self):
        if self.n_residual < 1 or self.n_downsample < 1:
            raise ConfigurationError("block counts must be positive")
        if self.n_residual != self.n_downsample:
            raise ConfigurationError(f"residual and downsample block counts must match, got "
                                     f"{self.n_residual} and {self.n_downsample}")
        if self.batch_size < 2:
            raise ConfigurationError(f"batch_size must be >= 2, got {self.batch_size}")
        if self.initial_lr < 0 or self.weight_decay < 0:
            raise ConfigurationError("initial_lr and weight_decay must be non-negative")
        if not 0.0 < self.lr_gamma <= 1.0:
            raise ConfigurationError(f"lr_gamma must lie in (0, 1], got {self.lr_gamma}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigurationError(f"dropout_p must lie in [0, 1), got {self.dropout_p}")
        if self.patience < 1 or self.max_epochs < 1:
            raise ConfigurationError("patience and max_epochs must be positive")

    @property
    def ablation(self):
        return AblationFlags(self.no_dropout, self.no_ic, self.no_skip)

    def with_ablation(self, flags):
        return replace(self, no_dropout=flags.no_dropout, no_ic=flags.no_ic, no_skip=flags.no_skip)

    @classmethod
    def field_types(cls):
        return {f.name: f.type for f in fields(cls)}


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    lr: float
    train_loss: float
    train_acc: float
    val_loss: float
    val_acc: float


@dataclass
class RunResult:
    history: list
    best_epoch: int
    best_val_loss: float
    model: object = field(repr=False, default=None)
    final_model_path: str = None
    test_loss: float = None
    test_acc: float = None

    @property
    def best_record(self):
        return self.history[self.best_epoch - 1]


class EarlyStopping:
    """Stop once ``patience`` consecutive epochs bring no new best loss."""

    def __init__(self, patience):
        self.patience = patience
        self.best_loss = math.inf
        self.best_epoch = 0
        self.epochs_seen = 0
        self.bad_epochs = 0

    def update(self, loss):
        """Record one epoch's validation loss; return ``(improved, stop)``."""
        self.epochs_seen += 1
        improved = loss < self.best_loss
        if improved:
            self.best_loss = loss
            self.best_epoch = self.epochs_seen
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
        return improved, self.bad_epochs >= self.patience


def train_epoch(model, optimizer, train_ds, batch_size, rng):
    """One shuffled pass of forward / loss / backward / AdamW.

    Returns the sample-weighted mean loss and accuracy of the epoch (measured
    on the train-mode logits).
    """
    model.set_mode(Mode.TRAIN)
    total_loss, correct, seen = 0.0, 0, 0
    for i, (xb, yb) in enumerate(batches(train_ds, batch_size, rng)):
        logits = model.forward(xb, rng)
        loss, grad = softmax_cross_entropy(logits, yb)
        if not math.isfinite(loss):
            raise DivergenceError(f"non-finite loss {loss} at batch {i}", batch_index=i)
        model.backward(grad)
        optimizer.step()
        optimizer.zero_grads()
        b = yb.shape[0]
        total_loss += loss * b
        correct += int(np.sum(np.argmax(logits, axis=1) == yb))
        seen += b
    if seen == 0:
        raise ConfigurationError("training set yields no batch of at least 2 samples")
    return total_loss / seen, correct / seen


def predict_logits(model, features, chunk=4096):
    """Eval-mode logits, computed in row chunks; restores the model's mode."""
    prev = model.set_mode(Mode.EVAL)
    try:
        parts = [model.forward(features[s:s + chunk]) for s in range(0, features.shape[0], chunk)]
    finally:
        model.set_mode(prev)
    return np.concatenate(parts, axis=0)


def evaluate(model, ds):
    """Eval-mode mean cross-entropy and accuracy (argmax ties go to the lowest class)."""
    logits = predict_logits(model, ds.features)
    loss, _ = softmax_cross_entropy(logits, ds.labels)
    acc = float(np.mean(np.argmax(logits, axis=1) == ds.labels))
    return loss, acc


def fit(train_ds, val_ds, cfg, test_ds=None, model_out=None, on_epoch=None):
    """Train with per-epoch exponential LR decay and early stopping on val loss.

    The returned model carries the weights of the best validation epoch.
    """
    n_classes = max(train_ds.n_classes, val_ds.n_classes,
                    test_ds.n_classes if test_ds is not None else 0)
    init_rng, train_rng = Rng(cfg.seed).spawn(2)
    model = build_model(train_ds.dim, n_classes, cfg.n_residual, cfg.n_downsample,
                        cfg.dropout_p, cfg.ablation, init_rng)
    if cfg.init_weights_path:
        src = load_model(cfg.init_weights_path)
        if (src.input_dim, src.n_classes) != (model.input_dim, model.n_classes):
            raise ConfigurationError(
                f"warm-start model is {src.input_dim}->{src.n_classes}, "
                f"data needs {model.input_dim}->{model.n_classes}")
        copy_weights(src, model)

    optimizer = AdamW(model.parameters(), cfg.initial_lr, cfg.weight_decay)
    sched = ExponentialLR(cfg.initial_lr, cfg.lr_gamma)
    stopper = EarlyStopping(cfg.patience)
    history, best_state = [], None
    for e in range(cfg.max_epochs):
        optimizer.lr = sched.lr_at_epoch(e)
        train_loss, train_acc = train_epoch(model, optimizer, train_ds, cfg.batch_size, train_rng)
        val_loss, val_acc = evaluate(model, val_ds)
        if not math.isfinite(val_loss):
            raise DivergenceError(f"non-finite validation loss at epoch {e + 1}")
        rec = EpochRecord(e + 1, optimizer.lr, train_loss, train_acc, val_loss, val_acc)
        history.append(rec)
        if on_epoch is not None:
            on_epoch(rec)
        log.debug("epoch %d lr=%.3g train=%.4f/%.4f val=%.4f/%.4f", rec.epoch, rec.lr,
                  train_loss, train_acc, val_loss, val_acc)
        improved, stop = stopper.update(val_loss)
        if improved:
            best_state = [a.copy() for a in model.state_arrays()]
        if stop:
            break
    for dst, src in zip(model.state_arrays(), best_state):
        dst[...] = src
    model.set_mode(Mode.EVAL)

    result = RunResult(history, stopper.best_epoch, stopper.best_loss, model)
    if test_ds is not None:
        result.test_loss, result.test_acc = evaluate(model, test_ds)
    if model_out is not None:
        save_model(model, model_out)
        result.final_model_path = str(model_out)
    return result


# -- cross-validation -------------------------------------------------------


class RunFailedError(IcMlpError, RuntimeError):
    """A single CV run failed; ``repeat`` and ``fold`` locate it."""

    def __init__(self, repeat, fold, cause):
        super().__init__(f"repeat {repeat}, fold {fold}: {cause}")
        self.repeat, self.fold, self.cause = repeat, fold, cause


@dataclass
class CrossValResult:
    variant: str
    rows: list
    aggregate: dict
    results: list = field(repr=False, default_factory=list)


def cv_split(plan, repeat, fold, seed):
    """Index arrays ``(train, val, test)`` for one run.

    The test fold is ``fold``; validation is fold ``(fold + 1) mod k``.  With
    only two folds that would leave nothing to train on, so a 10% hold-out of
    the remaining fold serves as validation instead.
    """
    folds = plan.folds(repeat)
    k = plan.k
    test = folds[fold]
    if k >= 3:
        v = (fold + 1) % k
        val = folds[v]
        train = np.sort(np.concatenate([folds[i] for i in range(k) if i not in (fold, v)]))
        return train, val, test
    rest = folds[1 - fold]
    perm = Rng(seed).permutation(rest.size)
    n_val = min(max(int(math.floor(0.1 * rest.size + 0.5)), 1), rest.size - 1)
    return np.sort(rest[perm[n_val:]]), np.sort(rest[perm[:n_val]]), test


def aggregate_rows(rows, variant="full"):
    """Mean and population std of every metric column."""
    agg = {"variant": variant, "n_runs": len(rows)}
    for m in METRICS:
        vals = np.array([r[m] for r in rows], dtype=float)
        agg[f"{m}_mean"] = float(vals.mean())
        agg[f"{m}_std"] = float(vals.std())
    return agg


def cross_validate(ds, cfg, k=5, repeats=5, variant=None, threads=1, on_run=None):
    """k-fold CV repeated ``repeats`` times; every run gets seed ``cfg.seed ^ run_index``."""
    variant = variant or cfg.ablation.name
    plan = make_folds(ds, k, repeats, cfg.seed)
    pairs = plan.pairs()

    def run(i):
        r, f = pairs[i]
        run_seed = cfg.seed ^ i
        tr, va, te = cv_split(plan, r, f, run_seed)
        try:
            res = fit(ds.subset(tr), ds.subset(va), replace(cfg, seed=run_seed), ds.subset(te))
        except IcMlpError as exc:
            raise RunFailedError(r, f, exc) from exc
        best = res.best_record
        row = {"variant": variant, "repeat": r, "fold": f, "best_epoch": res.best_epoch,
               "train_loss": best.train_loss, "train_acc": best.train_acc,
               "val_loss": best.val_loss, "val_acc": best.val_acc,
               "test_loss": res.test_loss, "test_acc": res.test_acc}
        if on_run is not None:
            on_run(row)
        return row, res

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            out = list(pool.map(run, range(len(pairs))))
    else:
        out = [run(i) for i in range(len(pairs))]
    rows = [row for row, _ in out]
    return CrossValResult(variant, rows, aggregate_rows(rows, variant), [res for _, res in out])


def ablation_sweep(ds, cfg, variants=tuple(VARIANTS), k=5, repeats=5, threads=1, on_run=None):
    """Cross-validate each named variant with identical folds and run seeds."""
    results = []
    for name in variants:
        if name not in VARIANTS:
            raise ConfigurationError(f"unknown variant {name!r}; choose from {sorted(VARIANTS)}")
        results.append(cross_validate(ds, cfg.with_ablation(VARIANTS[name]), k, repeats,
                                      variant=name, threads=threads, on_run=on_run))
    return results


# -- random search ----------------------------------------------------------


@dataclass(frozen=True)
class Choice:
    options: tuple

    def sample(self, rng):
        return self.options[int(rng.generator.integers(len(self.options)))]


@dataclass(frozen=True)
class LogUniform:
    lo: float
    hi: float

    def sample(self, rng):
        if self.lo == self.hi:
            return self.lo
        if not 0.0 < self.lo < self.hi:
            raise ParameterError(f"log-uniform range needs 0 < lo < hi, got {self.lo}, {self.hi}")
        return float(math.exp(rng.generator.uniform(math.log(self.lo), math.log(self.hi))))


@dataclass(frozen=True)
class SearchSpace:
    """Distributions for the tuned hyperparameters.

    ``n_blocks`` sets both the residual and the downsample count.
    """
    n_blocks: object = Choice((1, 2, 3, 4))
    batch_size: object = Choice((128, 256, 512))
    initial_lr: object = LogUniform(1e-4, 1e-1)
    weight_decay: object = LogUniform(1e-5, 1e-2)
    lr_gamma: object = LogUniform(1e-2, 1.0)

    def sample(self, rng, base):
        n = self.n_blocks.sample(rng)
        return replace(base, n_residual=n, n_downsample=n,
                       batch_size=self.batch_size.sample(rng),
                       initial_lr=self.initial_lr.sample(rng),
                       weight_decay=self.weight_decay.sample(rng),
                       lr_gamma=self.lr_gamma.sample(rng))


def random_search(train_ds, space, n_trials, base_cfg, holdout_fraction=0.1, seed=None,
                  on_trial=None):
    """Fit sampled configs on ``1 - holdout_fraction`` of the data and keep the one
    with the lowest cross-entropy on the held-out part.

    Returns ``(best_cfg, trial_log)``.
    """
    if n_trials < 1:
        raise ParameterError(f"n_trials must be >= 1, got {n_trials}")
    seed = base_cfg.seed if seed is None else seed
    split_rng, sample_rng = Rng(seed).spawn(2)
    fit_ds, held_ds = holdout_split(train_ds, holdout_fraction, split_rng)
    trials, best, errors = [], None, []
    for i in range(n_trials):
        cfg = replace(space.sample(sample_rng, base_cfg), seed=seed ^ i)
        row = {"trial": i, "n_blocks": cfg.n_residual, "batch_size": cfg.batch_size,
               "initial_lr": cfg.initial_lr, "weight_decay": cfg.weight_decay,
               "lr_gamma": cfg.lr_gamma}
        try:
            res = fit(fit_ds, held_ds, cfg)
        except IcMlpError as exc:
            errors.append(f"trial {i}: {exc}")
            row.update(best_epoch="", val_loss="", val_acc="", status=f"failed: {exc}")
        else:
            row.update(best_epoch=res.best_epoch, val_loss=res.best_val_loss,
                       val_acc=res.best_record.val_acc, status="ok")
            if best is None or res.best_val_loss < best[0]:
                best = (res.best_val_loss, cfg)
        trials.append(row)
        if on_trial is not None:
            on_trial(row)
    if best is None:
        raise SearchError("all trials failed:\n" + "\n".join(errors))
    return best[1], trials


# -- report files -----------------------------------------------------------

RUN_COLUMNS = ("variant", "repeat", "fold", "best_epoch") + METRICS
HISTORY_COLUMNS = ("epoch", "train_loss", "train_acc", "val_loss", "val_acc")
TRIAL_COLUMNS = ("trial", "n_blocks", "batch_size", "initial_lr", "weight_decay", "lr_gamma",
                 "best_epoch", "val_loss", "val_acc", "status")


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return "" if v is None else str(v)


def write_table(rows, columns, path):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row[c]) for c in columns])


def write_runs(rows, path):
    write_table(rows, RUN_COLUMNS, path)


def write_aggregate(aggregates, path):
    cols = ["variant", "n_runs"] + [f"{m}_{s}" for m in METRICS for s in ("mean", "std")]
    write_table(aggregates, cols, path)


def write_history(history, path):
    write_table([asdict(r) for r in history], HISTORY_COLUMNS, path)


def write_trials(trials, path):
    write_table(trials, TRIAL_COLUMNS, path)
