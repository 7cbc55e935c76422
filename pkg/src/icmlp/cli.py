"""``icmlp`` command-line interface.

Configuration precedence, lowest to highest: built-in defaults, ``--preset``,
``--config`` file, explicit flags.  Every command prints its resolved
configuration before running.  Exit codes: 0 success, 1 runtime failure,
2 usage error.
"""
import argparse
import logging
import math
import sys
from dataclasses import asdict, fields, replace

import numpy as np

from .data import holdout_split, load_csv, make_dataset, write_csv
from .errors import IcMlpError
from .model import VARIANTS, build_model, load_model
from .numerics import Rng
from .train import (PRESETS, SearchSpace, TrainConfig, ablation_sweep,
                    cross_validate, evaluate, fit, predict_logits, random_search,
                    write_aggregate, write_history, write_runs, write_table, write_trials)
from .uncertainty import mc_dropout_predict, rank_by_entropy, write_uncertainty_report
from .layers import softmax


class UsageError(Exception):
    pass


# -- synthetic data ---------------------------------------------------------


def gen_synthetic(n_samples, dim, n_classes, difficulty, seed, path=None):
    """Gaussian clusters around random unit-vector centres, projected to the unit sphere.

    Each sample is ``normalize(centre[label] + difficulty * z)`` with ``z``
    standard normal in every coordinate, so ``difficulty = 0`` puts every
    sample exactly on its class centre.  Labels cycle ``0, 1, ..., C-1`` and
    rows are then shuffled.  Returns the Dataset and writes it when ``path``
    is given.
    """
    if n_samples < 1 or dim < 1 or n_classes < 1 or difficulty < 0:
        raise UsageError("n_samples, dim and n_classes must be positive, difficulty >= 0")
    rng = Rng(seed)
    centres = rng.normal((n_classes, dim))
    centres /= np.linalg.norm(centres, axis=1, keepdims=True)
    labels = np.arange(n_samples) % n_classes
    labels = labels[rng.permutation(n_samples)]
    x = centres[labels] + difficulty * rng.normal((n_samples, dim))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    ds = make_dataset(x, labels, n_classes)
    if path is not None:
        write_csv(ds, path)
    return ds


# -- config resolution ------------------------------------------------------

_CFG_TYPES = {f.name: f.type for f in fields(TrainConfig)}


def _coerce(key, value):
    t = _CFG_TYPES[key]
    if t is bool or t == "bool":
        low = str(value).strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise UsageError(f"{key}: expected a boolean, got {value!r}")
    if key == "init_weights_path":
        return str(value) or None
    try:
        return int(value) if t in (int, "int") else float(value)
    except ValueError:
        raise UsageError(f"{key}: cannot parse {value!r}") from None


def read_config_file(path):
    """Parse ``key = value`` lines (``#`` starts a comment)."""
    out = {}
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    for n, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _CFG_TYPES:
            raise UsageError(f"{path}:{n}: unknown key {key!r}")
        out[key] = _coerce(key, value)
    return out


def format_config(cfg):
    return "\n".join(f"{k} = {'' if v is None else v}" for k, v in asdict(cfg).items())


_FLAG_TO_FIELD = {
    "n_residual": "n_residual", "n_downsample": "n_downsample", "batch_size": "batch_size",
    "lr": "initial_lr", "weight_decay": "weight_decay", "lr_gamma": "lr_gamma",
    "dropout": "dropout_p", "patience": "patience", "max_epochs": "max_epochs", "seed": "seed",
    "init_weights": "init_weights_path",
}


def resolve_config(args):
    values = {}
    if getattr(args, "preset", None):
        values.update(PRESETS[args.preset])
    if getattr(args, "config", None):
        values.update(read_config_file(args.config))
    for flag, key in _FLAG_TO_FIELD.items():
        v = getattr(args, flag, None)
        if v is not None:
            values[key] = v
    for key in ("no_dropout", "no_ic", "no_skip"):
        if getattr(args, key, False):
            values[key] = True
    if "n_blocks" in vars(args) and args.n_blocks is not None:
        values["n_residual"] = values["n_downsample"] = args.n_blocks
    try:
        return TrainConfig(**values)
    except (IcMlpError, TypeError) as exc:
        raise UsageError(str(exc)) from None


# -- argument parsing -------------------------------------------------------


def _add_train_flags(p):
    g = p.add_argument_group("training configuration")
    g.add_argument("--config", help="key = value config file")
    g.add_argument("--preset", choices=sorted(PRESETS))
    g.add_argument("--n-residual", dest="n_residual", type=int)
    g.add_argument("--n-downsample", dest="n_downsample", type=int)
    g.add_argument("--n-blocks", dest="n_blocks", type=int,
                   help="set residual and downsample counts together")
    g.add_argument("--batch-size", dest="batch_size", type=int)
    g.add_argument("--lr", type=float, help="initial learning rate")
    g.add_argument("--weight-decay", dest="weight_decay", type=float)
    g.add_argument("--lr-gamma", dest="lr_gamma", type=float,
                   help="per-epoch multiplicative learning-rate decay")
    g.add_argument("--dropout", type=float, help="dropout probability")
    g.add_argument("--patience", type=int)
    g.add_argument("--max-epochs", dest="max_epochs", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--no-dropout", dest="no_dropout", action="store_true")
    g.add_argument("--no-ic", dest="no_ic", action="store_true")
    g.add_argument("--no-skip", dest="no_skip", action="store_true")
    g.add_argument("--init-weights", dest="init_weights", help="warm-start model file")
    g.add_argument("--threads", type=int, default=1)


def build_parser():
    parser = argparse.ArgumentParser(prog="icmlp", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("train", help="fit a model with early stopping")
    p.add_argument("--data", required=True)
    p.add_argument("--val-data", dest="val_data")
    p.add_argument("--test-data", dest="test_data")
    p.add_argument("--val-fraction", dest="val_fraction", type=float, default=0.1,
                   help="hold-out fraction when --val-data is absent")
    p.add_argument("--out", required=True, help="model file to write")
    p.add_argument("--history", help="per-epoch CSV to write")
    _add_train_flags(p)

    p = sub.add_parser("eval", help="loss and accuracy of a saved model")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", help="CSV with loss and accuracy")

    p = sub.add_parser("predict", help="class probabilities (eval mode)")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("uncertainty", help="Monte-Carlo dropout entropy report")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--passes", type=int, default=512)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--top-n", dest="top_n", type=int, default=10)
    p.add_argument("--force", action="store_true",
                   help="run even if the model has no active dropout")
    p.add_argument("--threads", type=int, default=1)

    for name, helptext in (("crossval", "repeated k-fold cross-validation"),
                           ("ablate", "cross-validate the ablation variants")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--data", required=True)
        p.add_argument("--k", type=int, default=5)
        p.add_argument("--repeats", type=int, default=5)
        p.add_argument("--out", required=True, help="per-run CSV")
        p.add_argument("--aggregate", help="mean/std CSV")
        if name == "ablate":
            p.add_argument("--variants", nargs="+", default=list(VARIANTS),
                           choices=list(VARIANTS))
        _add_train_flags(p)

    p = sub.add_parser("search", help="random hyperparameter search on a 90/10 split")
    p.add_argument("--data", required=True)
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--holdout", type=float, default=0.1)
    p.add_argument("--out", required=True, help="trial log CSV")
    p.add_argument("--best-config", dest="best_config", help="write the winning config here")
    _add_train_flags(p)

    p = sub.add_parser("count-params", help="trainable parameter count of a configuration")
    p.add_argument("--input-dim", dest="input_dim", type=int, default=512)
    p.add_argument("--n-classes", dest="n_classes", type=int, default=2)
    _add_train_flags(p)

    p = sub.add_parser("gen-synthetic", help="write a synthetic unit-sphere cluster dataset")
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--dim", type=int, default=512)
    p.add_argument("--classes", type=int, default=2)
    p.add_argument("--difficulty", type=float, default=0.25)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    return parser


def parse_args(argv):
    """Parse ``argv``; raises ``SystemExit(2)`` on usage errors."""
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        raise SystemExit(2)
    return args


# -- commands -----------------------------------------------------------------


def _echo(text=""):
    print(text, flush=True)


def _print_config(args, cfg=None):
    _echo(f"# icmlp {args.command}")
    skip = set(_FLAG_TO_FIELD) | {"command", "config", "preset", "no_dropout", "no_ic",
                                  "no_skip", "n_blocks"} if cfg is not None else {"command"}
    for k, v in sorted(vars(args).items()):
        if k not in skip:
            _echo(f"# {k} = {v}")
    if cfg is not None:
        _echo(format_config(cfg))
    _echo()


def cmd_train(args):
    cfg = resolve_config(args)
    _print_config(args, cfg)
    ds = load_csv(args.data)
    if args.val_data:
        train_ds, val_ds = ds, load_csv(args.val_data, expect_dim=ds.dim)
    else:
        train_ds, val_ds = holdout_split(ds, args.val_fraction, Rng(cfg.seed).spawn(3)[2])
    test_ds = load_csv(args.test_data, expect_dim=ds.dim) if args.test_data else None
    res = fit(train_ds, val_ds, cfg, test_ds=test_ds, model_out=args.out,
              on_epoch=lambda r: _echo(
                  f"epoch {r.epoch:3d}  lr {r.lr:.3e}  train {r.train_loss:.4f}/{r.train_acc:.4f}"
                  f"  val {r.val_loss:.4f}/{r.val_acc:.4f}"))
    if args.history:
        write_history(res.history, args.history)
    _echo(f"best epoch {res.best_epoch}  val loss {res.best_val_loss:.6f}  "
          f"params {res.model.param_count()}")
    if res.test_loss is not None:
        _echo(f"test loss {res.test_loss:.6f}  test acc {res.test_acc:.4f}")
    _echo(f"model written to {args.out}")
    return 0


def cmd_eval(args):
    _print_config(args)
    model = load_model(args.model)
    ds = load_csv(args.data, expect_dim=model.input_dim)
    loss, acc = evaluate(model, ds)
    _echo(f"loss {loss:.6f}  acc {acc:.4f}  n {len(ds)}")
    if args.out:
        write_table([{"n": len(ds), "loss": loss, "acc": acc}], ("n", "loss", "acc"), args.out)
    return 0


def cmd_predict(args):
    _print_config(args)
    model = load_model(args.model)
    ds = load_csv(args.data, expect_dim=model.input_dim)
    probs = softmax(predict_logits(model, ds.features))
    cols = ["sample_index", "predicted_class"] + [f"p_{c}" for c in range(probs.shape[1])]
    rows = [dict(zip(cols, [i, int(np.argmax(p))] + [float(v) for v in p]))
            for i, p in enumerate(probs)]
    write_table(rows, cols, args.out)
    _echo(f"{len(rows)} predictions written to {args.out}")
    return 0


def cmd_uncertainty(args):
    _print_config(args)
    model = load_model(args.model)
    ds = load_csv(args.data, expect_dim=model.input_dim)
    summary = mc_dropout_predict(model, ds.features, args.passes, Rng(args.seed),
                                 force=args.force, threads=args.threads)
    write_uncertainty_report(summary, args.out)
    n = min(args.top_n, len(ds))
    for order in ("lowest", "highest"):
        idx = rank_by_entropy(summary.entropy, n, order)
        _echo(f"{order} entropy: " + ", ".join(f"{i}:{summary.entropy[i]:.4f}" for i in idx))
    _echo(f"max possible entropy ln({model.n_classes}) = {math.log(model.n_classes):.4f}")
    _echo(f"uncertainty report written to {args.out}")
    return 0


def _progress(row):
    _echo(f"{row['variant']} repeat {row['repeat']} fold {row['fold']}: "
          f"best epoch {row['best_epoch']}  val {row['val_loss']:.4f}/{row['val_acc']:.4f}  "
          f"test {row['test_loss']:.4f}/{row['test_acc']:.4f}")


def _print_aggregate(agg):
    _echo(f"{agg['variant']} ({agg['n_runs']} runs): " + "  ".join(
        f"{m} {agg[m + '_mean']:.4f} ({agg[m + '_std']:.4f})"
        for m in ("train_loss", "val_loss", "val_acc", "test_loss", "test_acc")))


def cmd_crossval(args):
    cfg = resolve_config(args)
    _print_config(args, cfg)
    ds = load_csv(args.data)
    res = cross_validate(ds, cfg, args.k, args.repeats, threads=args.threads, on_run=_progress)
    write_runs(res.rows, args.out)
    if args.aggregate:
        write_aggregate([res.aggregate], args.aggregate)
    _print_aggregate(res.aggregate)
    return 0


def cmd_ablate(args):
    cfg = resolve_config(args)
    _print_config(args, cfg)
    ds = load_csv(args.data)
    results = ablation_sweep(ds, cfg, args.variants, args.k, args.repeats,
                             threads=args.threads, on_run=_progress)
    write_runs([row for r in results for row in r.rows], args.out)
    if args.aggregate:
        write_aggregate([r.aggregate for r in results], args.aggregate)
    for r in results:
        _print_aggregate(r.aggregate)
    return 0


def cmd_search(args):
    cfg = resolve_config(args)
    _print_config(args, cfg)
    ds = load_csv(args.data)
    best, trials = random_search(
        ds, SearchSpace(), args.trials, cfg, holdout_fraction=args.holdout,
        on_trial=lambda t: _echo(f"trial {t['trial']}: blocks {t['n_blocks']} batch "
                                 f"{t['batch_size']} lr {t['initial_lr']:.3g} wd "
                                 f"{t['weight_decay']:.3g} gamma {t['lr_gamma']:.3g} -> "
                                 f"{t['status']} {t['val_loss']}"))
    write_trials(trials, args.out)
    _echo("best configuration:")
    _echo(format_config(best))
    if args.best_config:
        with open(args.best_config, "w", encoding="utf-8") as fh:
            fh.write(format_config(replace(best, seed=cfg.seed)) + "\n")
    return 0


def cmd_count_params(args):
    cfg = resolve_config(args)
    _print_config(args, cfg)
    model = build_model(args.input_dim, args.n_classes, cfg.n_residual, cfg.n_downsample,
                        cfg.dropout_p, cfg.ablation)
    _echo(model.describe())
    _echo(str(model.param_count()))
    return 0


def cmd_gen_synthetic(args):
    _print_config(args)
    ds = gen_synthetic(args.n, args.dim, args.classes, args.difficulty, args.seed, args.out)
    _echo(f"{len(ds)} samples x {ds.dim} features, {ds.n_classes} classes -> {args.out}")
    return 0


COMMANDS = {
    "train": cmd_train, "eval": cmd_eval, "predict": cmd_predict,
    "uncertainty": cmd_uncertainty, "crossval": cmd_crossval, "ablate": cmd_ablate,
    "search": cmd_search, "count-params": cmd_count_params, "gen-synthetic": cmd_gen_synthetic,
}


def run(args):
    """Execute a parsed command; returns the process exit code."""
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"icmlp: usage error: {exc}", file=sys.stderr)
        return 2
    except (IcMlpError, OSError) as exc:
        print(f"icmlp: error: {exc}", file=sys.stderr)
        return 1


def main(argv=None):
    try:
        args = parse_args(sys.argv[1:] if argv is None else argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return run(args)


if __name__ == "__main__":
    sys.exit(main())
