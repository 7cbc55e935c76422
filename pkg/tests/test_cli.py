import subprocess
import sys

import numpy as np
import pytest

from icmlp.cli import gen_synthetic, main, parse_args, resolve_config
from icmlp.data import load_csv

FAST = ["--n-blocks", "1", "--batch-size", "16", "--lr", "0.01", "--lr-gamma", "0.9",
        "--max-epochs", "3"]


@pytest.fixture(scope="module")
def data_csv(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    path = d / "d.csv"
    gen_synthetic(120, 16, 2, 0.3, seed=1, path=path)
    return path


def run(argv, capsys=None):
    code = main([str(a) for a in argv])
    out = capsys.readouterr().out if capsys is not None else ""
    return code, out


# -- parsing and config precedence ----------------------------------------------------


def test_parse_train_command(tmp_path):
    cfg_file = tmp_path / "c.cfg"
    cfg_file.write_text("# tuned\nbatch_size = 64\nseed = 3\ninitial_lr = 0.5\n")
    args = parse_args(["train", "--data", "d.csv", "--config", str(cfg_file), "--seed", "7",
                       "--out", "m.bin"])
    assert (args.command, args.data, args.out) == ("train", "d.csv", "m.bin")
    cfg = resolve_config(args)
    assert (cfg.seed, cfg.batch_size, cfg.initial_lr) == (7, 64, 0.5)


def test_precedence_defaults_preset_file_flags(tmp_path):
    cfg_file = tmp_path / "c.cfg"
    cfg_file.write_text("weight_decay = 0.25\n")
    args = parse_args(["count-params", "--preset", "age", "--config", str(cfg_file),
                       "--lr", "0.125"])
    cfg = resolve_config(args)
    assert (cfg.n_residual, cfg.batch_size, cfg.lr_gamma) == (2, 128, 0.4)  # preset
    assert cfg.weight_decay == 0.25  # file beats preset
    assert cfg.initial_lr == 0.125  # flag beats file
    assert cfg.dropout_p == 0.05 and cfg.patience == 5  # defaults


@pytest.mark.parametrize("argv", [
    [], ["train", "--lr", "abc", "--data", "x", "--out", "y"], ["frobnicate"],
    ["count-params", "--bogus"], ["count-params", "--dropout", "1.5"],
    ["count-params", "--n-residual", "2", "--n-downsample", "3"],
])
def test_usage_errors_exit_2(argv, capsys):
    assert main(argv) == 2


def test_bad_config_file_exit_2(tmp_path, capsys):
    bad = tmp_path / "c.cfg"
    bad.write_text("learning_rate = 3\n")
    assert main(["count-params", "--config", str(bad)]) == 2
    assert main(["count-params", "--config", str(tmp_path / "missing.cfg")]) == 2


def test_runtime_errors_exit_1(tmp_path, data_csv, capsys):
    assert main(["eval", "--model", str(tmp_path / "none.bin"), "--data", str(data_csv)]) == 1
    junk = tmp_path / "junk.bin"
    junk.write_bytes(b"not a model at all")
    assert main(["eval", "--model", str(junk), "--data", str(data_csv)]) == 1
    assert "bad magic" in capsys.readouterr().err
    ragged = tmp_path / "r.csv"
    ragged.write_text("0,1.0,2.0\n1,3.0\n")
    assert main(["train", "--data", str(ragged), "--out", str(tmp_path / "m.bin")]) == 1
    assert "line 2" in capsys.readouterr().err


def test_divergence_exit_1(tmp_path, data_csv, capsys):
    with np.errstate(all="ignore"):
        code = main(["train", "--data", str(data_csv), "--out", str(tmp_path / "m.bin"),
                     "--lr", "inf"] + FAST[:4])
    assert code == 1


# -- commands ------------------------------------------------------------------


def test_count_params_gender(capsys):
    code, out = run(["count-params", "--preset", "gender"], capsys)
    assert code == 0
    value = int(out.strip().splitlines()[-1])
    assert value == 877_602 and 800_000 <= value <= 900_000
    code, out = run(["count-params", "--preset", "age", "--n-classes", "8"], capsys)
    assert int(out.strip().splitlines()[-1]) == 825_736


def test_config_printed_first(capsys):
    code, out = run(["count-params", "--preset", "gender"], capsys)
    lines = out.splitlines()
    assert lines[0] == "# icmlp count-params"
    for key in ("n_residual = 4", "batch_size = 512", "initial_lr = 0.02", "weight_decay = 0.004",
                "lr_gamma = 0.06", "dropout_p = 0.05", "patience = 5", "max_epochs = 100"):
        assert key in lines


def test_gen_synthetic_contract(tmp_path, capsys):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    for p in (a, b):
        assert main(["gen-synthetic", "--n", "2000", "--dim", "512", "--seed", "4",
                     "--out", str(p)]) == 0
    assert a.read_bytes() == b.read_bytes()
    ds = load_csv(a)
    assert ds.features.shape == (2000, 512) and ds.n_classes == 2
    assert np.max(np.abs(np.linalg.norm(ds.features, axis=1) - 1)) < 1e-9
    assert main(["gen-synthetic", "--n", "0", "--out", str(a)]) == 2


def test_gen_synthetic_difficulty_zero_is_linearly_separable():
    ds = gen_synthetic(300, 32, 3, 0.0, seed=2)
    x = np.hstack([ds.features, np.ones((len(ds), 1))])
    w, *_ = np.linalg.lstsq(x, np.eye(3)[ds.labels], rcond=None)
    assert np.all(np.argmax(x @ w, axis=1) == ds.labels)


def test_train_eval_predict(tmp_path, data_csv, capsys):
    model = tmp_path / "m.bin"
    hist = tmp_path / "h.csv"
    code, out = run(["train", "--data", data_csv, "--out", model, "--history", hist] + FAST,
                    capsys)
    assert code == 0 and model.exists()
    assert "best epoch" in out
    assert len(hist.read_text().splitlines()) >= 2
    code, out = run(["eval", "--model", model, "--data", data_csv, "--out", tmp_path / "e.csv"],
                    capsys)
    assert code == 0 and "acc" in out
    code, _ = run(["predict", "--model", model, "--data", data_csv, "--out", tmp_path / "p.csv"],
                  capsys)
    lines = (tmp_path / "p.csv").read_text().splitlines()
    assert code == 0 and lines[0] == "sample_index,predicted_class,p_0,p_1" and len(lines) == 121


def test_train_with_separate_val_and_test(tmp_path, data_csv, capsys):
    code, out = run(["train", "--data", data_csv, "--val-data", data_csv, "--test-data",
                     data_csv, "--out", tmp_path / "m.bin"] + FAST, capsys)
    assert code == 0 and "test loss" in out


def test_uncertainty_512_passes(tmp_path, data_csv, capsys):
    model = tmp_path / "m.bin"
    run(["train", "--data", data_csv, "--out", model, "--dropout", "0.2"] + FAST, capsys)
    report = tmp_path / "u.csv"
    code, out = run(["uncertainty", "--model", model, "--data", data_csv, "--passes", "512",
                     "--out", report], capsys)
    assert code == 0
    lines = report.read_text().splitlines()
    assert lines[0] == "sample_index,predicted_class,entropy,p_0,p_1" and len(lines) == 121
    h = np.array([float(line.split(",")[2]) for line in lines[1:]])
    assert np.all((h >= 0) & (h <= np.log(2)))
    assert "lowest entropy" in out


def test_uncertainty_refuses_ablated_model(tmp_path, data_csv, capsys):
    model = tmp_path / "m.bin"
    run(["train", "--data", data_csv, "--out", model, "--no-dropout"] + FAST, capsys)
    args = ["uncertainty", "--model", model, "--data", data_csv, "--passes", "4",
            "--out", tmp_path / "u.csv"]
    assert run(args, capsys)[0] == 1
    assert run(args + ["--force"], capsys)[0] == 0


def test_crossval_25_rows(tmp_path, data_csv, capsys):
    runs, agg = tmp_path / "runs.csv", tmp_path / "agg.csv"
    code, _ = run(["crossval", "--data", data_csv, "--k", "5", "--repeats", "5", "--out", runs,
                   "--aggregate", agg, "--max-epochs", "1"] + FAST[:-2], capsys)
    assert code == 0
    assert len(runs.read_text().splitlines()) == 26
    header, row = agg.read_text().splitlines()
    assert "val_loss_mean" in header and "val_loss_std" in header
    assert row.split(",")[1] == "25"


def test_ablate_and_search(tmp_path, data_csv, capsys):
    runs = tmp_path / "runs.csv"
    code, _ = run(["ablate", "--data", data_csv, "--k", "3", "--repeats", "1", "--variants",
                   "full", "no_ic+no_skip", "--out", runs, "--max-epochs", "1"] + FAST[:-2],
                  capsys)
    assert code == 0 and len(runs.read_text().splitlines()) == 7
    best = tmp_path / "best.cfg"
    code, _ = run(["search", "--data", data_csv, "--trials", "2", "--out", tmp_path / "t.csv",
                   "--best-config", best, "--max-epochs", "1"], capsys)
    assert code == 0
    assert "n_residual" in best.read_text()
    assert main(["count-params", "--config", str(best)]) == 0


# -- reproducibility ---------------------------------------------------------------


def test_repeated_invocations_are_byte_identical(tmp_path, data_csv, capsys):
    def outputs(tag):
        d = tmp_path / tag
        d.mkdir()
        run(["train", "--data", data_csv, "--out", d / "m.bin", "--history", d / "h.csv",
             "--seed", "5", "--threads", "1"] + FAST, capsys)
        run(["uncertainty", "--model", d / "m.bin", "--data", data_csv, "--passes", "16",
             "--seed", "2", "--out", d / "u.csv"], capsys)
        run(["crossval", "--data", data_csv, "--k", "3", "--repeats", "1", "--out", d / "r.csv",
             "--aggregate", d / "a.csv", "--seed", "5"] + FAST, capsys)
        run(["search", "--data", data_csv, "--trials", "2", "--out", d / "t.csv",
             "--max-epochs", "1", "--seed", "5"], capsys)
        return {p.name: p.read_bytes() for p in sorted(d.iterdir())}

    a, b = outputs("a"), outputs("b")
    assert len(a) == 6 and a == b


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "icmlp", "count-params", "--preset", "gender"],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.strip().endswith("877602")
    proc = subprocess.run([sys.executable, "-m", "icmlp"], capture_output=True, text=True)
    assert proc.returncode == 2
