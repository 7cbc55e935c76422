import numpy as np
import pytest

from icmlp.cli import gen_synthetic
from icmlp.data import batches, holdout_split, load_csv, make_dataset, make_folds, write_csv
from icmlp.errors import ConfigurationError, ParameterError, ParseError
from icmlp.numerics import Rng


def _write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_bytes(text.encode())
    return p


def test_load_minimal(tmp_path):
    ds = load_csv(_write(tmp_path, "0,1.0,2.0\n1,3.0,4.0"))
    assert (len(ds), ds.dim, ds.n_classes) == (2, 2, 2)
    np.testing.assert_array_equal(ds.features, [[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(ds.labels, [0, 1])


def test_load_header_and_crlf(tmp_path):
    plain = load_csv(_write(tmp_path, "0,1.0,2.0\n1,3.0,4.0\n"))
    other = load_csv(_write(tmp_path, "label,f0,f1\r\n0,1.0,2e0\r\n1,3.0,4.0\r\n", "h.csv"))
    assert np.array_equal(plain.features, other.features)
    assert np.array_equal(plain.labels, other.labels)


@pytest.mark.parametrize("text,line", [
    ("0,1.0,2.0\n1,3.0\n", 2),
    ("0,1.0,2.0\n1,abc,4.0\n", 2),
    ("0,1.0,2.0\n-1,3.0,4.0\n", 2),
    ("label,f0,f1\n0,1.0,2.0\n1,3.0,4.0,5.0\n", 3),
    ("0,nan,1.0\n", 1),
])
def test_load_errors_name_the_line(tmp_path, text, line):
    with pytest.raises(ParseError) as info:
        load_csv(_write(tmp_path, text))
    assert info.value.line == line


def test_load_expect_dim(tmp_path):
    with pytest.raises(ParseError) as info:
        load_csv(_write(tmp_path, "0,1.0,2.0\n"), expect_dim=3)
    assert info.value.line == 1


def test_csv_round_trip(tmp_path):
    ds = gen_synthetic(20, 5, 3, 0.5, seed=1)
    p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
    write_csv(ds, p1)
    back = load_csv(p1)
    assert np.array_equal(back.features, ds.features) and np.array_equal(back.labels, ds.labels)
    write_csv(back, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_holdout_split():
    ds = make_dataset(np.arange(20.0).reshape(10, 2), np.arange(10) % 2)
    train, held = holdout_split(ds, 0.1, Rng(3))
    assert (len(train), len(held)) == (9, 1)
    rows = sorted(map(tuple, np.vstack([train.features, held.features])))
    assert rows == sorted(map(tuple, ds.features))
    t2, h2 = holdout_split(ds, 0.1, Rng(3))
    assert np.array_equal(train.features, t2.features) and np.array_equal(held.features, h2.features)
    assert len(holdout_split(ds, 0.25, Rng(0))[1]) == 3  # round(2.5) half up
    for bad in (0.0, 1.0, -0.2):
        with pytest.raises(ParameterError):
            holdout_split(ds, bad, Rng(0))


def test_fold_sizes():
    plan = make_folds(10, 5, 1, seed=0)
    assert [len(f) for f in plan.folds(0)] == [2] * 5
    plan = make_folds(11, 5, 1, seed=0)
    assert sorted(len(f) for f in plan.folds(0)) == [2, 2, 2, 2, 3]
    assert len(make_folds(10, 5, 5, seed=0).pairs()) == 25
    with pytest.raises(ConfigurationError):
        make_folds(4, 5, 1, seed=0)


@pytest.mark.parametrize("n,k,repeats", [(10, 5, 3), (37, 4, 2), (100, 5, 5)])
def test_fold_partition_property(n, k, repeats):
    plan = make_folds(n, k, repeats, seed=7)
    for r in range(repeats):
        folds = plan.folds(r)
        joined = np.concatenate(folds)
        assert np.array_equal(np.sort(joined), np.arange(n))
        sizes = [len(f) for f in folds]
        assert max(sizes) - min(sizes) <= 1
    if repeats > 1:
        assert not all(np.array_equal(a, b) for a, b in zip(plan.folds(0), plan.folds(1)))
    again = make_folds(n, k, repeats, seed=7)
    assert all(np.array_equal(a, b) for r in range(repeats)
               for a, b in zip(plan.folds(r), again.folds(r)))


def test_batch_sizes():
    ds10 = make_dataset(np.zeros((10, 2)), np.zeros(10, dtype=int))
    ds9 = make_dataset(np.zeros((9, 2)), np.zeros(9, dtype=int))
    assert [len(y) for _, y in batches(ds10, 4, Rng(0))] == [4, 4, 2]
    assert [len(y) for _, y in batches(ds9, 4, Rng(0))] == [4, 4]
    with pytest.raises(ConfigurationError):
        list(batches(ds10, 1, Rng(0)))


def test_batch_order_deterministic():
    ds = make_dataset(np.arange(40.0).reshape(20, 2), np.arange(20) % 2)
    a = [x for x, _ in batches(ds, 6, Rng(5))]
    b = [x for x, _ in batches(ds, 6, Rng(5))]
    assert all(np.array_equal(u, v) for u, v in zip(a, b))
    seen = np.sort(np.concatenate(a)[:, 0])
    assert np.array_equal(seen, ds.features[:, 0])
