"""The numba and numpy kernel paths must agree."""
import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from icmlp import _kernels

pytestmark = pytest.mark.skipif(_kernels.NUMBA_KERNELS is None, reason="numba not installed")

NB, NP = _kernels.NUMBA_KERNELS, _kernels.NUMPY_KERNELS

shapes = st.tuples(st.integers(2, 9), st.integers(1, 7))


def _data(shape, seed):
    g = np.random.default_rng(seed)
    return g.normal(size=shape), g.normal(size=(1, shape[1])), g.normal(size=(1, shape[1]))


@settings(max_examples=40, deadline=None)
@given(shapes, st.integers(0, 10**6))
def test_batchnorm_paths_agree(shape, seed):
    x, gamma, beta = _data(shape, seed)
    for a, b in zip(NB["bn_forward_train"](x, gamma, beta, 1e-5),
                    NP["bn_forward_train"](x, gamma, beta, 1e-5)):
        np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-12)
    y, xhat, mean, var = NP["bn_forward_train"](x, gamma, beta, 1e-5)
    g = np.random.default_rng(seed + 1).normal(size=shape)
    for a, b in zip(NB["bn_backward"](g, xhat, var, gamma, 1e-5),
                    NP["bn_backward"](g, xhat, var, gamma, 1e-5)):
        np.testing.assert_allclose(a, b, rtol=1e-9, atol=1e-11)
    rv = np.abs(beta) + 0.5
    np.testing.assert_allclose(NB["bn_forward_eval"](x, mean, rv, gamma, beta, 1e-5),
                               NP["bn_forward_eval"](x, mean, rv, gamma, beta, 1e-5),
                               rtol=1e-12, atol=1e-14)


@settings(max_examples=40, deadline=None)
@given(shapes, st.integers(0, 10**6))
def test_elementwise_paths_bitwise_equal(shape, seed):
    x, _, _ = _data(shape, seed)
    g = np.random.default_rng(seed + 2).normal(size=shape)
    mask = (np.random.default_rng(seed + 3).random(shape) < 0.7).astype(float)
    assert np.array_equal(NB["relu_forward"](x), NP["relu_forward"](x))
    assert np.array_equal(NB["relu_backward"](g, x), NP["relu_backward"](g, x))
    assert np.array_equal(NB["masked_scale"](x, mask, 1 / 0.7), NP["masked_scale"](x, mask, 1 / 0.7))


@settings(max_examples=40, deadline=None)
@given(shapes, st.integers(0, 10**6))
def test_softmax_paths_agree(shape, seed):
    x, _, _ = _data(shape, seed)
    x *= 10
    labels = np.random.default_rng(seed).integers(0, shape[1], size=shape[0])
    np.testing.assert_allclose(NB["softmax"](x), NP["softmax"](x), rtol=1e-12, atol=1e-15)
    la, ga, pa = NB["softmax_xent"](x, labels)
    lb, gb, pb = NP["softmax_xent"](x, labels)
    assert abs(la - lb) <= 1e-12 * max(1.0, abs(lb))
    np.testing.assert_allclose(ga, gb, rtol=1e-12, atol=1e-15)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 50), st.integers(1, 5), st.integers(0, 10**6))
def test_adamw_paths_bitwise_equal(n, steps, seed):
    g = np.random.default_rng(seed)
    p1 = g.normal(size=n)
    p2 = p1.copy()
    m1, v1, m2, v2 = (np.zeros(n) for _ in range(4))
    for t in range(1, steps + 1):
        grad = g.normal(size=n)
        args = (0.01, 0.9, 0.999, 1e-8, 0.01, 1 - 0.9**t, 1 - 0.999**t)
        NB["adamw_update"](p1, grad, m1, v1, *args)
        NP["adamw_update"](p2, grad, m2, v2, *args)
    assert np.array_equal(p1, p2) and np.array_equal(m1, m2) and np.array_equal(v1, v2)


@pytest.mark.parametrize("flag,expected", [("1", "numpy"), ("0", "numba"), ("", "numba")])
def test_env_flag_selects_backend(flag, expected):
    env = dict(os.environ, ICMLP_DISABLE_NUMBA=flag)
    out = subprocess.run([sys.executable, "-c", "import icmlp; print(icmlp.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == expected
