"""Hot elementwise/reduction kernels with two interchangeable backends.

Every kernel exists twice: a numba ``@njit`` loop version and a vectorised
numpy version with the same signature.  The module-level names resolve to
the numba versions unless numba is missing or the environment variable
``ICMLP_DISABLE_NUMBA`` is set to a non-empty value other than ``0``.

Matrix products are not here; both backends hand those to numpy/BLAS.

Elementwise kernels agree bitwise across backends.  Kernels with
reductions (batch norm, softmax) agree to rounding only, because the
summation order differs.  Within one backend every kernel is
deterministic.
"""
import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None


def _env_disabled():
    flag = os.environ.get("ICMLP_DISABLE_NUMBA", "")
    return flag not in ("", "0")


# ---------------------------------------------------------------------------
# numpy reference path


def np_bn_forward_train(x, gamma, beta, eps):
    mean = x.mean(axis=0, keepdims=True)
    centered = x - mean
    var = (centered * centered).mean(axis=0, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    return gamma * xhat + beta, xhat, mean, var


def np_bn_forward_eval(x, running_mean, running_var, gamma, beta, eps):
    return gamma * ((x - running_mean) / np.sqrt(running_var + eps)) + beta


def np_bn_backward(grad_out, xhat, var, gamma, eps):
    b = grad_out.shape[0]
    inv_std = 1.0 / np.sqrt(var + eps)
    dbeta = grad_out.sum(axis=0, keepdims=True)
    dgamma = (grad_out * xhat).sum(axis=0, keepdims=True)
    dxhat = grad_out * gamma
    sum_dxhat = dxhat.sum(axis=0, keepdims=True)
    sum_dxhat_xhat = (dxhat * xhat).sum(axis=0, keepdims=True)
    grad_in = (inv_std / b) * (b * dxhat - sum_dxhat - xhat * sum_dxhat_xhat)
    return grad_in, dgamma, dbeta


def np_relu_forward(x):
    return np.where(x > 0.0, x, 0.0)


def np_relu_backward(grad_out, x):
    return np.where(x > 0.0, grad_out, 0.0)


def np_masked_scale(x, mask, scale):
    return x * mask * scale


def np_softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def np_softmax_xent(logits, labels):
    b = logits.shape[0]
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    s = e.sum(axis=1, keepdims=True)
    log_s = np.log(s)
    rows = np.arange(b)
    loss = -(shifted[rows, labels] - log_s[:, 0]).sum() / b
    probs = e / s
    grad = probs.copy()
    grad[rows, labels] -= 1.0
    grad /= b
    return loss, grad, probs


def np_adamw_update(param, grad, m, v, lr, beta1, beta2, eps, weight_decay,
                    bias_c1, bias_c2):
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * (grad * grad)
    step = (m / bias_c1) / (np.sqrt(v / bias_c2) + eps)
    param *= 1.0 - lr * weight_decay
    param -= lr * step


# ---------------------------------------------------------------------------
# numba loop path


def _loop_bn_forward_train(x, gamma, beta, eps):
    b, n = x.shape
    mean = np.zeros((1, n))
    var = np.zeros((1, n))
    for i in range(b):
        for j in range(n):
            mean[0, j] += x[i, j]
    for j in range(n):
        mean[0, j] /= b
    for i in range(b):
        for j in range(n):
            d = x[i, j] - mean[0, j]
            var[0, j] += d * d
    inv_std = np.empty(n)
    for j in range(n):
        var[0, j] /= b
        inv_std[j] = 1.0 / np.sqrt(var[0, j] + eps)
    xhat = np.empty((b, n))
    y = np.empty((b, n))
    for i in range(b):
        for j in range(n):
            h = (x[i, j] - mean[0, j]) * inv_std[j]
            xhat[i, j] = h
            y[i, j] = gamma[0, j] * h + beta[0, j]
    return y, xhat, mean, var


def _loop_bn_forward_eval(x, running_mean, running_var, gamma, beta, eps):
    b, n = x.shape
    y = np.empty((b, n))
    std = np.empty(n)
    for j in range(n):
        std[j] = np.sqrt(running_var[0, j] + eps)
    for i in range(b):
        for j in range(n):
            y[i, j] = gamma[0, j] * ((x[i, j] - running_mean[0, j]) / std[j]) + beta[0, j]
    return y


def _loop_bn_backward(grad_out, xhat, var, gamma, eps):
    b, n = grad_out.shape
    dgamma = np.zeros((1, n))
    dbeta = np.zeros((1, n))
    for i in range(b):
        for j in range(n):
            g = grad_out[i, j]
            dbeta[0, j] += g
            dgamma[0, j] += g * xhat[i, j]
    # sums of dxhat and dxhat*xhat factor through gamma
    s1 = np.empty(n)
    s2 = np.empty(n)
    c = np.empty(n)
    for j in range(n):
        s1[j] = gamma[0, j] * dbeta[0, j]
        s2[j] = gamma[0, j] * dgamma[0, j]
        c[j] = (1.0 / np.sqrt(var[0, j] + eps)) / b
    grad_in = np.empty((b, n))
    for i in range(b):
        for j in range(n):
            grad_in[i, j] = c[j] * (b * (grad_out[i, j] * gamma[0, j]) - s1[j] - xhat[i, j] * s2[j])
    return grad_in, dgamma, dbeta


def _loop_relu_forward(x):
    b, n = x.shape
    y = np.empty((b, n))
    for i in range(b):
        for j in range(n):
            v = x[i, j]
            y[i, j] = v if v > 0.0 else 0.0
    return y


def _loop_relu_backward(grad_out, x):
    b, n = x.shape
    g = np.empty((b, n))
    for i in range(b):
        for j in range(n):
            g[i, j] = grad_out[i, j] if x[i, j] > 0.0 else 0.0
    return g


def _loop_masked_scale(x, mask, scale):
    b, n = x.shape
    y = np.empty((b, n))
    for i in range(b):
        for j in range(n):
            y[i, j] = x[i, j] * mask[i, j] * scale
    return y


def _loop_softmax(logits):
    b, c = logits.shape
    out = np.empty((b, c))
    for i in range(b):
        mx = logits[i, 0]
        for k in range(1, c):
            if logits[i, k] > mx:
                mx = logits[i, k]
        s = 0.0
        for k in range(c):
            e = np.exp(logits[i, k] - mx)
            out[i, k] = e
            s += e
        for k in range(c):
            out[i, k] /= s
    return out


def _loop_softmax_xent(logits, labels):
    b, c = logits.shape
    probs = np.empty((b, c))
    grad = np.empty((b, c))
    total = 0.0
    for i in range(b):
        mx = logits[i, 0]
        for k in range(1, c):
            if logits[i, k] > mx:
                mx = logits[i, k]
        s = 0.0
        for k in range(c):
            e = np.exp(logits[i, k] - mx)
            probs[i, k] = e
            s += e
        total -= (logits[i, labels[i]] - mx) - np.log(s)
        for k in range(c):
            p = probs[i, k] / s
            probs[i, k] = p
            grad[i, k] = p / b
        grad[i, labels[i]] = (probs[i, labels[i]] - 1.0) / b
    return total / b, grad, probs


def _loop_adamw_update(param, grad, m, v, lr, beta1, beta2, eps, weight_decay,
                       bias_c1, bias_c2):
    # operates on flat contiguous views; writes param, m, v in place
    decay = 1.0 - lr * weight_decay
    for i in range(param.shape[0]):
        g = grad[i]
        m[i] = m[i] * beta1 + (1.0 - beta1) * g
        v[i] = v[i] * beta2 + (1.0 - beta2) * (g * g)
        step = (m[i] / bias_c1) / (np.sqrt(v[i] / bias_c2) + eps)
        param[i] = param[i] * decay - lr * step


_LOOP_KERNELS = {
    "bn_forward_train": _loop_bn_forward_train,
    "bn_forward_eval": _loop_bn_forward_eval,
    "bn_backward": _loop_bn_backward,
    "relu_forward": _loop_relu_forward,
    "relu_backward": _loop_relu_backward,
    "masked_scale": _loop_masked_scale,
    "softmax": _loop_softmax,
    "softmax_xent": _loop_softmax_xent,
    "adamw_update": _loop_adamw_update,
}

NUMPY_KERNELS = {
    "bn_forward_train": np_bn_forward_train,
    "bn_forward_eval": np_bn_forward_eval,
    "bn_backward": np_bn_backward,
    "relu_forward": np_relu_forward,
    "relu_backward": np_relu_backward,
    "masked_scale": np_masked_scale,
    "softmax": np_softmax,
    "softmax_xent": np_softmax_xent,
    "adamw_update": np_adamw_update,
}

if numba is not None:
    NUMBA_KERNELS = {
        name: numba.njit(cache=True, nogil=True)(fn) for name, fn in _LOOP_KERNELS.items()
    }
else:  # pragma: no cover
    NUMBA_KERNELS = None

BACKEND = "numpy" if (NUMBA_KERNELS is None or _env_disabled()) else "numba"
_active = NUMBA_KERNELS if BACKEND == "numba" else NUMPY_KERNELS

bn_forward_train = _active["bn_forward_train"]
bn_forward_eval = _active["bn_forward_eval"]
bn_backward = _active["bn_backward"]
relu_forward = _active["relu_forward"]
relu_backward = _active["relu_backward"]
masked_scale = _active["masked_scale"]
softmax = _active["softmax"]
softmax_xent = _active["softmax_xent"]
_adamw_update = _active["adamw_update"]


def adamw_update(param, grad, m, v, lr, beta1, beta2, eps, weight_decay, bias_c1, bias_c2):
    """In-place AdamW update on same-shaped contiguous arrays."""
    _adamw_update(param.reshape(-1), grad.reshape(-1), m.reshape(-1), v.reshape(-1),
                  lr, beta1, beta2, eps, weight_decay, bias_c1, bias_c2)


def warmup():
    """Trigger JIT compilation of every kernel on tiny inputs."""
    x = np.arange(6, dtype=np.float64).reshape(3, 2)
    row = np.ones((1, 2))
    labels = np.array([0, 1, 0], dtype=np.int64)
    y, xhat, mean, var = bn_forward_train(x, row, row, 1e-5)
    bn_backward(y, xhat, var, row, 1e-5)
    bn_forward_eval(x, mean, var, row, row, 1e-5)
    relu_backward(x, relu_forward(x))
    masked_scale(x, x, 1.0)
    softmax(x)
    softmax_xent(x, labels)
    p = np.zeros((3, 2))
    adamw_update(p, x, np.zeros_like(p), np.zeros_like(p), 0.1, 0.9, 0.999, 1e-8, 0.0, 0.1, 0.001)
