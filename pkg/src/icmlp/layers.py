"""Primitive layers with hand-derived backward passes.

Each layer caches what its backward pass needs during ``forward`` and
*accumulates* parameter gradients in ``backward``; call ``zero_grads``
between optimisation steps.
"""
import enum

import numpy as np

from . import _kernels as K
from .errors import BatchSizeError, DimensionError, LabelError, ParameterError, StateError
from .numerics import DTYPE, bernoulli_mask


class Mode(enum.Enum):
    """Forward-pass behaviour.

    TRAIN: batch statistics in BN, stochastic dropout.
    EVAL: running statistics in BN, dropout is the identity.
    MC: running statistics in BN, stochastic dropout (Monte-Carlo inference).
    """

    TRAIN = "train"
    EVAL = "eval"
    MC = "mc"


class Linear:
    """Affine map ``y = x W^T + b`` with ``W`` of shape (out, in)."""

    def __init__(self, in_features, out_features, weight=None, bias=None):
        self.in_features = in_features
        self.out_features = out_features
        self.weight = np.zeros((out_features, in_features), dtype=DTYPE) if weight is None else weight
        self.bias = np.zeros((1, out_features), dtype=DTYPE) if bias is None else bias
        if self.weight.shape != (out_features, in_features) or self.bias.shape != (1, out_features):
            raise DimensionError(
                f"Linear({in_features}->{out_features}) got weight {self.weight.shape}, "
                f"bias {self.bias.shape}")
        self.grad_weight = np.zeros_like(self.weight)
        self.grad_bias = np.zeros_like(self.bias)
        self._x = None

    def forward(self, x):
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise DimensionError(f"Linear expects width {self.in_features}, got input {x.shape}")
        self._x = x
        return x @ self.weight.T + self.bias

    def backward(self, grad_out):
        if self._x is None:
            raise StateError("Linear.backward called before forward")
        if grad_out.shape != (self._x.shape[0], self.out_features):
            raise DimensionError(f"grad_out {grad_out.shape} does not match output shape")
        self.grad_weight += grad_out.T @ self._x
        self.grad_bias += grad_out.sum(axis=0, keepdims=True)
        return grad_out @ self.weight

    def parameters(self):
        return [(self.weight, self.grad_weight), (self.bias, self.grad_bias)]

    def zero_grads(self):
        self.grad_weight.fill(0.0)
        self.grad_bias.fill(0.0)


class BatchNorm:
    """Per-feature batch normalisation over the batch axis.

    Normalises with the biased batch variance; the running variance is fed
    the unbiased estimate ``var * B / (B - 1)``.
    """

    def __init__(self, num_features, eps=1e-5, momentum=0.1):
        self.num_features = num_features
        self.eps = float(eps)
        self.momentum = float(momentum)
        self.gamma = np.ones((1, num_features), dtype=DTYPE)
        self.beta = np.zeros((1, num_features), dtype=DTYPE)
        self.running_mean = np.zeros((1, num_features), dtype=DTYPE)
        self.running_var = np.ones((1, num_features), dtype=DTYPE)
        self.grad_gamma = np.zeros_like(self.gamma)
        self.grad_beta = np.zeros_like(self.beta)
        self._xhat = None
        self._var = None

    def forward(self, x, mode):
        if x.ndim != 2 or x.shape[1] != self.num_features:
            raise DimensionError(f"BatchNorm expects width {self.num_features}, got input {x.shape}")
        if mode is not Mode.TRAIN:
            self._xhat = self._var = None
            return K.bn_forward_eval(x, self.running_mean, self.running_var,
                                     self.gamma, self.beta, self.eps)
        b = x.shape[0]
        if b < 2:
            raise BatchSizeError(f"BatchNorm in train mode needs at least 2 rows, got {b}")
        y, xhat, mean, var = K.bn_forward_train(x, self.gamma, self.beta, self.eps)
        m = self.momentum
        self.running_mean *= 1.0 - m
        self.running_mean += m * mean
        self.running_var *= 1.0 - m
        self.running_var += m * (var * (b / (b - 1.0)))
        self._xhat, self._var = xhat, var
        return y

    def backward(self, grad_out):
        if self._xhat is None:
            raise StateError("BatchNorm.backward needs a preceding train-mode forward")
        grad_in, dgamma, dbeta = K.bn_backward(grad_out, self._xhat, self._var, self.gamma, self.eps)
        self.grad_gamma += dgamma
        self.grad_beta += dbeta
        return grad_in

    def parameters(self):
        return [(self.gamma, self.grad_gamma), (self.beta, self.grad_beta)]

    def zero_grads(self):
        self.grad_gamma.fill(0.0)
        self.grad_beta.fill(0.0)


class Dropout:
    """Inverted dropout: kept units are scaled by ``1 / (1 - p)`` while training."""

    def __init__(self, p):
        if not 0.0 <= p < 1.0:
            raise ParameterError(f"dropout probability must lie in [0, 1), got {p}")
        self.p = float(p)
        self.mask_cache = None

    def forward(self, x, mode, rng=None):
        if mode is Mode.EVAL or self.p == 0.0:
            self.mask_cache = None if mode is Mode.EVAL else np.ones_like(x)
            return x
        if rng is None:
            raise StateError("stochastic dropout needs an Rng")
        self.mask_cache = bernoulli_mask(rng, 1.0 - self.p, *x.shape)
        return K.masked_scale(x, self.mask_cache, 1.0 / (1.0 - self.p))

    def backward(self, grad_out):
        if self.mask_cache is None:
            raise StateError("Dropout.backward needs a preceding stochastic forward")
        return K.masked_scale(grad_out, self.mask_cache, 1.0 / (1.0 - self.p))


class ReLU:
    def __init__(self):
        self._x = None

    def forward(self, x):
        self._x = x
        return K.relu_forward(x)

    def backward(self, grad_out):
        if self._x is None:
            raise StateError("ReLU.backward called before forward")
        return K.relu_backward(grad_out, self._x)


def _check_labels(labels, n_classes):
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        bad = labels[(labels < 0) | (labels >= n_classes)][0]
        raise LabelError(f"label {bad} outside [0, {n_classes})")
    return labels


def softmax(logits):
    """Row-wise softmax with max subtraction."""
    return K.softmax(logits)


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy of ``softmax(logits)`` against integer labels.

    Returns ``(loss, grad_logits)`` where ``grad_logits = (softmax - onehot) / B``.
    """
    if logits.ndim != 2:
        raise DimensionError(f"logits must be 2-D, got {logits.shape}")
    labels = _check_labels(labels, logits.shape[1])
    if labels.shape != (logits.shape[0],):
        raise DimensionError(f"{labels.shape[0]} labels for {logits.shape[0]} rows")
    loss, grad, _ = K.softmax_xent(logits, labels)
    return float(loss), grad


def check_linearity(layer, x, y, a, rtol=1e-9):
    """Check additivity and homogeneity of a zero-bias Linear layer.

    Tests ``f(x + y) == f(x) + f(y)`` and ``f(a x) == a f(x)`` to relative
    error ``rtol`` (scaled by the larger of 1 and the magnitude of the
    right-hand side).
    """
    if np.any(layer.bias != 0.0):
        raise ParameterError("check_linearity requires a zero bias")
    f = layer.forward

    def close(lhs, rhs):
        scale = max(1.0, float(np.max(np.abs(rhs))) if rhs.size else 1.0)
        return float(np.max(np.abs(lhs - rhs))) <= rtol * scale

    return close(f(x + y), f(x) + f(y)) and close(f(a * x), a * f(x))
