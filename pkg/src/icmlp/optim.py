"""Weight initialisation, AdamW and the exponential learning-rate schedule."""
import math

import numpy as np

from . import _kernels as K
from .errors import DimensionError, ParameterError
from .numerics import uniform


def kaiming_bound(fan_in):
    if fan_in < 1:
        raise ParameterError(f"fan_in must be >= 1, got {fan_in}")
    return math.sqrt(6.0 / fan_in)


def kaiming_uniform_init(rng, fan_in, rows, cols):
    """He-uniform weights for ReLU nets: ``U(-b, b)`` with ``b = sqrt(6 / fan_in)``."""
    b = kaiming_bound(fan_in)
    return uniform(rng, -b, b, rows, cols)


class AdamW:
    """Adam with decoupled weight decay.

    ``params`` is a list of ``(value, grad)`` array pairs, updated in place.
    Per step::

        m <- b1 m + (1 - b1) g
        v <- b2 v + (1 - b2) g^2
        w <- w (1 - lr wd) - lr * m_hat / (sqrt(v_hat) + eps)

    The decay term never passes through the moment estimates.
    """

    def __init__(self, params, lr, weight_decay=0.0, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = float(lr)
        self.weight_decay = float(weight_decay)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p, _ in self.params]
        self.v = [np.zeros_like(p) for p, _ in self.params]

    def step(self):
        for p, g in self.params:
            if p.shape != g.shape:
                raise DimensionError(f"parameter {p.shape} and gradient {g.shape} differ")
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for (p, g), m, v in zip(self.params, self.m, self.v):
            K.adamw_update(p, g, m, v, self.lr, self.beta1, self.beta2, self.eps,
                           self.weight_decay, bc1, bc2)

    def zero_grads(self):
        for _, g in self.params:
            g.fill(0.0)


class ExponentialLR:
    """``lr(epoch) = initial_lr * gamma ** epoch``; epochs count from 0."""

    def __init__(self, initial_lr, gamma):
        if not 0.0 < gamma <= 1.0:
            raise ParameterError(f"lr decay factor must lie in (0, 1], got {gamma}")
        self.initial_lr = float(initial_lr)
        self.gamma = float(gamma)

    def lr_at_epoch(self, epoch):
        if epoch < 0:
            raise ParameterError(f"epoch must be >= 0, got {epoch}")
        return self.initial_lr * self.gamma ** epoch
