"""Residual / downsample blocks and the full IC-MLP classifier.

Network layout for ``n`` residual and ``n`` downsample blocks on input
width ``D``::

    Residual(D) -> Downsample(D -> D/2) -> Residual(D/2) -> ... -> Linear head

A residual block computes ``relu(fc2(IC(relu(fc1(IC(x))))) + x)`` and a
downsample block ``relu(fc(IC(x)))``, where ``IC`` is batch norm followed
by dropout.  The very first residual block has no leading IC layer so raw
(unit-norm) embeddings reach the first weight matrix untouched.
"""
import copy
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DimensionError, FormatError, StateError
from .layers import BatchNorm, Dropout, Linear, Mode, ReLU
from .optim import kaiming_uniform_init

MAGIC = b"ICMLP\0"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<6sH4IB3d")
_BITS_OFFSET = 24


@dataclass(frozen=True)
class AblationFlags:
    no_dropout: bool = False
    no_ic: bool = False
    no_skip: bool = False

    def to_bits(self):
        return int(self.no_dropout) | int(self.no_ic) << 1 | int(self.no_skip) << 2

    @classmethod
    def from_bits(cls, bits):
        return cls(bool(bits & 1), bool(bits & 2), bool(bits & 4))

    @property
    def name(self):
        parts = [n for n, on in (("no_dropout", self.no_dropout), ("no_ic", self.no_ic),
                                 ("no_skip", self.no_skip)) if on]
        return "+".join(parts) or "full"


NO_ABLATION = AblationFlags()

VARIANTS = {
    "full": AblationFlags(),
    "no_dropout": AblationFlags(no_dropout=True),
    "no_ic": AblationFlags(no_ic=True),
    "no_skip": AblationFlags(no_skip=True),
    "no_ic+no_skip": AblationFlags(no_ic=True, no_skip=True),
}


class ICLayer:
    """Batch norm followed by dropout (dropout may be structurally absent)."""

    def __init__(self, width, dropout_p, with_dropout=True, eps=1e-5, momentum=0.1):
        self.bn = BatchNorm(width, eps=eps, momentum=momentum)
        self.dropout = Dropout(dropout_p) if with_dropout else None
        self._used = None

    def forward(self, x, mode, rng, ablation):
        if ablation.no_ic:
            self._used = (False, False)
            return x
        h = self.bn.forward(x, mode)
        use_drop = self.dropout is not None and not ablation.no_dropout
        if use_drop:
            h = self.dropout.forward(h, mode, rng)
        self._used = (True, use_drop)
        return h

    def backward(self, grad):
        if self._used is None:
            raise StateError("IC layer backward called before forward")
        use_bn, use_drop = self._used
        if use_drop:
            grad = self.dropout.backward(grad)
        if use_bn:
            grad = self.bn.backward(grad)
        return grad


def _run_ic(ic, x, mode, rng, ablation):
    return x if ic is None else ic.forward(x, mode, rng, ablation)


def _back_ic(ic, grad):
    return grad if ic is None else ic.backward(grad)


class ResidualBlock:
    def __init__(self, width, ic1, ic2):
        self.width = width
        self.ic1 = ic1
        self.fc1 = Linear(width, width)
        self.relu1 = ReLU()
        self.ic2 = ic2
        self.fc2 = Linear(width, width)
        self.relu2 = ReLU()
        self._skip = None

    def forward(self, x, mode, rng=None, ablation=NO_ABLATION):
        if x.ndim != 2 or x.shape[1] != self.width:
            raise DimensionError(f"residual block of width {self.width} got input {x.shape}")
        h = self.relu1.forward(self.fc1.forward(_run_ic(self.ic1, x, mode, rng, ablation)))
        h = self.fc2.forward(_run_ic(self.ic2, h, mode, rng, ablation))
        self._skip = not ablation.no_skip
        if self._skip:
            h = h + x
        return self.relu2.forward(h)

    def backward(self, grad):
        if self._skip is None:
            raise StateError("ResidualBlock.backward called before forward")
        grad = self.relu2.backward(grad)
        skip_grad = grad
        grad = _back_ic(self.ic2, self.fc2.backward(grad))
        grad = _back_ic(self.ic1, self.fc1.backward(self.relu1.backward(grad)))
        return grad + skip_grad if self._skip else grad

    def layers(self):
        return [self.ic1, self.fc1, self.ic2, self.fc2]


class DownsampleBlock:
    def __init__(self, width_in, ic):
        if width_in < 2:
            raise ConfigurationError(f"cannot halve width {width_in}")
        self.width_in = width_in
        self.width_out = width_in // 2
        self.ic = ic
        self.fc = Linear(width_in, self.width_out)
        self.relu = ReLU()

    def forward(self, x, mode, rng=None, ablation=NO_ABLATION):
        if x.ndim != 2 or x.shape[1] != self.width_in:
            raise DimensionError(f"downsample block of width {self.width_in} got input {x.shape}")
        return self.relu.forward(self.fc.forward(_run_ic(self.ic, x, mode, rng, ablation)))

    def backward(self, grad):
        return _back_ic(self.ic, self.fc.backward(self.relu.backward(grad)))

    def layers(self):
        return [self.ic, self.fc]


class IcMlpModel:
    """The full classifier: block pairs followed by a bare linear head.

    ``mode`` selects train / eval / MC behaviour for every forward call.
    Logits are returned; softmax lives in the loss.
    """

    def __init__(self, input_dim, n_classes, n_residual, n_downsample, dropout_p,
                 ablation=NO_ABLATION, eps=1e-5, momentum=0.1):
        _validate_arch(input_dim, n_classes, n_residual, n_downsample)
        self.input_dim = input_dim
        self.n_classes = n_classes
        self.n_residual = n_residual
        self.n_downsample = n_downsample
        self.dropout_p = float(dropout_p)
        self.ablation = ablation
        self.eps = float(eps)
        self.momentum = float(momentum)
        self.mode = Mode.TRAIN
        self._backward_ready = False

        def make_ic(w):
            if ablation.no_ic:
                return None
            return ICLayer(w, self.dropout_p, with_dropout=not ablation.no_dropout,
                           eps=self.eps, momentum=self.momentum)

        self.blocks = []
        w = input_dim
        for i in range(n_residual):
            res = ResidualBlock(w, None if i == 0 else make_ic(w), make_ic(w))
            down = DownsampleBlock(w, make_ic(w))
            self.blocks.append((res, down))
            w = down.width_out
        self.final_width = w
        self.head = Linear(w, n_classes)

    # -- traversal -------------------------------------------------------

    def linear_layers(self):
        out = []
        for res, down in self.blocks:
            out += [res.fc1, res.fc2, down.fc]
        out.append(self.head)
        return out

    def ic_layers(self):
        out = []
        for res, down in self.blocks:
            out += [ic for ic in (res.ic1, res.ic2, down.ic) if ic is not None]
        return out

    def dropout_layers(self):
        return [ic.dropout for ic in self.ic_layers() if ic.dropout is not None]

    def _ordered_layers(self):
        for res, down in self.blocks:
            for layer in res.layers() + down.layers():
                if layer is not None:
                    yield layer
        yield self.head

    def parameters(self):
        """``(value, grad)`` pairs in forward traversal order."""
        params = []
        for layer in self._ordered_layers():
            params += (layer.bn if isinstance(layer, ICLayer) else layer).parameters()
        return params

    def state_arrays(self):
        """Every persisted array (parameters and BN running statistics) in file order."""
        arrays = []
        for layer in self._ordered_layers():
            if isinstance(layer, ICLayer):
                bn = layer.bn
                arrays += [bn.gamma, bn.beta, bn.running_mean, bn.running_var]
            else:
                arrays += [layer.weight, layer.bias]
        return arrays

    def zero_grads(self):
        for _, g in self.parameters():
            g.fill(0.0)

    def set_mode(self, mode):
        """Switch mode, returning the previous one."""
        prev, self.mode = self.mode, mode
        return prev

    def copy(self):
        return copy.deepcopy(self)

    # -- computation -----------------------------------------------------

    def forward(self, x, rng=None, ablation=None):
        """Logits for a batch ``x`` of shape (B, input_dim).

        ``ablation`` overrides the model's own flags for this call; it can
        only switch components off.
        """
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise DimensionError(f"model expects width {self.input_dim}, got input {x.shape}")
        ablation = self.ablation if ablation is None else ablation
        h = x
        for res, down in self.blocks:
            h = res.forward(h, self.mode, rng, ablation)
            h = down.forward(h, self.mode, rng, ablation)
        self._backward_ready = self.mode is Mode.TRAIN
        return self.head.forward(h)

    def backward(self, grad_logits):
        if not self._backward_ready:
            raise StateError("model backward needs a preceding train-mode forward")
        grad = self.head.backward(grad_logits)
        for res, down in reversed(self.blocks):
            grad = down.backward(grad)
            grad = res.backward(grad)
        return grad

    def param_count(self):
        return sum(p.size for p, _ in self.parameters())

    def describe(self):
        widths = [self.input_dim] + [d.width_out for _, d in self.blocks]
        return (f"IcMlpModel(input={self.input_dim}, classes={self.n_classes}, "
                f"blocks={self.n_residual}/{self.n_downsample}, widths={widths}, "
                f"dropout={self.dropout_p}, ablation={self.ablation.name}, "
                f"params={self.param_count()})")


def _validate_arch(input_dim, n_classes, n_residual, n_downsample):
    if n_residual != n_downsample:
        raise ConfigurationError(
            f"residual and downsample block counts must match, got {n_residual} and {n_downsample}")
    if input_dim < 1 or n_classes < 1 or n_residual < 0:
        raise ConfigurationError("input_dim and n_classes must be positive, block counts >= 0")
    w = input_dim
    for _ in range(n_downsample):
        if w < 2:
            raise ConfigurationError(
                f"input width {input_dim} cannot be halved {n_downsample} times")
        w //= 2


def build_model(input_dim, n_classes, n_residual, n_downsample, dropout_p=0.05,
                ablation=NO_ABLATION, rng=None, eps=1e-5, momentum=0.1):
    """Construct an IcMlpModel with Kaiming-uniform weights and zero biases.

    Linear layers are initialised in forward order from ``rng``; with
    ``rng=None`` all weights are left at zero.
    """
    model = IcMlpModel(input_dim, n_classes, n_residual, n_downsample, dropout_p,
                       ablation=ablation, eps=eps, momentum=momentum)
    if rng is not None:
        for lin in model.linear_layers():
            lin.weight[...] = kaiming_uniform_init(rng, lin.in_features,
                                                   lin.out_features, lin.in_features)
    return model


def param_count(model):
    """Trainable scalars: weights, biases, BN gamma/beta (running stats excluded)."""
    return model.param_count()


# -- serialisation ----------------------------------------------------------

def save_model(model, path):
    with open(path, "wb") as fh:
        fh.write(model_to_bytes(model))


def model_to_bytes(model):
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, model.input_dim, model.n_classes,
                          model.n_residual, model.n_downsample, model.ablation.to_bits(),
                          model.dropout_p, model.eps, model.momentum)
    body = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in model.state_arrays())
    return header + body


def load_model(path):
    with open(path, "rb") as fh:
        return model_from_bytes(fh.read())


def model_from_bytes(buf):
    if len(buf) < len(MAGIC) or buf[:len(MAGIC)] != MAGIC:
        raise FormatError("bad magic, not an IC-MLP model file", 0)
    if len(buf) < _HEADER.size:
        raise FormatError(f"truncated header ({len(buf)} of {_HEADER.size} bytes)", len(buf))
    (_, version, input_dim, n_classes, n_res, n_down, bits,
     dropout_p, eps, momentum) = _HEADER.unpack_from(buf, 0)
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported format version {version}", len(MAGIC))
    if bits & ~0b111:
        raise FormatError(f"unknown ablation bits {bits:#x}", _BITS_OFFSET)
    try:
        model = IcMlpModel(input_dim, n_classes, n_res, n_down, dropout_p,
                           ablation=AblationFlags.from_bits(bits), eps=eps, momentum=momentum)
    except ValueError as exc:
        raise FormatError(f"inconsistent header: {exc}", len(MAGIC) + 2) from None
    offset = _HEADER.size
    for arr in model.state_arrays():
        nbytes = arr.size * 8
        if offset + nbytes > len(buf):
            raise FormatError(f"truncated parameter data, need {nbytes} bytes", offset)
        arr[...] = np.frombuffer(buf, dtype="<f8", count=arr.size, offset=offset).reshape(arr.shape)
        offset += nbytes
    if offset != len(buf):
        raise FormatError(f"{len(buf) - offset} trailing bytes after parameter data", offset)
    model.set_mode(Mode.EVAL)
    return model


def copy_weights(src, dst):
    """Copy all state arrays from ``src`` into ``dst``; architectures must match."""
    a, b = src.state_arrays(), dst.state_arrays()
    if len(a) != len(b) or any(x.shape != y.shape for x, y in zip(a, b)):
        raise ConfigurationError("warm-start model architecture does not match the configuration")
    for x, y in zip(a, b):
        y[...] = x
