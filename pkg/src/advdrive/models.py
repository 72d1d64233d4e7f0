"""The classifier, discriminator and generator networks, plus checkpoint I/O.

Networks are plain ordered layer stacks over NHWC float32 batches. Layer
names are ``<kind><n>`` (``conv1``, ``dense2``, ...) and parameters are
addressed as ``<layer>.<param>``, which is also the key used in checkpoints.
"""
import contextlib
import math
import struct
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DimensionError, FormatError, NumericalError
from .tensor import Tensor, as_tensor, clip, derive_seed, make_rng, no_grad
from .tensor.layers import BatchNorm, Conv2D, Dense, Dropout, Flatten, MaxPool2D, Upsample

INPUT_SHAPE = (32, 32, 3)
DEFAULT_EPSILON = 16 / 255


class Network:
    """Sequential stack of layers with named parameters and a train/infer mode."""

    def __init__(self, layers, input_shape=INPUT_SHAPE, seed=0, name="net"):
        self.name = name
        self.layers = list(layers)
        self.input_shape = tuple(input_shape)
        self.training = False
        self.rng = make_rng(derive_seed(seed, name, "dropout"))
        init_rng = make_rng(derive_seed(seed, name, "init"))
        counts = Counter()
        shape = self.input_shape
        self.shapes = [shape]
        for layer in self.layers:
            counts[layer.kind] += 1
            layer.name = f"{layer.kind}{counts[layer.kind]}"
            shape = tuple(layer.build(shape, init_rng))
            self.shapes.append(shape)
        self.output_shape = shape

    def __call__(self, x, logits=False):
        return self.forward(x, logits)

    def forward(self, x, logits=False):
        """Run the stack; ``logits`` skips the final dense layer's activation."""
        x = as_tensor(x)
        if tuple(x.shape[1:]) != self.input_shape:
            raise DimensionError(
                f"{self.name} expects N x {'x'.join(map(str, self.input_shape))} input, got {x.shape}")
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            if logits and i == last:
                if not isinstance(layer, Dense):
                    raise DimensionError(f"{self.name} does not end in a dense layer")
                x = layer.forward(x, self.training, self.rng, raw=True)
            else:
                x = layer.forward(x, self.training, self.rng)
        return x

    def train(self):
        self.training = True
        return self

    def eval(self):
        self.training = False
        return self

    @contextlib.contextmanager
    def mode(self, training):
        prev = self.training
        self.training = training
        try:
            yield self
        finally:
            self.training = prev

    @contextlib.contextmanager
    def frozen(self):
        """Let gradients flow through the network without computing its own."""
        params = list(self.parameters().values())
        prev = [p.requires_grad for p in params]
        for p in params:
            p.requires_grad = False
        try:
            yield self
        finally:
            for p, r in zip(params, prev):
                p.requires_grad = r

    def parameters(self):
        return {f"{layer.name}.{k}": p for layer in self.layers for k, p in layer.params.items()}

    def buffers(self):
        return {f"{layer.name}.{k}": b for layer in self.layers for k, b in layer.buffers.items()}

    def state_dict(self):
        state = {}
        for layer in self.layers:
            for k, p in layer.params.items():
                state[f"{layer.name}.{k}"] = p.data
            for k, b in layer.buffers.items():
                state[f"{layer.name}.{k}"] = b
        return state

    def load_state_dict(self, state):
        own = self.state_dict()
        missing = set(own) - set(state)
        extra = set(state) - set(own)
        if missing or extra:
            raise FormatError(f"checkpoint does not match {self.name}: missing {sorted(missing)}, "
                              f"unexpected {sorted(extra)}")
        for layer in self.layers:
            for k, p in layer.params.items():
                arr = state[f"{layer.name}.{k}"]
                if arr.shape != p.shape:
                    raise FormatError(f"{layer.name}.{k}: checkpoint shape {arr.shape} != {p.shape}")
                p.data = np.array(arr, dtype=np.float32)
            for k in layer.buffers:
                arr = state[f"{layer.name}.{k}"]
                layer.buffers[k][...] = arr
        return self

    def layer(self, name):
        for layer in self.layers:
            if layer.name == name:
                return layer
        raise KeyError(name)

    @property
    def flatten_width(self):
        for layer in self.layers:
            if isinstance(layer, Flatten):
                return layer.width
        return None

    def n_params(self):
        return sum(p.size for p in self.parameters().values())

    def summary(self):
        rows = []
        for layer, shape in zip(self.layers, self.shapes[1:]):
            rows.append(f"{layer.name:10s} {layer.describe():36s} -> {shape}")
        return "\n".join(rows)


def build_classifier(n_classes=43, seed=0, name="classifier"):
    if n_classes < 2:
        raise ConfigError(f"n_classes must be >= 2, got {n_classes}")
    layers = [
        Conv2D(32, 3, act="relu"),
        Conv2D(32, 3, act="relu"),
        MaxPool2D(),
        Conv2D(64, 3, act="relu"),
        Conv2D(64, 3, act="relu"),
        MaxPool2D(),
        BatchNorm(),
        Flatten(),
        Dense(512, act="relu"),
        BatchNorm(),
        Dropout(0.2),
        Dense(n_classes, act="softmax"),
    ]
    return Network(layers, INPUT_SHAPE, seed, name)


def build_discriminator(seed=0, name="discriminator"):
    layers = [
        Conv2D(32, 4, stride=2, act="leaky_relu"),
        Dropout(0.4),
        Conv2D(64, 4, stride=2, act="leaky_relu"),
        Dropout(0.4),
        Flatten(),
        Dense(64, act="leaky_relu"),
        BatchNorm(),
        Dense(1, act="sigmoid"),
    ]
    return Network(layers, INPUT_SHAPE, seed, name)


def build_generator(seed=0, name="generator", zero_residual=False):
    """Encoder-decoder emitting a same-shape residual in [-1, 1].

    With ``zero_residual`` the final convolution starts at zero, so the
    initial generator leaves images untouched.
    """
    layers = [
        Conv2D(16, 3, padding="same", act="relu"),
        Conv2D(32, 3, stride=2, padding="same", act="relu"),
        Conv2D(32, 3, padding="same", act="relu"),
        Upsample(2),
        Conv2D(16, 3, padding="same", act="relu"),
        Conv2D(3, 3, padding="same", act="tanh", zero_init=zero_residual),
    ]
    return Network(layers, INPUT_SHAPE, seed, name)


def n_classes_of(net):
    return net.output_shape[-1]


@dataclass(frozen=True)
class PerturbationBudget:
    """L-inf bound ``epsilon`` on normalized pixels and the soft L2 budget ``hinge_c``."""

    epsilon: float = DEFAULT_EPSILON
    hinge_c: float = 0.1

    def __post_init__(self):
        if not 0 <= self.epsilon <= 1:
            raise ConfigError(f"epsilon must be in [0, 1], got {self.epsilon}")
        if self.hinge_c < 0:
            raise ConfigError(f"hinge_c must be >= 0, got {self.hinge_c}")


def _enforce_linf(x_adv, x, eps):
    # float32 rounding of x + delta can overshoot the bound by one ulp; step back toward x
    eps = x.dtype.type(eps)
    for _ in range(8):
        d = x_adv - x
        bad = (d > eps) | (d < -eps)
        if not bad.any():
            break
        x_adv = np.where(bad, np.nextafter(x_adv, x), x_adv)
    return x_adv


def adversarial(x, g, epsilon):
    """Return ``(x_adv, delta)`` with ``delta = epsilon * g(x)`` as differentiable tensors."""
    x = as_tensor(x)
    delta = g(x) * float(epsilon)
    x_adv = clip(x + delta, 0.0, 1.0)
    x_adv.data = _enforce_linf(x_adv.data, x.data, epsilon)
    return x_adv, delta


def perturb(x, g, budget):
    """``clip(x + epsilon * g(x), 0, 1)``; max |x_adv - x| <= epsilon holds exactly."""
    x_adv, _ = adversarial(x, g, budget.epsilon)
    return x_adv


def perturb_array(x, g, budget, batch_size=256):
    """Batched, tape-free :func:`perturb` for numpy input in [0, 1]."""
    out = np.empty_like(x, dtype=np.float32)
    with no_grad(), g.mode(False):
        for i in range(0, len(x), batch_size):
            out[i:i + batch_size] = perturb(x[i:i + batch_size], g, budget).data
    return out


# checkpoint format ---------------------------------------------------------------

CKPT_MAGIC = b"ASDM"
CKPT_VERSION = 1


def save_checkpoint(net_or_state, path):
    state = net_or_state.state_dict() if isinstance(net_or_state, Network) else net_or_state
    Path(path).write_bytes(encode_checkpoint(state))


def encode_checkpoint(state):
    parts = [CKPT_MAGIC, struct.pack("<II", CKPT_VERSION, len(state))]
    for name, arr in state.items():
        arr = np.asarray(arr)
        if not np.all(np.isfinite(arr)):
            raise NumericalError(f"refusing to save non-finite tensor {name!r}")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, buf, what):
        self.buf = buf
        self.pos = 0
        self.what = what

    def take(self, n, field):
        if self.pos + n > len(self.buf):
            raise FormatError(f"{self.what} truncated in {field}: expected {n} bytes at offset "
                              f"{self.pos}, only {len(self.buf) - self.pos} available")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt, field):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), field))


def decode_checkpoint(buf):
    r = _Reader(buf, "checkpoint")
    magic = r.take(4, "magic")
    if magic != CKPT_MAGIC:
        raise FormatError(f"bad checkpoint magic: expected {CKPT_MAGIC.decode()!r}, found {magic!r}")
    version, count = r.unpack("<II", "header")
    if version != CKPT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}, expected {CKPT_VERSION}")
    state = {}
    for i in range(count):
        (nlen,) = r.unpack("<H", f"tensor {i} name length")
        name = r.take(nlen, f"tensor {i} name").decode("utf-8")
        (rank,) = r.unpack("<B", f"{name} rank")
        dims = r.unpack(f"<{rank}I", f"{name} dims")
        n = math.prod(dims)
        payload = r.take(4 * n, f"{name} payload")
        state[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).astype(np.float32)
    if r.pos != len(buf):
        raise FormatError(f"checkpoint has {len(buf) - r.pos} trailing bytes")
    return state


def load_checkpoint(path):
    return decode_checkpoint(Path(path).read_bytes())


def load_network(path, builder, **kwargs):
    """Build a network with ``builder(**kwargs)`` and fill it from a checkpoint."""
    state = load_checkpoint(path)
    if builder is build_classifier and "n_classes" not in kwargs:
        last = [k for k in state if k.endswith(".weight")][-1]
        kwargs["n_classes"] = state[last].shape[1]
    return builder(**kwargs).load_state_dict(state)
