"""Stateful layers: each owns its parameter tensors and buffers."""
import numpy as np

from ..errors import ConfigError, DimensionError
from . import functional as F
from .autograd import Tensor, flatten


class Layer:
    kind = "layer"

    def __init__(self):
        self.name = None
        self.params = {}
        self.buffers = {}

    def build(self, in_shape, rng):
        """Create parameters for a per-sample input shape; return the output shape."""
        return in_shape

    def forward(self, x, train, rng):
        raise NotImplementedError

    def describe(self):
        return self.kind


class Conv2D(Layer):
    kind = "conv"

    def __init__(self, filters, kernel, stride=1, padding="valid", act=None, zero_init=False):
        super().__init__()
        self.filters, self.kernel, self.stride, self.padding = filters, kernel, stride, padding
        self.act = act
        self.zero_init = zero_init

    def build(self, in_shape, rng):
        if len(in_shape) != 3:
            raise DimensionError(f"{self.name}: expected H x W x C input, got {in_shape}")
        h, w, c = in_shape
        ho = F.conv_output_size(h, self.kernel, self.stride, self.padding)
        wo = F.conv_output_size(w, self.kernel, self.stride, self.padding)
        if ho < 1 or wo < 1:
            raise DimensionError(f"{self.name}: kernel {self.kernel} does not fit input {in_shape}")
        shape = (self.kernel, self.kernel, c, self.filters)
        if self.zero_init:
            k = np.zeros(shape, np.float32)
        else:
            k = F.he_uniform(rng, shape, self.kernel * self.kernel * c)
        self.params = {"kernel": Tensor(k, requires_grad=True),
                       "bias": Tensor(np.zeros(self.filters), requires_grad=True)}
        return (ho, wo, self.filters)

    def forward(self, x, train, rng):
        out = F.conv2d(x, self.params["kernel"], self.params["bias"], self.stride, self.padding)
        return F.activation(out, self.act) if self.act else out

    def describe(self):
        return f"conv({self.filters},k{self.kernel},s{self.stride},{self.padding})" + (
            f"+{self.act}" if self.act else "")


class Dense(Layer):
    kind = "dense"

    def __init__(self, units, act=None):
        super().__init__()
        self.units = units
        self.act = act

    def build(self, in_shape, rng):
        if len(in_shape) != 1:
            raise DimensionError(f"{self.name}: dense needs a flat input, got {in_shape}")
        (din,) = in_shape
        self.params = {"weight": Tensor(F.he_uniform(rng, (din, self.units), din), requires_grad=True),
                       "bias": Tensor(np.zeros(self.units), requires_grad=True)}
        return (self.units,)

    def forward(self, x, train, rng, raw=False):
        out = F.dense(x, self.params["weight"], self.params["bias"])
        if raw:
            return out
        if self.act == "softmax":
            return F.softmax(out)
        return F.activation(out, self.act) if self.act else out

    def describe(self):
        din = self.params["weight"].shape[0] if self.params else "?"
        return f"dense({din}->{self.units})" + (f"+{self.act}" if self.act else "")


class MaxPool2D(Layer):
    kind = "pool"

    def build(self, in_shape, rng):
        h, w, c = in_shape
        if h < 2 or w < 2:
            raise DimensionError(f"{self.name}: pool 2 larger than spatial dims {in_shape}")
        return (h // 2, w // 2, c)

    def forward(self, x, train, rng):
        return F.maxpool2d(x, 2)

    def describe(self):
        return "maxpool2"


class BatchNorm(Layer):
    kind = "bn"

    def build(self, in_shape, rng):
        c = in_shape[-1]
        self.params = {"gamma": Tensor(np.ones(c), requires_grad=True),
                       "beta": Tensor(np.zeros(c), requires_grad=True)}
        self.buffers = {"running_mean": np.zeros(c, np.float32),
                        "running_var": np.ones(c, np.float32)}
        return in_shape

    def forward(self, x, train, rng):
        return F.batchnorm(x, self.params["gamma"], self.params["beta"],
                           self.buffers["running_mean"], self.buffers["running_var"], train)

    def describe(self):
        return "batchnorm"


class Dropout(Layer):
    kind = "dropout"

    def __init__(self, rate):
        super().__init__()
        if not 0 <= rate < 1:
            raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate

    def forward(self, x, train, rng):
        return F.dropout(x, self.rate, train, rng)

    def describe(self):
        return f"dropout({self.rate})"


class Flatten(Layer):
    kind = "flatten"

    def build(self, in_shape, rng):
        self.width = int(np.prod(in_shape))
        return (self.width,)

    def forward(self, x, train, rng):
        return flatten(x)

    def describe(self):
        return "flatten"


class Upsample(Layer):
    kind = "upsample"

    def __init__(self, factor=2):
        super().__init__()
        self.factor = factor

    def build(self, in_shape, rng):
        h, w, c = in_shape
        return (h * self.factor, w * self.factor, c)

    def forward(self, x, train, rng):
        return F.upsample_nearest(x, self.factor)

    def describe(self):
        return f"upsample(x{self.factor})"
