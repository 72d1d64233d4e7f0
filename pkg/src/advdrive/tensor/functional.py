"""Differentiable layer operations and losses on NHWC tensors."""
import math

import numpy as np

from ..errors import ConfigError, DimensionError
from . import kernels
from .autograd import Tensor, as_tensor

LEAKY_SLOPE = 0.2
BN_MOMENTUM = 0.99
BN_EPS = 1e-5
PROB_EPS = 1e-7


def conv_output_size(size, k, stride, padding):
    if padding == "valid":
        return (size - k) // stride + 1
    if padding == "same":
        return -(-size // stride)
    raise ConfigError(f"unknown padding {padding!r}; expected 'valid' or 'same'")


def _same_pads(size, k, stride):
    out = -(-size // stride)
    total = max((out - 1) * stride + k - size, 0)
    return total // 2, total - total // 2


def conv2d(x, kernels_, bias=None, stride=1, padding="valid"):
    """2-D cross-correlation of N x H x W x Cin input with K x K x Cin x F kernels.

    A 3-D ``H x W x Cin`` input is treated as a batch of one and returned 3-D.
    """
    x = as_tensor(x)
    w = as_tensor(kernels_)
    if x.ndim == 3:
        out = conv2d(x.reshape((1,) + x.shape), w, bias, stride, padding)
        return out.reshape(out.shape[1:])
    if x.ndim != 4:
        raise DimensionError(f"conv2d input must be N x H x W x C, got shape {x.shape}")
    if w.ndim != 4 or w.shape[0] != w.shape[1]:
        raise DimensionError(f"conv2d kernels must be K x K x Cin x F, got shape {w.shape}")
    if stride < 1:
        raise ConfigError(f"stride must be positive, got {stride}")
    n, h, wd, cin = x.shape
    k, _, kcin, f = w.shape
    if kcin != cin:
        raise DimensionError(f"conv2d channel axis mismatch: input Cin={cin}, kernel Cin={kcin}")

    if padding == "same":
        pads = (_same_pads(h, k, stride), _same_pads(wd, k, stride))
    elif padding == "valid":
        pads = ((0, 0), (0, 0))
    else:
        raise ConfigError(f"unknown padding {padding!r}; expected 'valid' or 'same'")
    hp, wp = h + sum(pads[0]), wd + sum(pads[1])
    if k > hp or k > wp:
        raise DimensionError(
            f"conv2d kernel size {k} exceeds padded spatial axes H={hp}, W={wp}")

    xp = x.data
    if padding == "same" and (pads[0] != (0, 0) or pads[1] != (0, 0)):
        xp = np.pad(xp, ((0, 0), pads[0], pads[1], (0, 0)))
    ho = (hp - k) // stride + 1
    wo = (wp - k) // stride + 1
    cols = kernels.im2col(np.ascontiguousarray(xp), k, stride)
    w2 = w.data.reshape(k * k * cin, f)
    out = cols @ w2
    parents = [x, w]
    if bias is not None:
        b = as_tensor(bias)
        if b.shape != (f,):
            raise DimensionError(f"conv2d bias must have shape ({f},), got {b.shape}")
        out += b.data
        parents.append(b)
    out = out.reshape(n, ho, wo, f)

    def backward(g):
        g2 = g.reshape(-1, f)
        dx = dw = db = None
        if x.requires_grad:
            dxp = kernels.col2im(g2 @ w2.T, xp.shape, k, stride)
            dx = dxp[:, pads[0][0]:pads[0][0] + h, pads[1][0]:pads[1][0] + wd]
        if w.requires_grad:
            dw = (cols.T @ g2).reshape(w.shape)
        if bias is not None and parents[2].requires_grad:
            db = g2.sum(axis=0)
        return (dx, dw, db) if bias is not None else (dx, dw)

    return Tensor._from_op(out, parents, backward)


def maxpool2d(x, pool=2):
    """Non-overlapping max pooling; odd trailing rows/columns are dropped."""
    x = as_tensor(x)
    if pool != 2:
        raise ConfigError(f"only 2 x 2 pooling is implemented, got pool={pool}")
    if x.ndim == 3:
        out = maxpool2d(x.reshape((1,) + x.shape), pool)
        return out.reshape(out.shape[1:])
    if x.ndim != 4:
        raise DimensionError(f"maxpool2d input must be N x H x W x C, got shape {x.shape}")
    if x.shape[1] < pool or x.shape[2] < pool:
        raise DimensionError(
            f"pool size {pool} larger than spatial axes H={x.shape[1]}, W={x.shape[2]}")
    out, arg = kernels.maxpool2_forward(np.ascontiguousarray(x.data))
    in_shape = x.shape

    def backward(g):
        return (kernels.maxpool2_backward(np.ascontiguousarray(g), arg, in_shape),)

    return Tensor._from_op(out, (x,), backward)


def dense(x, weight, bias=None):
    x = as_tensor(x)
    w = as_tensor(weight)
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0]:
        raise DimensionError(
            f"dense inner dimensions differ: input {x.shape} vs weight {w.shape}")
    out = x.data @ w.data
    parents = [x, w]
    if bias is not None:
        b = as_tensor(bias)
        if b.shape != (w.shape[1],):
            raise DimensionError(f"dense bias must have shape ({w.shape[1]},), got {b.shape}")
        out = out + b.data
        parents.append(b)

    def backward(g):
        dx = g @ w.data.T if x.requires_grad else None
        dw = x.data.T @ g if w.requires_grad else None
        if bias is None:
            return dx, dw
        return dx, dw, g.sum(axis=0)

    return Tensor._from_op(out, parents, backward)


def _stable_sigmoid(z):
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(z.dtype, copy=False)


def activation(x, kind, alpha=LEAKY_SLOPE):
    x = as_tensor(x)
    z = x.data
    if kind == "relu":
        out = np.maximum(z, 0)
        deriv = lambda: (z > 0).astype(z.dtype)  # noqa: E731
    elif kind == "leaky_relu":
        out = np.where(z > 0, z, alpha * z).astype(z.dtype, copy=False)
        deriv = lambda: np.where(z > 0, 1.0, alpha).astype(z.dtype)  # noqa: E731
    elif kind == "sigmoid":
        out = _stable_sigmoid(z)
        deriv = lambda: out * (1 - out)  # noqa: E731
    elif kind == "tanh":
        out = np.tanh(z)
        deriv = lambda: 1 - out * out  # noqa: E731
    else:
        raise ConfigError(f"unknown activation {kind!r}")
    return Tensor._from_op(out, (x,), lambda g: (g * deriv(),))


def relu(x):
    return activation(x, "relu")


def leaky_relu(x, alpha=LEAKY_SLOPE):
    return activation(x, "leaky_relu", alpha)


def sigmoid(x):
    return activation(x, "sigmoid")


def tanh(x):
    return activation(x, "tanh")


def softmax(x):
    x = as_tensor(x)
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return Tensor._from_op(s, (x,), backward)


def batchnorm(x, gamma, beta, running_mean, running_var, train,
              momentum=BN_MOMENTUM, eps=BN_EPS):
    """Normalize over every axis but the last (the feature/channel axis).

    ``running_mean`` and ``running_var`` are numpy buffers updated in place in
    train mode.
    """
    x = as_tensor(x)
    gamma = as_tensor(gamma)
    beta = as_tensor(beta)
    axes = tuple(range(x.ndim - 1))
    if x.shape[-1] != gamma.shape[0]:
        raise DimensionError(f"batchnorm feature axis {x.shape[-1]} != scale size {gamma.shape[0]}")
    if train:
        if x.shape[0] < 2:
            raise DimensionError("batchnorm in train mode needs a batch of at least 2")
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        running_mean *= momentum
        running_mean += (1 - momentum) * mu
        running_var *= momentum
        running_var += (1 - momentum) * var
    else:
        mu = running_mean
        var = running_var
    inv_std = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    xhat = (x.data - mu.astype(x.dtype)) * inv_std
    out = gamma.data * xhat + beta.data
    m = x.data.size // x.shape[-1]

    def backward(g):
        dgamma = (g * xhat).sum(axis=axes)
        dbeta = g.sum(axis=axes)
        dxhat = g * gamma.data
        if train:
            dx = inv_std / m * (m * dxhat - dxhat.sum(axis=axes) - xhat * (dxhat * xhat).sum(axis=axes))
        else:
            dx = dxhat * inv_std
        return dx, dgamma, dbeta

    return Tensor._from_op(out, (x, gamma, beta), backward)


def dropout(x, rate, train, rng=None):
    """Inverted dropout: survivors are scaled by 1/(1-rate) in train mode."""
    if not 0 <= rate < 1:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    x = as_tensor(x)
    if not train or rate == 0:
        return x
    if rng is None:
        raise ConfigError("dropout in train mode needs an rng")
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) * x.dtype.type(1.0 / (1.0 - rate))
    return Tensor._from_op(x.data * keep, (x,), lambda g: (g * keep,))


def upsample_nearest(x, factor=2):
    x = as_tensor(x)
    n, h, w, c = x.shape
    out = np.repeat(np.repeat(x.data, factor, axis=1), factor, axis=2)

    def backward(g):
        return (g.reshape(n, h, factor, w, factor, c).sum(axis=(2, 4)),)

    return Tensor._from_op(out, (x,), backward)


def _check_labels(labels, n, k):
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise DimensionError(f"expected {n} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"label out of range [0, {k}): min={labels.min()}, max={labels.max()}")
    return labels.astype(np.intp)


def cross_entropy(probs, labels):
    """Mean of -log(p_true + 1e-7) over the batch."""
    probs = as_tensor(probs)
    n, k = probs.shape
    y = _check_labels(labels, n, k)
    rows = np.arange(n)
    p = probs.data[rows, y]
    loss = np.asarray(-np.log(p + PROB_EPS).mean(), dtype=probs.dtype)

    def backward(g):
        d = np.zeros_like(probs.data)
        d[rows, y] = -g / (n * (p + PROB_EPS))
        return (d,)

    return Tensor._from_op(loss, (probs,), backward)


def binary_cross_entropy(probs, targets):
    probs = as_tensor(probs)
    p = probs.data.reshape(-1)
    t = np.asarray(targets, dtype=probs.dtype).reshape(-1)
    if t.shape != p.shape:
        raise DimensionError(f"{p.size} probabilities but {t.size} targets")
    n = p.size
    loss = -(t * np.log(p + PROB_EPS) + (1 - t) * np.log(1 - p + PROB_EPS)).mean()

    def backward(g):
        d = -g / n * (t / (p + PROB_EPS) - (1 - t) / (1 - p + PROB_EPS))
        return (d.reshape(probs.shape).astype(probs.dtype, copy=False),)

    return Tensor._from_op(np.asarray(loss, dtype=probs.dtype), (probs,), backward)


def margin_loss(probs, labels, kappa=0.0, groups=None):
    """Untargeted confidence margin: mean of max(s_true - max_{j != y} s_j, -kappa).

    ``probs`` may be any per-class scores. On probabilities the gradient
    vanishes once the model is confident; logits (equivalently log-softmax)
    give the same sign and a usable gradient.

    ``groups`` optionally maps each class to a group id. The margin is then
    the best score inside the true class's group minus the best score outside
    it, so it turns negative exactly when the argmax leaves the group.
    """
    probs = as_tensor(probs)
    n, k = probs.shape
    y = _check_labels(labels, n, k)
    rows = np.arange(n)
    if groups is None:
        own = y
        masked = probs.data.copy()
        masked[rows, y] = -np.inf
    else:
        groups = np.asarray(groups)
        if groups.shape != (k,):
            raise ValueError(f"groups must have one entry per class ({k}), got {groups.shape}")
        if len(np.unique(groups)) < 2:
            raise ValueError("groups must contain at least two distinct ids")
        same = groups[None, :] == groups[y][:, None]
        own = np.where(same, probs.data, -np.inf).argmax(axis=1)
        masked = np.where(same, -np.inf, probs.data)
    other = masked.argmax(axis=1)
    margin = probs.data[rows, own] - probs.data[rows, other]
    active = margin > -kappa
    loss = np.where(active, margin, -kappa).mean()

    def backward(g):
        d = np.zeros_like(probs.data)
        scale = g / n
        d[rows[active], own[active]] += scale
        d[rows[active], other[active]] -= scale
        return (d,)

    return Tensor._from_op(np.asarray(loss, dtype=probs.dtype), (probs,), backward)


def l2_hinge(delta, c):
    """Mean over the batch of max(0, ||delta_i||_2 - c)."""
    delta = as_tensor(delta)
    n = delta.shape[0]
    flat = delta.data.reshape(n, -1)
    norms = np.sqrt((flat.astype(np.float64) ** 2).sum(axis=1))
    active = norms > c
    loss = np.where(active, norms - c, 0.0).mean()

    def backward(g):
        safe = np.where(active, norms, 1.0)
        d = flat * (active * g / (n * safe))[:, None]
        return (d.reshape(delta.shape).astype(delta.dtype, copy=False),)

    return Tensor._from_op(np.asarray(loss, dtype=delta.dtype), (delta,), backward)


def he_uniform(rng, shape, fan_in, dtype=np.float32):
    limit = math.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)
