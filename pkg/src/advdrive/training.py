"""Supervised training and batched inference for softmax networks."""
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NumericalError
from .tensor import Adam, cross_entropy, derive_seed, make_rng, no_grad

log = logging.getLogger(__name__)


@dataclass
class FitHistory:
    loss: list = field(default_factory=list)
    train_accuracy: list = field(default_factory=list)
    val_accuracy: list = field(default_factory=list)


def batches(n, batch_size, rng=None, min_size=2):
    """Index batches over ``range(n)``, shuffled when ``rng`` is given.

    A trailing batch smaller than ``min_size`` is dropped (batch norm needs 2).
    """
    order = rng.permutation(n) if rng is not None else np.arange(n)
    for i in range(0, n, batch_size):
        idx = order[i:i + batch_size]
        if len(idx) >= min_size:
            yield idx


def predict_proba(net, x, batch_size=256):
    out = np.empty((len(x), net.output_shape[-1]), dtype=np.float32)
    with no_grad(), net.mode(False):
        for i in range(0, len(x), batch_size):
            out[i:i + batch_size] = net(x[i:i + batch_size]).data
    return out


def predict(net, x, batch_size=256):
    return predict_proba(net, x, batch_size).argmax(axis=1)


def accuracy(net, x, y, batch_size=256):
    if len(x) == 0:
        return math.nan
    return float((predict(net, x, batch_size) == np.asarray(y)).mean())


def fit_classifier(net, x, y, epochs, batch_size=64, lr=1e-3, seed=0,
                   x_val=None, y_val=None, optimizer=None):
    """Minimize cross-entropy of ``net``'s softmax output with Adam.

    Batches are reshuffled every epoch from a stream derived from ``seed``.
    Raises :class:`NumericalError` naming the epoch if the loss goes non-finite.
    """
    if len(x) != len(y):
        raise ConfigError(f"{len(x)} images but {len(y)} labels")
    if epochs > 0 and len(x) < 2:
        raise ConfigError("need at least 2 training samples")
    y = np.asarray(y)
    opt = optimizer or Adam(net.parameters(), lr=lr)
    hist = FitHistory()
    net.train()
    for epoch in range(epochs):
        rng = make_rng(derive_seed(seed, "shuffle", epoch))
        total, correct, seen = 0.0, 0, 0
        for idx in batches(len(x), batch_size, rng):
            probs = net(x[idx])
            loss = cross_entropy(probs, y[idx])
            if not np.isfinite(loss.data):
                raise NumericalError(f"non-finite loss in epoch {epoch + 1}", epoch=epoch + 1)
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += float(loss.data) * len(idx)
            correct += int((probs.data.argmax(axis=1) == y[idx]).sum())
            seen += len(idx)
        hist.loss.append(total / max(seen, 1))
        hist.train_accuracy.append(correct / max(seen, 1))
        if x_val is not None and len(x_val):
            hist.val_accuracy.append(accuracy(net, x_val, y_val))
        log.info("%s epoch %d/%d loss %.4f train_acc %.4f%s", net.name, epoch + 1, epochs,
                 hist.loss[-1], hist.train_accuracy[-1],
                 f" val_acc {hist.val_accuracy[-1]:.4f}" if hist.val_accuracy else "")
    net.eval()
    return hist
