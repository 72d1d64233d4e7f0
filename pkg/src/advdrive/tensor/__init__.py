"""Numpy tensor core: autodiff, layer ops, Adam, seeded rng."""
from .autograd import Tensor, as_tensor, clip, concat, flatten, no_grad, reshape, take
from .functional import (activation, batchnorm, binary_cross_entropy, conv2d, cross_entropy,
                         dense, dropout, l2_hinge, margin_loss, maxpool2d, softmax,
                         upsample_nearest)
from .optim import Adam, AdamState, adam_step
from .rng import derive_seed, make_rng

__all__ = [
    "Tensor", "as_tensor", "clip", "concat", "flatten", "no_grad", "reshape", "take",
    "activation", "batchnorm", "binary_cross_entropy", "conv2d", "cross_entropy", "dense",
    "dropout", "l2_hinge", "margin_loss", "maxpool2d", "softmax", "upsample_nearest",
    "Adam", "AdamState", "adam_step", "derive_seed", "make_rng",
]
