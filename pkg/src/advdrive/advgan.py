"""AdvGAN-style training of a bounded perturbation generator against a frozen classifier.

The discriminator learns to tell clean images from perturbed ones; the
generator learns a residual that (a) pushes the target's softmax margin for
the true class below zero, (b) looks clean to the discriminator and (c)
keeps its L2 norm under a soft budget. Image arrays are NHWC float32 in
[0, 1] at the classifier's 32 x 32 input size.
"""
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import data, models
from .errors import ConfigError, NumericalError, UsageError
from .tensor import Adam, binary_cross_entropy, concat, derive_seed, l2_hinge, make_rng, \
    margin_loss, no_grad, take
from .training import accuracy, batches, fit_classifier

log = logging.getLogger(__name__)


@dataclass
class AdvGanConfig:
    batch_size: int = 128
    epochs: int = 30
    alpha: float = 1.0
    beta: float = 10.0
    budget: models.PerturbationBudget = field(default_factory=models.PerturbationBudget)
    kappa: float = 0.0
    # optional class -> group map; the attack then only needs to change the group
    groups: tuple = None
    lr_g: float = 1e-3
    lr_d: float = 1e-3
    seed: int = 0

    def validate(self):
        if self.batch_size < 2:
            raise ConfigError(f"batch_size must be >= 2, got {self.batch_size}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.alpha < 0 or self.beta < 0:
            raise ConfigError(f"alpha and beta must be >= 0, got {self.alpha}, {self.beta}")
        if self.kappa < 0:
            raise ConfigError(f"kappa must be >= 0, got {self.kappa}")
        return self


@dataclass
class TrainReport:
    """Per-epoch means over batches, plus target accuracy on perturbed validation images."""

    d_loss: list = field(default_factory=list)
    d_accuracy: list = field(default_factory=list)
    g_adv: list = field(default_factory=list)
    g_gan: list = field(default_factory=list)
    g_hinge: list = field(default_factory=list)
    target_accuracy: list = field(default_factory=list)
    max_linf: list = field(default_factory=list)

    def __len__(self):
        return len(self.d_loss)

    def to_dict(self):
        return asdict(self)


def discriminator_step(d, real, fake, opt):
    """One update of ``d`` toward real -> 1, fake -> 0. Returns ``(loss, accuracy)``."""
    real = np.asarray(real, dtype=np.float32)
    fake = np.asarray(fake, dtype=np.float32)
    if len(real) == 0 or len(fake) == 0:
        raise UsageError("discriminator_step needs non-empty batches")
    if real.shape != fake.shape:
        raise UsageError(f"real {real.shape} and fake {fake.shape} batches differ")
    n = len(real)
    targets = np.concatenate([np.ones(n), np.zeros(n)]).astype(np.float32)
    with d.mode(True):
        probs = d(np.concatenate([real, fake]))
        loss = binary_cross_entropy(probs, targets)
        opt.zero_grad()
        loss.backward()
        opt.step()
    acc = float(((probs.data.reshape(-1) > 0.5) == (targets > 0.5)).mean())
    return float(loss.data), acc


def generator_step(g, d, target, x, y, cfg, opt):
    """One update of ``g`` on ``L_adv + alpha * L_gan + beta * L_hinge``.

    ``target`` and ``d`` are frozen: gradients pass through them but their
    parameters and batch-norm statistics are left exactly as they were.
    Returns the three loss components as floats.
    """
    x = np.asarray(x, dtype=np.float32)
    n = len(x)
    saved = {k: b.copy() for k, b in d.buffers().items()}
    with target.frozen(), target.mode(False), d.frozen(), d.mode(True), g.mode(True):
        x_adv, delta = models.adversarial(x, g, cfg.budget.epsilon)
        # margin on logits: log p_y - log p_j, same sign as the probability margin
        l_adv = margin_loss(target(x_adv, logits=True), y, cfg.kappa, cfg.groups)
        # same real/fake batch composition as the discriminator step
        p = d(concat([x, x_adv]))
        fake_half = take(p, slice(n, 2 * n))
        l_gan = binary_cross_entropy(fake_half, np.ones(n, np.float32))
        l_hinge = l2_hinge(delta, cfg.budget.hinge_c)
        loss = l_adv + l_gan * cfg.alpha + l_hinge * cfg.beta
        opt.zero_grad()
        loss.backward()
        opt.step()
    for k, b in d.buffers().items():
        b[...] = saved[k]
    return float(l_adv.data), float(l_gan.data), float(l_hinge.data)


def _check_finite(values, epoch):
    if not all(math.isfinite(v) for v in values):
        raise NumericalError(f"non-finite AdvGAN loss in epoch {epoch}", epoch=epoch)


def train_advgan(x, y, target, cfg=None, x_val=None, y_val=None, on_epoch=None):
    """Alternate one discriminator and one generator step per shuffled batch.

    ``x``/``y`` are preprocessed float images and labels (see :func:`data.as_arrays`).
    ``on_epoch(epoch, g, d, report)`` is called after every epoch.
    Returns ``(g, d, report)``.
    """
    cfg = (cfg or AdvGanConfig()).validate()
    x = np.asarray(x, dtype=np.float32)
    y = np.asarray(y)
    if cfg.epochs > 0 and len(x) < cfg.batch_size:
        raise ConfigError(f"dataset has {len(x)} images, fewer than one batch of {cfg.batch_size}")
    if x_val is None:
        x_val, y_val = x, y
    g = models.build_generator(seed=derive_seed(cfg.seed, "generator"))
    d = models.build_discriminator(seed=derive_seed(cfg.seed, "discriminator"))
    opt_g = Adam(g.parameters(), lr=cfg.lr_g)
    opt_d = Adam(d.parameters(), lr=cfg.lr_d)
    report = TrainReport()
    for epoch in range(1, cfg.epochs + 1):
        rng = make_rng(derive_seed(cfg.seed, "advgan-shuffle", epoch))
        sums = np.zeros(5)
        count = 0
        for idx in batches(len(x), cfg.batch_size, rng, min_size=cfg.batch_size):
            real = x[idx]
            with no_grad(), g.mode(True):
                fake = models.perturb(real, g, cfg.budget).data
            d_loss, d_acc = discriminator_step(d, real, fake, opt_d)
            g_losses = generator_step(g, d, target, real, y[idx], cfg, opt_g)
            step = (d_loss, d_acc) + g_losses
            _check_finite(step, epoch)
            sums += step
            count += 1
        means = sums / count
        for name, v in zip(("d_loss", "d_accuracy", "g_adv", "g_gan", "g_hinge"), means):
            getattr(report, name).append(float(v))
        x_adv = models.perturb_array(x_val, g, cfg.budget)
        report.max_linf.append(float(np.abs(x_adv - x_val).max()))
        report.target_accuracy.append(accuracy(target, x_adv, y_val))
        log.info("advgan epoch %d/%d d_loss %.4f d_acc %.3f adv %.4f gan %.4f hinge %.4f "
                 "target_acc %.4f", epoch, cfg.epochs, *means, report.target_accuracy[-1])
        if on_epoch is not None:
            on_epoch(epoch, g, d, report)
    g.eval()
    d.eval()
    return g, d, report


def generate_adversarial_dataset(g, ds, budget, batch_size=256):
    """Perturb every image of ``ds`` (resized to the network input) and quantize to bytes.

    Labels and ordering are preserved; the result is at the generator's input size.
    """
    h, w, _ = g.input_shape
    pixels = ds.pixels
    if (ds.height, ds.width) != (h, w):
        # snap the resized clean image to the byte grid first so the quantized
        # output stays within ceil(epsilon * 255) of the quantized clean image
        pixels = data.to_bytes(data.preprocess(ds, target=h))
    x = pixels.astype(np.float32) / np.float32(255)
    adv = models.perturb_array(x, g, budget, batch_size)
    return data.ImageDataset(data.to_bytes(adv), ds.labels.copy(), ds.class_count)


def retrain_combined(classifier_init, clean, adversarial, epochs, batch_size=64, lr=1e-3,
                     seed=0, adv_fraction=1.0, x_val=None, y_val=None, warm_start=False):
    """Train a classifier on clean plus adversarial images.

    ``classifier_init`` is a network whose architecture is reused (or a builder
    taking ``(n_classes, seed)``). With ``warm_start`` the new network starts
    from ``classifier_init``'s weights instead of a fresh initialization.
    ``adv_fraction`` of the adversarial set, taken in order, is mixed in (1.0
    gives the 1:1 mix for equal-size sets). Returns ``(net, history)``.
    """
    if clean.class_count != adversarial.class_count:
        raise ConfigError(f"label spaces differ: {clean.class_count} vs {adversarial.class_count}")
    if not 0 <= adv_fraction <= 1:
        raise ConfigError(f"adv_fraction must be in [0, 1], got {adv_fraction}")
    k = clean.class_count
    if isinstance(classifier_init, models.Network):
        net = models.build_classifier(models.n_classes_of(classifier_init),
                                      seed=derive_seed(seed, "retrain"), name=classifier_init.name)
        if warm_start:
            net.load_state_dict(classifier_init.state_dict())
    elif warm_start:
        raise ConfigError("warm_start needs a network, not a builder")
    else:
        net = classifier_init(k, derive_seed(seed, "retrain"))
    size = net.input_shape[0]
    xc, yc = data.as_arrays(clean, size)
    m = int(round(adv_fraction * adversarial.n))
    xa, ya = data.as_arrays(adversarial.subset(np.arange(m)), size)
    x = np.concatenate([xc, xa])
    y = np.concatenate([yc, ya])
    hist = fit_classifier(net, x, y, epochs, batch_size=batch_size, lr=lr,
                          seed=derive_seed(seed, "retrain"), x_val=x_val, y_val=y_val)
    return net, hist
