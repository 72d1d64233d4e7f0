"""Image datasets: procedural sign synthesis, splitting, preprocessing and the ASDS file format."""
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import ConfigError, FormatError
from .font import GLYPH_ORDER, glyph
from .tensor import derive_seed, make_rng

SHAPES = ("octagon", "circle", "triangle", "square")
BORDER_COLORS = {
    "red": (0.85, 0.1, 0.1),
    "blue": (0.1, 0.25, 0.85),
    "yellow": (0.95, 0.8, 0.05),
    "black": (0.08, 0.08, 0.08),
}
MAX_CLASSES = math.lcm(len(SHAPES) * len(BORDER_COLORS), len(GLYPH_ORDER))
STOP_CLASS = 0


@dataclass
class ImageDataset:
    """Unsigned-byte images (N x H x W x C) with integer class labels."""

    pixels: np.ndarray
    labels: np.ndarray
    class_count: int

    def __post_init__(self):
        self.pixels = np.ascontiguousarray(self.pixels, dtype=np.uint8)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.uint8)
        if self.pixels.ndim != 4:
            raise ConfigError(f"pixels must be N x H x W x C, got shape {self.pixels.shape}")
        if len(self.labels) != len(self.pixels):
            raise ConfigError(f"{len(self.pixels)} images but {len(self.labels)} labels")
        if self.labels.size and int(self.labels.max()) >= self.class_count:
            raise ConfigError(f"label {int(self.labels.max())} >= class_count {self.class_count}")

    @property
    def n(self):
        return len(self.labels)

    @property
    def height(self):
        return self.pixels.shape[1]

    @property
    def width(self):
        return self.pixels.shape[2]

    @property
    def channels(self):
        return self.pixels.shape[3]

    def __len__(self):
        return self.n

    def __eq__(self, other):
        return (isinstance(other, ImageDataset) and self.class_count == other.class_count
                and self.pixels.shape == other.pixels.shape
                and np.array_equal(self.pixels, other.pixels)
                and np.array_equal(self.labels, other.labels))

    def subset(self, idx):
        return ImageDataset(self.pixels[idx], self.labels[idx], self.class_count)

    @staticmethod
    def concat(a, b):
        if a.class_count != b.class_count:
            raise ConfigError(f"label spaces differ: {a.class_count} vs {b.class_count} classes")
        if a.pixels.shape[1:] != b.pixels.shape[1:]:
            raise ConfigError(f"image shapes differ: {a.pixels.shape[1:]} vs {b.pixels.shape[1:]}")
        return ImageDataset(np.concatenate([a.pixels, b.pixels]),
                            np.concatenate([a.labels, b.labels]), a.class_count)


# synthesis ----------------------------------------------------------------------

@dataclass(frozen=True)
class SynthSpec:
    """Procedural sign dataset parameters. Ranges are (low, high) for per-image sampling."""

    class_count: int = 10
    per_class: int = 500
    size: int = 64
    brightness: tuple = (0.6, 1.4)
    contrast: tuple = (0.6, 1.2)
    noise_sigma: tuple = (0.0, 0.06)
    blur_sigma: tuple = (0.0, 1.5)
    occlusion_prob: float = 0.2
    jitter: int = 4
    scale: tuple = (0.75, 1.0)
    degrade: bool = True
    seed: int = 0

    def validate(self):
        if self.class_count < 2:
            raise ConfigError(f"class_count must be >= 2, got {self.class_count}")
        if self.class_count > MAX_CLASSES:
            raise ConfigError(f"class_count {self.class_count} exceeds the {MAX_CLASSES} "
                              "available sign templates")
        if self.per_class < 1 or self.size < 16:
            raise ConfigError("per_class must be >= 1 and size >= 16")
        for name in ("brightness", "contrast", "noise_sigma", "blur_sigma", "scale"):
            lo, hi = getattr(self, name)
            if not (0 <= lo < hi):
                raise ConfigError(f"{name} range {lo, hi} must satisfy 0 <= low < high")
        if not 0 <= self.occlusion_prob <= 1:
            raise ConfigError("occlusion_prob must be in [0, 1]")
        if self.scale[1] > 1.0 or self.noise_sigma[1] > 0.5:
            raise ConfigError("scale must be <= 1 and noise_sigma <= 0.5")


def template_of(class_id):
    """(shape, border color name, glyph char) for a class id; unique below MAX_CLASSES."""
    colors = list(BORDER_COLORS)
    return (SHAPES[class_id % len(SHAPES)],
            colors[(class_id // len(SHAPES)) % len(colors)],
            GLYPH_ORDER[class_id % len(GLYPH_ORDER)])


def _shape_mask(shape, dx, dy, r):
    if shape == "circle":
        return np.hypot(dx, dy) <= r
    if shape == "square":
        return np.maximum(np.abs(dx), np.abs(dy)) <= 0.85 * r
    if shape == "octagon":
        return np.maximum(np.maximum(np.abs(dx), np.abs(dy)),
                          (np.abs(dx) + np.abs(dy)) / math.sqrt(2)) <= 0.92 * r
    if shape == "triangle":
        return (dy <= 0.5 * r) & (np.sqrt(3) * np.abs(dx) <= dy + r)
    raise ValueError(shape)


def render_sign(class_id, size=64, center=None, radius=None, background=(0.5, 0.5, 0.5),
                supersample=2):
    """Clean float render (size x size x 3, values in [0, 1]) of one sign class."""
    shape, color, ch = template_of(class_id)
    cx, cy = center if center is not None else (size / 2, size / 2)
    r = radius if radius is not None else 0.42 * size
    s = supersample
    coords = (np.arange(size * s) + 0.5) / s
    px, py = np.meshgrid(coords, coords)
    dx, dy = px - cx, py - cy
    outer = _shape_mask(shape, dx, dy, r)
    inner = _shape_mask(shape, dx, dy, 0.72 * r)

    # glyph box centred on the shape's visual centre (lower for the triangle)
    gy0 = 0.2 * r if shape == "triangle" else 0.0
    gh = (0.6 if shape == "triangle" else 0.9) * r
    gw = gh * 5 / 7
    u = (dx + gw / 2) / gw * 5
    v = (dy - gy0 + gh / 2) / gh * 7
    inside = (u >= 0) & (u < 5) & (v >= 0) & (v < 7)
    bits = glyph(ch)
    on = np.zeros_like(inside)
    on[inside] = bits[v[inside].astype(int), u[inside].astype(int)]

    img = np.empty((size * s, size * s, 3))
    img[:] = background
    img[outer] = BORDER_COLORS[color]
    img[inner] = (0.95, 0.95, 0.95)
    img[inner & on] = (0.05, 0.05, 0.05)
    return img.reshape(size, s, size, s, 3).mean(axis=(1, 3))


def _synth_one(spec, class_id, rng):
    size = spec.size
    bg = rng.uniform(0.15, 0.75, 3)
    jx, jy = rng.uniform(-spec.jitter, spec.jitter, 2)
    r = 0.42 * size * rng.uniform(*spec.scale)
    img = render_sign(class_id, size, (size / 2 + jx, size / 2 + jy), r, bg)
    # soft vertical gradient so backgrounds are not flat
    img = img * (1 + rng.uniform(-0.15, 0.15) * np.linspace(-1, 1, size)[:, None, None])
    if not spec.degrade:
        return img
    img = img * rng.uniform(*spec.brightness)
    mean = img.mean()
    img = (img - mean) * rng.uniform(*spec.contrast) + mean
    blur = rng.uniform(*spec.blur_sigma)
    if blur > 0.05:
        img = gaussian_filter(img, sigma=(blur, blur, 0), mode="nearest")
    if rng.random() < spec.occlusion_prob:
        h, w = rng.integers(size // 8, size // 3, 2)
        y0, x0 = rng.integers(0, size - h), rng.integers(0, size - w)
        img[y0:y0 + h, x0:x0 + w] = rng.uniform(0, 1, 3)
    img = img + rng.normal(0, rng.uniform(*spec.noise_sigma), img.shape)
    return img


def to_bytes(img):
    """Float [0, 1] image(s) to bytes with saturation and round-half-away-from-zero."""
    scaled = np.clip(np.asarray(img, dtype=np.float64) * 255.0, 0.0, 255.0)
    return np.floor(scaled + 0.5).astype(np.uint8)


def synthesize(spec=SynthSpec()):
    """Deterministic dataset of ``class_count * per_class`` signs, labels interleaved."""
    spec.validate()
    n = spec.class_count * spec.per_class
    pixels = np.empty((n, spec.size, spec.size, 3), np.uint8)
    labels = np.arange(n) % spec.class_count
    for i in range(n):
        rng = make_rng(derive_seed(spec.seed, "synth", i))
        pixels[i] = to_bytes(_synth_one(spec, int(labels[i]), rng))
    return ImageDataset(pixels, labels, spec.class_count)


# splitting ----------------------------------------------------------------------

@dataclass(frozen=True)
class SplitSpec:
    train_frac: float = 0.7
    val_frac: float = 0.1
    test_frac: float = 0.2
    seed: int = 0

    def validate(self):
        fr = (self.train_frac, self.val_frac, self.test_frac)
        if min(fr) < 0 or abs(sum(fr) - 1) > 1e-9:
            raise ConfigError(f"split fractions {fr} must be non-negative and sum to 1")


def split_sizes(n, spec):
    # round before floor so 0.1 * 30 == 3.0000000000000004 does not matter
    n_val = math.floor(round(n * spec.val_frac, 9))
    n_test = math.floor(round(n * spec.test_frac, 9))
    return n - n_val - n_test, n_val, n_test


def split_indices(n, spec=SplitSpec()):
    spec.validate()
    if n < 10:
        raise ConfigError(f"need at least 10 items to split, got {n}")
    n_train, n_val, _ = split_sizes(n, spec)
    order = make_rng(derive_seed(spec.seed, "split")).permutation(n)
    return order[:n_train], order[n_train:n_train + n_val], order[n_train + n_val:]


def split(ds, spec=SplitSpec()):
    """Seeded shuffle then contiguous train/val/test cut (unstratified)."""
    return tuple(ds.subset(idx) for idx in split_indices(ds.n, spec))


# preprocessing --------------------------------------------------------------------

def _bilinear_axis(x, axis, out_size):
    in_size = x.shape[axis]
    if in_size == out_size:
        return x
    pos = (np.arange(out_size) + 0.5) * (in_size / out_size) - 0.5
    pos = np.clip(pos, 0, in_size - 1)
    i0 = np.floor(pos).astype(int)
    i1 = np.minimum(i0 + 1, in_size - 1)
    w = pos - i0
    a = np.take(x, i0, axis=axis)
    b = np.take(x, i1, axis=axis)
    shape = [1] * x.ndim
    shape[axis] = out_size
    return a + w.reshape(shape) * (b - a)


def resize_bilinear(images, height, width):
    """Half-pixel-centre bilinear resize of N x H x W x C float images."""
    out = _bilinear_axis(np.asarray(images, dtype=np.float64), 1, height)
    return _bilinear_axis(out, 2, width)


def preprocess(ds, target=32):
    """Bytes -> float32 in [0, 1], bilinearly resized to ``target x target``."""
    if ds.height < target or ds.width < target:
        raise ConfigError(f"images are {ds.height}x{ds.width}, smaller than target {target}")
    x = ds.pixels.astype(np.float64) / 255.0
    return resize_bilinear(x, target, target).astype(np.float32)


# ASDS file format -----------------------------------------------------------------

DATA_MAGIC = b"ASDS"
DATA_VERSION = 1
_HEADER = struct.Struct("<4sIIIIII")


def encode_dataset(ds):
    header = _HEADER.pack(DATA_MAGIC, DATA_VERSION, ds.n, ds.height, ds.width, ds.channels,
                          ds.class_count)
    return header + ds.pixels.tobytes() + ds.labels.tobytes()


def decode_dataset(buf):
    if len(buf) < _HEADER.size:
        raise FormatError(f"dataset header truncated: expected {_HEADER.size} bytes, got {len(buf)}")
    magic, version, n, h, w, c, k = _HEADER.unpack_from(buf)
    if magic != DATA_MAGIC:
        raise FormatError(f"bad dataset magic: expected {DATA_MAGIC.decode()!r}, found {magic!r}")
    if version != DATA_VERSION:
        raise FormatError(f"unsupported dataset version {version}, expected {DATA_VERSION}")
    n_pix = n * h * w * c
    body = memoryview(buf)[_HEADER.size:]
    if len(body) < n_pix:
        raise FormatError(f"pixel section truncated: expected {n_pix} bytes, got {len(body)}")
    if len(body) < n_pix + n:
        raise FormatError(f"label section truncated: expected {n} bytes, got {len(body) - n_pix}")
    if len(body) > n_pix + n:
        raise FormatError(f"dataset has {len(body) - n_pix - n} trailing bytes")
    pixels = np.frombuffer(body[:n_pix], np.uint8).reshape(n, h, w, c)
    labels = np.frombuffer(body[n_pix:], np.uint8)
    if n and int(labels.max()) >= k:
        raise FormatError(f"label {int(labels.max())} >= class_count {k}")
    return ImageDataset(pixels.copy(), labels.copy(), k)


def save(ds, path):
    Path(path).write_bytes(encode_dataset(ds))


def load(path):
    return decode_dataset(Path(path).read_bytes())


def as_arrays(ds, target=32):
    """(float images, int labels) ready for training."""
    return preprocess(ds, target), ds.labels.astype(np.int64)


__all__ = ["ImageDataset", "SynthSpec", "SplitSpec", "synthesize", "split", "split_indices",
           "split_sizes", "preprocess", "resize_bilinear", "save", "load", "encode_dataset",
           "decode_dataset", "render_sign", "template_of", "to_bytes", "as_arrays",
           "MAX_CLASSES", "STOP_CLASS"]
