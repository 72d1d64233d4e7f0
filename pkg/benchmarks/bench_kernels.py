"""Compare the compiled kernels against the numpy fallback.

Times each kernel on the shapes the classifier sees for a batch of 64
32 x 32 images, checks that both backends agree, and prints the speedup.

    python3 benchmarks/bench_kernels.py --repeat 20
"""
import argparse
import timeit

import numpy as np

from advdrive.tensor.kernels import BACKENDS

# (name, input shape NHWC, kernel, stride) as they occur in the classifier
CONV_CASES = [
    ("conv1 k3", (64, 32, 32, 3), 3, 1),
    ("conv2 k3", (64, 30, 30, 32), 3, 1),
    ("conv3 k3", (64, 14, 14, 64), 3, 1),
    ("disc k4 s2", (64, 32, 32, 3), 4, 2),
]
POOL_CASES = [("pool1", (64, 28, 28, 64)), ("pool2", (64, 10, 10, 64))]


def cases(rng):
    for name, shape, k, stride in CONV_CASES:
        xp = rng.standard_normal(shape).astype(np.float32)
        cols = BACKENDS["python"].im2col(xp, k, stride)
        yield f"im2col {name}", lambda m, xp=xp, k=k, s=stride: m.im2col(xp, k, s)
        yield (f"col2im {name}",
               lambda m, c=cols, sh=shape, k=k, s=stride: m.col2im(c, sh, k, s))
    for name, shape in POOL_CASES:
        x = rng.standard_normal(shape).astype(np.float32)
        out, arg = BACKENDS["python"].maxpool2_forward(x)
        g = rng.standard_normal(out.shape).astype(np.float32)
        yield f"maxpool fwd {name}", lambda m, x=x: m.maxpool2_forward(x)
        yield (f"maxpool bwd {name}",
               lambda m, g=g, a=arg, sh=shape: m.maxpool2_backward(g, a, sh))


def _same(a, b):
    if isinstance(a, tuple):
        return all(_same(x, y) for x, y in zip(a, b))
    return np.array_equal(np.asarray(a), np.asarray(b))


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=10, help="timed calls per kernel")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    if "native" not in BACKENDS:
        print("compiled kernels are not built; only the fallback is available")
        return 1
    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':28s} {'python ms':>10s} {'native ms':>10s} {'speedup':>8s}  match")
    for name, fn in cases(rng):
        py, nat = BACKENDS["python"], BACKENDS["native"]
        match = _same(fn(py), fn(nat))
        t_py = min(timeit.repeat(lambda: fn(py), number=1, repeat=args.repeat)) * 1e3
        t_nat = min(timeit.repeat(lambda: fn(nat), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:28s} {t_py:10.2f} {t_nat:10.2f} {t_py / t_nat:7.1f}x  {match}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
