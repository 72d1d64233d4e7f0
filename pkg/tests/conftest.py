import numpy as np
import pytest

from advdrive.tensor import Tensor


def numeric_grad(f, x, h=1e-3):
    """Central finite differences of scalar ``f`` w.r.t. every entry of array ``x``."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def max_rel_error(analytic, numeric, mask=None, floor=1e-6):
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    err = np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    if mask is not None:
        err = err[mask]
    return float(err.max()) if err.size else 0.0


def gradcheck(op, inputs, h=1e-3, masks=None, seed=0):
    """Compare tape gradients of ``sum(op(*inputs) * R)`` with central differences.

    ``inputs`` are float64 arrays; returns the max relative error per input.
    """
    rng = np.random.default_rng(seed)
    tensors = [Tensor(a, requires_grad=True, dtype=np.float64) for a in inputs]
    out = op(*tensors)
    weights = rng.standard_normal(out.shape) if out.data.size > 1 else np.ones(out.shape)

    def scalar():
        return float((op(*[Tensor(t.data, dtype=np.float64) for t in tensors]).data * weights).sum())

    loss = (out * Tensor(weights, dtype=np.float64)).sum()
    loss.backward()
    errors = []
    for i, t in enumerate(tensors):
        num = numeric_grad(scalar, t.data, h)
        mask = None if masks is None else masks[i]
        errors.append(max_rel_error(t.grad, num, mask))
    return errors


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance criteria record their verdicts here; printed at the end of the run
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
