"""Adam optimizer with bias-corrected moment estimates."""
from dataclasses import dataclass, field

import numpy as np

from ..errors import UsageError


@dataclass
class AdamState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon_num: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, grads, state):
    """Apply one in-place Adam update to ``params`` (name -> ndarray).

    ``grads`` maps the same names to gradient arrays; a missing or ``None``
    gradient is a usage error.
    """
    for name in params:
        if grads.get(name) is None:
            raise UsageError(f"no gradient for parameter {name!r}; run backward first")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    lr_t = state.learning_rate * np.sqrt(1 - b2 ** t) / (1 - b1 ** t)
    for name, p in params.items():
        g = grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * (g * g)
        # same as lr * m_hat / (sqrt(v_hat) + eps), folded into one pass
        p -= (lr_t * m / (np.sqrt(v) + state.epsilon_num * np.sqrt(1 - b2 ** t))).astype(p.dtype)
    return params


class Adam:
    """Adam over a fixed mapping of named parameter tensors."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = dict(params)
        self.state = AdamState(lr, beta1, beta2, eps)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self):
        adam_step({k: p.data for k, p in self.params.items()},
                  {k: p.grad for k, p in self.params.items()}, self.state)
