"""Adam with bias correction, over a named set of parameter tensors."""
from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


class Adam:
    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.params = dict(params)
        self.state = AdamState(lr=lr, beta1=betas[0], beta2=betas[1], eps=eps)
        for name, p in self.params.items():
            self.state.m[name] = np.zeros_like(p.data)
            self.state.v[name] = np.zeros_like(p.data)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self):
        # parameters outside the current graph (e.g. an unused head) get a zero gradient
        grads = {n: p.grad if p.grad is not None else np.zeros_like(p.data) for n, p in self.params.items()}
        adam_step(self.params, grads, self.state)


def adam_step(params, grads, state):
    """One bias-corrected Adam update of ``params`` in place."""
    for name, p in params.items():
        if grads.get(name) is None:
            raise ValueError(f"parameter {name!r} has no gradient")
        if grads[name].shape != p.data.shape:
            raise ValueError(f"gradient shape {grads[name].shape} != parameter shape {p.data.shape}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, p in params.items():
        g = grads[name]
        m = state.m.setdefault(name, np.zeros_like(p.data))
        v = state.v.setdefault(name, np.zeros_like(p.data))
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state
