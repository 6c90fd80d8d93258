"""Parameter containers shared by every model."""
from __future__ import annotations

import numpy as np

from groundnet.tensor import Tensor, parameter


def uniform(rng, shape, scale):
    return rng.uniform(-scale, scale, size=shape)


def fan_in_uniform(rng, shape, fan_in):
    return uniform(rng, shape, 1.0 / np.sqrt(fan_in))


class Module:
    """Holds trainable parameters, frozen buffers and child modules by name."""

    def __init__(self):
        self._params = {}
        self._buffers = {}
        self._children = {}

    def add_param(self, name, data):
        t = parameter(data, name=name)
        self._params[name] = t
        return t

    def add_buffer(self, name, data):
        t = Tensor(np.array(data, dtype=np.float64), name=name)
        self._buffers[name] = t
        return t

    def add_module(self, name, module):
        self._children[name] = module
        return module

    def named_parameters(self, prefix=""):
        out = {prefix + k: v for k, v in self._params.items()}
        for cname, child in self._children.items():
            out.update(child.named_parameters(f"{prefix}{cname}."))
        return out

    def named_buffers(self, prefix=""):
        out = {prefix + k: v for k, v in self._buffers.items()}
        for cname, child in self._children.items():
            out.update(child.named_buffers(f"{prefix}{cname}."))
        return out

    def parameters(self):
        return list(self.named_parameters().values())

    def num_parameters(self):
        return int(sum(p.size for p in self.parameters()))

    def state_dict(self):
        out = {k: v.data.copy() for k, v in self.named_parameters().items()}
        out.update({k: v.data.copy() for k, v in self.named_buffers().items()})
        return out

    def load_state_dict(self, state):
        targets = dict(self.named_parameters())
        targets.update(self.named_buffers())
        missing = sorted(set(targets) - set(state))
        unexpected = sorted(set(state) - set(targets))
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={missing} unexpected={unexpected}")
        for k, t in targets.items():
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != t.shape:
                raise ValueError(f"{k}: expected shape {t.shape}, got {arr.shape}")
            t.data[...] = arr

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None
