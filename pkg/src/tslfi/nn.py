"""Trainable-parameter bookkeeping: store, initialization, Adam.

A :class:`ParameterStore` owns every learnable array of a model under a
stable name -> Tensor mapping (insertion order).  The Adam optimizer and
the checkpoint container both operate on stores, which is what lets the
feature extractor and the flow share one training loop and one file
format.
"""

from __future__ import annotations

import math
from collections import OrderedDict

import numpy as np

from .autodiff import Tensor
from . import checkpoint

__all__ = ["ParameterStore", "Adam", "NonFiniteGradientError", "kaiming_uniform"]


class NonFiniteGradientError(RuntimeError):
    """Raised when an optimizer step encounters a NaN/inf gradient."""


def kaiming_uniform(shape, fan_in, rng):
    """He-uniform init for ReLU layers: U(-b, b) with b = sqrt(6/fan_in)."""
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class ParameterStore:
    """Named float64 parameter arrays with stable iteration order."""

    def __init__(self):
        self._params: OrderedDict[str, Tensor] = OrderedDict()

    def add(self, name, data):
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(data, dtype=np.float64), requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __len__(self):
        return len(self._params)

    def names(self):
        return list(self._params)

    def items(self):
        return self._params.items()

    def tensors(self):
        return list(self._params.values())

    def num_scalars(self):
        """Exact total number of stored scalars."""
        return sum(t.data.size for t in self._params.values())

    def zero_grad(self):
        for t in self._params.values():
            t.grad = None

    def state_arrays(self):
        """name -> copy of current values, in registration order."""
        return OrderedDict((k, t.data.copy()) for k, t in self._params.items())

    def load_state_arrays(self, arrays):
        for name, t in self._params.items():
            if name not in arrays:
                raise KeyError(f"missing parameter {name!r}")
            src = np.asarray(arrays[name], dtype=np.float64)
            if src.shape != t.data.shape:
                raise ValueError(
                    f"shape mismatch for {name!r}: have {t.data.shape}, "
                    f"loading {src.shape}"
                )
            t.data = src.copy()
            t.grad = None

    def save(self, path):
        checkpoint.save_arrays(path, self.state_arrays())

    def load(self, path):
        self.load_state_arrays(checkpoint.load_arrays(path))


class Adam:
    """Adam with bias correction over one or more parameter stores.

    The step counter only advances on accepted steps; a non-finite
    gradient rejects the whole step (no state is touched) and raises
    :class:`NonFiniteGradientError` so the caller can back off.
    """

    def __init__(self, stores, lr=5e-4, betas=(0.9, 0.999), eps=1e-8):
        if isinstance(stores, ParameterStore):
            stores = [stores]
        self.stores = list(stores)
        self.lr = float(lr)
        self.beta1, self.beta2 = betas
        self.eps = float(eps)
        self.t = 0
        self._m = [
            [np.zeros_like(t.data) for t in s.tensors()] for s in self.stores
        ]
        self._v = [
            [np.zeros_like(t.data) for t in s.tensors()] for s in self.stores
        ]

    def step(self):
        grads = []
        for s in self.stores:
            row = []
            for t in s.tensors():
                g = t.grad if t.grad is not None else np.zeros_like(t.data)
                if not np.all(np.isfinite(g)):
                    raise NonFiniteGradientError(
                        "non-finite gradient; step rejected"
                    )
                row.append(g)
            grads.append(row)
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for s_idx, s in enumerate(self.stores):
            for p_idx, t in enumerate(s.tensors()):
                g = grads[s_idx][p_idx]
                m = self._m[s_idx][p_idx]
                v = self._v[s_idx][p_idx]
                m *= self.beta1
                m += (1.0 - self.beta1) * g
                v *= self.beta2
                v += (1.0 - self.beta2) * g * g
                t.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def zero_grad(self):
        for s in self.stores:
            s.zero_grad()
