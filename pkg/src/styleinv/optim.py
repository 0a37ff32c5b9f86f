"""Adam with bias correction, in array and tensor-list form."""

from __future__ import annotations

import numpy as np

from .autodiff import FiniteError


def adam_init(shape, dtype=np.float32):
    """Fresh moment state for one parameter array."""
    return {
        "m": np.zeros(shape, dtype=dtype),
        "v": np.zeros(shape, dtype=dtype),
        "t": 0,
    }


def adam_step(param, grad, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One Adam update; returns the new parameter array, mutates ``state``.

    Raises ``FiniteError`` on non-finite gradients before touching any
    state, so a blown-up step never corrupts the moments.
    """
    if not np.isfinite(np.sum(grad)):
        raise FiniteError("adam_step", "non-finite gradient")
    state["t"] += 1
    t = state["t"]
    m, v = state["m"], state["v"]
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * np.square(grad)
    mhat = m / (1.0 - beta1 ** t)
    vhat = v / (1.0 - beta2 ** t)
    return param - lr * mhat / (np.sqrt(vhat) + eps)


class Adam:
    """Adam over a list of (name, tensor) pairs sharing one hyper-config."""

    def __init__(self, named_tensors, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.named = list(named_tensors)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.state = {name: adam_init(t.data.shape, t.data.dtype)
                      for name, t in self.named}

    def step(self):
        """Apply one update from each tensor's accumulated ``.grad``."""
        for name, t in self.named:
            g = t.grad if t.grad is not None else np.zeros_like(t.data)
            t.data[...] = adam_step(t.data, g, self.state[name], self.lr,
                                    self.beta1, self.beta2, self.eps)

    def zero_grad(self):
        for _, t in self.named:
            t.zero_grad()

    def state_arrays(self):
        """Flat (name, array) view of the moment state for checkpointing."""
        out = []
        for name, _ in self.named:
            st = self.state[name]
            out.append((f"adam/{name}/m", st["m"]))
            out.append((f"adam/{name}/v", st["v"]))
            out.append((f"adam/{name}/t", np.asarray([st["t"]], dtype=np.float32)))
        return out

    def load_state_arrays(self, entries):
        """Restore moment state from ``state_arrays`` output."""
        table = dict(entries)
        for name, t in self.named:
            st = self.state[name]
            st["m"][...] = table[f"adam/{name}/m"]
            st["v"][...] = table[f"adam/{name}/v"]
            st["t"] = int(table[f"adam/{name}/t"][0])
