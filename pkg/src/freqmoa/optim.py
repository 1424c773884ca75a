"""AdamW with decoupled weight decay over named parameter groups."""

from __future__ import annotations

import numpy as np

from .errors import NumericError


class AdamW:
    """Decoupled-weight-decay Adam.

    ``groups`` is a list of dicts: {"params": [(name, Tensor)], "lr": float,
    "weight_decay": float}. Decay is applied as p <- p - lr*wd*p before the
    moment update, so a zero gradient with wd=0 leaves the parameter intact.
    Updates are deterministic given parameters and gradients.
    """

    def __init__(self, groups, beta1=0.9, beta2=0.999, eps=1e-8):
        self.groups = []
        for g in groups:
            self.groups.append({
                "params": list(g["params"]),
                "lr": float(g["lr"]),
                "weight_decay": float(g.get("weight_decay", 0.0)),
            })
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {}
        self.v = {}
        for g in self.groups:
            for name, p in g["params"]:
                if name in self.m:
                    raise ValueError(f"duplicate parameter name {name!r}")
                self.m[name] = np.zeros_like(p.data)
                self.v[name] = np.zeros_like(p.data)

    def step(self):
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for g in self.groups:
            lr, wd = g["lr"], g["weight_decay"]
            for name, p in g["params"]:
                if p.grad is None:
                    continue
                grad = p.grad
                if not np.all(np.isfinite(grad)):
                    raise NumericError(f"non-finite gradient for parameter {name!r}")
                if wd != 0.0:
                    p.data = p.data - lr * wd * p.data
                m = self.m[name]
                v = self.v[name]
                m *= self.beta1
                m += (1.0 - self.beta1) * grad
                v *= self.beta2
                v += (1.0 - self.beta2) * (grad * grad)
                p.data = p.data - lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def zero_grad(self):
        for g in self.groups:
            for _, p in g["params"]:
                p.grad = None

    def state_arrays(self):
        """Flat array map for checkpointing: m/<name> and v/<name>."""
        out = {}
        for name in self.m:
            out[f"m/{name}"] = self.m[name]
            out[f"v/{name}"] = self.v[name]
        return out

    def load_state(self, arrays, t):
        for name in self.m:
            self.m[name] = np.array(arrays[f"m/{name}"], dtype=np.float64)
            self.v[name] = np.array(arrays[f"v/{name}"], dtype=np.float64)
        self.t = int(t)
