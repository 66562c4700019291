from __future__ import annotations

import numpy as np


class Adam:
    """Bias-corrected Adam; gradients are zeroed after every step."""

    def __init__(self, params, lr: float = 1e-4, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self):
        if any(p.grad is None for p in self.params):
            raise ValueError("missing gradients: run backward (or zero_grad) before step")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1 - b1 ** self.t
        c2 = 1 - b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            update = self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.data = (p.data - update).astype(p.data.dtype)
            p.grad = np.zeros_like(p.data)

    def state(self, names) -> dict:
        out = {"adam.t": np.array([self.t], dtype=np.float64)}
        for name, m, v in zip(names, self.m, self.v):
            out[f"adam.m.{name}"] = m
            out[f"adam.v.{name}"] = v
        return out

    def load_state(self, names, state: dict):
        self.t = int(state["adam.t"][0])
        for i, name in enumerate(names):
            self.m[i][...] = state[f"adam.m.{name}"]
            self.v[i][...] = state[f"adam.v.{name}"]


def adam_step(params, state: Adam):
    """Functional alias: apply one update of ``state`` to ``params``."""
    if [id(p) for p in params] != [id(p) for p in state.params]:
        raise ValueError("optimizer state does not belong to these parameters")
    state.step()
