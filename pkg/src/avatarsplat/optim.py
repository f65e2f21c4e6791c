"""Adam with per-group learning rates, updating parameter arrays in place."""
from __future__ import annotations

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


def adam_step(params: dict, grads: dict, state: AdamState, lrs: dict | None = None):
    """One bias-corrected step over every key of ``grads``; returns (params, state).

    ``lrs`` optionally overrides the learning rate per key.  Keys missing from
    ``grads`` are left untouched and their moments are not advanced.
    """
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for k, g in grads.items():
        p = params[k]
        g = np.asarray(g, dtype=np.float64)
        if g.shape != np.shape(p):
            raise ValueError(f"gradient for {k!r} has shape {g.shape}, parameter has {np.shape(p)}")
        if k not in state.m:
            state.m[k] = np.zeros_like(g)
            state.v[k] = np.zeros_like(g)
        m, v = state.m[k], state.v[k]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        lr = state.lr if lrs is None else lrs.get(k, state.lr)
        if lr == 0.0:
            continue
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params, state


class Adam:
    """Thin stateful wrapper: ``Adam(params, lrs).step(grads)``."""

    def __init__(self, params: dict, lrs: dict | float, betas=(0.9, 0.999), eps=1e-8):
        self.params = params
        self.lrs = dict(lrs) if isinstance(lrs, dict) else {k: float(lrs) for k in params}
        self.state = AdamState(lr=0.0, beta1=betas[0], beta2=betas[1], eps=eps)

    def step(self, grads: dict):
        adam_step(self.params, grads, self.state, self.lrs)
