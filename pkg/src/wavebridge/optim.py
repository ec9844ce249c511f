"""Adam with bias correction over dicts of named numpy arrays."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, Tuple

import numpy as np

log = logging.getLogger(__name__)


@dataclass
class AdamState:
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    skipped: int = 0


def adam_update(params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray], state: AdamState,
                lr: float = 5e-5, betas: Tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
    """Return updated ``(params, state)``; inputs are left untouched.

    A step whose gradients contain non-finite values is skipped and counted in
    ``state.skipped``.
    """
    if set(grads) != set(params):
        raise KeyError(f"gradient names do not match parameters: {sorted(set(grads) ^ set(params))}")
    for k, g in grads.items():
        if g.shape != params[k].shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {params[k].shape} for {k}")
    if not all(np.all(np.isfinite(g)) for g in grads.values()):
        log.warning("non-finite gradient at step %d; update skipped", state.step + 1)
        return dict(params), AdamState(state.step, dict(state.m), dict(state.v), state.skipped + 1)

    b1, b2 = betas
    step = state.step + 1
    new_params, m, v = {}, {}, {}
    for k, p in params.items():
        g = grads[k]
        m[k] = b1 * state.m.get(k, np.zeros_like(p)) + (1 - b1) * g
        v[k] = b2 * state.v.get(k, np.zeros_like(p)) + (1 - b2) * g * g
        m_hat = m[k] / (1 - b1**step)
        v_hat = v[k] / (1 - b2**step)
        new_params[k] = p - lr * m_hat / (np.sqrt(v_hat) + eps)
    return new_params, AdamState(step, m, v, state.skipped)


class Adam:
    """Stateful wrapper that updates a parameter dict in place."""

    def __init__(self, params: Dict[str, np.ndarray], lr: float = 5e-5,
                 betas: Tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr, self.betas, self.eps = lr, betas, eps
        self.state = AdamState()

    def step(self, grads: Dict[str, np.ndarray]) -> bool:
        """Apply one update; returns False if it was skipped."""
        skipped = self.state.skipped
        new, self.state = adam_update(self.params, grads, self.state, self.lr, self.betas, self.eps)
        self.params.update(new)
        return self.state.skipped == skipped
