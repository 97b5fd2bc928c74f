"""Adam optimizer as a pure update function over an explicit state."""

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    """First/second moment accumulators plus the step counter.

    Create with `AdamState.for_params(params)`; `adam_step` never mutates a
    state, it returns the successor.
    """

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        return cls(
            lr=lr,
            beta1=beta1,
            beta2=beta2,
            eps=eps,
            t=0,
            m=[np.zeros_like(p) for p in params],
            v=[np.zeros_like(p) for p in params],
        )


def adam_step(params, grads, state):
    """One Adam update with bias correction.

    Pure function: returns (new_params, new_state) and leaves every input
    untouched, so identical inputs always give bit-identical outputs.
    """
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params/grads/state length mismatch")
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ValueError(f"grad shape {g.shape} does not match param {p.shape}")
        m2 = b1 * m + (1.0 - b1) * g
        v2 = b2 * v + (1.0 - b2) * (g * g)
        step = state.lr * (m2 / bc1) / (np.sqrt(v2 / bc2) + state.eps)
        new_params.append(p - step)
        new_m.append(m2)
        new_v.append(v2)
    new_state = AdamState(
        lr=state.lr, beta1=state.beta1, beta2=state.beta2, eps=state.eps,
        t=t, m=new_m, v=new_v,
    )
    return new_params, new_state
