"""Adam optimizer over a flat list of parameter arrays."""
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError


@dataclass
class AdamState:
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    t: int = 0
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_init(param_shapes, lr=0.01, beta1=0.9, beta2=0.999, eps=1e-8, dtype=np.float32) -> AdamState:
    shapes = [tuple(s) for s in param_shapes]
    return AdamState(
        m=[np.zeros(s, dtype=dtype) for s in shapes],
        v=[np.zeros(s, dtype=dtype) for s in shapes],
        lr=lr, beta1=beta1, beta2=beta2, eps=eps,
    )


def adam_step(params: list, grads: list, state: AdamState) -> None:
    """Apply one bias-corrected Adam update to ``params`` in place.

    All gradients are validated before any moment or parameter is touched,
    so a non-finite gradient leaves the state unchanged.
    """
    if not (len(params) == len(grads) == len(state.m)):
        raise ValueError(f"got {len(params)} params, {len(grads)} grads, {len(state.m)} moment slots")
    for i, (p, g, m) in enumerate(zip(params, grads, state.m)):
        if p.shape != g.shape or p.shape != m.shape:
            raise ValueError(f"parameter {i}: shape {p.shape}, grad {g.shape}, state {m.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {i}")

    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1 - b1 ** state.t
    bc2 = 1 - b2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * (g * g)
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
