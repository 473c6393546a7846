"""Client-local optimizers for adapter parameters.

One :class:`OptimizerState` per adapter; states live and die with their
client and are never aggregated. Non-finite gradients leave both parameters
and moment buffers untouched and report divergence to the caller.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .linalg import ContractViolation, DenseMatrix

SGD = "sgd"
ADAM = "adam"


@dataclass
class OptimizerState:
    kind: str
    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    step: int = 0
    first_moment: dict[str, DenseMatrix] = field(default_factory=dict)
    second_moment: dict[str, DenseMatrix] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in (SGD, ADAM):
            raise ContractViolation(f"unknown optimizer kind {self.kind!r}")
        if self.learning_rate <= 0:
            raise ContractViolation(f"learning rate must be > 0, got {self.learning_rate}")


def apply_update(
    state: OptimizerState,
    params: dict[str, DenseMatrix],
    grads: dict[str, DenseMatrix],
) -> bool:
    """Update ``params`` in place from ``grads``; return False on non-finite grads."""
    for name in params:
        if name not in grads:
            raise ContractViolation(f"missing gradient for parameter {name!r}")
        if params[name].shape != grads[name].shape:
            raise ContractViolation(
                f"shape mismatch for {name!r}: {params[name].shape} vs {grads[name].shape}"
            )
    if any(not np.all(np.isfinite(g)) for g in grads.values()):
        return False

    if state.kind == SGD:
        for name, p in params.items():
            p -= state.learning_rate * grads[name]
        return True

    # adam with decoupled weight decay and bias correction
    state.step += 1
    t = state.step
    for name, p in params.items():
        g = grads[name]
        m = state.first_moment.setdefault(name, np.zeros_like(p))
        v = state.second_moment.setdefault(name, np.zeros_like(p))
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g**2
        m_hat = m / (1.0 - state.beta1**t)
        v_hat = v / (1.0 - state.beta2**t)
        if state.weight_decay:
            p -= state.learning_rate * state.weight_decay * p
        p -= state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)
    return True
