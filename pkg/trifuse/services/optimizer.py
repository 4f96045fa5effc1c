"""
Optimizer Service
Adam with a step-decayed learning rate
"""
from dataclasses import dataclass, field
from typing import Dict

import numpy as np

from trifuse.core.exceptions import ArgumentError, AutodiffError, NumericalError
from trifuse.services.layers import ModelParams


@dataclass
class OptimizerState:
    """Adam moments plus the learning-rate schedule"""
    learning_rate: float = 1e-4
    decay_factor: float = 0.8
    decay_every: int = 5000
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    first_moment: Dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ArgumentError(f"learning rate must be positive, got {self.learning_rate}")
        if self.decay_every < 1:
            raise ArgumentError(f"decay_every must be >= 1, got {self.decay_every}")

    def current_lr(self, step: int = None) -> float:
        """base_lr * decay_factor ** floor(step / decay_every)"""
        step = self.step_count if step is None else step
        return self.learning_rate * self.decay_factor ** (step // self.decay_every)


def optimizer_step(params: ModelParams, state: OptimizerState) -> float:
    """
    Apply one Adam update in place

    Args:
        params: Parameters with populated gradients
        state: Optimizer state, advanced by one step

    Returns:
        Learning rate used for this step
    """
    for name, tensor in params.items():
        if tensor.grad is None:
            raise AutodiffError(f"parameter {name!r} has no gradient; run backward first")
        if not np.all(np.isfinite(tensor.grad)):
            raise NumericalError(f"non-finite gradient in parameter {name!r} at step {state.step_count}")

    lr = state.current_lr()
    t = state.step_count + 1
    correction1 = 1.0 - state.beta1 ** t
    correction2 = 1.0 - state.beta2 ** t
    for name, tensor in params.items():
        grad = tensor.grad
        m = state.first_moment.get(name)
        v = state.second_moment.get(name)
        if m is None:
            m = np.zeros_like(tensor.data)
            v = np.zeros_like(tensor.data)
        m = state.beta1 * m + (1.0 - state.beta1) * grad
        v = state.beta2 * v + (1.0 - state.beta2) * grad * grad
        state.first_moment[name] = m
        state.second_moment[name] = v
        update = lr * (m / correction1) / (np.sqrt(v / correction2) + state.eps)
        tensor.data -= update.astype(tensor.data.dtype, copy=False)
    state.step_count = t
    return lr
