"""Adam optimizer with per-epoch exponential learning-rate decay."""
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from ..exceptions import DimensionMismatchError, NonFiniteError
from .mlp import Gradients, MlpParams


@dataclass
class AdamState:
    """Moments, step counter and hyperparameters for one parameter set."""

    lr: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    decay: float = 0.96
    m: List[np.ndarray] = field(default_factory=list)
    v: List[np.ndarray] = field(default_factory=list)
    t: int = 0
    epoch: int = 0

    @property
    def effective_lr(self) -> float:
        """``lr * decay ** epoch``."""
        return self.lr * self.decay**self.epoch

    def end_epoch(self) -> None:
        self.epoch += 1


def adam_update(
    arrays: Sequence[np.ndarray],
    grads: Sequence[np.ndarray],
    state: AdamState,
    names: Optional[Sequence[str]] = None,
) -> List[np.ndarray]:
    """One Adam step over a flat list of arrays.

    Args:
        arrays: Current parameter values (not modified)
        grads: Gradients aligned with ``arrays``
        state: Optimizer state; moments are created lazily on the first step
        names: Labels used in error messages

    Returns:
        New parameter arrays

    Raises:
        DimensionMismatchError: If a gradient does not match its parameter
        NonFiniteError: If any gradient holds NaN/Inf (nothing is updated)
    """
    if len(arrays) != len(grads):
        raise DimensionMismatchError(len(arrays), len(grads), what="gradient list")
    for i, (param, grad) in enumerate(zip(arrays, grads)):
        if grad.shape != param.shape:
            raise DimensionMismatchError(param.shape, grad.shape, what=names[i] if names else f"parameter {i}")
        if not np.all(np.isfinite(grad)):
            raise NonFiniteError(f"gradient of {names[i] if names else f'parameter {i}'}", layer_index=i // 2)
    if not state.m:
        state.m = [np.zeros_like(p) for p in arrays]
        state.v = [np.zeros_like(p) for p in arrays]

    state.t += 1
    lr = state.effective_lr
    bias1 = 1.0 - state.beta1**state.t
    bias2 = 1.0 - state.beta2**state.t
    updated = []
    for i, (param, grad) in enumerate(zip(arrays, grads)):
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * grad
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * grad * grad
        m_hat = state.m[i] / bias1
        v_hat = state.v[i] / bias2
        updated.append(param - lr * m_hat / (np.sqrt(v_hat) + state.eps))
    return updated


def adam_step(params: MlpParams, grads: Gradients, state: AdamState) -> MlpParams:
    """Apply one Adam step to a network; the input network is left unchanged."""
    new_arrays = adam_update(params.parameters(), grads.parameters(), state, names=params.parameter_names())
    return params.with_parameters(new_arrays)
