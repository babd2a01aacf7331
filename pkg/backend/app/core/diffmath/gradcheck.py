"""Finite-difference verification of tape gradients"""

from typing import Callable, Union

import numpy as np

from app.core.errors import DomainError
from app.core.diffmath.tensor import DTensor, Tape, no_record


def grad_check(function: Callable[[DTensor], DTensor], input: Union[DTensor, np.ndarray],
               eps: float = 1e-5) -> float:
    """Max relative error between tape and central-difference gradients.

    ``function`` maps the input tensor to a scalar. When ``input`` is a
    DTensor (for example a module Parameter) its buffer is perturbed in place
    and restored, so closures over that tensor see the perturbation.
    """
    x = input if isinstance(input, DTensor) else DTensor(np.asarray(input, dtype=np.float64))
    if x.dtype != np.float64:
        raise DomainError(f"grad_check needs float64 inputs, got {x.dtype}")
    was_tracked = x.requires_grad
    x.requires_grad = True
    x.grad = None
    try:
        with Tape() as tape:
            loss = function(x)
            tape.backward(loss)
        analytic = np.zeros_like(x.values) if x.grad is None else x.grad.copy()

        flat = x.values.reshape(-1)
        numeric = np.zeros(flat.shape, dtype=np.float64)
        with no_record():
            for i in range(flat.size):
                original = flat[i]
                flat[i] = original + eps
                plus = function(x).item()
                flat[i] = original - eps
                minus = function(x).item()
                flat[i] = original
                numeric[i] = (plus - minus) / (2.0 * eps)
    finally:
        x.requires_grad = was_tracked

    a = analytic.reshape(-1)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(a - numeric) / denom)) if a.size else 0.0
