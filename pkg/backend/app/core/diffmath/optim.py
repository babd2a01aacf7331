"""AdamW with decoupled weight decay"""

import logging
import math
from typing import Dict, Iterable, List, Optional, Sequence, Union

import numpy as np

from app.core.errors import ConfigError
from app.core.diffmath.nn import Parameter

logger = logging.getLogger(__name__)

ParamGroup = Dict[str, object]


class AdamW:
    """AdamW over parameter groups.

    A group is either a plain list of parameters or a dict with ``params`` and
    an optional ``lr_scale`` multiplying the base learning rate.
    """

    def __init__(self, params: Union[Iterable[Parameter], Sequence[ParamGroup]], lr: float,
                 betas=(0.9, 0.999), eps: float = 1e-8, weight_decay: float = 0.0):
        if lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {lr}")
        if weight_decay < 0:
            raise ConfigError(f"weight decay must be non-negative, got {weight_decay}")
        params = list(params)
        if params and isinstance(params[0], dict):
            self.groups = [{"params": list(g["params"]), "lr_scale": float(g.get("lr_scale", 1.0))} for g in params]
        else:
            self.groups = [{"params": params, "lr_scale": 1.0}]
        self.lr = float(lr)
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.first_moment: Dict[int, np.ndarray] = {}
        self.second_moment: Dict[int, np.ndarray] = {}

    @property
    def parameters(self) -> List[Parameter]:
        return [p for g in self.groups for p in g["params"]]

    def set_lr(self, lr: float) -> None:
        if lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {lr}")
        self.lr = float(lr)

    def zero_grad(self) -> None:
        for p in self.parameters:
            p.zero_grad()

    def step(self) -> None:
        self.step_count += 1
        correction1 = 1.0 - self.beta1 ** self.step_count
        correction2 = 1.0 - self.beta2 ** self.step_count
        for group in self.groups:
            lr = self.lr * group["lr_scale"]
            for p in group["params"]:
                grad = p.grad if p.grad is not None else np.zeros_like(p.values)
                key = id(p)
                m = self.first_moment.get(key)
                if m is None:
                    m = self.first_moment[key] = np.zeros_like(p.values)
                    self.second_moment[key] = np.zeros_like(p.values)
                v = self.second_moment[key]
                m *= self.beta1
                m += (1.0 - self.beta1) * grad
                v *= self.beta2
                v += (1.0 - self.beta2) * grad * grad
                if self.weight_decay:
                    p.values *= (1.0 - lr * self.weight_decay)
                p.values -= lr * (m / correction1) / (np.sqrt(v / correction2) + self.eps)


def clip_grad_norm(params: Sequence[Parameter], max_norm: float) -> float:
    """Rescale gradients in place so their global L2 norm is at most max_norm"""
    grads = [p.grad for p in params if p.grad is not None]
    total = math.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads))
    if max_norm > 0 and total > max_norm:
        factor = max_norm / (total + 1e-6)
        for g in grads:
            g *= factor
    return total


def step_decay_lr(base_lr: float, step: int, decay_steps: Optional[Sequence[int]], factor: float = 0.1) -> float:
    """Learning rate after multiplying by factor at each decay step passed"""
    passed = sum(1 for s in (decay_steps or ()) if step >= s)
    return base_lr * factor ** passed
