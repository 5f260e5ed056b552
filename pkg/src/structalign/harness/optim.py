"""Adaptive moment estimation over named parameter tensors."""
from dataclasses import dataclass, field

import numpy as np

from structalign.diffmath import Tensor

BETA1 = 0.9
BETA2 = 0.999
EPSILON = 1e-8


@dataclass
class Adam:
    lr: float
    beta1: float = BETA1
    beta2: float = BETA2
    eps: float = EPSILON
    steps: int = 0
    first_moment: dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: dict[str, np.ndarray] = field(default_factory=dict)

    def step(self, params: dict[str, Tensor], grads: dict[str, np.ndarray]) -> None:
        """Update every parameter in ``grads``; values are replaced, never written in place."""
        self.steps += 1
        correction1 = 1.0 - self.beta1 ** self.steps
        correction2 = 1.0 - self.beta2 ** self.steps
        for name, grad in grads.items():
            m = self.first_moment.get(name, np.zeros_like(grad))
            v = self.second_moment.get(name, np.zeros_like(grad))
            m = self.beta1 * m + (1.0 - self.beta1) * grad
            v = self.beta2 * v + (1.0 - self.beta2) * grad * grad
            self.first_moment[name], self.second_moment[name] = m, v
            if self.lr == 0:
                continue
            update = self.lr * (m / correction1) / (np.sqrt(v / correction2) + self.eps)
            params[name].value = params[name].value - update
