"""Adaptive optimizer with decoupled weight decay."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor


@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float = 3e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01


class AdamW:
    """First/second-moment update with bias correction; weight decay is
    applied directly to the parameters, not through the moments."""

    def __init__(self, params: list[tuple[str, Tensor]], config: OptimizerConfig):
        self.config = config
        self._params = params
        self._m = {name: np.zeros_like(t.data) for name, t in params}
        self._v = {name: np.zeros_like(t.data) for name, t in params}
        self._t = 0

    def step(self, grads: dict[str, np.ndarray]) -> None:
        cfg = self.config
        self._t += 1
        bc1 = 1.0 - cfg.beta1**self._t
        bc2 = 1.0 - cfg.beta2**self._t
        for name, tensor in self._params:
            g = grads[name]
            m = self._m[name]
            v = self._v[name]
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1.0 - cfg.beta2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)
            tensor.data -= cfg.learning_rate * (update + cfg.weight_decay * tensor.data)
