"""ADAM with bias correction."""

from dataclasses import dataclass, field
from typing import Dict, List

import numpy as np

from .tensor import Parameter


@dataclass
class AdamHyper:
    lr: float = 0.02
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0


@dataclass
class AdamState:
    step: int = 0
    m: Dict[int, np.ndarray] = field(default_factory=dict)
    v: Dict[int, np.ndarray] = field(default_factory=dict)


def adam_update(
    params: List[Parameter], state: AdamState, hyper: AdamHyper
) -> None:
    """Apply one ADAM step to every parameter in place.

    The learning rate in ``hyper`` is used as given; schedules are applied by
    the caller. Parameters without a gradient are skipped.
    """
    state.step += 1
    t = state.step
    correction1 = 1.0 - hyper.beta1**t
    correction2 = 1.0 - hyper.beta2**t
    for index, param in enumerate(params):
        if param.grad is None:
            continue
        grad = param.grad.astype(np.float64)
        if hyper.weight_decay:
            grad = grad + hyper.weight_decay * param.data
        m = state.m.get(index)
        v = state.v.get(index)
        if m is None:
            m = np.zeros_like(grad)
            v = np.zeros_like(grad)
        m = hyper.beta1 * m + (1.0 - hyper.beta1) * grad
        v = hyper.beta2 * v + (1.0 - hyper.beta2) * grad**2
        state.m[index] = m
        state.v[index] = v
        m_hat = m / correction1
        v_hat = v / correction2
        update = hyper.lr * m_hat / (np.sqrt(v_hat) + hyper.eps)
        param.data -= update.astype(np.float32)


class Adam:
    """Optimizer object bundling parameters, state and hyper-parameters."""

    def __init__(self, params: List[Parameter], hyper: AdamHyper = None):
        self.params = list(params)
        self.hyper = hyper or AdamHyper()
        self.state = AdamState()

    @property
    def lr(self) -> float:
        return self.hyper.lr

    @lr.setter
    def lr(self, value: float) -> None:
        self.hyper.lr = value

    def zero_grad(self) -> None:
        for param in self.params:
            param.zero_grad()

    def step(self) -> None:
        adam_update(self.params, self.state, self.hyper)
