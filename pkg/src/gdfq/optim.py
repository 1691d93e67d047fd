"""Adam and Nesterov-momentum SGD over :class:`~gdfq.autodiff.Tensor` params."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from gdfq.autodiff import Tensor
from gdfq.errors import DimensionError


@dataclass
class OptimizerState:
    """Buffers and hyperparameters of one optimizer instance.

    ``buffers`` holds one tuple per parameter: ``(m, v)`` for Adam,
    ``(velocity,)`` for Nesterov SGD.
    """

    lr: float
    hyper: dict[str, float]
    step: int = 0
    buffers: list[tuple[np.ndarray, ...]] = field(default_factory=list)


def _check_shapes(params: Sequence[Tensor], grads: Sequence[np.ndarray]) -> None:
    if len(params) != len(grads):
        raise DimensionError(f"{len(params)} params but {len(grads)} gradients")
    for p, g in zip(params, grads):
        if p.shape != np.shape(g):
            raise DimensionError(f"gradient shape {np.shape(g)} != param shape {p.shape}")


def adam_step(state: OptimizerState, params: Sequence[Tensor], grads: Sequence[np.ndarray]) -> None:
    """Bias-corrected Adam update, in place on ``params``."""
    _check_shapes(params, grads)
    b1, b2, eps = state.hyper["beta1"], state.hyper["beta2"], state.hyper["eps"]
    wd = state.hyper.get("weight_decay", 0.0)
    if not state.buffers:
        state.buffers = [(np.zeros_like(p.data), np.zeros_like(p.data)) for p in params]
    state.step += 1
    t = state.step
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for p, g, (m, v) in zip(params, grads, state.buffers):
        if wd:
            g = g + wd * p.data
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + eps)


def nesterov_sgd_step(
    state: OptimizerState, params: Sequence[Tensor], grads: Sequence[np.ndarray]
) -> None:
    """SGD with Nesterov momentum; weight decay is folded into the gradient.

    v <- mu * v + g ;  x <- x - lr * (g + mu * v)
    """
    _check_shapes(params, grads)
    mu = state.hyper["momentum"]
    wd = state.hyper["weight_decay"]
    if not state.buffers:
        state.buffers = [(np.zeros_like(p.data),) for p in params]
    state.step += 1
    for p, g, (vel,) in zip(params, grads, state.buffers):
        if wd:
            g = g + wd * p.data
        vel *= mu
        vel += g
        p.data -= state.lr * (g + mu * vel)


class Optimizer:
    """Binds a parameter list to an :class:`OptimizerState` and an update rule."""

    def __init__(self, params: Sequence[Tensor], state: OptimizerState, rule):
        self.params = list(params)
        self.state = state
        self._rule = rule

    @property
    def lr(self) -> float:
        return self.state.lr

    @lr.setter
    def lr(self, value: float) -> None:
        self.state.lr = value

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params]
        self._rule(self.state, self.params, grads)


def Adam(params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0) -> Optimizer:
    hyper = dict(beta1=beta1, beta2=beta2, eps=eps, weight_decay=weight_decay)
    return Optimizer(params, OptimizerState(lr=lr, hyper=hyper), adam_step)


def NesterovSGD(params, lr=1e-4, momentum=0.9, weight_decay=1e-4) -> Optimizer:
    hyper = dict(momentum=momentum, weight_decay=weight_decay)
    return Optimizer(params, OptimizerState(lr=lr, hyper=hyper), nesterov_sgd_step)
