"""Trainable parameters, runtime weight scaling, and optimizers.

Weights are stored at unit scale and multiplied by the per-layer constant
sqrt(2/fan_in) at use time. Adaptive optimizers normalize updates by their
estimated standard deviation, so storing every tensor at the same scale keeps
effective step sizes uniform across layers of different widths; the scaling
constant then carries the width information into the forward pass.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import ContractError
from .tensor import Tensor, scale_add

EQUALIZED = "equalized"
PLAIN = "plain"


def he_scale(fan_in: int) -> float:
    """Per-layer scaling constant sqrt(2 / fan_in)."""
    if fan_in < 1:
        raise ContractError(f"he_scale: fan_in must be >= 1, got {fan_in}")
    return math.sqrt(2.0 / fan_in)


class Param:
    """A trainable weight: raw tensor, gradient, Adam moments, scaling mode.

    ``raw`` is what optimizers update and what travels on the wire; the value
    used in forward passes is ``raw * sqrt(2/fan_in)`` for equalized params
    and ``raw`` itself for plain ones. Gradients are taken with respect to
    ``raw``.
    """

    __slots__ = ("name", "raw", "m", "v", "fan_in", "scaling")

    def __init__(self, name: str, data: np.ndarray, fan_in: int = 1, scaling: str = PLAIN):
        if scaling not in (EQUALIZED, PLAIN):
            raise ContractError(f"unknown scaling mode {scaling!r}")
        self.name = name
        self.raw = Tensor(np.array(data, dtype=np.float64), requires_grad=True)
        self.m = np.zeros_like(self.raw.data)
        self.v = np.zeros_like(self.raw.data)
        self.fan_in = int(fan_in)
        self.scaling = scaling

    @property
    def grad(self):
        return self.raw.grad

    def scale_factor(self, literal_division: bool = False) -> float:
        """Forward-pass multiplier.

        ``literal_division`` selects the reading where raw weights are divided
        by the constant instead of multiplied; see ModelConfig.
        """
        if self.scaling == PLAIN:
            return 1.0
        z = he_scale(self.fan_in)
        return 1.0 / z if literal_division else z

    def effective(self, literal_division: bool = False) -> Tensor:
        f = self.scale_factor(literal_division)
        if f == 1.0:
            return self.raw
        return scale_add(self.raw, f)

    def zero_grad(self) -> None:
        self.raw.grad = None

    def zero_moments(self) -> None:
        self.m.fill(0.0)
        self.v.fill(0.0)

    def __repr__(self) -> str:
        return f"Param({self.name!r}, shape={self.raw.data.shape}, scaling={self.scaling})"


@dataclass
class AdamState:
    """Shared Adam hyperparameters plus the bias-correction step counter."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0


def adam_step(params: Iterable[Param], state: AdamState) -> None:
    """One bias-corrected Adam update on raw weights; grads are then cleared.

    A missing gradient counts as zero: moments still decay and the step
    counter still advances.
    """
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for p in params:
        g = p.raw.grad if p.raw.grad is not None else 0.0
        p.m *= state.beta1
        p.m += (1.0 - state.beta1) * g
        p.v *= state.beta2
        p.v += (1.0 - state.beta2) * np.square(g)
        denom = np.sqrt(p.v / bc2)
        denom += state.eps
        np.divide(p.m, denom, out=denom)
        denom *= state.lr / bc1
        p.raw.data -= denom
        p.raw.grad = None


def sgd_step(params: Iterable[Param], lr: float) -> None:
    """Plain gradient-descent update ``w -= lr * grad``; grads are cleared."""
    for p in params:
        if p.raw.grad is not None:
            p.raw.data -= lr * p.raw.grad
        p.raw.grad = None


def zero_grads(params: Iterable[Param]) -> None:
    for p in params:
        p.raw.grad = None
