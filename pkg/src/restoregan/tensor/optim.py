from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import StructuralError
from .core import Tensor

# GAN defaults for the learning rate and first-moment decay
DEFAULT_ALPHA = 0.0002
DEFAULT_BETA1 = 0.5
DEFAULT_BETA2 = 0.999
DEFAULT_EPS = 1e-8


@dataclass
class AdamHyper:
    alpha: float = DEFAULT_ALPHA
    beta1: float = DEFAULT_BETA1
    beta2: float = DEFAULT_BETA2
    epsilon: float = DEFAULT_EPS


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step_count: int = 0
    alpha: float = DEFAULT_ALPHA
    beta1: float = DEFAULT_BETA1
    beta2: float = DEFAULT_BETA2
    epsilon: float = DEFAULT_EPS

    @classmethod
    def for_param(cls, p: Tensor, hyper: AdamHyper | None = None) -> "AdamState":
        h = hyper or AdamHyper()
        return cls(np.zeros_like(p.data), np.zeros_like(p.data), 0, h.alpha, h.beta1, h.beta2, h.epsilon)


def adam_step(params: list[Tensor], states: list[AdamState], hyper: AdamHyper | None = None) -> None:
    """Bias-corrected Adam update in place, then zero the gradients."""
    if len(params) != len(states):
        raise StructuralError("adam_step: one state per parameter required")
    for p in params:
        if p.grad is None:
            raise StructuralError(f"adam_step: parameter {p!r} has no gradient")
    for p, s in zip(params, states):
        if hyper is not None:
            s.alpha, s.beta1, s.beta2, s.epsilon = hyper.alpha, hyper.beta1, hyper.beta2, hyper.epsilon
        if s.m.shape != p.data.shape:
            raise StructuralError("adam_step: moment shape does not match parameter")
        s.step_count += 1
        g = p.grad.astype(s.m.dtype, copy=False)
        s.m *= s.beta1
        s.m += (1 - s.beta1) * g
        s.v *= s.beta2
        s.v += (1 - s.beta2) * (g * g)
        bc1 = 1 - s.beta1 ** s.step_count
        bc2 = 1 - s.beta2 ** s.step_count
        update = (s.alpha / bc1) * s.m / (np.sqrt(s.v / bc2) + s.epsilon)
        p.data -= update.astype(p.data.dtype, copy=False)
        p.grad = np.zeros_like(p.data)


@dataclass
class Adam:
    """Adam over a named parameter dict."""

    params: dict
    hyper: AdamHyper = field(default_factory=AdamHyper)
    states: dict = field(default_factory=dict)

    def __post_init__(self):
        for name, p in self.params.items():
            self.states.setdefault(name, AdamState.for_param(p, self.hyper))

    def step(self) -> None:
        names = list(self.params)
        adam_step([self.params[n] for n in names], [self.states[n] for n in names], self.hyper)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()
