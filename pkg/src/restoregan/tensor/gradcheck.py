"""Central-difference gradient oracle."""
from __future__ import annotations

from typing import Callable

import numpy as np

from .core import Tensor, backward


def numerical_grad(function: Callable[[Tensor], Tensor], x: np.ndarray, epsilon: float) -> np.ndarray:
    x = np.array(x, dtype=np.float64)
    out = np.zeros_like(x)
    flat, gflat = x.reshape(-1), out.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + epsilon
        hi = function(Tensor(x)).item()
        flat[i] = orig - epsilon
        lo = function(Tensor(x)).item()
        flat[i] = orig
        gflat[i] = (hi - lo) / (2 * epsilon)
    return out


def analytic_grad(function: Callable[[Tensor], Tensor], x: np.ndarray) -> np.ndarray:
    xt = Tensor(np.array(x, dtype=np.float64), requires_grad=True)
    backward(function(xt))
    return xt.grad


def grad_check(function: Callable[[Tensor], Tensor], x, epsilon: float = 1e-3) -> float:
    """Max relative error between backprop and central differences, in float64.

    ``function`` maps a tensor to a scalar tensor and must be deterministic.
    """
    if isinstance(x, Tensor):
        x = x.data
    x = np.array(x, dtype=np.float64)
    a = analytic_grad(function, x)
    n = numerical_grad(function, x, epsilon)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)
    return float(np.max(np.abs(a - n) / denom))
