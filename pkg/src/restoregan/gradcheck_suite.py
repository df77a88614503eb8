"""Finite-difference checks over every differentiable op and loss term.

Each case wraps one op as ``x -> sum(op(x) * R)`` with fixed random weights
``R`` and inputs kept away from kinks and clamp boundaries. Ops are looked up
on the :mod:`restoregan.tensor` module at call time, so a patched op is the
one that gets checked.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import losses as L
from . import models as M
from . import tensor as T
from .tensor import Tensor
from .tensor.gradcheck import grad_check

TOLERANCE = 1e-3
EPSILON = 1e-3


@dataclass
class CaseResult:
    name: str
    error: float

    @property
    def ok(self) -> bool:
        return self.error < TOLERANCE


def _weighted(out: Tensor, R: np.ndarray) -> Tensor:
    return T.sum(T.mul(out, Tensor(R.reshape(out.shape))))


def _away_from_zero(rng, shape, lo=0.1, hi=1.0):
    return rng.uniform(lo, hi, shape) * rng.choice([-1.0, 1.0], shape)


def build_cases(rng: np.random.Generator) -> list[tuple[str, Callable, np.ndarray]]:
    c = []

    def unary(name, fn, x):
        R = rng.uniform(0.5, 1.5, np.shape(fn(Tensor(x)).data)) * rng.choice([-1.0, 1.0], np.shape(fn(Tensor(x)).data))
        c.append((name, lambda t, fn=fn, R=R: _weighted(fn(t), R), x))

    x = rng.uniform(-1, 1, (3, 4))
    y = rng.uniform(-1, 1, (3, 4))
    unary("add", lambda t: T.add(t, Tensor(y)), x)
    unary("sub", lambda t: T.sub(Tensor(y), t), x)
    unary("mul", lambda t: T.mul(t, Tensor(y)), x)
    unary("negate", lambda t: T.neg(t), x)
    unary("scale", lambda t: T.scale(t, -2.5), x)
    unary("abs", lambda t: T.abs(t), _away_from_zero(rng, (3, 4)))
    unary("square", lambda t: T.square(t), x)
    unary("log", lambda t: T.log(t), rng.uniform(0.5, 2.0, (3, 4)))
    unary("clamp_min", lambda t: T.clamp_min(t, 0.0), _away_from_zero(rng, (3, 4)))
    unary("tanh", lambda t: T.tanh(t), x * 2)
    unary("sigmoid", lambda t: T.sigmoid(t), x * 3)
    unary("prelu.x", lambda t: T.prelu(t, Tensor(np.array([0.2]))), _away_from_zero(rng, (2, 5)))
    xp = _away_from_zero(rng, (2, 5))
    unary("prelu.a", lambda a: T.prelu(Tensor(xp), a), np.array([0.3]))
    unary("sum", lambda t: T.sum(t), x)
    unary("mean", lambda t: T.mean(t), x)
    unary("mean.axis", lambda t: T.mean(t, axis=1), x)
    unary("max", lambda t: T.max(t), rng.permutation(12).reshape(3, 4) * 0.1)
    unary("max.axis", lambda t: T.max(t, axis=1), rng.permutation(12).reshape(3, 4) * 0.1)
    unary("reshape", lambda t: T.reshape(t, (4, 3)), x)
    unary("take", lambda t: T.take(t, (slice(None), np.array([0, 2, 2]))), x)
    img_a = rng.uniform(-1, 1, (1, 2, 4, 4))
    unary("concat_channels", lambda t: T.concat_channels(t, Tensor(img_a)), rng.uniform(-1, 1, (1, 3, 4, 4)))
    w = rng.normal(size=(4, 3))
    b = rng.normal(size=3)
    unary("linear.x", lambda t: T.linear(t, Tensor(w), Tensor(b)), x)
    unary("linear.w", lambda t: T.linear(Tensor(x), t, Tensor(b)), w)
    unary("softmax", lambda t: T.softmax(t), x * 2)
    labels = np.array([0, 3, 1])
    unary("cross_entropy", lambda t: T.cross_entropy(t, labels), x * 2)

    inp = rng.uniform(-1, 1, (1, 2, 6, 6))
    v = rng.normal(size=(3, 2, 4, 4))
    g = rng.uniform(0.5, 1.5, 3)
    bias = rng.normal(size=3)
    unary("conv2d.input", lambda t: T.conv2d(t, Tensor(v), Tensor(g), Tensor(bias), 2, 1), inp)
    unary("conv2d.weight_v", lambda t: T.conv2d(Tensor(inp), t, Tensor(g), Tensor(bias), 2, 1), v)
    unary("conv2d.weight_g", lambda t: T.conv2d(Tensor(inp), Tensor(v), t, Tensor(bias), 2, 1), g)
    unary("conv2d.bias", lambda t: T.conv2d(Tensor(inp), Tensor(v), Tensor(g), t, 2, 1), bias)
    vt = rng.normal(size=(2, 3, 4, 4))
    unary("conv_transpose2d.input", lambda t: T.conv_transpose2d(t, Tensor(vt), Tensor(g), Tensor(bias), 2, 1), inp)
    unary("conv_transpose2d.weight_v",
          lambda t: T.conv_transpose2d(Tensor(inp), t, Tensor(g), Tensor(bias), 2, 1), vt)
    unary("conv_transpose2d.weight_g",
          lambda t: T.conv_transpose2d(Tensor(inp), Tensor(vt), t, Tensor(bias), 2, 1), g)
    unary("conv_transpose2d.bias",
          lambda t: T.conv_transpose2d(Tensor(inp), Tensor(vt), Tensor(g), t, 2, 1), bias)
    unary("resize_bilinear.down", lambda t: T.resize_bilinear(t, 3, 4), inp)
    unary("resize_bilinear.up", lambda t: T.resize_bilinear(t, 9, 7), inp)

    # a small discriminator end to end, with respect to the judged image
    d_spec = M.discriminator_spec(16, 3, base_channels=4)
    d_params = {k: Tensor(p.data.astype(np.float64)) for k, p in M.init_params(d_spec.layers, rng, std=0.3).items()}
    sub16 = rng.uniform(-1, 1, (1, 3, 16, 16))
    unary("discriminator", lambda t: M.discriminator_forward(d_spec, d_params, Tensor(sub16), t),
          rng.uniform(-1, 1, (1, 3, 16, 16)))

    # loss terms, evaluated away from the log clamp and the |.| kinks
    probs = rng.uniform(0.1, 0.9, (1, 1, 2, 2))
    c.append(("loss_cgan_d.real", lambda t: L.loss_cgan_d(t, Tensor(probs)), rng.uniform(0.1, 0.9, (1, 1, 2, 2))))
    c.append(("loss_cgan_d.fake", lambda t: L.loss_cgan_d(Tensor(probs), t), rng.uniform(0.1, 0.9, (1, 1, 2, 2))))
    c.append(("loss_cgan_g", lambda t: L.loss_cgan_g(t), rng.uniform(0.1, 0.9, (1, 1, 2, 2))))
    sub = rng.uniform(-1, 1, (1, 3, 5, 5))
    sub[:, :, :2] = 1.0
    c.append(("loss_mask", lambda t: L.loss_mask(t, sub), rng.uniform(-1, 1, (1, 3, 5, 5))))
    target = np.array([0.0, 1.0, 0.0, 0.0, 0.0])
    vec = np.array([0.35, 0.4, 0.25, 0.7, 0.15])  # |t - v| stays clear of zero
    unary("positive_diff", lambda t: L.positive_diff(t, target), vec)
    unary("negative_diff", lambda t: L.negative_diff(t, target), vec)
    c.append(("linear_log_penalty", lambda t: L.linear_log_penalty(t), rng.uniform(0.0, 0.8, 5)))
    crops = [np.array([0.1, 0.3, 0.2, 0.05, 0.1]), np.array([0.6, 0.2, 0.5, 0.4, 0.3]),
             np.array([0.2, 0.1, 0.1, 0.3, 0.2])]
    c.append(("loss_vgg.resized", lambda t: L.loss_vgg(t, [Tensor(k) for k in crops], target)[2], vec))
    c.append(("loss_vgg.crop", lambda t: L.loss_vgg(Tensor(vec), [Tensor(crops[0]), t, Tensor(crops[2])], target)[2],
              crops[1]))
    T_img = rng.uniform(-1, 1, (1, 3, 4, 4))
    gap = rng.uniform(0.1, 0.8, T_img.shape) * rng.choice([-1.0, 1.0], T_img.shape)
    c.append(("loss_substrate", lambda t: L.loss_substrate(Tensor(T_img), t), T_img - gap))
    parts = [Tensor(np.array([0.4])), Tensor(np.array([0.2])), Tensor(np.array([0.9]))]
    c.append(("loss_total", lambda t: L.loss_total(t, *parts), np.array([0.7])))
    return c


def run_suite(seed: int = 0) -> list[CaseResult]:
    rng = np.random.default_rng(seed)
    return [CaseResult(name, grad_check(fn, x, EPSILON)) for name, fn, x in build_cases(rng)]


def format_table(results: list[CaseResult]) -> str:
    width = max(len(r.name) for r in results)
    lines = [f"{'op':<{width}}  max_rel_error  status"]
    for r in results:
        lines.append(f"{r.name:<{width}}  {r.error:13.3e}  {'ok' if r.ok else 'FAIL'}")
    return "\n".join(lines)
