"""The four generator loss terms and their weighted combination.

All image reductions are means so the term magnitudes do not depend on
resolution. Every log argument is clamped at ``LOG_CLAMP``.
"""
from __future__ import annotations

import math
from dataclasses import astuple, dataclass, fields

import numpy as np

from . import tensor as T
from .errors import StructuralError
from .tensor import Tensor

LOG_CLAMP = 1e-6
CSV_HEADER = "step,l_cgan_d,l_cgan_g,l_mask,l_p,l_n,l_vgg,l_sub,total"


@dataclass(frozen=True)
class LossWeights:
    w_cgan: float = 3.0
    w_mask: float = 10.0
    w_vgg: float = 50.0
    w_sub: float = 150.0

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise StructuralError(f"loss weight {f.name} must be non-negative")


@dataclass(frozen=True)
class LossReport:
    l_cgan_d: float
    l_cgan_g: float
    l_mask: float
    l_p: float
    l_n: float
    l_vgg: float
    l_sub: float
    total: float

    @classmethod
    def build(cls, weights: LossWeights, *, l_cgan_d, l_cgan_g, l_mask, l_p, l_n, l_sub) -> "LossReport":
        vals = [float(_scalar(v)) for v in (l_cgan_d, l_cgan_g, l_mask, l_p, l_n, l_sub)]
        d, g, m, p, n, s = vals
        vgg = p + n
        total = weights.w_cgan * g + weights.w_mask * m + weights.w_vgg * vgg + weights.w_sub * s
        return cls(d, g, m, p, n, vgg, s, total)

    def is_finite(self) -> bool:
        return all(math.isfinite(v) for v in astuple(self))

    def csv_row(self, step: int) -> str:
        return ",".join([str(int(step))] + [repr(v) for v in astuple(self)])

    @classmethod
    def from_csv_row(cls, line: str) -> tuple[int, "LossReport"]:
        parts = line.strip().split(",")
        return int(parts[0]), cls(*(float(p) for p in parts[1:]))


def _scalar(x) -> float:
    return x.item() if isinstance(x, Tensor) else float(x)


def _safe_log(x: Tensor) -> Tensor:
    return T.log(T.clamp_min(x, LOG_CLAMP))


def loss_cgan_d(d_real: Tensor, d_fake: Tensor) -> Tensor:
    """Discriminator side of the conditional GAN loss, negated for minimisation."""
    real = T.mean(_safe_log(d_real))
    fake = T.mean(_safe_log(1.0 - d_fake))
    return T.neg(T.add(real, fake))


def loss_cgan_g(d_fake: Tensor) -> Tensor:
    """Non-saturating generator loss -mean(log D(x, G(x, z)))."""
    return T.neg(T.mean(_safe_log(d_fake)))


def white_mask(substrate: np.ndarray, white_threshold: float = 0.9) -> np.ndarray:
    """Per-pixel mask (broadcast over channels) of substrate pixels whose every channel is near white."""
    px = np.all(substrate >= white_threshold, axis=-3, keepdims=True)
    return np.broadcast_to(px, substrate.shape)


def loss_mask(generated: Tensor, substrate, white_threshold: float = 0.9) -> Tensor:
    """Mean darkness (1 - g) / 2 of the output over the substrate's white region; 0 if there is none."""
    sub = substrate.data if isinstance(substrate, Tensor) else np.asarray(substrate)
    if sub.shape != generated.shape:
        raise StructuralError(f"loss_mask: {list(generated.shape)} vs {list(sub.shape)}")
    mask = white_mask(sub, white_threshold)
    count = int(mask.sum())
    if count == 0:
        return Tensor(np.zeros(1, generated.dtype))
    darkness = T.scale(T.sub(Tensor(np.ones_like(generated.data)), generated), 0.5)
    return T.scale(T.sum(T.mul(darkness, Tensor(mask.astype(generated.dtype)))), 1.0 / count)


def _as_vec(v, like_dtype=np.float32) -> Tensor:
    return v if isinstance(v, Tensor) else Tensor(np.asarray(v, dtype=like_dtype))


def _check_len(v: Tensor, t: np.ndarray, op: str) -> None:
    if v.shape[-1] != t.shape[-1]:
        raise StructuralError(f"{op}: vector length {v.shape[-1]} vs target length {t.shape[-1]}")


def _broadcast_target(t: np.ndarray, v: Tensor) -> np.ndarray:
    return np.broadcast_to(t.astype(v.dtype), v.shape)


def positive_diff(v, t) -> Tensor:
    """|t - v| * t : shortfall on the requested classes."""
    v, t = _as_vec(v), np.asarray(t)
    _check_len(v, t, "positive_diff")
    tb = _broadcast_target(t, v)
    return T.mul(T.abs(T.sub(Tensor(tb), v)), Tensor(tb))


def negative_diff(v, t) -> Tensor:
    """|t - v| * (1 - t) : presence of the classes that were not requested."""
    v, t = _as_vec(v), np.asarray(t)
    _check_len(v, t, "negative_diff")
    tb = _broadcast_target(t, v)
    return T.mul(T.abs(T.sub(Tensor(tb), v)), Tensor(1 - tb))


def linear_log_penalty(x) -> Tensor:
    """mean_i (x_i - log(1 - x_i)) over the last axis; one value per row for 2-d input."""
    x = _as_vec(x)
    terms = T.sub(x, _safe_log(T.sub(Tensor(np.ones_like(x.data)), x)))
    if x.data.ndim == 1:
        return T.mean(terms)
    return T.mean(terms, axis=-1)


def loss_vgg(c_r, crops, t) -> tuple[Tensor, Tensor, Tensor]:
    """(l_p, l_n, l_vgg) from the whole-image and crop probability vectors.

    Accepts single vectors [n] or batches [B, n]; batched results are
    averaged over the batch after the per-item max over crops.
    """
    if not crops:
        raise StructuralError("loss_vgg needs at least one crop")
    c_r = _as_vec(c_r)
    l_p = linear_log_penalty(positive_diff(c_r, t))
    per_crop = [linear_log_penalty(negative_diff(_as_vec(c), t)) for c in crops]
    if c_r.data.ndim == 1:
        l_n = T.max(T.concat(per_crop, axis=0))
    else:
        l_p = T.mean(l_p)
        l_n = T.mean(T.max(T.stack(per_crop, axis=1), axis=1))
    return l_p, l_n, T.add(l_p, l_n)


def sample_crops(image: Tensor, crop_size: int, count: int, rng: np.random.Generator) -> list[Tensor]:
    """``count`` square crops at distinct top-left offsets, drawn uniformly without replacement."""
    S_h, S_w = image.shape[2], image.shape[3]
    if S_h < crop_size or S_w < crop_size:
        raise StructuralError(f"crop size {crop_size} exceeds image {S_h}x{S_w}")
    span_h, span_w = S_h - crop_size + 1, S_w - crop_size + 1
    if span_h * span_w < count:
        raise StructuralError(f"only {span_h * span_w} distinct crop offsets for {count} crops")
    picks = rng.choice(span_h * span_w, size=count, replace=False)
    crops = []
    for k in picks:
        i, j = divmod(int(k), span_w)
        crops.append(T.take(image, (slice(None), slice(None), slice(i, i + crop_size), slice(j, j + crop_size))))
    return crops


def loss_substrate(target: Tensor, generated: Tensor) -> Tensor:
    """mean(|T - G| - log(1 - ((T - G) / 2)^2))."""
    target = target if isinstance(target, Tensor) else Tensor(target)
    if target.shape != generated.shape:
        raise StructuralError(f"loss_substrate: {list(target.shape)} vs {list(generated.shape)}")
    gap = T.sub(target, generated)
    barrier = _safe_log(T.sub(Tensor(np.ones_like(gap.data)), T.square(T.scale(gap, 0.5))))
    return T.mean(T.sub(T.abs(gap), barrier))


def loss_total(l_cgan_g, l_mask, l_vgg, l_sub, weights: LossWeights = LossWeights()):
    """Weighted generator objective. Tensors in give a Tensor out; floats give a float."""
    parts = [(weights.w_cgan, l_cgan_g), (weights.w_mask, l_mask), (weights.w_vgg, l_vgg), (weights.w_sub, l_sub)]
    if not any(isinstance(v, Tensor) for _, v in parts):
        return float(sum(w * float(v) for w, v in parts))
    out = None
    for w, v in parts:
        v = v if isinstance(v, Tensor) else Tensor(np.full(1, v, np.float32))
        term = T.scale(v, w)
        out = term if out is None else T.add(out, term)
    return out
