"""Experiment configuration and its ``key = value`` text format."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .data import AugmentationPolicy
from .errors import StructuralError
from .losses import LossWeights
from .tensor.optim import AdamHyper

REAL_PAIR_MODES = ("unpaired", "identity")


@dataclass(frozen=True)
class TrainConfig:
    seed: int = 0
    substrate_size: int = 64
    classifier_input: int = 32
    n: int = 5
    n_total: int = 8
    target_indices: tuple = (2, 3, 4, 6, 7)
    base_channels: int = 16
    channel_cap: int = 128
    d_layers: int = 4
    classifier_channels: int = 16
    g_init: str = "unit"
    w_cgan: float = 3.0
    w_mask: float = 10.0
    w_vgg: float = 50.0
    w_sub: float = 150.0
    white_threshold: float = 0.9
    p_null: float = 1 / 6
    max_mixed: int = 1
    crop_count: int = 3
    batch_size: int = 2
    steps: int = 3000
    adam_alpha: float = 0.0002
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    tile_sigma: float = math.sqrt(2)
    real_pair: str = "unpaired"
    checkpoint_interval: int = 1000
    log_interval: int = 10
    substrate_count: int = 256
    classifier_steps: int = 2000
    classifier_batch: int = 16
    classifier_alpha: float = 0.001
    classifier_beta1: float = 0.9
    shapes_per_class: int = 200
    heldout_per_class: int = 80
    aug_swap: bool = True
    aug_shift: bool = True
    aug_hflip: bool = True
    p_swap: float = 0.5
    p_shift: float = 0.5
    p_hflip: float = 0.5
    inference_only: bool = False

    def __post_init__(self):
        object.__setattr__(self, "target_indices", tuple(int(i) for i in self.target_indices))
        self.validate()

    def validate(self) -> None:
        problems = []
        if self.substrate_size < 64 or self.substrate_size % 64:
            problems.append("substrate_size must be a positive multiple of 64")
        if not 1 <= self.classifier_input <= self.substrate_size:
            problems.append("classifier_input must lie in [1, substrate_size]")
        if len(self.target_indices) != self.n:
            problems.append("target_indices must list exactly n indices")
        if len(set(self.target_indices)) != len(self.target_indices):
            problems.append("target_indices must be distinct")
        if any(not 0 <= i < self.n_total for i in self.target_indices):
            problems.append("target_indices must lie in [0, n_total)")
        if self.batch_size < 1 or self.classifier_batch < 1:
            problems.append("batch sizes must be >= 1")
        if not 1 <= self.max_mixed <= self.n:
            problems.append("max_mixed must lie in [1, n]")
        if not 0 <= self.p_null <= 1:
            problems.append("p_null must lie in [0, 1]")
        if self.steps < 0 or self.classifier_steps < 0:
            problems.append("step counts must be >= 0")
        if self.crop_count < 1:
            problems.append("crop_count must be >= 1")
        if self.log_interval < 1 or self.checkpoint_interval < 1:
            problems.append("intervals must be >= 1")
        if self.g_init not in ("unit", "norm"):
            problems.append("g_init must be 'unit' or 'norm'")
        if self.real_pair not in REAL_PAIR_MODES:
            problems.append(f"real_pair must be one of {REAL_PAIR_MODES}")
        if min(self.w_cgan, self.w_mask, self.w_vgg, self.w_sub) < 0:
            problems.append("loss weights must be non-negative")
        for name in ("p_swap", "p_shift", "p_hflip"):
            if not 0 <= getattr(self, name) <= 1:
                problems.append(f"{name} must lie in [0, 1]")
        if not (0 < self.adam_beta1 < 1 and 0 < self.adam_beta2 < 1 and 0 < self.classifier_beta1 < 1):
            problems.append("Adam decay rates must lie in (0, 1)")
        if self.adam_alpha <= 0 or self.classifier_alpha <= 0 or self.adam_eps <= 0:
            problems.append("learning rates and epsilon must be positive")
        if problems:
            raise StructuralError("; ".join(problems))

    @property
    def loss_weights(self) -> LossWeights:
        return LossWeights(self.w_cgan, self.w_mask, self.w_vgg, self.w_sub)

    @property
    def adam(self) -> AdamHyper:
        return AdamHyper(self.adam_alpha, self.adam_beta1, self.adam_beta2, self.adam_eps)

    @property
    def augmentation(self) -> AugmentationPolicy:
        return AugmentationPolicy(self.aug_swap, self.aug_shift, self.aug_hflip, self.p_swap, self.p_shift, self.p_hflip)

    def with_overrides(self, **kw) -> "TrainConfig":
        return replace(self, **kw)


_FIELDS = {f.name: f for f in fields(TrainConfig)}


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse(name: str, raw: str):
    default = getattr(TrainConfig, name, None)
    if name == "target_indices":
        return tuple(int(p) for p in raw.split(",") if p.strip())
    if isinstance(default, bool):
        low = raw.lower()
        if low not in ("true", "false", "1", "0", "yes", "no"):
            raise StructuralError(f"{name}: expected a boolean, got {raw!r}")
        return low in ("true", "1", "yes")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw


def dumps(cfg: TrainConfig) -> str:
    return "".join(f"{name} = {_format(getattr(cfg, name))}\n" for name in _FIELDS)


def loads(text: str, base: TrainConfig | None = None) -> TrainConfig:
    """Parse ``key = value`` lines; ``#`` starts a comment, unknown keys are rejected."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, raw = line.partition("=")
        key, raw = key.strip(), raw.strip()
        if not sep:
            raise StructuralError(f"line {lineno}: expected 'key = value'")
        if key not in _FIELDS:
            raise StructuralError(f"line {lineno}: unknown key {key!r}")
        try:
            values[key] = _parse(key, raw)
        except ValueError as exc:
            raise StructuralError(f"line {lineno}: bad value for {key}: {exc}") from None
    return replace(base or TrainConfig(), **values)


def load(path) -> TrainConfig:
    return loads(Path(path).read_text())


def save(cfg: TrainConfig, path) -> None:
    Path(path).write_text(dumps(cfg))
