"""Generator, discriminator and victim classifier, plus the target/tile samplers.

Networks are plain data: a spec (list of :class:`LayerSpec`) and a dict of
named parameter tensors. Forward passes are pure functions of the two.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import StructuralError
from .tensor import Tensor

KERNEL = 4
STRIDE = 2
PADDING = 1
PRELU_INIT = 0.2
INIT_STD = 0.02
TILE_DIVISOR = 64


@dataclass(frozen=True)
class LayerSpec:
    name: str
    kind: str  # "conv", "deconv" or "dense"
    cin: int
    cout: int
    kernel: int = KERNEL
    stride: int = STRIDE
    padding: int = PADDING
    activation: str | None = "prelu"
    skip: int | None = None  # encoder layer whose output is concatenated after this layer


@dataclass(frozen=True)
class GeneratorSpec:
    substrate_size: int
    n: int
    encoder: tuple
    decoder: tuple

    @property
    def tile_size(self) -> int:
        return self.substrate_size // TILE_DIVISOR

    @property
    def layers(self) -> tuple:
        return self.encoder + self.decoder


@dataclass(frozen=True)
class DiscriminatorSpec:
    substrate_size: int
    layers: tuple

    @property
    def patch_size(self) -> int:
        return self.substrate_size // 2 ** len(self.layers)


@dataclass(frozen=True)
class ClassifierSpec:
    input_size: int
    n_total: int
    layers: tuple


def tile_side(substrate_size: int) -> int:
    if substrate_size % TILE_DIVISOR or substrate_size < TILE_DIVISOR:
        raise StructuralError(f"substrate size must be a positive multiple of {TILE_DIVISOR}, got {substrate_size}")
    return substrate_size // TILE_DIVISOR


def _channels(i: int, base: int, cap: int) -> int:
    return min(base * 2 ** i, cap)


def generator_spec(substrate_size: int, n: int, base_channels: int = 16, channel_cap: int = 128) -> GeneratorSpec:
    """U-Net: the encoder halves down to twice the tile side, the decoder doubles from the tile up.

    Decoder layer j's output is concatenated with the encoder map of the same
    resolution; the final layer maps straight to RGB through tanh.
    """
    s = tile_side(substrate_size)
    depth = int(math.log2(substrate_size // s)) - 1  # encoder stops at resolution 2s
    enc_ch = [_channels(i, base_channels, channel_cap) for i in range(depth)]
    encoder = []
    cin = 3
    for i, c in enumerate(enc_ch):
        encoder.append(LayerSpec(f"g.enc{i}", "conv", cin, c))
        cin = c
    decoder = []
    cin = n
    for j in range(depth):
        skip = depth - 1 - j
        cout = enc_ch[skip]
        decoder.append(LayerSpec(f"g.dec{j}", "deconv", cin, cout, skip=skip))
        cin = cout + enc_ch[skip]
    decoder.append(LayerSpec(f"g.dec{depth}", "deconv", cin, 3, activation="tanh"))
    return GeneratorSpec(substrate_size, n, tuple(encoder), tuple(decoder))


def discriminator_spec(substrate_size: int, layers: int = 4, base_channels: int = 16,
                       channel_cap: int = 128) -> DiscriminatorSpec:
    """PatchGAN over the channel-stacked (substrate, image) pair."""
    if substrate_size % 2 ** layers:
        raise StructuralError(f"substrate size {substrate_size} cannot be halved {layers} times")
    out, cin = [], 6
    for i in range(layers - 1):
        c = _channels(i, base_channels, channel_cap)
        out.append(LayerSpec(f"d.conv{i}", "conv", cin, c))
        cin = c
    out.append(LayerSpec(f"d.conv{layers - 1}", "conv", cin, 1, activation="sigmoid"))
    return DiscriminatorSpec(substrate_size, tuple(out))


def classifier_spec(input_size: int, n_total: int, conv_layers: int = 3, base_channels: int = 16) -> ClassifierSpec:
    if input_size % 2 ** conv_layers:
        raise StructuralError(f"classifier input {input_size} cannot be halved {conv_layers} times")
    out, cin = [], 3
    for i in range(conv_layers):
        c = base_channels * 2 ** i
        out.append(LayerSpec(f"c.conv{i}", "conv", cin, c))
        cin = c
    side = input_size // 2 ** conv_layers
    out.append(LayerSpec("c.fc", "dense", cin * side * side, n_total, kernel=0, stride=0, padding=0, activation=None))
    return ClassifierSpec(input_size, n_total, tuple(out))


def _unit_gain(L: LayerSpec) -> float:
    # keeps activation variance roughly constant through the stack
    gain = 2.0 if L.kind == "deconv" else 1.0  # a stride-2 transposed conv feeds each output 1/4 of its taps
    if L.activation == "prelu":
        gain *= math.sqrt(2 / (1 + PRELU_INIT ** 2))
    return gain


def init_params(layers, rng: np.random.Generator, std: float = INIT_STD, g_init: str = "unit") -> dict:
    """Direction v ~ N(0, std); biases zero; PReLU slopes 0.2.

    ``g_init="norm"`` sets g = ||v|| so the effective weight starts equal to v;
    ``g_init="unit"`` sets g to a variance-preserving gain per layer.
    """
    if g_init not in ("unit", "norm"):
        raise StructuralError(f"unknown g_init {g_init!r}")
    params = {}
    for L in layers:
        if L.kind == "dense":
            params[f"{L.name}.w"] = Tensor(rng.normal(0, std, (L.cin, L.cout)).astype(np.float32), requires_grad=True)
            params[f"{L.name}.b"] = Tensor(np.zeros(L.cout, np.float32), requires_grad=True)
            continue
        shape = (L.cout, L.cin, L.kernel, L.kernel) if L.kind == "conv" else (L.cin, L.cout, L.kernel, L.kernel)
        v = rng.normal(0, std, shape).astype(np.float32)
        axes = (1, 2, 3) if L.kind == "conv" else (0, 2, 3)
        if g_init == "norm":
            g = np.sqrt(np.sum(v.astype(np.float64) ** 2, axis=axes)).astype(np.float32)
        else:
            g = np.full(L.cout, _unit_gain(L), np.float32)
        params[f"{L.name}.v"] = Tensor(v, requires_grad=True)
        params[f"{L.name}.g"] = Tensor(g, requires_grad=True)
        params[f"{L.name}.b"] = Tensor(np.zeros(L.cout, np.float32), requires_grad=True)
        if L.activation == "prelu":
            params[f"{L.name}.a"] = Tensor(np.full(1, PRELU_INIT, np.float32), requires_grad=True)
    return params


def _apply(L: LayerSpec, params: dict, x: Tensor) -> Tensor:
    p = params
    if L.kind == "conv":
        h = T.conv2d(x, p[f"{L.name}.v"], p[f"{L.name}.g"], p[f"{L.name}.b"], L.stride, L.padding)
    elif L.kind == "deconv":
        h = T.conv_transpose2d(x, p[f"{L.name}.v"], p[f"{L.name}.g"], p[f"{L.name}.b"], L.stride, L.padding)
    else:
        h = T.linear(T.reshape(x, (x.shape[0], -1)), p[f"{L.name}.w"], p[f"{L.name}.b"])
    if L.activation == "prelu":
        return T.prelu(h, p[f"{L.name}.a"])
    if L.activation is None:
        return h
    return T.activation(h, L.activation)


def generator_forward(spec: GeneratorSpec, params: dict, substrate: Tensor, tile: Tensor) -> Tensor:
    b = substrate.shape[0]
    S, s = spec.substrate_size, spec.tile_size
    if substrate.shape != (b, 3, S, S):
        raise StructuralError(f"generator expects substrate [B,3,{S},{S}], got {list(substrate.shape)}")
    if tile.shape != (b, spec.n, s, s):
        raise StructuralError(f"generator expects tile [{b},{spec.n},{s},{s}], got {list(tile.shape)}")
    feats = []
    h = substrate
    for L in spec.encoder:
        h = _apply(L, params, h)
        feats.append(h)
    d = tile
    for L in spec.decoder:
        d = _apply(L, params, d)
        if L.skip is not None:
            skip = feats[L.skip]
            if skip.shape[2:] != d.shape[2:]:
                raise StructuralError(f"U-Net resolution mismatch at {L.name}: {d.shape[2:]} vs {skip.shape[2:]}")
            d = T.concat_channels(d, skip)
    return d


def discriminator_forward(spec: DiscriminatorSpec, params: dict, substrate: Tensor, image: Tensor) -> Tensor:
    if substrate.shape != image.shape:
        raise StructuralError(f"discriminator inputs differ: {list(substrate.shape)} vs {list(image.shape)}")
    h = T.concat_channels(substrate, image)
    for L in spec.layers:
        h = _apply(L, params, h)
    return h


def classifier_logits(spec: ClassifierSpec, params: dict, image: Tensor) -> Tensor:
    c = spec.input_size
    if image.data.ndim != 4 or image.shape[1:] != (3, c, c):
        raise StructuralError(f"classifier expects [B,3,{c},{c}], got {list(image.shape)}")
    h = image
    for L in spec.layers:
        h = _apply(L, params, h)
    return h


def classifier_forward(spec: ClassifierSpec, params: dict, image: Tensor) -> Tensor:
    """Class probabilities [B, n_total]."""
    return T.softmax(classifier_logits(spec, params, image))


# ---------------------------------------------------------------- samplers

def sample_target(n: int, p_null: float, max_mixed: int, rng: np.random.Generator) -> np.ndarray:
    """Binary target vector: all-zero with probability p_null, else k ~ U{1..max_mixed} distinct ones."""
    if not 1 <= max_mixed <= n:
        raise StructuralError(f"max_mixed must lie in [1, {n}], got {max_mixed}")
    if not 0 <= p_null <= 1:
        raise StructuralError(f"p_null must lie in [0, 1], got {p_null}")
    t = np.zeros(n, dtype=np.float32)
    if rng.random() < p_null:
        return t
    k = int(rng.integers(1, max_mixed + 1))
    t[rng.choice(n, size=k, replace=False)] = 1
    return t


def sample_class_tile(t, s: int, rng: np.random.Generator, sigma: float = math.sqrt(2)) -> Tensor:
    """Tiled class input [n, s, s].

    Active planes hold i.i.d. draws from an equal mix of N(+1, sigma^2) and
    N(-1, sigma^2); inactive planes are exactly zero.
    """
    if s < 1:
        raise StructuralError("tile side must be >= 1")
    t = np.asarray(t)
    tile = np.zeros((t.size, s, s), dtype=np.float32)
    for i in np.flatnonzero(t):
        centres = rng.choice(np.array([-1.0, 1.0]), size=(s, s))
        tile[i] = centres + sigma * rng.standard_normal((s, s))
    return Tensor(tile)


def batch_tiles(t, s: int, batch: int, rng: np.random.Generator, sigma: float = math.sqrt(2)) -> Tensor:
    """One fresh tile per batch item, stacked to [B, n, s, s]."""
    return Tensor(np.stack([sample_class_tile(t, s, rng, sigma).data for _ in range(batch)]))

