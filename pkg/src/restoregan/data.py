"""Image I/O, augmentation, and procedural datasets.

Pixels live in [-1, 1] as float32 arrays [3, H, W]; files are 8-bit RGB PNG
mapped linearly through ``x / 127.5 - 1``.
"""
from __future__ import annotations

import itertools
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw, UnidentifiedImageError

from .errors import ImageCorruptError, ImageMissingError, ImageNotRGBError, StructuralError

SHAPE_CLASSES = (
    "disc", "square", "triangle", "cross", "ring", "diamond", "horizontal-stripes", "vertical-stripes",
)
MANIFEST_NAME = "manifest.txt"


@dataclass
class ImageSample:
    pixels: np.ndarray  # float32 [3, H, W] in [-1, 1]
    label: int | None = None

    @classmethod
    def from_uint8(cls, rgb: np.ndarray, label: int | None = None) -> "ImageSample":
        """From an [H, W, 3] uint8 array."""
        return cls(to_float(rgb), label)

    def to_uint8(self) -> np.ndarray:
        return to_uint8(self.pixels)


def to_float(rgb: np.ndarray) -> np.ndarray:
    return (np.asarray(rgb, dtype=np.float32).transpose(2, 0, 1) / np.float32(127.5) - 1).astype(np.float32)


def to_uint8(pixels: np.ndarray) -> np.ndarray:
    return np.clip(np.rint((np.asarray(pixels, dtype=np.float64) + 1) * 127.5), 0, 255).astype(np.uint8).transpose(1, 2, 0)


# ---------------------------------------------------------------- I/O

def load_image(path) -> ImageSample:
    path = Path(path)
    if not path.is_file():
        raise ImageMissingError(f"no such image: {path}")
    try:
        with Image.open(path) as im:
            im.load()
            if im.mode != "RGB":
                raise ImageNotRGBError(f"{path}: expected RGB, found mode {im.mode}")
            rgb = np.asarray(im, dtype=np.uint8)
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        if isinstance(exc, (ImageNotRGBError,)):
            raise
        raise ImageCorruptError(f"{path}: {exc}") from exc
    return ImageSample.from_uint8(rgb)


def save_image(sample: ImageSample, path) -> None:
    Image.fromarray(sample.to_uint8(), mode="RGB").save(Path(path), format="PNG")


def write_manifest(directory, samples: list[ImageSample], prefix: str = "img") -> Path:
    """Write PNGs plus a manifest of ``relative/path.png<TAB>label`` lines."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = []
    for i, s in enumerate(samples):
        name = f"{prefix}_{i:05d}.png"
        save_image(s, directory / name)
        lines.append(name if s.label is None else f"{name}\t{s.label}")
    manifest = directory / MANIFEST_NAME
    manifest.write_text("".join(line + "\n" for line in lines))
    return manifest


def read_manifest(path) -> list[ImageSample]:
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    if not path.is_file():
        raise ImageMissingError(f"no manifest at {path}")
    samples = []
    for line in path.read_text().splitlines():
        if not line.strip():
            continue
        rel, _, label = line.partition("\t")
        s = load_image(path.parent / rel)
        s.label = int(label) if label else None
        samples.append(s)
    return samples


# ---------------------------------------------------------------- augmentation

_NON_IDENTITY_PERMS = [p for p in itertools.permutations(range(3)) if p != (0, 1, 2)]


@dataclass(frozen=True)
class AugmentationPolicy:
    enable_swap: bool = True
    enable_shift: bool = True
    enable_hflip: bool = True
    p_swap: float = 0.5
    p_shift: float = 0.5
    p_hflip: float = 0.5

    def __post_init__(self):
        for p in (self.p_swap, self.p_shift, self.p_hflip):
            if not 0 <= p <= 1:
                raise StructuralError(f"augmentation probability {p} outside [0, 1]")


def colour_swap(img: ImageSample, rng: np.random.Generator) -> ImageSample:
    """Reorder the colour axes by a uniformly chosen non-identity permutation."""
    perm = _NON_IDENTITY_PERMS[int(rng.integers(len(_NON_IDENTITY_PERMS)))]
    return ImageSample(img.pixels[list(perm)].copy(), img.label)


def unique_colours(rgb: np.ndarray) -> int:
    flat = rgb.reshape(-1, 3).astype(np.uint32)
    return int(np.unique((flat[:, 0] << 16) | (flat[:, 1] << 8) | flat[:, 2]).size)


def colour_shift(img: ImageSample, rng: np.random.Generator) -> ImageSample:
    """Saturate one colour axis to 255, trying axes in random order.

    An axis is accepted only if the number of distinct RGB triples is
    unchanged; if no axis qualifies the image is returned as is.
    """
    rgb = img.to_uint8()
    before = unique_colours(rgb)
    for ch in rng.permutation(3):
        cand = rgb.copy()
        cand[..., ch] = 255
        if unique_colours(cand) == before:
            return ImageSample.from_uint8(cand, img.label)
    return ImageSample(img.pixels.copy(), img.label)


def hflip(img: ImageSample) -> ImageSample:
    return ImageSample(img.pixels[:, :, ::-1].copy(), img.label)


def apply_augmentation(img: ImageSample, policy: AugmentationPolicy, rng: np.random.Generator) -> ImageSample:
    """Swap, then shift, then flip; each applied independently with its own probability."""
    if policy.enable_swap and rng.random() < policy.p_swap:
        img = colour_swap(img, rng)
    if policy.enable_shift and rng.random() < policy.p_shift:
        img = colour_shift(img, rng)
    if policy.enable_hflip and rng.random() < policy.p_hflip:
        img = hflip(img)
    return img


# ---------------------------------------------------------------- procedural data

def _solid_colour(rng: np.random.Generator, ceiling: int = 200) -> tuple:
    return tuple(int(v) for v in rng.integers(0, ceiling + 1, size=3))


def synth_substrate(size: int, rng: np.random.Generator) -> ImageSample:
    """A garment-like silhouette (rounded torso plus two sleeve lobes) on pure white."""
    im = Image.new("RGB", (size, size), (255, 255, 255))
    draw = ImageDraw.Draw(im)
    colour = _solid_colour(rng)
    scale = rng.uniform(0.55, 0.8)
    torso_w, torso_h = scale * size * 0.5, scale * size * 0.75
    cx = size / 2 + rng.uniform(-0.08, 0.08) * size
    cy = size / 2 + rng.uniform(-0.06, 0.06) * size
    x0, y0 = cx - torso_w / 2, cy - torso_h / 2
    x1, y1 = cx + torso_w / 2, cy + torso_h / 2
    draw.rounded_rectangle((x0, y0, x1, y1), radius=max(1.0, 0.15 * torso_w), fill=colour)
    sleeve_len = torso_w * rng.uniform(0.35, 0.6)
    sleeve_w = torso_h * rng.uniform(0.25, 0.4)
    for side in (-1, 1):
        edge = x0 if side < 0 else x1
        outer = edge + side * sleeve_len
        lx0, lx1 = sorted((edge - side * 0.2 * torso_w, outer))
        draw.ellipse((lx0, y0, lx1, y0 + sleeve_w), fill=colour)
    neck = torso_w * rng.uniform(0.18, 0.3)
    draw.ellipse((cx - neck / 2, y0 - neck / 3, cx + neck / 2, y0 + neck / 3), fill=(255, 255, 255))
    return ImageSample.from_uint8(np.asarray(im))


def synth_substrates(count: int, size: int, rng: np.random.Generator) -> list[ImageSample]:
    return [synth_substrate(size, rng) for _ in range(count)]


def _draw_shape(draw: ImageDraw.ImageDraw, kind: str, cx: float, cy: float, r: float, colour: tuple) -> None:
    if kind == "disc":
        draw.ellipse((cx - r, cy - r, cx + r, cy + r), fill=colour)
    elif kind == "square":
        draw.rectangle((cx - r, cy - r, cx + r, cy + r), fill=colour)
    elif kind == "triangle":
        draw.polygon([(cx, cy - r), (cx + r, cy + r), (cx - r, cy + r)], fill=colour)
    elif kind == "cross":
        arm = r / 3
        draw.rectangle((cx - r, cy - arm, cx + r, cy + arm), fill=colour)
        draw.rectangle((cx - arm, cy - r, cx + arm, cy + r), fill=colour)
    elif kind == "ring":
        draw.ellipse((cx - r, cy - r, cx + r, cy + r), outline=colour, width=max(2, round(r / 3)))
    elif kind == "diamond":
        draw.polygon([(cx, cy - r), (cx + r, cy), (cx, cy + r), (cx - r, cy)], fill=colour)
    elif kind in ("horizontal-stripes", "vertical-stripes"):
        bands = 5
        step = 2 * r / bands
        for b in range(0, bands, 2):
            lo = -r + b * step
            if kind == "horizontal-stripes":
                draw.rectangle((cx - r, cy + lo, cx + r, cy + lo + step - 1), fill=colour)
            else:
                draw.rectangle((cx + lo, cy - r, cx + lo + step - 1, cy + r), fill=colour)
    else:
        raise StructuralError(f"unknown shape {kind!r}")


def render_shape(kind: str, size: int, rng: np.random.Generator) -> np.ndarray:
    """One jittered shape (colour, +-15% position, +-25% scale) on white, as uint8 [H, W, 3]."""
    im = Image.new("RGB", (size, size), (255, 255, 255))
    r = 0.3 * size * rng.uniform(0.75, 1.25)
    cx = size / 2 + rng.uniform(-0.15, 0.15) * size
    cy = size / 2 + rng.uniform(-0.15, 0.15) * size
    _draw_shape(ImageDraw.Draw(im), kind, cx, cy, r, _solid_colour(rng))
    return np.asarray(im)


def synth_labeled_shapes(count_per_class: int, n_total: int, size: int, rng: np.random.Generator) -> list[ImageSample]:
    if not 1 <= n_total <= len(SHAPE_CLASSES):
        raise StructuralError(f"n_total must be in [1, {len(SHAPE_CLASSES)}], got {n_total}")
    out = []
    for _ in range(count_per_class):
        for label in range(n_total):
            out.append(ImageSample.from_uint8(render_shape(SHAPE_CLASSES[label], size, rng), label))
    return out


def stack_pixels(samples: list[ImageSample]) -> np.ndarray:
    return np.stack([s.pixels for s in samples]).astype(np.float32)


def worker_rng(master_seed: int, worker: int) -> np.random.Generator:
    """Independent stream for a data worker, derived from the master seed."""
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=(worker,)))


def ensure_writable_dir(path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    if not os.access(path, os.W_OK):
        raise PermissionError(f"cannot write to {path}")
    return path
