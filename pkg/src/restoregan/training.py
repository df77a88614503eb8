"""Victim classifier training, restoration-GAN training, and generation."""
from __future__ import annotations

import logging
import math
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import data
from . import losses as L
from . import models as M
from . import tensor as T
from .checkpoint import ModelCheckpoint, save_checkpoint
from .config import TrainConfig
from .errors import StructuralError, TrainingDivergence
from .tensor import Adam, Tensor

log = logging.getLogger(__name__)

MAX_MIXED_AT_GENERATION = 3

# fixed spawn keys so each consumer of randomness owns an independent stream
_STREAMS = {"init": 0, "data": 1, "targets": 2, "tiles": 3, "crops": 4, "augment": 5, "heldout": 6, "batches": 7}


def stream(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(_STREAMS[name],)))


# ---------------------------------------------------------------- parameter plumbing

def params_to_arrays(params: dict) -> dict:
    return {k: p.data.copy() for k, p in params.items()}


def arrays_to_params(arrays: dict, requires_grad: bool) -> dict:
    return {k: Tensor(np.array(v, dtype=np.float32), requires_grad=requires_grad) for k, v in arrays.items()}


def _adam_to_arrays(prefix: str, opt: Adam) -> dict:
    out = {}
    for name, st in opt.states.items():
        out[f"adam.{prefix}.{name}.m"] = st.m.copy()
        out[f"adam.{prefix}.{name}.v"] = st.v.copy()
    steps = {st.step_count for st in opt.states.values()} or {0}
    out[f"adam.{prefix}.step"] = np.array([float(max(steps))], dtype=np.float32)
    return out


@contextmanager
def frozen(params: dict):
    """Temporarily stop gradients from reaching ``params``."""
    flags = {k: p.requires_grad for k, p in params.items()}
    for p in params.values():
        p.requires_grad = False
    try:
        yield
    finally:
        for k, p in params.items():
            p.requires_grad = flags[k]


def make_classifier_spec(cfg: TrainConfig) -> M.ClassifierSpec:
    return M.classifier_spec(cfg.classifier_input, cfg.n_total, base_channels=cfg.classifier_channels)


def make_generator_spec(cfg: TrainConfig) -> M.GeneratorSpec:
    return M.generator_spec(cfg.substrate_size, cfg.n, cfg.base_channels, cfg.channel_cap)


def make_discriminator_spec(cfg: TrainConfig) -> M.DiscriminatorSpec:
    return M.discriminator_spec(cfg.substrate_size, cfg.d_layers, cfg.base_channels, cfg.channel_cap)


def load_victim(cp: ModelCheckpoint, cfg: TrainConfig | None = None) -> tuple[M.ClassifierSpec, dict]:
    """Classifier layout and frozen parameters from a classifier (or GAN) checkpoint."""
    vcfg = cp.config
    if cfg is not None:
        mismatched = [k for k in ("classifier_input", "n_total", "classifier_channels")
                      if getattr(vcfg, k) != getattr(cfg, k)]
        if mismatched:
            raise StructuralError("victim checkpoint does not match config: " + ", ".join(
                f"{k}={getattr(vcfg, k)} vs {getattr(cfg, k)}" for k in mismatched))
    spec = make_classifier_spec(vcfg)
    params = arrays_to_params(cp.subset("c."), requires_grad=False)
    expected = set(M.init_params(spec.layers, np.random.default_rng(0)))
    if set(params) != expected:
        raise StructuralError("victim checkpoint is missing classifier tensors")
    return spec, params


# ---------------------------------------------------------------- victim classifier

@dataclass
class ClassifierResult:
    checkpoint: ModelCheckpoint
    train_accuracy: float
    heldout_accuracy: float


def predict(spec: M.ClassifierSpec, params: dict, pixels: np.ndarray, batch: int = 256) -> np.ndarray:
    """Class probabilities for a stack of images [N, 3, c, c]."""
    out = []
    for i in range(0, len(pixels), batch):
        out.append(M.classifier_forward(spec, params, Tensor(pixels[i:i + batch])).data)
    return np.concatenate(out) if out else np.zeros((0, spec.n_total), np.float32)


def accuracy(spec: M.ClassifierSpec, params: dict, samples: list) -> float:
    if not samples:
        return float("nan")
    probs = predict(spec, params, data.stack_pixels(samples))
    labels = np.array([s.label for s in samples])
    return float(np.mean(np.argmax(probs, axis=1) == labels))


def default_shape_sets(cfg: TrainConfig) -> tuple[list, list]:
    train = data.synth_labeled_shapes(cfg.shapes_per_class, cfg.n_total, cfg.classifier_input, stream(cfg.seed, "data"))
    held = data.synth_labeled_shapes(cfg.heldout_per_class, cfg.n_total, cfg.classifier_input,
                                     stream(cfg.seed, "heldout"))
    return train, held


def train_classifier(cfg: TrainConfig, train_set: list | None = None, heldout: list | None = None) -> ClassifierResult:
    if train_set is None:
        train_set, default_held = default_shape_sets(cfg)
        heldout = default_held if heldout is None else heldout
    if not train_set:
        raise StructuralError("classifier dataset is empty")
    if any(s.label is None or not 0 <= s.label < cfg.n_total for s in train_set):
        raise StructuralError("every classifier sample needs a label in [0, n_total)")
    spec = make_classifier_spec(cfg)
    if train_set[0].pixels.shape != (3, cfg.classifier_input, cfg.classifier_input):
        raise StructuralError(f"classifier images must be {cfg.classifier_input}x{cfg.classifier_input}")
    params = M.init_params(spec.layers, stream(cfg.seed, "init"), g_init=cfg.g_init)
    opt = Adam(params, T.AdamHyper(cfg.classifier_alpha, cfg.classifier_beta1, cfg.adam_beta2, cfg.adam_eps))
    pixels = data.stack_pixels(train_set)
    labels = np.array([s.label for s in train_set], dtype=np.int64)
    rng = stream(cfg.seed, "batches")
    for step in range(1, cfg.classifier_steps + 1):
        idx = rng.integers(0, len(train_set), size=cfg.classifier_batch)
        loss = T.cross_entropy(M.classifier_logits(spec, params, Tensor(pixels[idx])), labels[idx])
        if not math.isfinite(loss.item()):
            raise TrainingDivergence(step, {"cross_entropy": loss.item()})
        T.backward(loss)
        opt.step()
        if step % 200 == 0:
            log.info("classifier step %d loss %.4f", step, loss.item())
    for p in params.values():
        p.requires_grad = False
    cp = ModelCheckpoint(params_to_arrays(params), cfgmod.dumps(cfg.with_overrides(inference_only=True)),
                         cfg.classifier_steps)
    return ClassifierResult(cp, accuracy(spec, params, train_set), accuracy(spec, params, heldout or []))


# ---------------------------------------------------------------- restoration GAN

@dataclass
class GanResult:
    checkpoint: ModelCheckpoint
    reports: list = field(default_factory=list)  # (step, LossReport)


class GanTrainer:
    """One restoration-GAN experiment: networks, optimizers and randomness streams."""

    def __init__(self, cfg: TrainConfig, victim: ModelCheckpoint, substrates: list):
        if not substrates:
            raise StructuralError("substrate dataset is empty")
        S = cfg.substrate_size
        if any(s.pixels.shape != (3, S, S) for s in substrates):
            raise StructuralError(f"substrates must be {S}x{S} RGB")
        if cfg.classifier_input > S:
            raise StructuralError("classifier input larger than the substrate")
        self.cfg = cfg
        self.c_spec, self.c_params = load_victim(victim, cfg)
        self.g_spec = make_generator_spec(cfg)
        self.d_spec = make_discriminator_spec(cfg)
        init = stream(cfg.seed, "init")
        self.g_params = M.init_params(self.g_spec.layers, init, g_init=cfg.g_init)
        self.d_params = M.init_params(self.d_spec.layers, init, g_init=cfg.g_init)
        self.opt_g = Adam(self.g_params, cfg.adam)
        self.opt_d = Adam(self.d_params, cfg.adam)
        self.substrates = substrates
        self.targets = np.array(cfg.target_indices)
        self.weights = cfg.loss_weights
        self.policy = cfg.augmentation
        self.rng_batches = stream(cfg.seed, "batches")
        self.rng_aug = stream(cfg.seed, "augment")
        self.rng_targets = stream(cfg.seed, "targets")
        self.rng_tiles = stream(cfg.seed, "tiles")
        self.rng_crops = stream(cfg.seed, "crops")
        self.step_index = 0

    def _batch(self) -> np.ndarray:
        idx = self.rng_batches.integers(0, len(self.substrates), size=self.cfg.batch_size)
        imgs = [data.apply_augmentation(self.substrates[i], self.policy, self.rng_aug) for i in idx]
        return data.stack_pixels(imgs)

    def victim_targets(self, images: Tensor) -> Tensor:
        """Victim probabilities restricted to the attacked classes, [B, n]."""
        probs = M.classifier_forward(self.c_spec, self.c_params, images)
        return T.take(probs, (slice(None), self.targets))

    def step(self) -> L.LossReport:
        cfg = self.cfg
        B, c = cfg.batch_size, cfg.classifier_input
        x_np = self._batch()
        y_np = x_np if cfg.real_pair == "identity" else self._batch()
        x, y = Tensor(x_np), Tensor(y_np)
        t = M.sample_target(cfg.n, cfg.p_null, cfg.max_mixed, self.rng_targets)
        tile = M.batch_tiles(t, self.g_spec.tile_size, B, self.rng_tiles, cfg.tile_sigma)

        fake = M.generator_forward(self.g_spec, self.g_params, x, tile)

        # discriminator update on a detached fake
        d_real = M.discriminator_forward(self.d_spec, self.d_params, x, y)
        d_fake = M.discriminator_forward(self.d_spec, self.d_params, x, fake.detach())
        l_d = L.loss_cgan_d(d_real, d_fake)
        T.backward(l_d)
        self.opt_d.step()

        # generator update through the refreshed, frozen discriminator
        with frozen(self.d_params):
            l_g = L.loss_cgan_g(M.discriminator_forward(self.d_spec, self.d_params, x, fake))
            l_m = L.loss_mask(fake, x_np, cfg.white_threshold)
            crops = L.sample_crops(fake, c, cfg.crop_count, self.rng_crops)
            probs = self.victim_targets(T.concat([T.resize_bilinear(fake, c, c)] + crops, axis=0))
            c_r = T.take(probs, slice(0, B))
            crop_probs = [T.take(probs, slice(B * (k + 1), B * (k + 2))) for k in range(len(crops))]
            l_p, l_n, l_vgg = L.loss_vgg(c_r, crop_probs, t)
            l_s = L.loss_substrate(x, fake)
            total = L.loss_total(l_g, l_m, l_vgg, l_s, self.weights)
            report = L.LossReport.build(self.weights, l_cgan_d=l_d, l_cgan_g=l_g, l_mask=l_m,
                                        l_p=l_p, l_n=l_n, l_sub=l_s)
            self.step_index += 1
            if not (report.is_finite() and math.isfinite(total.item())):
                raise TrainingDivergence(self.step_index, {k: getattr(report, k) for k in L.CSV_HEADER.split(",")[1:]})
            T.backward(total)
        self.opt_g.step()
        return report

    def checkpoint(self) -> ModelCheckpoint:
        tensors = {}
        tensors.update(params_to_arrays(self.g_params))
        tensors.update(params_to_arrays(self.d_params))
        tensors.update(params_to_arrays(self.c_params))
        tensors.update(_adam_to_arrays("g", self.opt_g))
        tensors.update(_adam_to_arrays("d", self.opt_d))
        return ModelCheckpoint(tensors, cfgmod.dumps(self.cfg), self.step_index)

    def victim_digest(self) -> str:
        return ModelCheckpoint(params_to_arrays(self.c_params)).digest()


def default_substrates(cfg: TrainConfig) -> list:
    return data.synth_substrates(cfg.substrate_count, cfg.substrate_size, stream(cfg.seed, "data"))


def train_gan(cfg: TrainConfig, victim: ModelCheckpoint, substrates: list | None = None,
              checkpoint_path=None, log_path=None) -> GanResult:
    """Alternate one discriminator and one generator step per iteration for ``cfg.steps`` iterations.

    Writes the CSV loss log and periodic atomic checkpoints when paths are given.
    """
    if substrates is None:
        substrates = default_substrates(cfg)
    trainer = GanTrainer(cfg, victim, substrates)
    before = trainer.victim_digest()
    reports = []
    log_fh = None
    if log_path is not None:
        Path(log_path).parent.mkdir(parents=True, exist_ok=True)
        log_fh = open(log_path, "w")
        log_fh.write(L.CSV_HEADER + "\n")
    try:
        for step in range(1, cfg.steps + 1):
            report = trainer.step()
            if step % cfg.log_interval == 0:
                reports.append((step, report))
                if log_fh is not None:
                    log_fh.write(report.csv_row(step) + "\n")
                    log_fh.flush()
                log.info("gan step %d: %s", step, report)
            if checkpoint_path is not None and step % cfg.checkpoint_interval == 0:
                save_checkpoint(trainer.checkpoint(), checkpoint_path)
    finally:
        if log_fh is not None:
            log_fh.close()
    if trainer.victim_digest() != before:
        raise AssertionError("victim parameters changed during GAN training")
    cp = trainer.checkpoint()
    if checkpoint_path is not None:
        save_checkpoint(cp, checkpoint_path)
    return GanResult(cp, reports)


def read_log(path) -> list:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != L.CSV_HEADER:
        raise StructuralError(f"{path}: missing CSV header")
    return [L.LossReport.from_csv_row(line) for line in lines[1:] if line.strip()]


# ---------------------------------------------------------------- generation

class Restorer:
    """Inference view of a GAN checkpoint: generator plus embedded victim."""

    def __init__(self, cp: ModelCheckpoint):
        self.cfg = cp.config
        self.g_spec = make_generator_spec(self.cfg)
        self.g_params = arrays_to_params(cp.subset("g."), requires_grad=False)
        if set(self.g_params) != set(M.init_params(self.g_spec.layers, np.random.default_rng(0))):
            raise StructuralError("checkpoint does not hold a complete generator")
        self.c_spec, self.c_params = load_victim(cp)
        self.targets = np.array(self.cfg.target_indices)

    def generate(self, substrate: data.ImageSample, t, sample_count: int, rng: np.random.Generator) -> list:
        S = self.cfg.substrate_size
        if substrate.pixels.shape != (3, S, S):
            raise StructuralError(f"substrate must be {S}x{S}, got {substrate.pixels.shape[1:]}")
        t = np.asarray(t, dtype=np.float32)
        if t.shape != (self.cfg.n,) or not np.all((t == 0) | (t == 1)):
            raise StructuralError(f"target vector must be binary of length {self.cfg.n}")
        if t.sum() > MAX_MIXED_AT_GENERATION:
            raise StructuralError(f"at most {MAX_MIXED_AT_GENERATION} classes can be mixed")
        x = Tensor(substrate.pixels[None])
        out = []
        for _ in range(sample_count):
            tile = Tensor(M.sample_class_tile(t, self.g_spec.tile_size, rng, self.cfg.tile_sigma).data[None])
            y = M.generator_forward(self.g_spec, self.g_params, x, tile)
            out.append(data.ImageSample(y.data[0].copy()))
        return out

    def target_probabilities(self, samples: list) -> np.ndarray:
        """Victim probabilities of the attacked classes on the resized images, [N, n]."""
        c = self.cfg.classifier_input
        px = Tensor(data.stack_pixels(samples))
        probs = predict(self.c_spec, self.c_params, T.resize_bilinear(px, c, c).data)
        return probs[:, self.targets]


def generate(gan_checkpoint: ModelCheckpoint, substrate: data.ImageSample, t, sample_count: int,
             rng: np.random.Generator) -> list:
    return Restorer(gan_checkpoint).generate(substrate, t, sample_count, rng)


def evaluate_inversion(cp: ModelCheckpoint, substrates: list, samples_per_class: int,
                       rng: np.random.Generator) -> np.ndarray:
    """Mean victim probability of class i on outputs generated for one-hot e_i, per attacked class."""
    r = Restorer(cp)
    n = r.cfg.n
    means = np.zeros(n)
    for i in range(n):
        t = np.zeros(n, np.float32)
        t[i] = 1
        outs = []
        for k in range(samples_per_class):
            outs += r.generate(substrates[k % len(substrates)], t, 1, rng)
        means[i] = r.target_probabilities(outs)[:, i].mean()
    return means
