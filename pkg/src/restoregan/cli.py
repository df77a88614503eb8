"""Command-line entry point: ``restoregan <command> [flags]``.

Exit codes: 0 success, 1 verification failure, 2 usage or config error,
3 training divergence. Every command validates its inputs before it creates
any output file.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import data, training
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import CheckpointError, ImageIOError, StructuralError, TrainingDivergence

EXIT_OK = 0
EXIT_VERIFY = 1
EXIT_USAGE = 2
EXIT_DIVERGED = 3

CHECKPOINT_NAME = "gan.ckpt"
LOG_NAME = "log.csv"

log = logging.getLogger("restoregan")


class UsageError(Exception):
    """Bad flag values caught after argparse (exit code 2)."""


def _load_config(path, steps_flag: str | None = None, steps: int | None = None) -> cfgmod.TrainConfig:
    cfg = cfgmod.load(path) if path else cfgmod.TrainConfig()
    if steps is not None:
        cfg = cfg.with_overrides(**{steps_flag: steps})
    return cfg


def _check_output_parent(path: Path) -> None:
    """Refuse early when the nearest existing ancestor of ``path`` is not writable."""
    probe = path
    while not probe.exists():
        if probe.parent == probe:
            break
        probe = probe.parent
    if probe.exists() and (not probe.is_dir() or not _writable(probe)):
        raise PermissionError(f"cannot write under {probe}")


def _writable(path: Path) -> bool:
    return os.access(path, os.W_OK | os.X_OK)


# ---------------------------------------------------------------- commands

def cmd_synth_data(args) -> int:
    if args.count < 0:
        raise UsageError("--count must be >= 0")
    size = args.size or (64 if args.kind == "substrates" else 32)
    if size < 8:
        raise UsageError("--size must be >= 8")
    out = Path(args.out)
    _check_output_parent(out)
    rng = np.random.default_rng(np.random.SeedSequence(args.seed))
    if args.kind == "substrates":
        samples = data.synth_substrates(args.count, size, rng)
    else:
        samples = data.synth_labeled_shapes(args.count, args.n_total, size, rng)
    data.ensure_writable_dir(out)
    manifest = data.write_manifest(out, samples)
    print(f"wrote {len(samples)} {args.kind} images of {size}x{size} to {manifest}")
    return EXIT_OK


def _holdout_split(samples: list, every: int = 5) -> tuple[list, list]:
    held = samples[every - 1::every]
    train = [s for i, s in enumerate(samples) if i % every != every - 1]
    return train, held


def cmd_train_classifier(args) -> int:
    cfg = _load_config(args.config, "classifier_steps", args.steps)
    samples = data.read_manifest(args.data)
    if args.heldout:
        train_set, heldout = samples, data.read_manifest(args.heldout)
    else:
        train_set, heldout = _holdout_split(samples)
    if not train_set:
        raise StructuralError("classifier dataset is empty")
    out = Path(args.out)
    _check_output_parent(out)
    result = training.train_classifier(cfg, train_set, heldout)
    save_checkpoint(result.checkpoint, out)
    print(f"train_accuracy={result.train_accuracy:.4f} heldout_accuracy={result.heldout_accuracy:.4f}")
    print(f"wrote {out}")
    return EXIT_OK


def _quarter_means(reports: list, name: str) -> tuple[float, float]:
    vals = np.array([getattr(r, name) for _, r in reports])
    q = max(len(vals) // 4, 1)
    return float(vals[:q].mean()), float(vals[-q:].mean())


def cmd_train_gan(args) -> int:
    cfg = _load_config(args.config, "steps", args.steps)
    victim = load_checkpoint(args.victim)
    training.load_victim(victim, cfg)
    substrates = data.read_manifest(args.substrates)
    if not substrates:
        raise StructuralError("substrate manifest is empty")
    S = cfg.substrate_size
    if any(s.pixels.shape != (3, S, S) for s in substrates):
        raise StructuralError(f"substrates must be {S}x{S} RGB to match substrate_size")
    out = Path(args.out)
    _check_output_parent(out)
    out.mkdir(parents=True, exist_ok=True)
    result = training.train_gan(cfg, victim, substrates, out / CHECKPOINT_NAME, out / LOG_NAME)
    if result.reports:
        (s0, first), (s1, last) = result.reports[0], result.reports[-1]
        print(f"first step {s0}: {first}")
        print(f"last step {s1}: {last}")
        lo, hi = _quarter_means(result.reports, "l_p")
        print(f"l_p first-quarter mean {lo:.4f}, last-quarter mean {hi:.4f}")
    print(f"wrote {out / CHECKPOINT_NAME} and {out / LOG_NAME}")
    return EXIT_OK


def parse_classes(text: str, n: int) -> np.ndarray:
    parts = [p.strip() for p in text.split(",") if p.strip()]
    try:
        idx = [int(p) for p in parts]
    except ValueError:
        raise UsageError(f"--classes must be comma-separated integers, got {text!r}") from None
    if len(set(idx)) != len(idx):
        raise UsageError("--classes lists an index twice")
    if len(idx) > training.MAX_MIXED_AT_GENERATION:
        raise UsageError(f"at most {training.MAX_MIXED_AT_GENERATION} classes can be mixed, got {len(idx)}")
    bad = [i for i in idx if not 0 <= i < n]
    if bad:
        raise UsageError(f"class indices must lie in [0, {n}), got {bad}")
    t = np.zeros(n, np.float32)
    t[idx] = 1
    return t


def cmd_generate(args) -> int:
    if args.count < 1:
        raise UsageError("--count must be >= 1")
    cp = load_checkpoint(args.checkpoint)
    restorer = training.Restorer(cp)
    t = parse_classes(args.classes, restorer.cfg.n)
    substrate = data.load_image(args.substrate)
    S = restorer.cfg.substrate_size
    if substrate.pixels.shape != (3, S, S):
        raise StructuralError(f"substrate must be {S}x{S}, got {substrate.pixels.shape[2]}x{substrate.pixels.shape[1]}")
    out = Path(args.out)
    _check_output_parent(out)
    rng = np.random.default_rng(np.random.SeedSequence(args.seed))
    samples = restorer.generate(substrate, t, args.count, rng)
    probs = restorer.target_probabilities(samples)
    data.ensure_writable_dir(out)
    header = " ".join(f"class{i}" for i in range(restorer.cfg.n))
    print(f"sample {header}")
    for k, (sample, p) in enumerate(zip(samples, probs)):
        name = f"sample_{k:03d}.png"
        data.save_image(sample, out / name)
        print(name, " ".join(f"{v:.4f}" for v in p))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from . import gradcheck_suite

    results = gradcheck_suite.run_suite(args.seed)
    print(gradcheck_suite.format_table(results))
    failed = [r.name for r in results if not r.ok]
    if failed:
        print("gradient check failed for: " + ", ".join(failed), file=sys.stderr)
        return EXIT_VERIFY
    print(f"all {len(results)} checks below {gradcheck_suite.TOLERANCE:g}")
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    p = argparse.ArgumentParser(prog="restoregan", description="Restore a classifier's training distribution with a conditional GAN.",
                formatter_class=fmt)
    p.add_argument("--log-level", default="warning", choices=["debug", "info", "warning", "error"],
                   help="logging verbosity")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth-data", help="write a procedural dataset", formatter_class=fmt)
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--kind", choices=["substrates", "shapes"], default="substrates", help="dataset kind")
    s.add_argument("--count", type=int, default=256, help="images (substrates) or images per class (shapes)")
    s.add_argument("--size", type=int, default=None, help="image side; 64 for substrates, 32 for shapes")
    s.add_argument("--n-total", type=int, default=len(data.SHAPE_CLASSES), help="shape classes to draw")
    s.add_argument("--seed", type=int, default=0, help="random seed")
    s.set_defaults(func=cmd_synth_data)

    s = sub.add_parser("train-classifier", help="train the victim classifier", formatter_class=fmt)
    s.add_argument("--config", default=None, help="config file (defaults when omitted)")
    s.add_argument("--data", required=True, help="labelled manifest or its directory")
    s.add_argument("--heldout", default=None, help="held-out manifest; otherwise every 5th image is held out")
    s.add_argument("--out", required=True, help="checkpoint path")
    s.add_argument("--steps", type=int, default=None, help="override classifier_steps")
    s.set_defaults(func=cmd_train_classifier)

    s = sub.add_parser("train-gan", help="train the restoration GAN against a victim", formatter_class=fmt)
    s.add_argument("--config", default=None, help="config file (defaults when omitted)")
    s.add_argument("--victim", required=True, help="victim classifier checkpoint")
    s.add_argument("--substrates", required=True, help="substrate manifest or its directory")
    s.add_argument("--out", required=True, help=f"output directory for {CHECKPOINT_NAME} and {LOG_NAME}")
    s.add_argument("--steps", type=int, default=None, help="override steps")
    s.set_defaults(func=cmd_train_gan)

    s = sub.add_parser("generate", help="sample images from a trained GAN", formatter_class=fmt)
    s.add_argument("--checkpoint", required=True, help="GAN checkpoint")
    s.add_argument("--substrate", required=True, help="substrate PNG")
    s.add_argument("--classes", default="", help="comma-separated target indices; empty for the null category")
    s.add_argument("--count", type=int, default=4, help="samples to draw")
    s.add_argument("--seed", type=int, default=0, help="random seed")
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=cmd_generate)

    s = sub.add_parser("gradcheck", help="finite-difference check of every op and loss", formatter_class=fmt)
    s.add_argument("--seed", type=int, default=0, help="random seed for the check inputs")
    s.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level.upper()), format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except TrainingDivergence as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (UsageError, StructuralError, CheckpointError, ImageIOError, FileNotFoundError,
            PermissionError, IsADirectoryError, NotADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
