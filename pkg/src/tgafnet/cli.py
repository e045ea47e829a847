"""Batch command-line interface.

Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numerical
failure. Every error prints a single ``error: ...`` line on stderr.
"""

from __future__ import annotations

import argparse
import re
import sys
import time
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import gradcheck
from .data import PatchSampler, synthetic_degrade, window
from .errors import (CheckpointFormatError, ConfigurationError, DataFormatError, DimensionError,
                     NumericalError)
from .metrics import delta_report
from .model import ModelConfig, build_model
from .train import SMOKE_MODEL, SMOKE_TRAIN, TrainConfig, load_checkpoint, train_loop
from .videoio import VideoSequence, read_yuv420, write_yuv420

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

RAW_PATTERN = re.compile(r"^(?P<name>.+)_(?P<w>\d+)x(?P<h>\d+)\.yuv$")


class UsageError(Exception):
    def __init__(self, message: str, usage: str = ""):
        super().__init__(message)
        self.usage = usage


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message, self.format_usage().strip())


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def _strength(text: str) -> int:
    value = int(text)
    if not 1 <= value <= 5:
        raise argparse.ArgumentTypeError(f"strength must be in 1..5, got {text}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tgafnet", description="Compressed-video enhancement toolkit.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("degrade", help="apply the blockwise DCT compression proxy to a raw I420 file")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--width", type=_positive_int, required=True)
    p.add_argument("--height", type=_positive_int, required=True)
    p.add_argument("--strength", type=_strength, required=True)

    p = sub.add_parser("train", help="train a model on raw/LQ sequence pairs")
    p.add_argument("--data-dir", required=True)
    p.add_argument("--config", help="key=value file; command-line flags take precedence")
    p.add_argument("--out-ckpt", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--smoke", action="store_true", help="desk-scale profile (C=16, L=1, 64px, batch 4)")
    p.add_argument("--iters", type=int, help="override total_iters")
    p.add_argument("--log-file", help="also write the iter=/loss= records here")

    p = sub.add_parser("enhance", help="enhance the luma of an I420 file with a checkpoint")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--width", type=_positive_int, required=True)
    p.add_argument("--height", type=_positive_int, required=True)
    p.add_argument("--ckpt", required=True)

    p = sub.add_parser("eval", help="report PSNR/SSIM and the enhancement gain")
    p.add_argument("--raw", required=True)
    p.add_argument("--degraded", required=True)
    p.add_argument("--enhanced")
    p.add_argument("--width", type=_positive_int, required=True)
    p.add_argument("--height", type=_positive_int, required=True)

    p = sub.add_parser("gradcheck", help="run the finite-difference gradient suites")
    p.add_argument("--f64", action="store_true", help="check in 64-bit precision (tolerance 1e-4)")
    p.add_argument("--seeds", type=_positive_int, default=5)
    return parser


# ---------------------------------------------------------------------------
# configuration


_MODEL_KEYS = {f.name for f in fields(ModelConfig)}
_TRAIN_KEYS = {f.name for f in fields(TrainConfig)}
_DATA_KEYS = {"strength"}


def read_config_file(path) -> dict[str, str]:
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _MODEL_KEYS | _TRAIN_KEYS | _DATA_KEYS:
            raise ConfigurationError(f"{path}:{lineno}: unknown key {key!r}")
        values[key] = value
    return values


def _coerce(template, key: str, text: str):
    current = getattr(template, key)
    if isinstance(current, tuple):
        return tuple(int(v) for v in text.split(","))
    if isinstance(current, bool):
        return text.lower() in ("1", "true", "yes")
    if isinstance(current, int):
        return int(text)
    return float(text)


def resolve_training_config(args) -> tuple[ModelConfig, TrainConfig, int]:
    model_kw, train_kw = {}, {}
    if args.smoke:
        model_kw.update(SMOKE_MODEL)
        train_kw.update(SMOKE_TRAIN)
    strength = 3
    if args.config:
        template_m, template_t = ModelConfig(), TrainConfig()
        for key, text in read_config_file(args.config).items():
            try:
                if key in _MODEL_KEYS:
                    model_kw[key] = _coerce(template_m, key, text)
                elif key in _TRAIN_KEYS:
                    train_kw[key] = _coerce(template_t, key, text)
                else:
                    strength = int(text)
            except ValueError as exc:
                raise ConfigurationError(f"bad value for {key}: {text!r}") from exc
    if args.seed is not None:
        train_kw["seed"] = args.seed
    if args.iters is not None:
        train_kw["total_iters"] = args.iters
    return ModelConfig(**model_kw), TrainConfig(**train_kw), strength


def discover_pairs(data_dir, strength: int) -> list[tuple[list[np.ndarray], list[np.ndarray]]]:
    """Find ``<name>_<W>x<H>.yuv`` raw files and their optional ``.lq.yuv`` companions.

    Raw files without a companion are degraded with the compression proxy.
    """
    data_dir = Path(data_dir)
    if not data_dir.is_dir():
        raise DataFormatError(f"{data_dir} is not a directory")
    pairs = []
    for path in sorted(data_dir.iterdir()):
        if path.name.endswith(".lq.yuv"):
            continue
        m = RAW_PATTERN.match(path.name)
        if not m:
            continue
        w, h = int(m["w"]), int(m["h"])
        raw = read_yuv420(path, w, h).luma()
        lq_path = path.with_name(path.name[:-len(".yuv")] + ".lq.yuv")
        if lq_path.exists():
            lq = read_yuv420(lq_path, w, h).luma()
            if len(lq) != len(raw):
                raise DataFormatError(f"{lq_path}: {len(lq)} frames, raw has {len(raw)}")
        else:
            lq = [f.astype(np.float32) for f in synthetic_degrade(raw, strength)]
        pairs.append((lq, raw))
    if not pairs:
        raise DataFormatError(f"no <name>_<W>x<H>.yuv sequences found in {data_dir}")
    return pairs


# ---------------------------------------------------------------------------
# commands


def cmd_degrade(args) -> int:
    seq = read_yuv420(args.input, args.width, args.height)
    degraded = synthetic_degrade([p.astype(np.float64) / 255.0 for p in seq.y], args.strength)
    write_yuv420(seq.with_luma(degraded), args.out)
    return EXIT_OK


def cmd_train(args) -> int:
    model_cfg, train_cfg, strength = resolve_training_config(args)
    pairs = discover_pairs(args.data_dir, strength)
    sampler = PatchSampler(pairs, train_cfg.patch_size, train_cfg.batch_size, train_cfg.seed)
    model = build_model(model_cfg, seed=train_cfg.seed)
    log_file = open(args.log_file, "w") if args.log_file else None

    def log(line: str) -> None:
        print(line, flush=True)
        if log_file:
            log_file.write(line + "\n")

    start = time.perf_counter()
    try:
        ckpt = train_loop(model, sampler, train_cfg, checkpoint_path=args.out_ckpt, log=log)
    finally:
        if log_file:
            log_file.close()
    print(f"elapsed={time.perf_counter() - start:.1f}s iterations={ckpt.iteration}", file=sys.stderr)
    return EXIT_OK


def enhance_sequence(model, frames: list[np.ndarray]) -> list[np.ndarray]:
    out = []
    for k in range(len(frames)):
        y = model.forward(window(frames, k).stack()[None])
        out.append(y.data[0, 0])
    return out


def cmd_enhance(args) -> int:
    seq = read_yuv420(args.input, args.width, args.height)
    model = load_checkpoint(args.ckpt).model()
    write_yuv420(seq.with_luma(enhance_sequence(model, seq.luma())), args.out)
    return EXIT_OK


def _luma64(seq: VideoSequence) -> list[np.ndarray]:
    return [p.astype(np.float64) / 255.0 for p in seq.y]


def cmd_eval(args) -> int:
    raw = _luma64(read_yuv420(args.raw, args.width, args.height))
    degraded = _luma64(read_yuv420(args.degraded, args.width, args.height))
    enhanced = _luma64(read_yuv420(args.enhanced, args.width, args.height)) if args.enhanced else None
    print(delta_report(raw, degraded, enhanced).format())
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    results = gradcheck.run_all(range(args.seeds), float64=args.f64)
    for r in results:
        print(r.format())
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    if failed:
        print(f"error: {len(failed)} gradient checks failed", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


COMMANDS = {"degrade": cmd_degrade, "train": cmd_train, "enhance": cmd_enhance,
            "eval": cmd_eval, "gradcheck": cmd_gradcheck}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        if exc.usage:
            print(exc.usage, file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataFormatError, CheckpointFormatError, DimensionError, OSError) as exc:
        print(f"error: {exc}".replace("\n", " "), file=sys.stderr)
        return EXIT_DATA


def run() -> None:
    sys.exit(main())


if __name__ == "__main__":
    run()
