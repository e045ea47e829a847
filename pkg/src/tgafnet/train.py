"""Charbonnier loss, Adam, checkpoints and the training loop."""

from __future__ import annotations

import io
import logging
import math
import struct
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Callable, Iterable, Iterator

import numpy as np

from .autograd import Tensor, backward
from .errors import CheckpointFormatError, ConfigurationError, NumericalError, UnsupportedVersionError
from .model import ModelConfig, TgafModel, build_model

logger = logging.getLogger(__name__)

MAGIC = b"TGAF"
FORMAT_VERSION = 1


@dataclass
class TrainConfig:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 32
    total_iters: int = 300_000
    charbonnier_eps: float = 1e-3
    seed: int = 0
    patch_size: int = 128
    checkpoint_every: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not self.lr > 0:
            raise ConfigurationError(f"lr must be positive, got {self.lr}")
        for name in ("beta1", "beta2"):
            b = getattr(self, name)
            if not 0 <= b < 1:
                raise ConfigurationError(f"{name} must lie in [0, 1), got {b}")
        for name in ("adam_eps", "charbonnier_eps"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"{name} must be positive")
        if self.batch_size < 1 or self.total_iters < 0 or self.patch_size < 1 or self.checkpoint_every < 0:
            raise ConfigurationError("batch_size, patch_size must be >= 1; total_iters, checkpoint_every >= 0")


# Desk-scale profile used by the overfit acceptance run.
SMOKE_MODEL = dict(channels=16, num_sdcb=1)
SMOKE_TRAIN = dict(batch_size=4, total_iters=2000, patch_size=64)


def smoke_profile(seed: int = 0) -> tuple[ModelConfig, TrainConfig]:
    return ModelConfig(**SMOKE_MODEL), TrainConfig(seed=seed, **SMOKE_TRAIN)


# ---------------------------------------------------------------------------
# loss


def charbonnier_loss(pred: Tensor, target, eps: float = 1e-3) -> Tensor:
    """mean(sqrt((pred - target)^2 + eps^2)); differentiable at pred == target."""
    target_data = target.data if isinstance(target, Tensor) else np.asarray(target)
    if pred.shape != target_data.shape:
        raise ValueError(f"charbonnier_loss shape mismatch: {pred.shape} vs {target_data.shape}")
    diff = pred.data - target_data.astype(pred.dtype, copy=False)
    eps_t = pred.dtype.type(eps)
    sq = diff * diff
    root = np.sqrt(sq + eps_t * eps_t)
    # sqrt(d^2 + e^2) = e + d^2 / (sqrt(d^2 + e^2) + e): exact at d = 0, no cancellation for small d
    value = np.array([eps_t + (sq / (root + eps_t)).mean()], dtype=pred.dtype)
    count = diff.size

    def backward_fn(g):
        return (g.reshape(-1)[0] * diff / root / count,)

    return Tensor.from_op(value, "charbonnier", (pred,), backward_fn)


# ---------------------------------------------------------------------------
# optimiser


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(params: dict[str, Tensor], state: AdamState, cfg: TrainConfig) -> AdamState:
    """One bias-corrected Adam update applied in place to ``params``."""
    for name, p in params.items():
        if p.grad is None:
            raise ValueError(f"parameter {name!r} has no gradient")
    state.t += 1
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        g = p.grad
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        state.m[name] = m.astype(p.dtype, copy=False)
        state.v[name] = v.astype(p.dtype, copy=False)
        m_hat = m / c1
        v_hat = v / c2
        p.data = (p.data - cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)).astype(p.dtype, copy=False)
    return state


# ---------------------------------------------------------------------------
# checkpoints


@dataclass
class Checkpoint:
    config: ModelConfig
    iteration: int
    params: dict[str, np.ndarray]
    adam: AdamState | None = None

    def model(self) -> TgafModel:
        model = build_model(self.config, seed=0)
        model.load_state_dict(self.params)
        return model


def _config_block(ckpt: Checkpoint) -> bytes:
    lines = []
    for key, value in ckpt.config.to_dict().items():
        if isinstance(value, list):
            value = ",".join(str(v) for v in value)
        lines.append(f"{key}={value!r}" if isinstance(value, float) else f"{key}={value}")
    lines.append(f"iteration={ckpt.iteration}")
    if ckpt.adam is not None:
        lines.append(f"adam_t={ckpt.adam.t}")
    return ("\n".join(lines) + "\n").encode("utf-8")


def _parse_config_block(text: str) -> tuple[ModelConfig, int, int | None]:
    values = {}
    for line in text.splitlines():
        if not line:
            continue
        if "=" not in line:
            raise CheckpointFormatError(f"malformed config line {line!r}")
        key, value = line.split("=", 1)
        values[key] = value
    try:
        iteration = int(values.pop("iteration"))
        adam_t = int(values.pop("adam_t")) if "adam_t" in values else None
        cfg = ModelConfig(
            groups=int(values.pop("groups")),
            channels=int(values.pop("channels")),
            num_sdcb=int(values.pop("num_sdcb")),
            kernel_sizes=tuple(int(k) for k in values.pop("kernel_sizes").split(",")),
            leaky_slope=float(values.pop("leaky_slope")),
            rcab_reduction=int(values.pop("rcab_reduction")),
            unet_levels=int(values.pop("unet_levels")),
        )
    except (KeyError, ValueError, ConfigurationError) as exc:
        raise CheckpointFormatError(f"invalid config block: {exc}") from exc
    if values:
        raise CheckpointFormatError(f"unknown config keys {sorted(values)}")
    return cfg, iteration, adam_t


def _tensor_records(ckpt: Checkpoint) -> list[tuple[str, np.ndarray]]:
    records = list(ckpt.params.items())
    if ckpt.adam is not None:
        records += [(f"adam.m.{k}", v) for k, v in ckpt.adam.m.items()]
        records += [(f"adam.v.{k}", v) for k, v in ckpt.adam.v.items()]
    return records


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    """Write the binary checkpoint format.

    Layout (little-endian): b"TGAF", u32 version, u32 config length, UTF-8
    key=value config block, u32 tensor count, then per tensor: u32 name
    length, name bytes, u32 rank, u32 dims, float32 data.
    """
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", FORMAT_VERSION))
    block = _config_block(ckpt)
    buf.write(struct.pack("<I", len(block)))
    buf.write(block)
    records = _tensor_records(ckpt)
    buf.write(struct.pack("<I", len(records)))
    for name, arr in records:
        arr = np.asarray(arr)
        encoded = name.encode("utf-8")
        buf.write(struct.pack("<I", len(encoded)))
        buf.write(encoded)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(buf.getvalue())
    tmp.replace(path)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointFormatError(f"truncated checkpoint: needed {n} bytes at offset {self.pos}, "
                                        f"file has {len(self.data)}")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def load_checkpoint(path) -> Checkpoint:
    r = _Reader(Path(path).read_bytes())
    if r.take(4) != MAGIC:
        raise CheckpointFormatError(f"{path}: bad magic, not a TGAF checkpoint")
    version = r.u32()
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"{path}: unsupported checkpoint version {version} "
                                      f"(this build reads version {FORMAT_VERSION})")
    try:
        text = r.take(r.u32()).decode("utf-8")
    except UnicodeDecodeError as exc:
        raise CheckpointFormatError(f"{path}: config block is not UTF-8") from exc
    cfg, iteration, adam_t = _parse_config_block(text)
    tensors: dict[str, np.ndarray] = {}
    for _ in range(r.u32()):
        name = r.take(r.u32()).decode("utf-8")
        rank = r.u32()
        dims = struct.unpack(f"<{rank}I", r.take(4 * rank))
        count = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(r.take(4 * count), dtype="<f4").astype(np.float32).reshape(dims)
        tensors[name] = arr
    if r.pos != len(r.data):
        raise CheckpointFormatError(f"{path}: {len(r.data) - r.pos} trailing bytes after last tensor")

    params = {k: v for k, v in tensors.items() if not k.startswith("adam.")}
    reference = build_model(cfg, seed=0)
    expected = dict(reference.named_parameters())
    if params.keys() != expected.keys():
        raise CheckpointFormatError(f"{path}: parameter names do not match the stored config")
    for name, p in expected.items():
        if params[name].shape != p.shape:
            raise CheckpointFormatError(f"{path}: {name} has dims {params[name].shape}, expected {p.shape}")
    adam = None
    if adam_t is not None:
        adam = AdamState(t=adam_t)
        for k, v in tensors.items():
            if k.startswith("adam.m."):
                adam.m[k[len("adam.m."):]] = v
            elif k.startswith("adam.v."):
                adam.v[k[len("adam.v."):]] = v
    return Checkpoint(cfg, iteration, params, adam)


def snapshot(model: TgafModel, iteration: int, adam: AdamState | None = None) -> Checkpoint:
    params = {k: v.astype(np.float32) for k, v in model.state_dict().items()}
    if adam is not None:
        adam = AdamState({k: v.astype(np.float32).copy() for k, v in adam.m.items()},
                         {k: v.astype(np.float32).copy() for k, v in adam.v.items()}, adam.t)
    return Checkpoint(model.config, iteration, params, adam)


# ---------------------------------------------------------------------------
# loop


def format_log(iteration: int, loss: float) -> str:
    return f"iter={iteration} loss={loss:.9g}"


def train_loop(model: TgafModel, batches: Iterable[tuple[np.ndarray, np.ndarray]], cfg: TrainConfig,
               checkpoint_path=None, log: Callable[[str], None] | None = None,
               state: AdamState | None = None, start_iter: int = 0) -> Checkpoint:
    """Run ``cfg.total_iters`` Adam steps on the Charbonnier loss.

    ``batches`` yields ``(lq, hq)`` arrays shaped (B, 7, h, w) and (B, 1, h, w).
    Each iteration appends an ``iter=<n> loss=<f>`` record through ``log``.
    """
    state = state or AdamState()
    params = dict(model.named_parameters())
    iterator: Iterator = iter(batches)
    for it in range(start_iter + 1, cfg.total_iters + 1):
        lq, hq = next(iterator)
        model.zero_grad()
        loss = charbonnier_loss(model.forward(lq), hq, cfg.charbonnier_eps)
        value = loss.item()
        if not math.isfinite(value):
            raise NumericalError(f"non-finite loss {value} at iteration {it}")
        backward(loss)
        adam_step(params, state, cfg)
        if log is not None:
            log(format_log(it, value))
        if checkpoint_path is not None and cfg.checkpoint_every and it % cfg.checkpoint_every == 0:
            save_checkpoint(snapshot(model, it, state), checkpoint_path)
    model.zero_grad()
    final = snapshot(model, max(cfg.total_iters, start_iter), state)
    if checkpoint_path is not None:
        save_checkpoint(final, checkpoint_path)
    return final
