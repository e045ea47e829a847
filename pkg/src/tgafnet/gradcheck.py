"""Finite-difference gradient checks for every differentiable operation.

Each check contracts the op output with a fixed random tensor R, so the
scalar loss is sum(out * R), then compares analytic gradients against
central differences. The error reported per argument is

    max|analytic - numeric| / max(max|analytic|, max|numeric|, 1e-10)
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import functional as F
from .autograd import Tensor, backward, float64_mode, get_default_dtype
from .deform import dcn_forward, offset_channels
from .train import charbonnier_loss


@dataclass
class CheckResult:
    name: str
    seed: int
    errors: dict[str, float]
    tolerance: float

    @property
    def max_error(self) -> float:
        return max(self.errors.values()) if self.errors else 0.0

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance

    def format(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        detail = " ".join(f"{k}={v:.2e}" for k, v in self.errors.items())
        return f"{status} {self.name} seed={self.seed} max_rel_err={self.max_error:.2e} ({detail})"


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(np.abs(analytic).max(), np.abs(numeric).max(), 1e-10)
    return float(np.abs(analytic - numeric).max() / scale)


def check_gradients(fn: Callable[..., Tensor], inputs: Sequence[np.ndarray], wrt: Sequence[int], *,
                    names: Sequence[str] | None = None, seed: int = 0, h: float | None = None,
                    scalar_output: bool = False) -> dict[str, float]:
    """Compare backward() with central differences for the arguments in ``wrt``.

    The analytic pass runs in the current default precision. Central
    differences are always taken in 64-bit so that the reference stays
    accurate next to kinks (leaky_relu at 0, bilinear cell borders).
    """
    dtype = get_default_dtype()
    if h is None:
        h = 1e-6
    rng = np.random.default_rng(seed + 7919)
    arrays = [np.array(a, dtype=dtype) for a in inputs]
    names = names or [f"arg{i}" for i in range(len(arrays))]

    probe = fn(*[Tensor(a, dtype=dtype) for a in arrays])
    weights = None if scalar_output else rng.standard_normal(probe.shape).astype(dtype)

    ref = [np.array(a, dtype=np.float64) for a in arrays]
    ref_weights = None if weights is None else weights.astype(np.float64)

    def loss_value(arrs):
        with float64_mode():
            out = fn(*[Tensor(a, dtype=np.float64) for a in arrs])
        return float(out.data.sum()) if ref_weights is None else float((out.data * ref_weights).sum())

    tensors = [Tensor(a, requires_grad=(i in wrt), dtype=dtype) for i, a in enumerate(arrays)]
    out = fn(*tensors)
    loss = out if weights is None else F.sum_all(F.mul(out, Tensor(weights, dtype=dtype)))
    backward(loss)

    errors = {}
    for i in wrt:
        analytic = tensors[i].grad if tensors[i].grad is not None else np.zeros_like(arrays[i])
        numeric = np.zeros(arrays[i].shape, dtype=np.float64)
        flat = ref[i].reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            plus = loss_value(ref)
            flat[j] = orig - h
            minus = loss_value(ref)
            flat[j] = orig
            numeric.reshape(-1)[j] = (plus - minus) / (2 * h)
        errors[names[i]] = relative_error(np.asarray(analytic, dtype=np.float64), numeric)
    return errors


# ---------------------------------------------------------------------------
# suites; each case builds random inputs from its seed


def _case_conv2d(rng):
    variant = rng.integers(3)
    stride, padding, dilation, k = [(1, 1, 1, 3), (2, 0, 1, 2), (1, 2, 2, 3)][variant]
    x = rng.standard_normal((2, 3, 6, 6))
    w = rng.standard_normal((4, 3, k, k))
    b = rng.standard_normal(4)
    return (lambda x, w, b: F.conv2d(x, w, b, stride, padding, dilation)), [x, w, b], [0, 1, 2], ["input", "weight", "bias"]


def _case_leaky_relu(rng):
    x = rng.standard_normal((2, 3, 4, 4))
    return (lambda x: F.leaky_relu(x, 0.1)), [x], [0], ["input"]


def _case_concat_split(rng):
    a = rng.standard_normal((2, 2, 3, 4))
    b = rng.standard_normal((2, 4, 3, 4))

    def fn(a, b):
        parts = F.split_channels(F.concat_channels([a, b]), 3)
        return F.concat_channels([F.mul(parts[2], parts[0]), parts[1]])

    return fn, [a, b], [0, 1], ["a", "b"]


def _case_add_mul(rng):
    a = rng.standard_normal((2, 3, 4, 5))
    b = rng.standard_normal((2, 3, 4, 5))
    s = rng.standard_normal((2, 3, 1, 1))
    return (lambda a, b, s: F.mul(F.add(a, b), s)), [a, b, s], [0, 1, 2], ["a", "b", "scale"]


def _case_sigmoid(rng):
    x = 3 * rng.standard_normal((2, 3, 4, 4))
    return F.sigmoid, [x], [0], ["input"]


def _case_global_avg_pool(rng):
    x = rng.standard_normal((2, 4, 5, 6))
    return F.global_avg_pool, [x], [0], ["input"]


def _case_upsample_crop(rng):
    x = rng.standard_normal((1, 2, 3, 4))
    return (lambda x: F.crop(F.upsample_nearest(x, 2), 5, 7)), [x], [0], ["input"]


def _case_bilinear_sample(rng):
    feat = rng.standard_normal((2, 3, 5, 6))
    coords = np.stack([rng.uniform(-1.5, 5.5, (2, 4, 4)), rng.uniform(-1.5, 6.5, (2, 4, 4))], axis=1)
    return F.bilinear_sample, [feat, coords], [0, 1], ["feature", "coords"]


def _case_dcn(rng):
    groups = int(rng.choice([1, 3]))
    k = 3
    x = rng.standard_normal((1, 3, 5, 5))
    off = rng.uniform(-1.8, 1.8, (1, offset_channels(k, groups), 5, 5))
    w = rng.standard_normal((2, 3, k, k))
    b = rng.standard_normal(2)
    return ((lambda x, o, w, b: dcn_forward(x, o, w, b, groups)), [x, off, w, b], [0, 1, 2, 3],
            ["input", "offsets", "weight", "bias"])


def _case_charbonnier(rng):
    target = rng.standard_normal((2, 1, 4, 4))
    pred = target + rng.standard_normal(target.shape) * 0.05
    pred.reshape(-1)[:5] = target.reshape(-1)[:5]  # include pred == target entries
    return ((lambda p, t: charbonnier_loss(p, t, 1e-3)), [pred, target], [0], ["pred"])


SUITES: dict[str, Callable] = {
    "conv2d": _case_conv2d,
    "leaky_relu": _case_leaky_relu,
    "concat_split": _case_concat_split,
    "add_mul": _case_add_mul,
    "sigmoid": _case_sigmoid,
    "global_avg_pool": _case_global_avg_pool,
    "upsample_crop": _case_upsample_crop,
    "bilinear_sample": _case_bilinear_sample,
    "dcn": _case_dcn,
    "charbonnier": _case_charbonnier,
}

TOLERANCE_F64 = 1e-4
TOLERANCE_F32 = 1e-3


def run_op_suite(name: str, seeds: Sequence[int] = range(5), float64: bool = True) -> list[CheckResult]:
    tol = TOLERANCE_F64 if float64 else TOLERANCE_F32
    results = []
    for seed in seeds:
        rng = np.random.default_rng(seed)
        fn, inputs, wrt, names = SUITES[name](rng)
        if float64:
            with float64_mode():
                errors = check_gradients(fn, inputs, wrt, names=names, seed=seed,
                                         scalar_output=(name == "charbonnier"))
        else:
            errors = check_gradients(fn, inputs, wrt, names=names, seed=seed,
                                     scalar_output=(name == "charbonnier"))
        results.append(CheckResult(name, seed, errors, tol))
    return results


def run_all(seeds: Sequence[int] = range(5), float64: bool = True) -> list[CheckResult]:
    results = []
    for name in SUITES:
        results.extend(run_op_suite(name, seeds, float64))
    return results
