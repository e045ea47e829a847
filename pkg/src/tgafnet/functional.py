"""Differentiable tensor operations.

All feature maps are ``(N, C, H, W)``. Each function computes its forward
result with numpy and attaches a backward closure to the output tensor.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .autograd import Tensor
from .errors import DimensionError


def _require_4d(x: Tensor, what: str) -> None:
    if x.data.ndim != 4:
        raise DimensionError(f"{what} must be 4-D (N, C, H, W)", x.shape)


# ---------------------------------------------------------------------------
# convolution


def _im2col(xp: np.ndarray, k: int, stride: int, dilation: int, ho: int, wo: int) -> np.ndarray:
    n, c = xp.shape[:2]
    cols = np.empty((n, c, k, k, ho, wo), dtype=xp.dtype)
    for i in range(k):
        y0 = i * dilation
        for j in range(k):
            x0 = j * dilation
            cols[:, :, i, j] = xp[:, :, y0:y0 + stride * (ho - 1) + 1:stride, x0:x0 + stride * (wo - 1) + 1:stride]
    return cols.reshape(n, c * k * k, ho * wo)


def _col2im(cols: np.ndarray, shape: tuple, k: int, stride: int, dilation: int, ho: int, wo: int) -> np.ndarray:
    n, c, hp, wp = shape
    cols = cols.reshape(n, c, k, k, ho, wo)
    out = np.zeros(shape, dtype=cols.dtype)
    for i in range(k):
        y0 = i * dilation
        for j in range(k):
            x0 = j * dilation
            out[:, :, y0:y0 + stride * (ho - 1) + 1:stride, x0:x0 + stride * (wo - 1) + 1:stride] += cols[:, :, i, j]
    return out


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride: int = 1,
           padding: int = 0, dilation: int = 1) -> Tensor:
    """2-D cross-correlation with zero padding.

    ``weight`` is ``(Cout, Cin, K, K)`` and ``bias`` is ``(Cout,)``. Output
    spatial size is ``(H + 2*padding - dilation*(K-1) - 1) // stride + 1``.
    """
    _require_4d(x, "conv2d input")
    if weight.data.ndim != 4 or weight.shape[2] != weight.shape[3]:
        raise DimensionError("conv2d weight must be (Cout, Cin, K, K) with a square kernel", weight.shape)
    n, cin, h, w = x.shape
    cout, wcin, k, _ = weight.shape
    if wcin != cin:
        raise DimensionError("conv2d weight Cin does not match input channels", x.shape, weight.shape)
    if bias is not None and bias.shape != (cout,):
        raise DimensionError("conv2d bias must be (Cout,)", bias.shape, weight.shape)
    if stride < 1 or padding < 0 or dilation < 1:
        raise ValueError(f"invalid conv2d geometry stride={stride} padding={padding} dilation={dilation}")
    span = dilation * (k - 1) + 1
    ho = (h + 2 * padding - span) // stride + 1
    wo = (w + 2 * padding - span) // stride + 1
    if ho < 1 or wo < 1:
        raise DimensionError("conv2d kernel larger than padded input", x.shape, weight.shape)

    fast = k == 1 and stride == 1 and padding == 0
    if fast:
        xp = x.data
        cols = x.data.reshape(n, cin, h * w)
    else:
        xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
        cols = _im2col(xp, k, stride, dilation, ho, wo)
    w2 = weight.data.reshape(cout, -1)
    out = np.matmul(w2, cols)
    if bias is not None:
        out += bias.data[:, None]
    out = out.reshape(n, cout, ho, wo)
    padded_shape = xp.shape

    def backward_fn(g):
        g2 = g.reshape(n, cout, ho * wo)
        gx = gw = gb = None
        if x.requires_grad:
            if fast:
                gx = np.matmul(w2.T, g2).reshape(x.shape)
            elif stride == 1 and cout < cin and padding <= span - 1:
                # transposed convolution: correlate the padded gradient with the flipped kernel
                q = span - 1 - padding
                gp = np.pad(g, ((0, 0), (0, 0), (q, q), (q, q))) if q else g
                wt = weight.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3).reshape(cin, -1)
                gx = np.matmul(wt, _im2col(gp, k, 1, dilation, h, w)).reshape(x.shape)
            else:
                gcols = np.matmul(w2.T, g2)
                gxp = _col2im(gcols, padded_shape, k, stride, dilation, ho, wo)
                gx = gxp[:, :, padding:padding + h, padding:padding + w] if padding else gxp
        if weight.requires_grad:
            gw = np.matmul(g2, cols.transpose(0, 2, 1)).sum(axis=0).reshape(weight.shape)
        if bias is not None and bias.requires_grad:
            gb = g2.sum(axis=(0, 2))
        return gx, gw, gb

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor.from_op(out, "conv2d", parents, backward_fn)


# ---------------------------------------------------------------------------
# pointwise


def leaky_relu(x: Tensor, slope: float = 0.1) -> Tensor:
    """Elementwise ``max(x, slope*x)``; the derivative at 0 is taken as 1."""
    if not 0.0 <= slope < 1.0:
        raise ValueError(f"leaky_relu slope must lie in [0, 1), got {slope}")
    positive = x.data >= 0
    out = np.where(positive, x.data, x.data * x.data.dtype.type(slope))

    def backward_fn(g):
        return (np.where(positive, g, g * g.dtype.type(slope)),)

    return Tensor.from_op(out, "leaky_relu", (x,), backward_fn)


def relu(x: Tensor) -> Tensor:
    return leaky_relu(x, 0.0)


def sigmoid(x: Tensor) -> Tensor:
    out = 0.5 * (1.0 + np.tanh(0.5 * x.data))

    def backward_fn(g):
        return (g * out * (1.0 - out),)

    return Tensor.from_op(out.astype(x.dtype, copy=False), "sigmoid", (x,), backward_fn)


def _broadcast_kind(a: Tensor, b: Tensor) -> str:
    if a.shape == b.shape:
        return "same"
    if a.data.ndim == 4 and b.data.ndim == 4:
        if b.shape == (a.shape[0], a.shape[1], 1, 1):
            return "b_scale"
        if a.shape == (b.shape[0], b.shape[1], 1, 1):
            return "a_scale"
    raise DimensionError("operands are not broadcastable (only [N,C,1,1] scales are supported)", a.shape, b.shape)


def _reduce_to(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    return g.sum(axis=(2, 3), keepdims=True)


def add(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_kind(a, b)

    def backward_fn(g):
        return _reduce_to(g, a.shape), _reduce_to(g, b.shape)

    return Tensor.from_op(a.data + b.data, "add", (a, b), backward_fn)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_kind(a, b)

    def backward_fn(g):
        ga = _reduce_to(g * b.data, a.shape) if a.requires_grad else None
        gb = _reduce_to(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return Tensor.from_op(a.data * b.data, "mul", (a, b), backward_fn)


def elementwise(op: str, *args: Tensor) -> Tensor:
    """Dispatch by tag: ``add``, ``mul`` or ``sigmoid``."""
    table = {"add": add, "mul": mul, "sigmoid": sigmoid}
    if op not in table:
        raise ValueError(f"unknown elementwise op {op!r}")
    return table[op](*args)


def sum_all(x: Tensor) -> Tensor:
    """Sum of every element, as a single-element tensor."""

    def backward_fn(g):
        return (np.broadcast_to(g.reshape(-1)[0], x.shape).astype(x.dtype),)

    return Tensor.from_op(np.array([x.data.sum()], dtype=x.dtype), "sum", (x,), backward_fn)


# ---------------------------------------------------------------------------
# channel layout


def concat_channels(parts: Sequence[Tensor]) -> Tensor:
    parts = list(parts)
    if not parts:
        raise ValueError("concat_channels needs at least one tensor")
    for p in parts:
        _require_4d(p, "concat_channels part")
    if len(parts) == 1:
        return parts[0]
    ref = parts[0].shape
    for p in parts[1:]:
        if (p.shape[0], p.shape[2], p.shape[3]) != (ref[0], ref[2], ref[3]):
            raise DimensionError("concat_channels parts disagree on N/H/W", ref, p.shape)
    bounds = np.cumsum([0] + [p.shape[1] for p in parts])

    def backward_fn(g):
        return tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(parts)))

    return Tensor.from_op(np.concatenate([p.data for p in parts], axis=1), "concat", parts, backward_fn)


def slice_channels(x: Tensor, start: int, stop: int) -> Tensor:
    def backward_fn(g):
        full = np.zeros(x.shape, dtype=g.dtype)
        full[:, start:stop] = g
        return (full,)

    return Tensor.from_op(x.data[:, start:stop], "slice_channels", (x,), backward_fn)


def split_channels(x: Tensor, parts: int) -> list[Tensor]:
    _require_4d(x, "split_channels input")
    c = x.shape[1]
    if parts < 1 or c % parts:
        raise DimensionError(f"cannot split C={c} channels into parts={parts}", x.shape)
    if parts == 1:
        return [x]
    step = c // parts
    return [slice_channels(x, i * step, (i + 1) * step) for i in range(parts)]


# ---------------------------------------------------------------------------
# spatial


def global_avg_pool(x: Tensor) -> Tensor:
    _require_4d(x, "global_avg_pool input")
    h, w = x.shape[2:]

    def backward_fn(g):
        return (np.broadcast_to(g / (h * w), x.shape).astype(x.dtype),)

    return Tensor.from_op(x.data.mean(axis=(2, 3), keepdims=True), "global_avg_pool", (x,), backward_fn)


def upsample_nearest(x: Tensor, factor: int = 2) -> Tensor:
    _require_4d(x, "upsample input")
    n, c, h, w = x.shape
    out = np.repeat(np.repeat(x.data, factor, axis=2), factor, axis=3)

    def backward_fn(g):
        out = g[:, :, ::factor, ::factor].copy()
        for i in range(factor):
            for j in range(factor):
                if i or j:
                    out += g[:, :, i::factor, j::factor]
        return (out,)

    return Tensor.from_op(out, "upsample_nearest", (x,), backward_fn)


def crop(x: Tensor, height: int, width: int) -> Tensor:
    """Keep the top-left ``height x width`` window."""
    _require_4d(x, "crop input")
    if height > x.shape[2] or width > x.shape[3]:
        raise DimensionError("crop window exceeds input", x.shape, (height, width))
    if (height, width) == x.shape[2:]:
        return x

    def backward_fn(g):
        full = np.zeros(x.shape, dtype=g.dtype)
        full[:, :, :height, :width] = g
        return (full,)

    return Tensor.from_op(x.data[:, :, :height, :width], "crop", (x,), backward_fn)


# ---------------------------------------------------------------------------
# bilinear sampling
#
# Shared by bilinear_sample and the deformable convolution. ``planes`` is
# (N, G, c, H, W); every group g reads its c planes at positions ys/xs of
# shape (N, G, P). Neighbours outside the plane contribute zero.

_CORNERS = ((0, 0), (0, 1), (1, 0), (1, 1))


class BilinearContext:
    __slots__ = ("shape", "index", "weights", "values", "ay", "ax")


def bilinear_gather(planes: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> tuple[np.ndarray, BilinearContext]:
    n, g, c, h, w = planes.shape
    p = ys.shape[-1]
    y0f = np.floor(ys)
    x0f = np.floor(xs)
    ay = (ys - y0f).astype(planes.dtype)
    ax = (xs - x0f).astype(planes.dtype)
    with np.errstate(invalid="ignore"):
        # non-finite coordinates keep NaN weights, so they still poison the output
        y0 = y0f.astype(np.int64)
        x0 = x0f.astype(np.int64)
    rows = []
    for dy in (0, 1):
        yc = y0 + dy
        rows.append(((yc >= 0) & (yc < h), np.clip(yc, 0, h - 1) * w))
    cols = []
    for dx in (0, 1):
        xc = x0 + dx
        cols.append(((xc >= 0) & (xc < w), np.clip(xc, 0, w - 1)))
    # linear offset of each (n, g, channel) plane inside the flattened input
    base = (np.arange(n * g, dtype=np.int64).reshape(n, g, 1, 1) * c
            + np.arange(c, dtype=np.int64).reshape(1, 1, c, 1)) * (h * w)
    flat = planes.reshape(-1)
    wy = (1 - ay, ay)
    wx = (1 - ax, ax)
    out = np.zeros((n, g, c, p), dtype=planes.dtype)
    ctx = BilinearContext()
    ctx.shape = planes.shape
    ctx.index, ctx.weights, ctx.values = [], [], []
    for dy, dx in _CORNERS:
        vrow, yoff = rows[dy]
        vcol, xoff = cols[dx]
        valid = vrow & vcol
        lin = base + (yoff + xoff)[:, :, None, :]
        vals = np.take(flat, lin)
        if c == 1:
            vals *= valid[:, :, None, :]
        else:
            vals = np.where(valid[:, :, None, :], vals, 0)
        cw = wy[dy] * wx[dx] * valid
        out += vals * cw[:, :, None, :]
        ctx.index.append(lin)
        ctx.weights.append(cw)
        ctx.values.append(vals)
    ctx.ay, ctx.ax = ay, ax
    return out, ctx


def bilinear_scatter(ctx: BilinearContext, grad: np.ndarray, need_planes: bool = True,
                     need_coords: bool = True) -> tuple:
    """Backward of :func:`bilinear_gather` given ``grad`` of shape (N, G, c, P)."""
    gplanes = gy = gx = None
    if need_planes:
        size = int(np.prod(ctx.shape))
        gplanes = np.zeros(size, dtype=np.float64)
        for lin, cw in zip(ctx.index, ctx.weights):
            contrib = grad * cw[:, :, None, :]
            gplanes += np.bincount(lin.reshape(-1), weights=contrib.reshape(-1), minlength=size)
        gplanes = gplanes.astype(grad.dtype).reshape(ctx.shape)
    if need_coords:
        v00, v01, v10, v11 = ctx.values
        ay = ctx.ay[:, :, None, :]
        ax = ctx.ax[:, :, None, :]
        dvdy = (1 - ax) * (v10 - v00) + ax * (v11 - v01)
        dvdx = (1 - ay) * (v01 - v00) + ay * (v11 - v10)
        gy = (grad * dvdy).sum(axis=2)
        gx = (grad * dvdx).sum(axis=2)
    return gplanes, gy, gx


def bilinear_sample(feature: Tensor, coords: Tensor) -> Tensor:
    """Sample every channel of ``feature`` at fractional positions.

    ``coords`` is ``(N, 2, Ho, Wo)`` holding (y, x) pixel positions; the
    result is ``(N, C, Ho, Wo)``. Differentiable in both arguments.
    """
    _require_4d(feature, "bilinear_sample feature")
    _require_4d(coords, "bilinear_sample coords")
    n, c, h, w = feature.shape
    if coords.shape[0] != n or coords.shape[1] != 2:
        raise DimensionError("coords must be (N, 2, Ho, Wo)", feature.shape, coords.shape)
    if np.isnan(coords.data).any():
        raise ValueError("bilinear_sample coordinates contain NaN")
    ho, wo = coords.shape[2:]
    ys = coords.data[:, 0].reshape(n, 1, ho * wo)
    xs = coords.data[:, 1].reshape(n, 1, ho * wo)
    vals, ctx = bilinear_gather(feature.data.reshape(n, 1, c, h, w), ys, xs)

    def backward_fn(g):
        gp, gy, gx = bilinear_scatter(ctx, g.reshape(n, 1, c, ho * wo), feature.requires_grad, coords.requires_grad)
        gfeat = gp.reshape(feature.shape) if gp is not None else None
        gcoords = None
        if gy is not None:
            gcoords = np.stack([gy.reshape(n, ho, wo), gx.reshape(n, ho, wo)], axis=1)
        return gfeat, gcoords

    return Tensor.from_op(vals.reshape(n, c, ho, wo), "bilinear_sample", (feature, coords), backward_fn)
