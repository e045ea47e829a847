"""Deformable convolution with grouped per-sample offsets.

Offset layout: for deformable group ``g`` and kernel sample ``s`` (row-major
over the K x K grid) channels ``2*(g*K*K + s)`` and ``2*(g*K*K + s) + 1``
hold the (dy, dx) displacement. Input channel ``i`` belongs to group
``i // (Cin // groups)``. Stride is 1 and padding ``(K - 1) // 2``, so the
spatial size is preserved. No modulation mask.
"""

from __future__ import annotations

import numpy as np

from .autograd import Tensor
from .errors import ConfigurationError, DimensionError
from .functional import bilinear_gather, bilinear_scatter


def offset_channels(kernel_size: int, deform_groups: int) -> int:
    """Number of offset channels a DCN with this geometry consumes."""
    return 2 * deform_groups * kernel_size * kernel_size


def _base_grid(k: int, h: int, w: int, dtype) -> tuple[np.ndarray, np.ndarray]:
    r = (k - 1) // 2
    sy, sx = np.divmod(np.arange(k * k), k)
    gy = np.arange(h, dtype=dtype)[None, :, None] + (sy - r).astype(dtype)[:, None, None]
    gx = np.arange(w, dtype=dtype)[None, None, :] + (sx - r).astype(dtype)[:, None, None]
    return np.broadcast_to(gy, (k * k, h, w)), np.broadcast_to(gx, (k * k, h, w))


def dcn_forward(x: Tensor, offsets: Tensor, weight: Tensor, bias: Tensor | None, deform_groups: int) -> Tensor:
    """Deformable convolution.

    out[n, co, y, x] = bias[co] + sum over ci, s of
    weight[co, ci, s] * sample(x[n, ci], y + sy - r + dy, x + sx - r + dx)

    The returned tensor is differentiable with respect to the input, the
    offsets, the weight and the bias.
    """
    if x.data.ndim != 4 or weight.data.ndim != 4:
        raise DimensionError("dcn input and weight must be 4-D", x.shape, weight.shape)
    n, cin, h, w = x.shape
    cout, wcin, k, k2 = weight.shape
    if k != k2 or k % 2 == 0:
        raise ConfigurationError(f"deformable kernel must be square with odd size, got {k}x{k2}")
    if wcin != cin:
        raise DimensionError("dcn weight Cin does not match input channels", x.shape, weight.shape)
    if deform_groups < 1 or cin % deform_groups:
        raise ConfigurationError(f"Cin={cin} is not divisible by deform_groups={deform_groups}")
    expected = offset_channels(k, deform_groups)
    if offsets.data.ndim != 4 or offsets.shape[1] != expected:
        raise ConfigurationError(
            f"offset field has {offsets.shape[1] if offsets.data.ndim == 4 else offsets.shape} channels, "
            f"expected 2*{deform_groups}*{k}^2 = {expected}")
    if (offsets.shape[0], offsets.shape[2], offsets.shape[3]) != (n, h, w):
        raise DimensionError("offset field must match input N/H/W", x.shape, offsets.shape)
    if bias is not None and bias.shape != (cout,):
        raise DimensionError("dcn bias must be (Cout,)", bias.shape, weight.shape)

    g = deform_groups
    cg = cin // g
    kk = k * k
    p = kk * h * w
    by, bx = _base_grid(k, h, w, x.dtype)
    off = offsets.data.reshape(n, g, kk, 2, h, w)
    ys = (by + off[:, :, :, 0]).reshape(n, g, p)
    xs = (bx + off[:, :, :, 1]).reshape(n, g, p)
    sampled, ctx = bilinear_gather(x.data.reshape(n, g, cg, h, w), ys, xs)
    # (N, G, cg, K*K*H*W) -> (N, Cin*K*K, H*W), matching weight (Cout, Cin, K, K)
    cols = sampled.reshape(n, cin * kk, h * w)
    w2 = weight.data.reshape(cout, cin * kk)
    out = np.matmul(w2, cols)
    if bias is not None:
        out += bias.data[:, None]
    out = out.reshape(n, cout, h, w)

    def backward_fn(grad):
        g2 = grad.reshape(n, cout, h * w)
        gx = goff = gw = gb = None
        if x.requires_grad or offsets.requires_grad:
            gcols = np.matmul(w2.T, g2).reshape(n, g, cg, p)
            gp, gy, gxs = bilinear_scatter(ctx, gcols, x.requires_grad, offsets.requires_grad)
            if gp is not None:
                gx = gp.reshape(x.shape)
            if gy is not None:
                goff = np.stack([gy.reshape(n, g, kk, h, w), gxs.reshape(n, g, kk, h, w)], axis=3)
                goff = goff.reshape(offsets.shape)
        if weight.requires_grad:
            gw = np.matmul(g2, cols.transpose(0, 2, 1)).sum(axis=0).reshape(weight.shape)
        if bias is not None and bias.requires_grad:
            gb = g2.sum(axis=(0, 2))
        return gx, goff, gw, gb

    parents = (x, offsets, weight) if bias is None else (x, offsets, weight, bias)
    return Tensor.from_op(out, "dcn", parents, backward_fn, deform_groups=deform_groups, kernel_size=k)
