"""TGAFNet: temporal group alignment and fusion for compressed-video enhancement.

Pipeline for a target frame I_k with a 7-frame window:

* three groups G_i = {I_k-i, I_k, I_k+i}, i = 1..3, each stacked as 3 channels;
* per group, a U-Net feature extractor, an offset convolution and a deformable
  convolution with kernel 1, 3 or 5 give the aligned features F1, F3, F5;
* F1/F3 and F3/F5 are fused pairwise, merged, refined by a residual channel
  attention block and re-aligned with a 1x1 deformable convolution;
* a head of convolutions interleaved with split dual-context blocks predicts
  a luma residual E_k, and the output is Y_k = E_k + I_k.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import functional as F
from .autograd import Tensor
from .deform import offset_channels
from .errors import ConfigurationError, DimensionError
from .nn import Conv2d, DeformConv2d, Module

# frame indices (within the 7-frame window) of G_1, G_2, G_3
GROUP_INDICES = ((2, 3, 4), (1, 3, 5), (0, 3, 6))
TARGET_INDEX = 3


@dataclass
class ModelConfig:
    groups: int = 3
    channels: int = 64
    num_sdcb: int = 3
    kernel_sizes: tuple[int, ...] = (1, 3, 5)
    leaky_slope: float = 0.1
    rcab_reduction: int = 16
    unet_levels: int = 3

    def __post_init__(self):
        self.kernel_sizes = tuple(int(k) for k in self.kernel_sizes)
        self.validate()

    def validate(self) -> None:
        if self.groups != 3:
            raise ConfigurationError(f"the 7-frame window defines exactly 3 groups, got groups={self.groups}")
        if len(self.kernel_sizes) != self.groups:
            raise ConfigurationError(f"need {self.groups} kernel sizes, got {self.kernel_sizes}")
        if any(k < 1 or k % 2 == 0 for k in self.kernel_sizes):
            raise ConfigurationError(f"deformable kernel sizes must be odd, got {self.kernel_sizes}")
        if self.channels < 2 or self.channels % 2:
            raise ConfigurationError(f"channels must be even for the SDCB split, got {self.channels}")
        if self.rcab_reduction < 1 or self.channels % self.rcab_reduction:
            raise ConfigurationError(
                f"channels={self.channels} not divisible by rcab_reduction={self.rcab_reduction}")
        if self.num_sdcb < 0:
            raise ConfigurationError(f"num_sdcb must be >= 0, got {self.num_sdcb}")
        if self.unet_levels < 1:
            raise ConfigurationError(f"unet_levels must be >= 1, got {self.unet_levels}")
        if not 0.0 <= self.leaky_slope < 1.0:
            raise ConfigurationError(f"leaky_slope must lie in [0, 1), got {self.leaky_slope}")

    @property
    def pad_multiple(self) -> int:
        return 2 ** self.unet_levels

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kernel_sizes"] = list(self.kernel_sizes)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


class UNet(Module):
    """Encoder-decoder feature extractor.

    Encoder: 3x3 conv to C, then ``levels - 1`` stride-2 2x2 convs doubling
    channels. Decoder: nearest upsampling and a 3x3 conv to C, concatenated
    with the same-scale encoder feature; a final 3x3 conv maps to C.
    """

    def __init__(self, cin: int, c: int, levels: int, slope: float, rng: np.random.Generator):
        widths = [c * 2 ** i for i in range(levels)]
        self.levels = levels
        self.slope = slope
        self.inc = Conv2d(cin, c, 3, rng)
        self.down = [Conv2d(widths[i - 1], widths[i], 2, rng, stride=2, padding=0) for i in range(1, levels)]
        up = []
        width = widths[-1]
        for i in range(levels - 2, -1, -1):
            up.append(Conv2d(width, c, 3, rng))
            width = c + widths[i]
        self.up = up
        self.out = Conv2d(width if levels > 1 else c, c, 3, rng)

    def forward(self, x: Tensor) -> Tensor:
        m = 2 ** self.levels
        if x.shape[2] % m or x.shape[3] % m:
            raise DimensionError(f"U-Net input H, W must be multiples of {m}", x.shape)
        skips = [F.leaky_relu(self.inc(x), self.slope)]
        for conv in self.down:
            skips.append(F.leaky_relu(conv(skips[-1]), self.slope))
        h = skips.pop()
        for conv in self.up:
            h = F.leaky_relu(conv(F.upsample_nearest(h, 2)), self.slope)
            h = F.concat_channels([h, skips.pop()])
        return self.out(h)


class IntraGFA(Module):
    """Intra-group feature alignment for one group of three frames."""

    def __init__(self, c: int, k: int, levels: int, slope: float, rng: np.random.Generator):
        self.kernel_size = k
        self.unet = UNet(3, c, levels, slope, rng)
        self.ocn_intra = Conv2d(c, offset_channels(k, 3), 3, rng, zero=True)
        self.dcn_intra = DeformConv2d(3, c, k, deform_groups=3, rng=rng)

    def offsets(self, f_group: Tensor) -> Tensor:
        return self.ocn_intra(self.unet(f_group))

    def forward(self, f_group: Tensor) -> Tensor:
        return self.dcn_intra(f_group, self.offsets(f_group))


class RCAB(Module):
    """Residual channel attention block: y = x + s * t."""

    def __init__(self, c: int, reduction: int, slope: float, rng: np.random.Generator):
        mid = max(1, c // reduction)
        self.slope = slope
        self.body1 = Conv2d(c, c, 3, rng)
        self.body2 = Conv2d(c, c, 3, rng)
        self.squeeze = Conv2d(c, mid, 1, rng)
        self.excite = Conv2d(mid, c, 1, rng)

    def attention(self, t: Tensor) -> Tensor:
        z = F.relu(self.squeeze(F.global_avg_pool(t)))
        return F.sigmoid(self.excite(z))

    def forward(self, x: Tensor) -> Tensor:
        t = self.body2(F.leaky_relu(self.body1(x), self.slope))
        return F.add(x, F.mul(t, self.attention(t)))


class InterGFF(Module):
    """Gradual fusion of the three aligned group features."""

    def __init__(self, c: int, reduction: int, slope: float, rng: np.random.Generator):
        self.slope = slope
        self.conv_13 = Conv2d(2 * c, c, 3, rng)
        self.conv_35 = Conv2d(2 * c, c, 3, rng)
        self.conv_merge = Conv2d(2 * c, c, 3, rng)
        self.rcab = RCAB(c, reduction, slope, rng)
        self.ocn_inter = Conv2d(c, offset_channels(1, c), 3, rng, zero=True)
        self.dcn_inter = DeformConv2d(c, c, 1, deform_groups=c, rng=rng)

    def fused(self, f1: Tensor, f3: Tensor, f5: Tensor) -> Tensor:
        for f in (f3, f5):
            if f.shape != f1.shape:
                raise DimensionError("InterGFF inputs must share shape", f1.shape, f.shape)
        f13 = F.leaky_relu(self.conv_13(F.concat_channels([f1, f3])), self.slope)
        f35 = F.leaky_relu(self.conv_35(F.concat_channels([f3, f5])), self.slope)
        merged = F.leaky_relu(self.conv_merge(F.concat_channels([f13, f35])), self.slope)
        return self.rcab(merged)

    def forward(self, f1: Tensor, f3: Tensor, f5: Tensor) -> Tensor:
        f_fus = self.fused(f1, f3, f5)
        return self.dcn_inter(f_fus, self.ocn_inter(f_fus))


class ContextModule(Module):
    """Two parallel 3x3 convolutions (dilation 1 and 2), summed."""

    def __init__(self, c: int, rng: np.random.Generator):
        self.conv_d1 = Conv2d(c, c, 3, rng, dilation=1)
        self.conv_d2 = Conv2d(c, c, 3, rng, dilation=2)

    def forward(self, x: Tensor) -> Tensor:
        return F.add(self.conv_d1(x), self.conv_d2(x))


class SDCB(Module):
    """Split dual-context block."""

    def __init__(self, c: int, slope: float, rng: np.random.Generator):
        if c % 2:
            raise ConfigurationError(f"SDCB needs an even channel count, got {c}")
        self.slope = slope
        self.cm1 = ContextModule(c // 2, rng)
        self.cm2 = ContextModule(c // 2, rng)
        self.fuse = Conv2d(c, c, 3, rng)

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[1] % 2:
            raise DimensionError("SDCB input needs an even channel count", x.shape)
        x1, x2 = F.split_channels(x, 2)
        x1p = F.leaky_relu(self.cm1(x1), self.slope)
        cf = F.add(x1p, x2)
        cfp = F.leaky_relu(self.cm2(cf), self.slope)
        return self.fuse(F.concat_channels([cfp, cf]))


class FeatureEnhancement(Module):
    """conv, then ``L`` x [SDCB, conv], then a 3x3 projection to one channel."""

    def __init__(self, c: int, num_sdcb: int, slope: float, rng: np.random.Generator):
        self.slope = slope
        self.convs = [Conv2d(c, c, 3, rng) for _ in range(num_sdcb + 1)]
        self.sdcbs = [SDCB(c, slope, rng) for _ in range(num_sdcb)]
        self.tail = Conv2d(c, 1, 3, rng)

    def forward(self, f: Tensor) -> Tensor:
        h = F.leaky_relu(self.convs[0](f), self.slope)
        for block, conv in zip(self.sdcbs, self.convs[1:]):
            h = F.leaky_relu(conv(block(h)), self.slope)
        return self.tail(h)


class TgafModel(Module):
    def __init__(self, config: ModelConfig, seed: int = 0):
        config.validate()
        self.config = config
        rng = np.random.default_rng(seed)
        c, s = config.channels, config.leaky_slope
        self.branches = [IntraGFA(c, k, config.unet_levels, s, rng) for k in config.kernel_sizes]
        self.fusion = InterGFF(c, config.rcab_reduction, s, rng)
        self.fe = FeatureEnhancement(c, config.num_sdcb, s, rng)

    @property
    def dtype(self) -> np.dtype:
        return self.fe.tail.weight.dtype

    def group_inputs(self, frames: Tensor) -> list[Tensor]:
        return [F.concat_channels([F.slice_channels(frames, i, i + 1) for i in idx]) for idx in GROUP_INDICES]

    def aligned_features(self, frames: Tensor) -> list[Tensor]:
        return [branch(g) for branch, g in zip(self.branches, self.group_inputs(frames))]

    def forward(self, frames) -> Tensor:
        """Enhance a batch of windows.

        ``frames`` is an array or tensor of shape (N, 7, H, W) with luma in
        [0, 1]; the result is the (N, 1, H, W) enhanced target frame.
        """
        data = frames.data if isinstance(frames, Tensor) else np.asarray(frames)
        if data.ndim == 3:
            data = data[None]
        if data.ndim != 4 or data.shape[1] != 7:
            raise DimensionError("expected a (N, 7, H, W) window batch", data.shape)
        n, _, h, w = data.shape
        m = self.config.pad_multiple
        ph, pw = -h % m, -w % m
        data = data.astype(self.dtype, copy=False)
        if ph or pw:
            mode = "reflect" if ph < h and pw < w else "symmetric"
            data = np.pad(data, ((0, 0), (0, 0), (0, ph), (0, pw)), mode=mode)
        x = Tensor(data, dtype=self.dtype)
        f1, f3, f5 = self.aligned_features(x)
        residual = self.fe(self.fusion(f1, f3, f5))
        residual = F.crop(residual, h, w)
        target = Tensor(data[:, TARGET_INDEX:TARGET_INDEX + 1, :h, :w], dtype=self.dtype)
        return F.add(residual, target)


def build_model(config: ModelConfig | None = None, seed: int = 0) -> TgafModel:
    """Fan-in scaled uniform init from ``seed``; offset convolutions start at zero."""
    return TgafModel(config or ModelConfig(), seed)


def forward(window, model: TgafModel) -> Tensor:
    """Enhance the target frame of one 7-frame window (a ``GoPWindow`` or array)."""
    frames = window.stack() if hasattr(window, "stack") else np.asarray(window)
    if frames.ndim != 3 or frames.shape[0] != 7:
        raise DimensionError("a window holds exactly 7 frames", frames.shape)
    return model.forward(frames[None])


def param_count(model: Module) -> int:
    return int(sum(p.data.size for p in model.parameters()))
