"""UPerNet-lite decoder: pyramid pooling on the deepest stage, FPN top-down fusion, 1x1 classifier."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .nn import Conv3x3, Linear, Module
from .swin import ConfigError
from .tensor import DimensionError, Tensor


@dataclass
class DecoderConfig:
    num_classes: int
    fpn_channels: int = 64
    ppm_bins: list = field(default_factory=lambda: [1, 2])

    def __post_init__(self):
        if self.num_classes < 1:
            raise ConfigError("num_classes must be >= 1")
        bins = list(self.ppm_bins)
        if not bins or any(b < 1 for b in bins) or any(a >= b for a, b in zip(bins, bins[1:])):
            raise ConfigError(f"ppm_bins must be positive and strictly increasing, got {bins}")


class PPM(Module):
    def __init__(self, d_in: int, d_out: int, bins: list, rng: np.random.Generator):
        self.bins = list(bins)
        self.branches = [Linear(d_in, d_out, rng) for _ in self.bins]
        self.bottleneck = Linear(d_in + len(self.bins) * d_out, d_out, rng)

    def forward(self, x: Tensor) -> Tensor:
        _, h, w, _ = x.shape
        outs = [x]
        for b, conv in zip(self.bins, self.branches):
            if h % b or w % b:
                raise ConfigError(f"PPM bin {b} does not divide stage-4 map {h}x{w}")
            pooled = T.avg_pool2d(x, (h // b, w // b))
            outs.append(T.resize_bilinear(T.gelu(conv(pooled)), (h, w)))
        return T.gelu(self.bottleneck(T.concat(outs, axis=-1)))


class UPerNetLite(Module):
    """Consumes four stage maps ``(B, H_s, W_s, C_s)`` and returns logits at ``out_size``."""

    def __init__(self, channels: list, cfg: DecoderConfig, rng: np.random.Generator):
        self.cfg = cfg
        f = cfg.fpn_channels
        self.ppm = PPM(channels[3], f, cfg.ppm_bins, rng)
        self.laterals = [Linear(c, f, rng) for c in channels[:3]]
        self.smooth = [Conv3x3(f, f, rng) for _ in range(3)]
        self.fuse = Linear(4 * f, f, rng)
        self.classifier = Linear(f, cfg.num_classes, rng)
        # Instrumentation: number of forward passes through this decoder.
        self.calls = 0

    def fpn_decode(self, feats: list) -> Tensor:
        if len(feats) != 4:
            raise DimensionError(f"decoder needs 4 stage maps, got {len(feats)}")
        for s in range(3):
            h, w = feats[s].shape[1:3]
            if feats[s + 1].shape[1:3] != (h // 2, w // 2):
                raise DimensionError(f"stage {s + 2} map {feats[s + 1].shape[1:3]} is not half of {(h, w)}")
        levels = [T.gelu(lat(x)) for lat, x in zip(self.laterals, feats[:3])]
        levels.append(self.ppm(feats[3]))
        for i in (2, 1, 0):
            h, w = levels[i].shape[1:3]
            levels[i] = levels[i] + T.resize_bilinear(levels[i + 1], (h, w))
        outs = [T.gelu(conv(levels[i])) for i, conv in enumerate(self.smooth)]
        outs.append(levels[3])
        size = outs[0].shape[1:3]
        outs = [outs[0]] + [T.resize_bilinear(o, size) for o in outs[1:]]
        return T.gelu(self.fuse(T.concat(outs, axis=-1)))

    def head(self, fused: Tensor, out_size: tuple) -> Tensor:
        return T.resize_bilinear(self.classifier(fused), out_size)

    def forward(self, feats: list, out_size: tuple) -> Tensor:
        self.calls += 1
        return self.head(self.fpn_decode(feats), out_size)
