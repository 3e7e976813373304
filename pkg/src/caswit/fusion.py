"""Stage-wise HR-to-LR cross-attention fusion.

HR tokens query LR keys/values; the result is injected through a residual,
optionally scaled by a learned ``tanh`` gate, then refined by a residual MLP::

    H' = X_hr + gamma * MHA(LN(X_hr) Wq, LN(X_lr) Wk, LN(X_lr) Wv)
    H~ = H' + MLP(H')
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .netpbm import write_pgm
from .nn import MLP, LayerNorm, Linear, Module, param
from .swin import ConfigError
from .tensor import Tensor, UsageError


@dataclass
class FusionConfig:
    enabled_stages: set = field(default_factory=lambda: {1, 2, 3, 4})
    gated: bool = False
    heads: list = field(default_factory=lambda: [1, 2, 4, 8])
    mlp_ratio: float = 4.0

    def __post_init__(self):
        self.enabled_stages = set(self.enabled_stages)
        bad = self.enabled_stages - {1, 2, 3, 4}
        if bad:
            raise ConfigError(f"fusion stages must be within 1..4, got {sorted(bad)}")

    @property
    def active(self) -> bool:
        return bool(self.enabled_stages)


def _tokens(x: Tensor) -> Tensor:
    b, h, w, c = x.shape
    return x.reshape(b, h * w, c)


class CrossAttention(Module):
    """Multi-head attention from HR token queries to LR token keys/values."""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator):
        if dim % heads:
            raise ConfigError(f"{dim} channels not divisible by {heads} heads")
        self.dim, self.heads = dim, heads
        self.norm_q = LayerNorm(dim)
        self.norm_kv = LayerNorm(dim)
        self.q = Linear(dim, dim, rng)
        self.k = Linear(dim, dim, rng)
        self.v = Linear(dim, dim, rng)
        self.proj = Linear(dim, dim, rng)

    def _split(self, x: Tensor) -> Tensor:
        b, n, c = x.shape
        return T.permute(x.reshape(b, n, self.heads, c // self.heads), (0, 2, 1, 3))

    def weights(self, x_hr: Tensor, x_lr: Tensor) -> Tensor:
        """Attention probabilities ``(B, heads, N_hr, N_lr)`` for token inputs."""
        q = self._split(self.q(self.norm_q(x_hr)))
        k = self._split(self.k(self.norm_kv(x_lr)))
        hd = self.dim // self.heads
        return T.softmax_lastdim(T.scale(q @ T.transpose(k, -1, -2), hd ** -0.5))

    def forward(self, x_hr: Tensor, x_lr: Tensor) -> Tensor:
        """Token inputs ``(B, N_hr, C)`` and ``(B, N_lr, C)``; returns ``(B, N_hr, C)``."""
        if x_hr.shape[-1] != self.dim or x_lr.shape[-1] != self.dim:
            raise ConfigError(
                f"cross-attention expects {self.dim} channels, got HR {x_hr.shape[-1]} / LR {x_lr.shape[-1]}"
            )
        attn = self.weights(x_hr, x_lr)
        v = self._split(self.v(self.norm_kv(x_lr)))
        b, n, c = x_hr.shape
        out = T.permute(attn @ v, (0, 2, 1, 3)).reshape(b, n, c)
        return self.proj(out)


class FusionBlock(Module):
    def __init__(self, dim: int, heads: int, gated: bool, mlp_ratio: float, rng: np.random.Generator):
        self.attn = CrossAttention(dim, heads, rng)
        self.mlp = MLP(dim, int(dim * mlp_ratio), rng)
        self.gated = gated
        self.gate = param(np.zeros(())) if gated else None
        # Ablation hook: replace A_s by zeros while keeping the MLP branch.
        self.zero_attention = False

    def forward(self, x_hr: Tensor, x_lr: Tensor) -> Tensor:
        """Feature maps ``(B, H, W, C)`` / ``(B, H', W', C)`` -> fused HR map."""
        b, h, w, c = x_hr.shape
        if self.zero_attention:
            inj = Tensor(np.zeros((b, h * w, c), dtype=x_hr.dtype))
        else:
            inj = self.attn(_tokens(x_hr), _tokens(x_lr))
        if self.gated:
            inj = inj * T.tanh(self.gate)
        hp = _tokens(x_hr) + inj
        out = hp + self.mlp(hp)
        return out.reshape(b, h, w, c)


class CrossFusion(Module):
    """One fusion block per enabled stage; other stages pass HR features through unchanged."""

    def __init__(self, channels: list, cfg: FusionConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.blocks = [
            FusionBlock(channels[s], cfg.heads[s], cfg.gated, cfg.mlp_ratio, rng) if (s + 1) in cfg.enabled_stages else None
            for s in range(4)
        ]

    def fuse_stage(self, x_hr: Tensor, x_lr: Tensor | None, stage: int) -> Tensor:
        """``stage`` is 1-based."""
        blk = self.blocks[stage - 1]
        if blk is None:
            return x_hr
        if x_hr.shape[-1] != x_lr.shape[-1]:
            raise ConfigError(f"stage {stage}: HR has {x_hr.shape[-1]} channels, LR has {x_lr.shape[-1]}")
        return blk(x_hr, x_lr)

    def forward(self, x_hr: Tensor, x_lr: Tensor | None, stage: int) -> Tensor:
        return self.fuse_stage(x_hr, x_lr, stage)


def export_attention_maps(block: FusionBlock, x_hr: Tensor, x_lr: Tensor, query_index: int) -> np.ndarray:
    """Head-averaged attention row of one HR query reshaped onto the LR token grid.

    Inputs are single feature maps ``(H, W, C)`` (or batch of one).
    """
    if x_hr.ndim == 3:
        x_hr = x_hr.reshape(1, *x_hr.shape)
    if x_lr.ndim == 3:
        x_lr = x_lr.reshape(1, *x_lr.shape)
    _, h, w, _ = x_hr.shape
    _, hl, wl, _ = x_lr.shape
    if not 0 <= query_index < h * w:
        raise UsageError(f"query index {query_index} outside HR grid of {h * w} tokens")
    with T.no_grad():
        attn = block.attn.weights(_tokens(x_hr), _tokens(x_lr)).data
    row = attn[0, :, query_index, :].mean(axis=0)
    return row.reshape(hl, wl)


def write_attention_map(path, amap: np.ndarray, stage: int, query_pixel: tuple) -> None:
    """Write the map as 8-bit PGM (max weight -> 255) plus a ``.txt`` sidecar line."""
    path = Path(path)
    peak = float(amap.max())
    img = np.zeros(amap.shape, dtype=np.uint8) if peak <= 0 else np.round(amap / peak * 255).astype(np.uint8)
    write_pgm(path, img)
    hl, wl = amap.shape
    path.with_suffix(".txt").write_text(
        f"stage={stage} query_pixel={query_pixel[0]},{query_pixel[1]} lr_grid={hl}x{wl}\n", encoding="utf-8"
    )
