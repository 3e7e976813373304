"""Hierarchical windowed-attention encoder stream (Swin-style).

All feature maps are channels-last ``(B, H, W, C)``. One :class:`SwinStream`
is instantiated per input branch; stage ``s`` runs at ``H / (patch * 2**(s-1))``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .nn import MLP, LayerNorm, Linear, Module, param
from .tensor import DimensionError, Tensor

MASK_LOGIT = -1e9


class ConfigError(ValueError):
    pass


@dataclass
class StreamConfig:
    patch_size: int = 4
    window: int = 4
    depths: list = field(default_factory=lambda: [1, 1, 1, 1])
    channels: list = field(default_factory=lambda: [32, 64, 128, 256])
    heads: list = field(default_factory=lambda: [1, 2, 4, 8])
    mlp_ratio: float = 4.0
    in_chans: int = 3

    def __post_init__(self):
        if not (len(self.depths) == len(self.channels) == len(self.heads) == 4):
            raise ConfigError("depths, channels and heads need one entry per stage (4)")
        for s in range(3):
            if self.channels[s + 1] != 2 * self.channels[s]:
                raise ConfigError(f"channels must double per stage, got {self.channels}")
        for c, h in zip(self.channels, self.heads):
            if c % h:
                raise ConfigError(f"{c} channels not divisible by {h} heads")

    @property
    def total_stride(self) -> int:
        return self.patch_size * 8

    def stage_sizes(self, h: int, w: int) -> list:
        return [(h // (self.patch_size * 2**s), w // (self.patch_size * 2**s)) for s in range(4)]

    def check_input(self, h: int, w: int) -> None:
        if h % self.total_stride or w % self.total_stride:
            raise DimensionError(f"input {h}x{w} not divisible by total stride {self.total_stride}")
        for hs, ws in self.stage_sizes(h, w):
            for n in (hs, ws):
                if n > self.window and n % self.window:
                    raise DimensionError(f"stage map {hs}x{ws} not divisible by window {self.window}")


def preset(name: str) -> StreamConfig:
    """Named backbone schedules. ``toy`` is the desk-scale default."""
    if name == "toy":
        return StreamConfig()
    if name == "tiny":
        return StreamConfig(4, 8, [2, 2, 6, 2], [96, 192, 384, 768], [3, 6, 12, 24])
    if name == "base":
        return StreamConfig(4, 8, [2, 2, 18, 2], [128, 256, 512, 1024], [4, 8, 16, 32])
    raise ConfigError(f"unknown model scale {name!r}")


# ---------------------------------------------------------------------------
# window bookkeeping
# ---------------------------------------------------------------------------


def window_partition(x: Tensor, window) -> Tensor:
    """``(..., H, W, C) -> (..., nWin, wh*ww, C)``, windows and tokens row-major."""
    wh, ww = (window, window) if isinstance(window, int) else window
    *lead, h, w, c = x.shape
    if h % wh or w % ww:
        raise DimensionError(f"map {h}x{w} not divisible by window {wh}x{ww}")
    nl = len(lead)
    y = x.reshape(*lead, h // wh, wh, w // ww, ww, c)
    y = T.permute(y, tuple(range(nl)) + (nl, nl + 2, nl + 1, nl + 3, nl + 4))
    return y.reshape(*lead, (h // wh) * (w // ww), wh * ww, c)


def window_reverse(windows: Tensor, window, h: int, w: int) -> Tensor:
    wh, ww = (window, window) if isinstance(window, int) else window
    *lead, _, _, c = windows.shape
    nl = len(lead)
    y = windows.reshape(*lead, h // wh, w // ww, wh, ww, c)
    y = T.permute(y, tuple(range(nl)) + (nl, nl + 2, nl + 1, nl + 3, nl + 4))
    return y.reshape(*lead, h, w, c)


def relative_position_index(wh: int, ww: int, window: int) -> np.ndarray:
    """Index into a ``(2*window-1)**2`` bias table for every token pair of a ``wh x ww`` window."""
    coords = np.stack(np.meshgrid(np.arange(wh), np.arange(ww), indexing="ij")).reshape(2, -1)
    rel = coords[:, :, None] - coords[:, None, :]
    return (rel[0] + window - 1) * (2 * window - 1) + (rel[1] + window - 1)


def shift_region_ids(h: int, w: int, window: int, shift: int) -> np.ndarray:
    """Label each position of the cyclically shifted map by its pre-shift region."""
    ids = np.zeros((h, w), dtype=np.int64)
    cuts = (slice(0, -window), slice(-window, -shift), slice(-shift, None))
    n = 0
    for hs in cuts:
        for ws in cuts:
            ids[hs, ws] = n
            n += 1
    return ids


def shift_attention_mask(h: int, w: int, window: int, shift: int) -> np.ndarray:
    """Additive ``(nWin, T, T)`` mask blocking pairs from different pre-shift regions."""
    ids = shift_region_ids(h, w, window, shift)
    win = ids.reshape(h // window, window, w // window, window).transpose(0, 2, 1, 3)
    win = win.reshape(-1, window * window)
    same = win[:, :, None] == win[:, None, :]
    return np.where(same, 0.0, MASK_LOGIT)


# ---------------------------------------------------------------------------
# modules
# ---------------------------------------------------------------------------


class PatchEmbed(Module):
    def __init__(self, patch: int, in_chans: int, dim: int, rng: np.random.Generator):
        self.patch = patch
        self.proj = Linear(patch * patch * in_chans, dim, rng)
        self.norm = LayerNorm(dim)

    def patchify(self, image: Tensor) -> Tensor:
        p = self.patch
        *lead, h, w, c = image.shape
        if h % p or w % p:
            raise DimensionError(f"image {h}x{w} not divisible by patch size {p}")
        nl = len(lead)
        y = image.reshape(*lead, h // p, p, w // p, p, c)
        y = T.permute(y, tuple(range(nl)) + (nl, nl + 2, nl + 1, nl + 3, nl + 4))
        return y.reshape(*lead, h // p, w // p, p * p * c)

    def project(self, image: Tensor) -> Tensor:
        """Linear patch projection before normalisation."""
        return self.proj(self.patchify(image))

    def forward(self, image: Tensor) -> Tensor:
        return self.norm(self.project(image))


class WindowAttention(Module):
    def __init__(self, dim: int, heads: int, window: int, rng: np.random.Generator):
        if dim % heads:
            raise ConfigError(f"{dim} channels not divisible by {heads} heads")
        self.dim, self.heads, self.window = dim, heads, window
        self.q = Linear(dim, dim, rng)
        self.k = Linear(dim, dim, rng)
        self.v = Linear(dim, dim, rng)
        self.proj = Linear(dim, dim, rng)
        self.rel_bias = param(np.zeros(((2 * window - 1) ** 2, heads)))
        self.record = False
        self.last_attn: np.ndarray | None = None

    def _split(self, x: Tensor) -> Tensor:
        *lead, n, c = x.shape
        hd = c // self.heads
        nl = len(lead)
        y = x.reshape(*lead, n, self.heads, hd)
        return T.permute(y, tuple(range(nl)) + (nl + 1, nl, nl + 2))

    def forward(self, windows: Tensor, wh: int, ww: int, mask: np.ndarray | None = None) -> Tensor:
        """``windows`` is ``(B, nWin, wh*ww, C)``; ``mask`` is additive ``(nWin, T, T)``."""
        b, nw, n, c = windows.shape
        if n != wh * ww:
            raise DimensionError(f"token count {n} != window {wh}x{ww}")
        hd = c // self.heads
        q = self._split(self.q(windows))
        k = self._split(self.k(windows))
        v = self._split(self.v(windows))
        logits = T.scale(q @ T.transpose(k, -1, -2), hd ** -0.5)
        idx = relative_position_index(wh, ww, self.window)
        bias = T.permute(T.take(self.rel_bias, idx), (2, 0, 1))
        logits = logits + bias
        if mask is not None:
            logits = logits + Tensor(mask[:, None], dtype=logits.dtype)
        attn = T.softmax_lastdim(logits)
        if self.record:
            self.last_attn = attn.data
        out = T.permute(attn @ v, (0, 1, 3, 2, 4)).reshape(b, nw, n, c)
        return self.proj(out)


class SwinBlock(Module):
    """Pre-norm windowed attention + MLP, optionally with cyclically shifted windows."""

    def __init__(self, dim: int, heads: int, window: int, shift: bool, mlp_ratio: float, rng: np.random.Generator):
        self.window, self.shift = window, shift
        self.norm1 = LayerNorm(dim)
        self.attn = WindowAttention(dim, heads, window, rng)
        self.norm2 = LayerNorm(dim)
        self.mlp = MLP(dim, int(dim * mlp_ratio), rng)

    def window_for(self, h: int, w: int) -> tuple:
        """Effective window and shift for a map size; maps no larger than the window form one window."""
        if h <= self.window and w <= self.window:
            return (h, w), 0
        if h % self.window or w % self.window:
            raise DimensionError(f"map {h}x{w} not divisible by window {self.window}")
        return (self.window, self.window), (self.window // 2 if self.shift else 0)

    def attend(self, x: Tensor) -> Tensor:
        b, h, w, c = x.shape
        (wh, ww), s = self.window_for(h, w)
        y = self.norm1(x)
        mask = None
        if s:
            y = T.roll(y, (-s, -s), (1, 2))
            mask = shift_attention_mask(h, w, self.window, s)
        y = window_partition(y, (wh, ww))
        y = self.attn(y, wh, ww, mask)
        y = window_reverse(y, (wh, ww), h, w)
        if s:
            y = T.roll(y, (s, s), (1, 2))
        return y

    def forward(self, x: Tensor) -> Tensor:
        x = x + self.attend(x)
        return x + self.mlp(self.norm2(x))


class PatchMerge(Module):
    def __init__(self, dim: int, rng: np.random.Generator):
        self.norm = LayerNorm(4 * dim)
        self.reduction = Linear(4 * dim, 2 * dim, rng, bias=False)

    @staticmethod
    def gather(x: Tensor) -> Tensor:
        """Concatenate each 2x2 neighbourhood as [(0,0), (1,0), (0,1), (1,1)] along channels."""
        *lead, h, w, c = x.shape
        if h % 2 or w % 2:
            raise DimensionError(f"patch merging needs even dims, got {h}x{w}")
        nl = len(lead)
        y = x.reshape(*lead, h // 2, 2, w // 2, 2, c)
        y = T.permute(y, tuple(range(nl)) + (nl, nl + 2, nl + 3, nl + 1, nl + 4))
        return y.reshape(*lead, h // 2, w // 2, 4 * c)

    def forward(self, x: Tensor) -> Tensor:
        return self.reduction(self.norm(self.gather(x)))


class Stage(Module):
    def __init__(self, cfg: StreamConfig, s: int, rng: np.random.Generator):
        dim = cfg.channels[s]
        self.merge = PatchMerge(cfg.channels[s - 1], rng) if s > 0 else None
        self.blocks = [
            SwinBlock(dim, cfg.heads[s], cfg.window, i % 2 == 1, cfg.mlp_ratio, rng)
            for i in range(cfg.depths[s])
        ]

    def forward(self, x: Tensor) -> Tensor:
        if self.merge is not None:
            x = self.merge(x)
        for blk in self.blocks:
            x = blk(x)
        return x


class SwinStream(Module):
    def __init__(self, cfg: StreamConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.patch_embed = PatchEmbed(cfg.patch_size, cfg.in_chans, cfg.channels[0], rng)
        self.stages = [Stage(cfg, s, rng) for s in range(4)]

    def embed(self, image: Tensor) -> Tensor:
        self.cfg.check_input(image.shape[-3], image.shape[-2])
        return self.patch_embed(image)

    def run_stage(self, s: int, x: Tensor) -> Tensor:
        """Stage ``s`` in 0..3 (patch merge first for s > 0)."""
        return self.stages[s](x)

    def encode(self, image: Tensor) -> list:
        """Stage-wise features ``[X_1, X_2, X_3, X_4]``."""
        x = self.embed(image)
        feats = []
        for s in range(4):
            x = self.run_stage(s, x)
            feats.append(x)
        return feats

