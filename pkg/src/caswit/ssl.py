"""Dual-stream masked-image-modelling pretraining.

HR stage-1 tokens are masked at random, LR tokens in a centred block; masked
positions carry a learned mask token. The fused HR stage-4 map is turned back
into pixels by a 1x1 conv to ``3 s^2`` channels plus a pixel shuffle of stride
``s``, and scored by L1 on the masked HR pixels only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .losses import masked_l1
from .model import DualEncoder, ModelConfig, as_batch
from .nn import Linear, Module, param, trunc_normal
from .swin import ConfigError
from .tensor import DimensionError, ParameterError, Tensor


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _check_ratio(r: float) -> None:
    if not 0 < r < 1:
        raise ParameterError(f"mask ratio must be in (0, 1), got {r}")


def sample_hr_mask(grid: tuple, r_hr: float = 0.75, seed: int = 0) -> np.ndarray:
    """Uniformly random subset of exactly ``round(r * h * w)`` grid cells."""
    h, w = grid
    if h < 1 or w < 1:
        raise DimensionError(f"degenerate mask grid {grid}")
    _check_ratio(r_hr)
    n = h * w
    k = _round_half_up(r_hr * n)
    mask = np.zeros(n, dtype=bool)
    mask[np.random.default_rng(seed).permutation(n)[:k]] = True
    return mask.reshape(h, w)


def centered_lr_mask(grid: tuple, r_lr: float = 0.5, rule: str = "exact") -> np.ndarray:
    """Deterministic mask centred on the grid.

    ``rule="rect"``: a centred rectangle with sides ``round(dim * sqrt(r))``.
    ``rule="exact"``: the ``round(r * h * w)`` cells nearest the centre
    (Chebyshev distance, then Euclidean, then row-major): a near-square
    centred block that hits the target count exactly.
    """
    h, w = grid
    if h < 1 or w < 1:
        raise DimensionError(f"degenerate mask grid {grid}")
    _check_ratio(r_lr)
    mask = np.zeros((h, w), dtype=bool)
    if rule == "rect":
        sh = _round_half_up(h * math.sqrt(r_lr))
        sw = _round_half_up(w * math.sqrt(r_lr))
        top, left = (h - sh) // 2, (w - sw) // 2
        mask[top:top + sh, left:left + sw] = True
        return mask
    if rule != "exact":
        raise ParameterError(f"unknown centred-mask rule {rule!r}")
    k = _round_half_up(r_lr * h * w)
    ii, jj = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    di = np.abs(ii - (h - 1) / 2) / h
    dj = np.abs(jj - (w - 1) / 2) / w
    order = np.lexsort((np.arange(h * w), (di**2 + dj**2).ravel(), np.maximum(di, dj).ravel()))
    mask.ravel()[order[:k]] = True
    return mask


@dataclass
class MaskSpec:
    hr_mask: np.ndarray
    lr_mask: np.ndarray
    r_hr: float = 0.75
    r_lr: float = 0.5
    rng_seed: int = 0

    @classmethod
    def sample(cls, hr_grid, lr_grid, r_hr=0.75, r_lr=0.5, seed=0, batch: int | None = None, lr_rule="exact"):
        """Per-sample HR masks seeded ``seed + i``; the LR mask is shared (it is deterministic)."""
        lr = centered_lr_mask(lr_grid, r_lr, lr_rule)
        if batch is None:
            return cls(sample_hr_mask(hr_grid, r_hr, seed), lr, r_hr, r_lr, seed)
        hr = np.stack([sample_hr_mask(hr_grid, r_hr, seed + i) for i in range(batch)])
        return cls(hr, np.broadcast_to(lr, (batch,) + lr.shape).copy(), r_hr, r_lr, seed)

    def hr_pixel_mask(self, patch_size: int) -> np.ndarray:
        return np.repeat(np.repeat(self.hr_mask, patch_size, axis=-2), patch_size, axis=-1)


def apply_mask_tokens(embedded: Tensor, mask, token: Tensor) -> Tensor:
    """Replace masked positions of a ``(..., h, w, C)`` embedding with ``token`` (no zeroing)."""
    mask = np.asarray(mask, dtype=bool)
    if mask.shape[-2:] != embedded.shape[-3:-1]:
        raise DimensionError(f"mask grid {mask.shape[-2:]} does not match tokens {embedded.shape[-3:-1]}")
    return T.where(mask[..., None], token, embedded)


class ReconHead(Module):
    def __init__(self, dim: int, stride: int, rng: np.random.Generator, out_chans: int = 3):
        self.stride = stride
        self.proj = Linear(dim, out_chans * stride * stride, rng)

    def forward(self, x4: Tensor, stride: int | None = None) -> Tensor:
        if stride is not None and stride != self.stride:
            raise ConfigError(f"reconstruction stride {stride} != encoder total stride {self.stride}")
        return T.pixel_shuffle(self.proj(x4), self.stride)


class SSLModel(Module):
    """Shared-weight dual encoder with cross-fusion, mask tokens and an HR reconstruction head."""

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        stream = cfg.stream_config()
        self.stream_cfg = stream
        self.backbone = DualEncoder(stream, cfg.fusion_config(), rng, share=True)
        self.hr_mask_token = param(trunc_normal(rng, (stream.channels[0],)))
        self.lr_mask_token = param(trunc_normal(rng, (stream.channels[0],)))
        self.recon_head = ReconHead(stream.channels[3], stream.total_stride, rng)

    def reconstruct(self, hr, lr, masks: MaskSpec) -> Tensor:
        hr, lr = as_batch(hr), as_batch(lr)
        x_hr = apply_mask_tokens(self.backbone.hr_encoder.embed(hr), masks.hr_mask, self.hr_mask_token)
        x_lr = apply_mask_tokens(self.backbone.lr_encoder.embed(lr), masks.lr_mask, self.lr_mask_token)
        feats, _ = self.backbone.forward_embedded(x_hr, x_lr)
        return self.recon_head(feats[3])

    def forward(self, hr, lr, masks: MaskSpec) -> Tensor:
        return pretrain_forward(self, hr, lr, masks)


def pretrain_forward(model: SSLModel, hr, lr, masks: MaskSpec) -> Tensor:
    """Masked L1 between the HR reconstruction and the HR input over masked pixels."""
    hr = as_batch(hr)
    recon = model.reconstruct(hr, lr, masks)
    pix = masks.hr_pixel_mask(model.stream_cfg.patch_size)
    if pix.ndim == 2:
        pix = np.broadcast_to(pix, hr.shape[:-1])
    return masked_l1(recon, hr.data, pix)
