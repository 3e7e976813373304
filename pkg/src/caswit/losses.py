"""Training objectives: pixel-wise cross-entropy, the HR + alpha * LR total, masked L1."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import DimensionError, Tensor, UsageError

VOID = 255


class DataError(ValueError):
    """Malformed or out-of-range input data."""


def check_labels(labels: np.ndarray, num_classes: int) -> None:
    labels = np.asarray(labels)
    bad = (labels != VOID) & ((labels < 0) | (labels >= num_classes))
    if bad.any():
        raise DataError(f"label {int(labels[bad].flat[0])} outside 0..{num_classes - 1} (and not VOID)")


def ce_loss(logits: Tensor, labels) -> Tensor:
    """Mean of ``-log softmax(logits)[y]`` over non-void pixels.

    ``logits`` is ``(..., H, W, K)``, ``labels`` integer ``(..., H, W)``.
    """
    labels = np.asarray(labels)
    k = logits.shape[-1]
    if labels.shape != logits.shape[:-1]:
        raise DimensionError(f"labels {labels.shape} do not match logits {logits.shape}")
    check_labels(labels, k)
    valid = labels != VOID
    onehot = np.zeros(logits.shape, dtype=logits.dtype)
    idx = np.where(valid, labels, 0)
    np.put_along_axis(onehot, idx[..., None].astype(np.intp), 1.0, axis=-1)
    onehot *= valid[..., None]
    n = int(valid.sum())
    picked = T.sum_(T.mul(T.log_softmax_lastdim(logits), Tensor(onehot, dtype=logits.dtype)))
    return T.scale(picked, -1.0 / max(n, 1))


def downsample_labels_nn(labels, factor: int) -> np.ndarray:
    """Nearest-neighbour label downsampling, top-left sample of each ``factor`` block."""
    labels = np.asarray(labels)
    h, w = labels.shape[-2:]
    if h % factor or w % factor:
        raise DimensionError(f"label map {h}x{w} not divisible by {factor}")
    return labels[..., ::factor, ::factor]


def context_labels(labels, lr_size: tuple, context_scale: int = 2) -> np.ndarray:
    """Label map on the LR grid: downsampled HR labels in the centre footprint, VOID elsewhere.

    The LR image covers ``context_scale`` times the HR field of view and is
    centred on it, so the HR tile occupies the central ``1/context_scale`` of
    the LR grid.
    """
    labels = np.asarray(labels)
    h, w = labels.shape[-2:]
    lh, lw = lr_size
    fh, fw = lh // context_scale, lw // context_scale
    if fh == 0 or h % fh or w % fw or h // fh != w // fw:
        raise DimensionError(f"HR labels {h}x{w} incompatible with LR footprint {fh}x{fw}")
    small = downsample_labels_nn(labels, h // fh)
    out = np.full(labels.shape[:-2] + (lh, lw), VOID, dtype=labels.dtype)
    top, left = (lh - fh) // 2, (lw - fw) // 2
    out[..., top:top + fh, left:left + fw] = small
    return out


def loss_terms(logits_hr: Tensor, logits_lr: Tensor | None, labels, alpha: float, lr_labels=None):
    """Return ``(total, l_hr, l_lr)``; ``l_lr`` is None when ``alpha == 0`` or no LR logits."""
    if alpha < 0:
        raise ValueError(f"alpha must be >= 0, got {alpha}")
    l_hr = ce_loss(logits_hr, labels)
    if alpha == 0 or logits_lr is None:
        return l_hr, l_hr, None
    if lr_labels is None:
        labels = np.asarray(labels)
        factor = labels.shape[-1] // logits_lr.shape[-2]
        lr_labels = downsample_labels_nn(labels, factor)
    l_lr = ce_loss(logits_lr, lr_labels)
    return l_hr + T.scale(l_lr, alpha), l_hr, l_lr


def total_loss(logits_hr: Tensor, logits_lr: Tensor | None, labels, alpha: float = 0.5, lr_labels=None) -> Tensor:
    """``L_HR + alpha * L_LR``.

    Without explicit ``lr_labels`` the LR targets are the nearest-neighbour
    downsampled HR labels at the LR head's resolution.
    """
    return loss_terms(logits_hr, logits_lr, labels, alpha, lr_labels)[0]


def masked_l1(recon: Tensor, target, mask_pix) -> Tensor:
    """Mean absolute error over masked pixels and all 3 channels."""
    mask = np.asarray(mask_pix, dtype=bool)
    n = int(mask.sum())
    if n == 0:
        raise UsageError("masked_l1 needs at least one masked pixel")
    if mask.shape != recon.shape[:-1]:
        raise DimensionError(f"mask {mask.shape} does not match reconstruction {recon.shape}")
    target = target if isinstance(target, Tensor) else Tensor(target, dtype=recon.dtype)
    diff = T.abs_(recon - target)
    weights = Tensor(mask[..., None].astype(recon.dtype), dtype=recon.dtype)
    return T.scale(T.sum_(T.mul(diff, weights)), 1.0 / (recon.shape[-1] * n))
