"""Segmentation metrics: confusion matrix, IoU/F1 and boundary IoU.

Everything accumulates over a dataset before averaging: one global confusion
matrix and per-class boundary intersection/union pixel counts.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .losses import VOID
from .tensor import DimensionError


def confusion_matrix(pred, gt, num_classes: int) -> np.ndarray:
    """``cm[c, c_hat]`` counts pixels with ground truth ``c`` predicted as ``c_hat``; VOID gt ignored."""
    pred, gt = np.asarray(pred), np.asarray(gt)
    if pred.shape != gt.shape:
        raise DimensionError(f"prediction {pred.shape} and ground truth {gt.shape} differ")
    valid = gt != VOID
    g = gt[valid].astype(np.int64)
    p = pred[valid].astype(np.int64)
    return np.bincount(g * num_classes + p, minlength=num_classes**2).reshape(num_classes, num_classes)


def iou_f1(cm: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-class IoU and F1; NaN for classes absent from both prediction and ground truth."""
    tp = np.diag(cm).astype(np.float64)
    fp = cm.sum(axis=0) - tp
    fn = cm.sum(axis=1) - tp
    denom = tp + fp + fn
    with np.errstate(invalid="ignore", divide="ignore"):
        iou = np.where(denom > 0, tp / denom, np.nan)
        f1 = np.where(denom > 0, 2 * tp / (2 * tp + fp + fn), np.nan)
    return iou, f1


def dilate(mask: np.ndarray, d: int) -> np.ndarray:
    """Chebyshev (square) dilation by radius ``d``, clipped at the image border."""
    h, w = mask.shape
    padded = np.pad(mask, d)
    rows = np.zeros((h + 2 * d, w), dtype=bool)
    for k in range(2 * d + 1):
        rows |= padded[:, k:k + w]
    out = np.zeros((h, w), dtype=bool)
    for k in range(2 * d + 1):
        out |= rows[k:k + h]
    return out


def contour(mask: np.ndarray) -> np.ndarray:
    """Mask pixels with a 4-neighbour outside the mask or outside the image."""
    p = np.pad(mask, 1)
    interior = p[:-2, 1:-1] & p[2:, 1:-1] & p[1:-1, :-2] & p[1:-1, 2:]
    return mask & ~interior


def boundary_band(labels, c: int, d: int) -> np.ndarray:
    if d < 1:
        raise ValueError(f"band radius must be >= 1, got {d}")
    mask = np.asarray(labels) == c
    if not mask.any():
        return np.zeros(mask.shape, dtype=bool)
    return dilate(contour(mask), d)


def boundary_counts(pred, gt, num_classes: int, d: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-class band intersection and union pixel counts; VOID gt pixels excluded."""
    pred, gt = np.asarray(pred), np.asarray(gt)
    if pred.shape != gt.shape:
        raise DimensionError(f"prediction {pred.shape} and ground truth {gt.shape} differ")
    valid = gt != VOID
    inter = np.zeros(num_classes, dtype=np.int64)
    union = np.zeros(num_classes, dtype=np.int64)
    for c in range(num_classes):
        bp = boundary_band(pred, c, d) & valid
        bg = boundary_band(gt, c, d) & valid
        inter[c] = np.count_nonzero(bp & bg)
        union[c] = np.count_nonzero(bp | bg)
    return inter, union


def _mean(values: np.ndarray) -> float:
    v = values[~np.isnan(values)]
    return float(v.mean()) if v.size else float("nan")


def biou_from_counts(inter, union, absent: str = "skip") -> np.ndarray:
    """Per-class band IoU. Classes with an empty union are NaN (``skip``) or 0 (``zero``)."""
    inter = np.asarray(inter, dtype=np.float64)
    union = np.asarray(union, dtype=np.float64)
    empty = np.nan if absent == "skip" else 0.0
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(union > 0, inter / union, empty)


def mbiou(pred, gt, d: int = 2, num_classes: int | None = None, absent: str = "skip") -> float:
    pred, gt = np.asarray(pred), np.asarray(gt)
    if num_classes is None:
        num_classes = int(max(pred.max(), gt[gt != VOID].max(initial=0))) + 1
    return _mean(biou_from_counts(*boundary_counts(pred, gt, num_classes, d), absent=absent))


@dataclass
class MetricReport:
    confusion: np.ndarray
    per_class_iou: np.ndarray
    per_class_f1: np.ndarray
    per_class_biou: np.ndarray
    miou: float
    mf1: float
    mbiou: float

    @classmethod
    def from_counts(cls, cm, inter, union, absent: str = "skip") -> "MetricReport":
        iou, f1 = iou_f1(cm)
        biou = biou_from_counts(inter, union, absent)
        return cls(cm, iou, f1, biou, _mean(iou), _mean(f1), _mean(biou))

    @property
    def pixel_accuracy(self) -> float:
        total = self.confusion.sum()
        return float(np.trace(self.confusion) / total) if total else float("nan")

    def to_text(self) -> str:
        lines = [
            f"{c} {self.per_class_iou[c]:.6f} {self.per_class_f1[c]:.6f} {self.per_class_biou[c]:.6f}"
            for c in range(len(self.per_class_iou))
        ]
        lines.append(f"mIoU {self.miou:.6f} mF1 {self.mf1:.6f} mBIoU {self.mbiou:.6f}")
        return "\n".join(lines) + "\n"

    def write(self, path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")


def parse_report(text: str) -> dict:
    """Read back the per-class rows and the means from :meth:`MetricReport.to_text`."""
    rows, means = {}, {}
    for line in text.strip().splitlines():
        parts = line.split()
        if parts[0] == "mIoU":
            means = {parts[i]: float(parts[i + 1]) for i in range(0, 6, 2)}
        else:
            rows[int(parts[0])] = tuple(float(v) for v in parts[1:4])
    return {"classes": rows, "means": means}


class MetricAccumulator:
    """Sums confusion and boundary counts over tiles; merging is integer addition."""

    def __init__(self, num_classes: int, d: int = 2, absent: str = "skip"):
        self.k, self.d, self.absent = num_classes, d, absent
        self.cm = np.zeros((num_classes, num_classes), dtype=np.int64)
        self.inter = np.zeros(num_classes, dtype=np.int64)
        self.union = np.zeros(num_classes, dtype=np.int64)

    def update(self, pred, gt) -> None:
        pred, gt = np.asarray(pred), np.asarray(gt)
        if pred.ndim == 3:
            for p, g in zip(pred, gt):
                self.update(p, g)
            return
        self.cm += confusion_matrix(pred, gt, self.k)
        i, u = boundary_counts(pred, gt, self.k, self.d)
        self.inter += i
        self.union += u

    def merge(self, other: "MetricAccumulator") -> None:
        self.cm += other.cm
        self.inter += other.inter
        self.union += other.union

    def report(self) -> MetricReport:
        return MetricReport.from_counts(self.cm, self.inter, self.union, self.absent)


def evaluate_maps(pred, gt, num_classes: int, d: int = 2, absent: str = "skip") -> MetricReport:
    acc = MetricAccumulator(num_classes, d, absent)
    acc.update(pred, gt)
    return acc.report()
