"""Pixel-level scoring and mask application.

Accuracy is (TP + TN) / total pixels with foreground as the positive class.
Set-level numbers reported elsewhere are unweighted means of per-image
accuracies. Predictions produced at network resolution are upsampled to the
truth resolution by nearest neighbour before scoring.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .frames import Frame
from .maskgen import BinaryMask


@dataclass
class ConfusionCounts:
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


def _check_dims(a: BinaryMask, b: BinaryMask) -> None:
    if a.bits.shape != b.bits.shape:
        raise ValueError(f"mask dimensions differ: {a.bits.shape} vs {b.bits.shape}")


def confusion_counts(pred: BinaryMask, truth: BinaryMask) -> ConfusionCounts:
    _check_dims(pred, truth)
    p, t = pred.bits, truth.bits
    return ConfusionCounts(
        tp=int((p & t).sum()),
        tn=int((~p & ~t).sum()),
        fp=int((p & ~t).sum()),
        fn=int((~p & t).sum()),
    )


def pixel_accuracy(pred: BinaryMask, truth: BinaryMask) -> float:
    _check_dims(pred, truth)
    c = confusion_counts(pred, truth)
    return (c.tp + c.tn) / c.total


def apply_mask(frame: Frame, mask: BinaryMask) -> Frame:
    """Keep foreground pixels, zero out everything else."""
    if frame.pixels.shape != mask.bits.shape:
        raise ValueError(f"frame {frame.pixels.shape} vs mask {mask.bits.shape}")
    return Frame(np.where(mask.bits, frame.pixels, 0), normalized=frame.normalized)


def deid_leakage(mask: BinaryMask, sensitive_region: BinaryMask) -> float:
    """Fraction of sensitive pixels that survive masking.

    A frame passes de-identification iff the leakage is exactly 0. An empty
    sensitive region trivially passes (0.0).
    """
    _check_dims(mask, sensitive_region)
    sensitive = int(sensitive_region.bits.sum())
    if sensitive == 0:
        return 0.0
    return int((mask.bits & sensitive_region.bits).sum()) / sensitive


def resize_mask_nearest(mask: BinaryMask, out_w: int, out_h: int) -> BinaryMask:
    """Nearest-neighbour mask resampling (half-pixel center convention)."""
    if out_w < 1 or out_h < 1:
        raise ValueError(f"target size must be >= 1, got {out_w}x{out_h}")
    in_h, in_w = mask.bits.shape
    xs = np.minimum(((np.arange(out_w) + 0.5) * (in_w / out_w)).astype(np.int64), in_w - 1)
    ys = np.minimum(((np.arange(out_h) + 0.5) * (in_h / out_h)).astype(np.int64), in_h - 1)
    return BinaryMask(mask.bits[ys][:, xs])


def set_accuracy(per_image: list[float]) -> float:
    """Unweighted mean of per-image accuracies."""
    if not per_image:
        raise ValueError("no accuracies to average")
    return float(np.mean(per_image))


# extra overlap scores; reporting tracks pixel accuracy, these are for ad-hoc use


def iou(pred: BinaryMask, truth: BinaryMask) -> float:
    """Intersection over union; 1.0 when both masks are empty."""
    _check_dims(pred, truth)
    union = int((pred.bits | truth.bits).sum())
    if union == 0:
        return 1.0
    return int((pred.bits & truth.bits).sum()) / union


def dice(pred: BinaryMask, truth: BinaryMask) -> float:
    """Dice coefficient; 1.0 when both masks are empty."""
    _check_dims(pred, truth)
    total = int(pred.bits.sum()) + int(truth.bits.sum())
    if total == 0:
        return 1.0
    return 2 * int((pred.bits & truth.bits).sum()) / total
