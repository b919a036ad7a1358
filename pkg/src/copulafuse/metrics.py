"""Segmentation evaluation: confusion matrix, OA, class accuracy, IOU.

Rows of the confusion matrix are ground truth, columns are predictions.
Matrices are mergeable, so evaluation can shard across images and merge.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

IGNORE_LABEL = 65535


@dataclass
class ConfusionMatrix:
    counts: np.ndarray
    ignored: int = 0

    @classmethod
    def empty(cls, num_classes):
        return cls(counts=np.zeros((num_classes, num_classes), dtype=np.int64))

    @property
    def num_classes(self):
        return self.counts.shape[0]

    def merge(self, other):
        if other.num_classes != self.num_classes:
            raise ValueError("cannot merge confusion matrices of different sizes")
        return ConfusionMatrix(counts=self.counts + other.counts, ignored=self.ignored + other.ignored)

    def __add__(self, other):
        return self.merge(other)


def accumulate(cm, pred, gt, ignore=frozenset({IGNORE_LABEL})):
    """Add one image's pixel counts into cm (in place; returns cm)."""
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction shape {pred.shape} does not match ground truth {gt.shape}")
    m = cm.num_classes
    ignore = frozenset(int(v) for v in ignore)
    gt_flat = gt.reshape(-1).astype(np.int64)
    pred_flat = pred.reshape(-1).astype(np.int64)
    keep = np.ones(gt_flat.size, dtype=bool)
    for v in ignore:
        keep &= gt_flat != v
    for name, arr in (("ground-truth", gt_flat), ("prediction", pred_flat)):
        bad = keep & ((arr < 0) | (arr >= m))
        if np.any(bad):
            p = int(np.flatnonzero(bad)[0])
            y, x = divmod(p, gt.shape[-1])
            raise DataError(f"{name} label {int(arr[p])} at pixel ({y}, {x}) is outside [0, {m})")
    cm.ignored += int(gt_flat.size - keep.sum())
    idx = m * gt_flat[keep] + pred_flat[keep]
    cm.counts += np.bincount(idx, minlength=m * m).reshape(m, m)
    return cm


def overall_accuracy(cm):
    """Percentage of correctly classified pixels."""
    total = cm.counts.sum()
    if total == 0:
        raise ValueError("empty confusion matrix")
    return 100.0 * np.trace(cm.counts) / total


def class_accuracy(cm, zero_absent=False):
    """Per-class recall vector (NaN where absent) and its mean as a percentage."""
    row = cm.counts.sum(axis=1)
    if row.sum() == 0:
        raise ValueError("empty confusion matrix")
    with np.errstate(invalid="ignore", divide="ignore"):
        per_class = np.where(row > 0, np.diag(cm.counts) / np.maximum(row, 1), np.nan)
    if zero_absent:
        mean = float(np.mean(np.nan_to_num(per_class, nan=0.0)))
    else:
        mean = float(np.nanmean(per_class))
    return per_class, 100.0 * mean


def iou(cm, zero_absent=False):
    """Per-class IOU vector (NaN where the union is empty) and the mean IOU."""
    inter = np.diag(cm.counts).astype(float)
    union = cm.counts.sum(axis=1) + cm.counts.sum(axis=0) - np.diag(cm.counts)
    if np.all(union == 0):
        raise ValueError("empty confusion matrix")
    with np.errstate(invalid="ignore", divide="ignore"):
        per_class = np.where(union > 0, inter / np.maximum(union, 1), np.nan)
    if zero_absent:
        mean = float(np.mean(np.nan_to_num(per_class, nan=0.0)))
    else:
        mean = float(np.nanmean(per_class))
    return per_class, mean


def summarize(cm, zero_absent=False):
    """All three headline metrics as a dict (percent / percent / fraction)."""
    _, mean_ca = class_accuracy(cm, zero_absent=zero_absent)
    _, miou = iou(cm, zero_absent=zero_absent)
    return {
        "oa": overall_accuracy(cm),
        "mean_ca": mean_ca,
        "miou": miou,
        "ignored": int(cm.ignored),
    }
