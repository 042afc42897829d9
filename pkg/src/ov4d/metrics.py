"""Segmentation quality metrics: overall accuracy, mean class accuracy, and
mean IoU over per-point integer labels.

The `no label` class participates like any other class when it occurs in the
ground truth; classes absent from the ground truth are excluded from both
means so unused prompts cannot dilute the scores.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def confusion(pred: np.ndarray, gt: np.ndarray, num_classes: int) -> np.ndarray:
    """Tally counts[g][p] over points; includes row/col K only if K occurs.

    `num_classes` is the number of real classes K; label K itself is the
    `no label` class and widens the matrix to (K+1) x (K+1) when present.
    """
    pred = np.asarray(pred).reshape(-1)
    gt = np.asarray(gt).reshape(-1)
    if pred.shape != gt.shape:
        raise ValueError(f"length mismatch: {pred.size} predictions, {gt.size} labels")
    if pred.size and (int(pred.min()) < 0 or int(gt.min()) < 0):
        raise ValueError("labels must be nonnegative")
    hi = int(max(pred.max(), gt.max())) if pred.size else -1
    if hi > num_classes:
        raise ValueError(f"label {hi} exceeds `no label` index {num_classes}")
    size = num_classes + 1 if hi == num_classes else num_classes
    cm = np.zeros((size, size), dtype=np.int64)
    np.add.at(cm, (gt.astype(np.int64), pred.astype(np.int64)), 1)
    return cm


@dataclass(frozen=True)
class EvalResult:
    overall_accuracy: float
    mean_class_accuracy: float
    mean_iou: float
    per_class_accuracy: np.ndarray  # NaN for classes absent from ground truth
    per_class_iou: np.ndarray       # NaN for classes absent from ground truth

    def summary(self) -> str:
        return (
            f"OA {self.overall_accuracy:.4f}  "
            f"mAcc {self.mean_class_accuracy:.4f}  "
            f"mIoU {self.mean_iou:.4f}"
        )


def metrics(cm: np.ndarray) -> EvalResult:
    """Derive (OA, mAcc, mIoU) from a confusion matrix of counts[gt][pred]."""
    cm = np.asarray(cm, dtype=np.float64)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1] or cm.shape[0] == 0:
        raise ValueError(f"confusion matrix must be square and non-empty, got {cm.shape}")
    total = cm.sum()
    if total == 0:
        raise ValueError("confusion matrix has no evaluated points")
    diag = np.diag(cm)
    row = cm.sum(axis=1)
    col = cm.sum(axis=0)
    present = row > 0

    acc = np.full(cm.shape[0], np.nan)
    iou = np.full(cm.shape[0], np.nan)
    acc[present] = diag[present] / row[present]
    union = row + col - diag
    iou[present] = diag[present] / union[present]

    return EvalResult(
        overall_accuracy=float(diag.sum() / total),
        mean_class_accuracy=float(np.nanmean(acc[present])),
        mean_iou=float(np.nanmean(iou[present])),
        per_class_accuracy=acc,
        per_class_iou=iou,
    )


def evaluate_labels(pred: np.ndarray, gt: np.ndarray, num_classes: int) -> EvalResult:
    """Confusion + metrics in one call for a single pair of label arrays."""
    return metrics(confusion(pred, gt, num_classes))
