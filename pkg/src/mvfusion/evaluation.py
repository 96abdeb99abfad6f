"""Segmentation metrics backed by a confusion matrix.

Rows index ground truth, columns predictions.  Classes that never occur in
ground truth or predictions are excluded from the means rather than counted
as zeros; an optional ignore label drops points from scoring entirely.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import InputError


class ConfusionMatrix:
    def __init__(self, num_classes: int, ignore_label: int | None = None):
        if num_classes < 1:
            raise InputError("need at least one class")
        if ignore_label is not None and 0 <= ignore_label < num_classes:
            raise InputError("ignore_label must lie outside [0, num_classes)")
        self.num_classes = num_classes
        self.ignore_label = ignore_label
        self.counts = np.zeros((num_classes, num_classes), dtype=np.int64)
        self.ignored_points = 0

    def accumulate(self, gt: np.ndarray, pred: np.ndarray) -> "ConfusionMatrix":
        """Count one batch of (ground truth, prediction) label pairs.

        Points whose ground truth or prediction equals the ignore label are
        skipped (and tallied in ignored_points); anything else out of range
        is an error.
        """
        gt = np.asarray(gt, dtype=np.int64).reshape(-1)
        pred = np.asarray(pred, dtype=np.int64).reshape(-1)
        if len(gt) != len(pred):
            raise InputError(f"length mismatch: {len(gt)} gt vs {len(pred)} pred")
        c = self.num_classes
        scored = np.ones(len(gt), dtype=bool)
        if self.ignore_label is not None:
            scored = (gt != self.ignore_label) & (pred != self.ignore_label)
        g, p = gt[scored], pred[scored]
        if np.any((g < 0) | (g >= c)):
            raise InputError("ground-truth labels out of range")
        if np.any((p < 0) | (p >= c)):
            raise InputError("predicted labels out of range")
        self.counts += np.bincount(g * c + p, minlength=c * c).reshape(c, c)
        self.ignored_points += int(len(gt) - scored.sum())
        return self

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        """Add another shard's counts; merging is associative and commutative."""
        if other.num_classes != self.num_classes:
            raise InputError("cannot merge matrices with different class counts")
        self.counts += other.counts
        self.ignored_points += other.ignored_points
        return self

    @property
    def total_points(self) -> int:
        return int(self.counts.sum())


def miou(cm: ConfusionMatrix) -> tuple[np.ndarray, float]:
    """Per-class IoU (NaN where undefined) and the mean over defined classes.

    IoU_c = TP / (TP + FP + FN); classes absent from both ground truth and
    predictions have a zero denominator and do not enter the mean.
    """
    counts = cm.counts
    if counts.sum() == 0:
        raise InputError("empty confusion matrix")
    tp = np.diag(counts).astype(np.float64)
    fp = counts.sum(axis=0) - tp
    fn = counts.sum(axis=1) - tp
    denom = tp + fp + fn
    present = denom > 0
    iou = np.full(cm.num_classes, np.nan)
    iou[present] = tp[present] / denom[present]
    return iou, float(iou[present].mean())


def mean_class_accuracy(cm: ConfusionMatrix) -> tuple[np.ndarray, float]:
    """Per-class recall TP / row-sum and its mean over non-empty classes."""
    counts = cm.counts
    if counts.sum() == 0:
        raise InputError("empty confusion matrix")
    tp = np.diag(counts).astype(np.float64)
    row = counts.sum(axis=1).astype(np.float64)
    present = row > 0
    acc = np.full(cm.num_classes, np.nan)
    acc[present] = tp[present] / row[present]
    return acc, float(acc[present].mean())


def metrics_report(cm: ConfusionMatrix) -> dict:
    """JSON-ready summary: per-class metrics, means, point counts."""
    iou, mean_iou = miou(cm)
    acc, mean_acc = mean_class_accuracy(cm)
    as_list = lambda a: [None if np.isnan(x) else float(x) for x in a]  # noqa: E731
    return {
        "num_classes": cm.num_classes,
        "per_class_iou": as_list(iou),
        "per_class_accuracy": as_list(acc),
        "miou": mean_iou,
        "mean_accuracy": mean_acc,
        "total_points": cm.total_points,
        "ignored_points": cm.ignored_points,
    }


def save_metrics(cm: ConfusionMatrix, path: str | Path) -> dict:
    report = metrics_report(cm)
    Path(path).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return report
