"""Confusion-matrix accumulation and IoU / pixel-accuracy reporting."""
from __future__ import annotations

import numpy as np

from .errors import LabelError, ShapeError, UndefinedMetricError

IGNORE_INDEX = 255


class ConfusionMatrix:
    """counts[t][p] = number of pixels with ground truth t predicted as p."""

    def __init__(self, nc: int, counts: np.ndarray | None = None):
        if nc < 2:
            raise ShapeError(f"confusion matrix needs nc >= 2, got {nc}")
        self.nc = nc
        if counts is None:
            counts = np.zeros((nc, nc), dtype=np.int64)
        counts = np.asarray(counts, dtype=np.int64)
        if counts.shape != (nc, nc) or (counts < 0).any():
            raise ShapeError(f"invalid counts array of shape {counts.shape}")
        self.counts = counts

    def accumulate(self, pred: np.ndarray, truth: np.ndarray,
                   ignore_index: int = IGNORE_INDEX) -> "ConfusionMatrix":
        pred = np.asarray(pred)
        truth = np.asarray(truth)
        if pred.shape != truth.shape:
            raise ShapeError(f"pred shape {pred.shape} != truth shape {truth.shape}")
        valid = truth != ignore_index
        p = pred[valid].ravel()
        t = truth[valid].ravel()
        for name, a in (("pred", p), ("truth", t)):
            if a.size and (a.min() < 0 or a.max() >= self.nc):
                raise LabelError(f"{name} contains class indices outside [0, {self.nc})")
        self.counts += np.bincount(t * self.nc + p,
                                   minlength=self.nc * self.nc).reshape(self.nc, self.nc)
        return self

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if other.nc != self.nc:
            raise ShapeError(f"cannot merge nc={other.nc} into nc={self.nc}")
        self.counts += other.counts
        return self

    def total(self) -> int:
        return int(self.counts.sum())

    def per_class_iou(self) -> np.ndarray:
        """IoU per class; NaN for classes with an empty union."""
        if self.total() == 0:
            raise UndefinedMetricError("confusion matrix is empty")
        diag = np.diag(self.counts).astype(np.float64)
        union = self.counts.sum(0) + self.counts.sum(1) - np.diag(self.counts)
        with np.errstate(invalid="ignore", divide="ignore"):
            iou = np.where(union > 0, diag / union, np.nan)
        return iou

    def miou(self) -> float:
        """Mean IoU over classes with nonzero union."""
        iou = self.per_class_iou()
        present = ~np.isnan(iou)
        if not present.any():
            raise UndefinedMetricError("no class has a nonzero union")
        return float(iou[present].mean())

    def pixel_accuracy(self) -> float:
        if self.total() == 0:
            raise UndefinedMetricError("confusion matrix is empty")
        return float(np.diag(self.counts).sum() / self.total())

    def report(self, class_names: list[str] | None = None) -> dict:
        iou = self.per_class_iou()
        names = class_names or [f"class_{i}" for i in range(self.nc)]
        return {
            "per_class_iou": {names[i]: (None if np.isnan(iou[i]) else float(iou[i]))
                              for i in range(self.nc)},
            "miou": self.miou(),
            "pixel_accuracy": self.pixel_accuracy(),
            "pixels": self.total(),
        }
