"""Confusion matrices and IoU."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def confusion_matrix(pred: np.ndarray, labels: np.ndarray, num_classes: int) -> np.ndarray:
    """Rows are ground truth, columns are predictions."""
    idx = labels.astype(np.int64).ravel() * num_classes + pred.astype(np.int64).ravel()
    return np.bincount(idx, minlength=num_classes ** 2).reshape(num_classes, num_classes)


@dataclass
class SegMetrics:
    confusion: np.ndarray
    iou: np.ndarray         # per class; NaN for classes absent from both labels and predictions

    @property
    def miou(self) -> float:
        """Mean IoU in percent over classes that occur."""
        return float(np.nanmean(self.iou) * 100.0) if np.any(~np.isnan(self.iou)) else 0.0


def metrics_from_confusion(conf: np.ndarray) -> SegMetrics:
    conf = np.asarray(conf, dtype=np.float64)
    tp = np.diag(conf)
    union = conf.sum(axis=0) + conf.sum(axis=1) - tp
    with np.errstate(invalid="ignore", divide="ignore"):
        iou = np.where(union > 0, tp / union, np.nan)
    return SegMetrics(conf.astype(np.int64), iou)
