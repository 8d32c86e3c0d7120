"""Per-class IoU and mIoU via confusion-matrix accumulation.

mIoU is computed on the matrix accumulated over the whole evaluation set;
classes whose union is empty are excluded from the mean (and counted), not
scored as 0 or 1.
"""

from __future__ import annotations

import numpy as np


class ConfusionMatrix:
    """Rows are ground-truth classes, columns predictions; ignored pixels are
    excluded. ``rejected`` holds per-class ground-truth pixels of frames the
    receiver could not decode at all: they enlarge the union (so IoU drops to
    0 for classes present in such frames) without polluting other classes'
    false positives."""

    def __init__(self, n_cls: int, ignore_index: int = 255):
        if n_cls < 1:
            raise ValueError("n_cls must be >= 1")
        self.n_cls = n_cls
        self.ignore_index = ignore_index
        self.counts = np.zeros((n_cls, n_cls), dtype=np.int64)
        self.rejected = np.zeros(n_cls, dtype=np.int64)

    def accumulate(self, pred: np.ndarray, gt: np.ndarray) -> "ConfusionMatrix":
        pred = np.asarray(pred)
        gt = np.asarray(gt)
        if pred.shape != gt.shape:
            raise ValueError(f"shape mismatch: pred {pred.shape} vs gt {gt.shape}")
        valid = gt != self.ignore_index
        p = pred[valid].astype(np.int64)
        g = gt[valid].astype(np.int64)
        if p.size and (p.min() < 0 or p.max() >= self.n_cls):
            raise ValueError(f"prediction values outside [0, {self.n_cls})")
        if g.size and (g.min() < 0 or g.max() >= self.n_cls):
            raise ValueError(f"ground-truth values outside [0, {self.n_cls})")
        self.counts += np.bincount(
            g * self.n_cls + p, minlength=self.n_cls * self.n_cls
        ).reshape(self.n_cls, self.n_cls)
        return self

    def add_failure(self, gt: np.ndarray) -> "ConfusionMatrix":
        """Score an undecodable frame: zero IoU for every class present in gt."""
        gt = np.asarray(gt)
        valid = gt != self.ignore_index
        g = gt[valid].astype(np.int64)
        if g.size and (g.min() < 0 or g.max() >= self.n_cls):
            raise ValueError(f"ground-truth values outside [0, {self.n_cls})")
        self.rejected += np.bincount(g, minlength=self.n_cls)
        return self

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if other.n_cls != self.n_cls:
            raise ValueError("cannot merge matrices with different class counts")
        self.counts += other.counts
        self.rejected += other.rejected
        return self

    def total(self) -> int:
        return int(self.counts.sum() + self.rejected.sum())

    def per_class_iou(self) -> np.ndarray:
        """IoU per class; NaN marks classes absent from both pred and gt."""
        diag = np.diag(self.counts).astype(np.float64)
        union = (
            self.counts.sum(axis=1) + self.counts.sum(axis=0) - np.diag(self.counts)
            + self.rejected
        ).astype(np.float64)
        iou = np.full(self.n_cls, np.nan)
        defined = union > 0
        iou[defined] = diag[defined] / union[defined]
        return iou

    def miou(self) -> float:
        iou = self.per_class_iou()
        defined = ~np.isnan(iou)
        if not defined.any():
            raise ValueError("mIoU undefined: no class present in predictions or labels")
        return float(iou[defined].mean())

    def excluded_classes(self) -> int:
        return int(np.isnan(self.per_class_iou()).sum())

    def report_rows(self) -> list[str]:
        """CSV report: one `class,iou,defined` row per class plus a summary row."""
        rows = ["class,iou,defined"]
        iou = self.per_class_iou()
        for c in range(self.n_cls):
            if np.isnan(iou[c]):
                rows.append(f"{c},,0")
            else:
                rows.append(f"{c},{iou[c]:.6f},1")
        rows.append(f"miou,{self.miou():.6f},excluded={self.excluded_classes()}")
        return rows


def per_image_miou(pred: np.ndarray, gt: np.ndarray, n_cls: int, ignore_index: int = 255) -> float:
    """Single-image mIoU, for sensitivity checks next to the dataset-level value."""
    conf = ConfusionMatrix(n_cls, ignore_index)
    conf.accumulate(pred, gt)
    return conf.miou()
