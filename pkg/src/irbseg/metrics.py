"""Pixel-pooled segmentation metrics.

All values are fractions in [0, 1]; percent scaling happens only when a report
is rendered. A class that is absent from both ground truth and prediction has
an undefined IoU (``None``) and is left out of the means.
"""

from __future__ import annotations

from collections.abc import Mapping, Sequence
from dataclasses import dataclass

import numpy as np

from .datamodel import ClassSet


class EvaluationError(ValueError):
    """Raised when a mean is requested over no defined classes."""


@dataclass(frozen=True)
class ConfusionMatrix:
    counts: np.ndarray
    class_set: ClassSet

    def __post_init__(self):
        k = len(self.class_set)
        if self.counts.shape != (k, k):
            raise ValueError(f"counts shape {self.counts.shape} does not match {k} classes")
        if (self.counts < 0).any():
            raise ValueError("confusion counts must be non-negative")

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if other.class_set != self.class_set:
            raise ValueError("cannot add confusion matrices over different class sets")
        return ConfusionMatrix(self.counts + other.counts, self.class_set)

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass(frozen=True)
class IoUReport:
    per_class_iou: dict[int, float | None]
    per_class_acc: dict[int, float | None]
    miou: float
    macc: float
    ranking_worst_to_best: tuple[int, ...]

    def to_json(self) -> dict:
        return {
            "per_class_iou": {str(k): v for k, v in self.per_class_iou.items()},
            "per_class_acc": {str(k): v for k, v in self.per_class_acc.items()},
            "miou": self.miou,
            "macc": self.macc,
            "ranking_worst_to_best": list(self.ranking_worst_to_best),
        }

    @classmethod
    def from_json(cls, d: Mapping) -> "IoUReport":
        return cls(
            per_class_iou={int(k): v for k, v in d["per_class_iou"].items()},
            per_class_acc={int(k): v for k, v in d["per_class_acc"].items()},
            miou=float(d["miou"]),
            macc=float(d["macc"]),
            ranking_worst_to_best=tuple(int(k) for k in d["ranking_worst_to_best"]),
        )


def confusion_matrix(
    gt_masks: Sequence[np.ndarray], pred_masks: Sequence[np.ndarray], class_set: ClassSet
) -> ConfusionMatrix:
    """Pool ``counts[gt, pred]`` over all pixel pairs of all rasters."""
    if len(gt_masks) != len(pred_masks):
        raise ValueError(f"got {len(gt_masks)} ground-truth masks but {len(pred_masks)} predictions")
    k = len(class_set)
    counts = np.zeros(k * k, dtype=np.int64)
    for i, (gt, pred) in enumerate(zip(gt_masks, pred_masks)):
        gt = np.asarray(gt)
        pred = np.asarray(pred)
        if gt.shape != pred.shape:
            raise ValueError(f"pair {i}: ground truth {gt.shape} vs prediction {pred.shape}")
        gt = gt.astype(np.int64).ravel()
        pred = pred.astype(np.int64).ravel()
        for name, arr in (("ground truth", gt), ("prediction", pred)):
            if arr.size and (arr.min() < 0 or arr.max() >= k):
                raise ValueError(f"pair {i}: {name} contains ids outside 0..{k - 1}")
        counts += np.bincount(gt * k + pred, minlength=k * k)
    return ConfusionMatrix(counts.reshape(k, k), class_set)


def iou_per_class(cm: ConfusionMatrix) -> dict[int, float | None]:
    c = cm.counts
    inter = np.diag(c)
    union = c.sum(axis=1) + c.sum(axis=0) - inter
    return {k: (float(inter[k] / union[k]) if union[k] else None) for k in cm.class_set.ids}


def acc_per_class(cm: ConfusionMatrix) -> dict[int, float | None]:
    c = cm.counts
    rows = c.sum(axis=1)
    return {k: (float(c[k, k] / rows[k]) if rows[k] else None) for k in cm.class_set.ids}


def _defined_mean(per_class: Mapping, what: str) -> float:
    values = [v for v in per_class.values() if v is not None]
    if not values:
        raise EvaluationError(f"no class has a defined {what}")
    return float(sum(values) / len(values))


def mean_iou(per_class: Mapping) -> float:
    """Arithmetic mean over defined classes, background included."""
    return _defined_mean(per_class, "IoU")


def mean_acc(per_class: Mapping) -> float:
    return _defined_mean(per_class, "accuracy")


def rank_classes(per_class_iou: Mapping[int, float | None]) -> list[int]:
    """Order classes from worst to best IoU.

    Undefined IoU counts as 0. On ties the smaller class id is ranked worse.
    """
    if not per_class_iou:
        raise ValueError("cannot rank an empty IoU map")
    return sorted(per_class_iou, key=lambda k: (per_class_iou[k] or 0.0, k))


def relative_improvement(new_value: float, baseline: float) -> float:
    """Percentage change of ``new_value`` over ``baseline``."""
    if baseline <= 0:
        raise ValueError(f"baseline must be positive, got {baseline}")
    return 100.0 * (new_value - baseline) / baseline


def build_report(cm: ConfusionMatrix) -> IoUReport:
    ious = iou_per_class(cm)
    accs = acc_per_class(cm)
    fg = {k: ious[k] for k in cm.class_set.foreground_ids}
    return IoUReport(
        per_class_iou=ious,
        per_class_acc=accs,
        miou=mean_iou(ious),
        macc=mean_acc(accs),
        ranking_worst_to_best=tuple(rank_classes(fg)) if fg else (),
    )
