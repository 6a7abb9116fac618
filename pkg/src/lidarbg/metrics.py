"""Point-level and object-level evaluation of filter results against
ground-truth labels.

The positive class is FOREGROUND: ground-truth foreground means a point
labeled with a class not in the excluded set, and predicted foreground
means the result's foreground_indices (ROR-removed points count as
predicted background). Every ratio uses the convention 0/0 = 0 so
aggregation over many scans stays total. Dataset-level aggregation is
micro: confusion counts are summed across scans and objects are pooled.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cloud import UNLABELED, PointCloud
from .errors import DataError
from .filtering import FilterResult


def _ratio(num: float, den: float) -> float:
    return num / den if den else 0.0


@dataclass(frozen=True)
class PointMetrics:
    tp: int
    fp: int
    fn: int
    tn: int
    precision: float
    recall: float
    f1: float
    iou: float

    @classmethod
    def from_counts(cls, tp: int, fp: int, fn: int, tn: int) -> "PointMetrics":
        precision = _ratio(tp, tp + fp)
        recall = _ratio(tp, tp + fn)
        f1 = _ratio(2 * precision * recall, precision + recall)
        iou = _ratio(tp, tp + fp + fn)
        return cls(tp, fp, fn, tn, precision, recall, f1, iou)


@dataclass(frozen=True)
class ObjectMetrics:
    n_objects: int
    per_object_fraction: tuple[float, ...]
    tpr: float
    completeness: float
    tpr_threshold: float


@dataclass(frozen=True)
class ClassMetrics:
    recall: float
    tpr: float
    completeness: float
    n_points: int
    n_objects: int


def _check_lengths(result: FilterResult, truth: PointCloud) -> None:
    if result.n_points != len(truth):
        raise DataError(
            f"result covers {result.n_points} points but truth cloud has {len(truth)}")


def _truth_foreground(truth: PointCloud, excluded_classes) -> np.ndarray:
    """Boolean mask of ground-truth foreground points.

    Unlabeled points and points of excluded classes count as background.
    """
    if truth.class_id is None:
        return np.zeros(len(truth), dtype=bool)
    mask = truth.class_id != UNLABELED
    for cls in excluded_classes:
        mask &= truth.class_id != cls
    return mask


def _predicted_foreground(result: FilterResult) -> np.ndarray:
    mask = np.zeros(result.n_points, dtype=bool)
    mask[result.foreground_indices] = True
    return mask


def point_metrics(result: FilterResult, truth: PointCloud,
                  excluded_classes=frozenset(),
                  positive: str = "foreground") -> PointMetrics:
    """Confusion counts and derived ratios over all points.

    positive="background" swaps the positive class (diagnostic only).
    """
    _check_lengths(result, truth)
    truth_fg = _truth_foreground(truth, excluded_classes)
    pred_fg = _predicted_foreground(result)
    if positive == "background":
        truth_fg, pred_fg = ~truth_fg, ~pred_fg
    elif positive != "foreground":
        raise DataError(f"positive must be 'foreground' or 'background', got {positive!r}")
    tp = int((truth_fg & pred_fg).sum())
    fp = int((~truth_fg & pred_fg).sum())
    fn = int((truth_fg & ~pred_fg).sum())
    tn = int((~truth_fg & ~pred_fg).sum())
    return PointMetrics.from_counts(tp, fp, fn, tn)


def object_fractions(result: FilterResult, truth: PointCloud,
                     excluded_classes=frozenset()) -> dict[int, tuple[int, float]]:
    """Per ground-truth instance: (class_id, detected-point fraction)."""
    _check_lengths(result, truth)
    if truth.instance_id is None:
        return {}
    labeled = (truth.instance_id != UNLABELED) & _truth_foreground(truth, excluded_classes)
    if not labeled.any():
        return {}
    pred_fg = _predicted_foreground(result)
    ids = truth.instance_id[labeled]
    uniq, inverse = np.unique(ids, return_inverse=True)
    totals = np.bincount(inverse, minlength=len(uniq))
    detected = np.bincount(inverse, weights=pred_fg[labeled].astype(np.float64),
                           minlength=len(uniq))
    classes = truth.class_id[labeled]
    out = {}
    for k, inst in enumerate(uniq):
        cls = int(classes[np.flatnonzero(inverse == k)[0]])
        out[int(inst)] = (cls, float(detected[k]) / float(totals[k]))
    return out


def object_metrics(result: FilterResult, truth: PointCloud,
                   tpr_threshold: float = 0.5,
                   excluded_classes=frozenset()) -> ObjectMetrics:
    """Object detection rate and mean detected-point fraction.

    An object counts as detected when its fraction strictly exceeds the
    threshold, so a fraction exactly at the threshold is a miss.
    """
    fractions = object_fractions(result, truth, excluded_classes)
    if not fractions:
        raise DataError("no ground-truth objects after class exclusion")
    fracs = tuple(frac for _, frac in fractions.values())
    return _object_metrics_from_fractions(fracs, tpr_threshold)


def _object_metrics_from_fractions(fracs, tpr_threshold: float) -> ObjectMetrics:
    n = len(fracs)
    arr = np.asarray(fracs, dtype=np.float64)
    return ObjectMetrics(
        n_objects=n,
        per_object_fraction=tuple(fracs),
        tpr=_ratio(int((arr > tpr_threshold).sum()), n),
        completeness=_ratio(float(arr.sum()), n),
        tpr_threshold=tpr_threshold,
    )


def per_class_metrics(result: FilterResult, truth: PointCloud,
                      tpr_threshold: float = 0.5,
                      excluded_classes=frozenset()) -> dict[int, ClassMetrics]:
    """Recall, TPR, and completeness restricted to each class.

    Precision-family metrics are undefined per class: the filter does
    not assign classes to its foreground predictions, so false positives
    cannot be attributed to any class.
    """
    _check_lengths(result, truth)
    out: dict[int, ClassMetrics] = {}
    truth_fg = _truth_foreground(truth, excluded_classes)
    if truth.class_id is None or not truth_fg.any():
        return out
    pred_fg = _predicted_foreground(result)
    fractions = object_fractions(result, truth, excluded_classes)
    for cls in sorted(int(c) for c in np.unique(truth.class_id[truth_fg])):
        sel = truth_fg & (truth.class_id == cls)
        tp = int((sel & pred_fg).sum())
        fracs = [frac for c, frac in fractions.values() if c == cls]
        om = _object_metrics_from_fractions(tuple(fracs), tpr_threshold)
        out[cls] = ClassMetrics(
            recall=_ratio(tp, int(sel.sum())),
            tpr=om.tpr,
            completeness=om.completeness,
            n_points=int(sel.sum()),
            n_objects=len(fracs),
        )
    return out


class EvalAccumulator:
    """Micro-aggregation of metrics over many (result, truth) pairs.

    Confusion counts are summed, objects are pooled across scans, and
    per-class recall numerators/denominators are summed, so the merge is
    associative and independent of scan order.
    """

    def __init__(self, tpr_threshold: float = 0.5, excluded_classes=frozenset()):
        self.tpr_threshold = tpr_threshold
        self.excluded_classes = frozenset(excluded_classes)
        self.tp = self.fp = self.fn = self.tn = 0
        self._object_fracs: list[tuple[int, float]] = []  # (class_id, fraction)
        self._class_points: dict[int, list[int]] = {}  # class -> [tp, total]

    def add(self, result: FilterResult, truth: PointCloud) -> None:
        pm = point_metrics(result, truth, self.excluded_classes)
        self.tp += pm.tp
        self.fp += pm.fp
        self.fn += pm.fn
        self.tn += pm.tn
        for cls, frac in object_fractions(result, truth, self.excluded_classes).values():
            self._object_fracs.append((cls, frac))
        truth_fg = _truth_foreground(truth, self.excluded_classes)
        if truth_fg.any():
            pred_fg = _predicted_foreground(result)
            for cls in np.unique(truth.class_id[truth_fg]):
                sel = truth_fg & (truth.class_id == cls)
                entry = self._class_points.setdefault(int(cls), [0, 0])
                entry[0] += int((sel & pred_fg).sum())
                entry[1] += int(sel.sum())

    def report(self) -> dict:
        """JSON-ready aggregated report."""
        pm = PointMetrics.from_counts(self.tp, self.fp, self.fn, self.tn)
        fracs = tuple(f for _, f in self._object_fracs)
        om = _object_metrics_from_fractions(fracs, self.tpr_threshold) if fracs else None
        per_class = {}
        for cls in sorted(self._class_points):
            tp, total = self._class_points[cls]
            cls_fracs = tuple(f for c, f in self._object_fracs if c == cls)
            cls_om = _object_metrics_from_fractions(cls_fracs, self.tpr_threshold)
            per_class[str(cls)] = {
                "recall": _ratio(tp, total),
                "tpr": cls_om.tpr,
                "completeness": cls_om.completeness,
                "n_points": total,
                "n_objects": len(cls_fracs),
            }
        return {
            "n_points": pm.tp + pm.fp + pm.fn + pm.tn,
            "tp": pm.tp, "fp": pm.fp, "fn": pm.fn, "tn": pm.tn,
            "precision": pm.precision,
            "recall": pm.recall,
            "f1": pm.f1,
            "iou": pm.iou,
            "n_objects": om.n_objects if om else 0,
            "tpr": om.tpr if om else 0.0,
            "completeness": om.completeness if om else 0.0,
            "tpr_threshold": self.tpr_threshold,
            "per_class": per_class,
        }
