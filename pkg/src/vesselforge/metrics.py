"""Segmentation quality metrics: Dice, normalized surface Dice, Chamfer
distance, and two F1 aggregations, per class and aggregated.

NSD and Chamfer share one surface definition: centers of voxels with at
least one six-neighbor outside the mask, in millimeters.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import MetricError
from .volume import BinaryMask, LabelVolume, surface_points


@dataclass
class MetricsReport:
    per_class: dict = field(default_factory=dict)  # class -> {dice, nsd, chamfer_mm}
    macro_dice: float = 0.0
    detection_f1: float = 0.0
    micro_f1: float = 0.0
    nsd_tau_mm: float = 1.0
    by_error_kind: dict | None = None

    def to_dict(self) -> dict:
        d = {
            "per_class": {str(k): v for k, v in self.per_class.items()},
            "macro_dice": self.macro_dice,
            "detection_f1": self.detection_f1,
            "micro_f1": self.micro_f1,
            "nsd_tau_mm": self.nsd_tau_mm,
        }
        if self.by_error_kind is not None:
            d["by_error_kind"] = self.by_error_kind
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def write_kind_csv(self, path) -> None:
        """Grouped per-error-kind table: rows = kind, columns = deltas."""
        kinds = sorted((self.by_error_kind or {}))
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["error_kind", "mean_dice_delta", "count"])
            for k in kinds:
                row = self.by_error_kind[k]
                w.writerow([k, f"{row['mean_dice_delta']:.6f}", row["count"]])


def _check_dims(a: BinaryMask | LabelVolume, b: BinaryMask | LabelVolume):
    if a.dims != b.dims:
        raise MetricError(f"dimension mismatch: {a.dims} vs {b.dims}")


def dice(pred: BinaryMask, gt: BinaryMask) -> float:
    """2|P∩G| / (|P|+|G|); 1 when both masks are empty."""
    _check_dims(pred, gt)
    p = int(pred.bits.sum())
    g = int(gt.bits.sum())
    if p + g == 0:
        return 1.0
    inter = int((pred.bits & gt.bits).sum())
    return 2.0 * inter / (p + g)


def nsd(pred: BinaryMask, gt: BinaryMask, tau_mm: float = 1.0) -> float:
    """Fraction of both surfaces within tau of the other surface."""
    _check_dims(pred, gt)
    if tau_mm <= 0:
        raise MetricError("tau must be positive")
    if not np.allclose(pred.spacing, gt.spacing):
        raise MetricError("spacing mismatch")
    sp = surface_points(pred)
    sg = surface_points(gt)
    if len(sp) == 0 and len(sg) == 0:
        return 1.0
    if len(sp) == 0 or len(sg) == 0:
        return 0.0
    tp = cKDTree(sp)
    tg = cKDTree(sg)
    dp = tg.query(sp)[0]
    dg = tp.query(sg)[0]
    eps = 1e-9
    hits = int((dp <= tau_mm + eps).sum()) + int((dg <= tau_mm + eps).sum())
    return hits / (len(sp) + len(sg))


def chamfer(pred: BinaryMask, gt: BinaryMask) -> float:
    """Symmetric mean nearest-surface distance in millimeters."""
    _check_dims(pred, gt)
    if not np.allclose(pred.spacing, gt.spacing):
        raise MetricError("spacing mismatch")
    sp = surface_points(pred)
    sg = surface_points(gt)
    if len(sp) == 0 or len(sg) == 0:
        raise MetricError("undefined chamfer: empty surface")
    tp = cKDTree(sp)
    tg = cKDTree(sg)
    return 0.5 * (float(tg.query(sp)[0].mean()) + float(tp.query(sg)[0].mean()))


def f1_scores(pred: LabelVolume, gt: LabelVolume,
              detection_dice_threshold: float = 0.5) -> dict:
    """Detection F1 over classes (per-class Dice >= threshold counts as TP)
    and micro F1 over pooled binary foreground voxels."""
    _check_dims(pred, gt)
    gt_classes = set(int(c) for c in np.unique(gt.labels)) - {0}
    pred_classes = set(int(c) for c in np.unique(pred.labels)) - {0}
    tp = fn = 0
    for c in gt_classes:
        d = dice(pred.class_mask(c), gt.class_mask(c))
        if d >= detection_dice_threshold:
            tp += 1
        else:
            fn += 1
    fp = len(pred_classes - gt_classes)
    detection_f1 = 2 * tp / (2 * tp + fp + fn) if (2 * tp + fp + fn) else 1.0

    p = pred.labels != 0
    g = gt.labels != 0
    inter = int((p & g).sum())
    denom = int(p.sum()) + int(g.sum())
    micro_f1 = 2 * inter / denom if denom else 1.0
    return {"detection_f1": detection_f1, "micro_f1": micro_f1}


def evaluate(pred: LabelVolume, gt: LabelVolume, tau_mm: float = 1.0,
             detection_dice_threshold: float = 0.5,
             error_context: list | None = None) -> MetricsReport:
    """Whole-volume report over classes present in GT (plus spurious pred
    classes, which contribute 0 Dice).

    ``error_context`` optionally supplies [(kind, class_id, input_dice)]
    tuples to group per-kind Dice deltas against the corrupted input.
    """
    _check_dims(pred, gt)
    if not np.allclose(pred.spacing, gt.spacing):
        raise MetricError("spacing mismatch")
    gt_classes = sorted(set(int(c) for c in np.unique(gt.labels)) - {0})
    pred_only = sorted((set(int(c) for c in np.unique(pred.labels)) - {0})
                       - set(gt_classes))
    per_class = {}
    dices = []
    for c in gt_classes:
        pm, gm = pred.class_mask(c), gt.class_mask(c)
        d = dice(pm, gm)
        row = {"dice": d, "nsd": nsd(pm, gm, tau_mm)}
        try:
            row["chamfer_mm"] = chamfer(pm, gm)
        except MetricError:
            row["chamfer_mm"] = None
        per_class[c] = row
        dices.append(d)
    for c in pred_only:
        per_class[c] = {"dice": 0.0, "nsd": 0.0, "chamfer_mm": None}
        dices.append(0.0)
    report = MetricsReport(
        per_class=per_class,
        macro_dice=float(np.mean(dices)) if dices else 1.0,
        nsd_tau_mm=tau_mm,
        **f1_scores(pred, gt, detection_dice_threshold),
    )
    if error_context:
        grouped: dict[str, list[float]] = {}
        for kind, class_id, input_dice in error_context:
            row = per_class.get(int(class_id))
            if row is None:
                continue
            grouped.setdefault(kind, []).append(row["dice"] - input_dice)
        report.by_error_kind = {
            k: {"mean_dice_delta": float(np.mean(v)), "count": len(v)}
            for k, v in grouped.items()
        }
    return report
