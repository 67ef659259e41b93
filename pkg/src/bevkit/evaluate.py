"""BEV average-precision evaluation on axis-aligned boxes.

Ground truths compare as the tight axis-aligned hull of their rotated BEV
footprint. Matching is greedy over score-sorted detections with single-use
ground truths; AP integrates the all-point precision envelope over recall.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import ContractViolation
from .kitti import CLASS_NAMES, GroundTruthObject
from .decode import Proposal

IOU_THRESHOLD = 0.5


def iou_aabb(a, b) -> float:
    """Intersection over union of two (x_lo, y_lo, x_hi, y_hi) boxes."""
    ax0, ay0, ax1, ay1 = a
    bx0, by0, bx1, by1 = b
    area_a = (ax1 - ax0) * (ay1 - ay0)
    area_b = (bx1 - bx0) * (by1 - by0)
    if area_a <= 0 or area_b <= 0:
        raise ContractViolation("boxes must have positive area")
    iw = min(ax1, bx1) - max(ax0, bx0)
    ih = min(ay1, by1) - max(ay0, by0)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (area_a + area_b - inter)


def match_detections(dets: list[Proposal], gts: list[GroundTruthObject],
                     iou_thresh: float = IOU_THRESHOLD) -> list[bool]:
    """Greedy TP/FP assignment, returned in the input detection order.

    Detections are visited by descending score (ties by input index); each
    claims the unmatched same-class ground truth of highest IoU when that
    IoU reaches the threshold.
    """
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))
    gt_boxes = [g.bev_aabb() for g in gts]
    taken = [False] * len(gts)
    flags = [False] * len(dets)
    for i in order:
        det = dets[i]
        best_iou, best_j = 0.0, -1
        for j, gt in enumerate(gts):
            if taken[j] or gt.class_id != det.class_id:
                continue
            iou = iou_aabb(det.aabb, gt_boxes[j])
            if iou > best_iou:
                best_iou, best_j = iou, j
        if best_j >= 0 and best_iou >= iou_thresh:
            taken[best_j] = True
            flags[i] = True
    return flags


def _precision_recall(scores: np.ndarray, flags: np.ndarray,
                      num_gt: int) -> tuple[np.ndarray, np.ndarray]:
    order = np.lexsort((np.arange(len(scores)), -scores))
    tp = np.cumsum(flags[order])
    fp = np.cumsum(~flags[order])
    recall = tp / num_gt
    precision = tp / (tp + fp)
    return recall, precision


def _envelope_area(recall: np.ndarray, precision: np.ndarray) -> float:
    """All-point interpolation: integrate max-precision-at-recall>=r over recall."""
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    prev_r = 0.0
    area = 0.0
    for r, p in zip(recall, envelope):
        if r > prev_r:
            area += (r - prev_r) * p
            prev_r = r
    return float(area)


def average_precision(dets: list[Proposal], gts: list[GroundTruthObject], class_id: int,
                      iou_thresh: float = IOU_THRESHOLD) -> float | None:
    """AP for one class on a single scene; None when neither dets nor gts exist."""
    flags = match_detections(dets, gts, iou_thresh)
    keep = [i for i, d in enumerate(dets) if d.class_id == class_id]
    class_gts = sum(1 for g in gts if g.class_id == class_id)
    return _class_ap(np.array([dets[i].score for i in keep]),
                     np.array([flags[i] for i in keep], dtype=bool), class_gts)


def _class_ap(scores: np.ndarray, flags: np.ndarray, num_gt: int) -> float | None:
    if num_gt == 0:
        return None if len(scores) == 0 else 0.0
    if len(scores) == 0:
        return 0.0
    recall, precision = _precision_recall(scores, flags, num_gt)
    return _envelope_area(recall, precision)


@dataclass
class EvalResult:
    """Per-class AP, mean AP and the backing precision-recall data."""

    per_class_ap: dict[int, float | None]
    mean_ap: float
    pr_points: dict[int, list[tuple[float, float]]]
    counts: dict[int, dict[str, int]]
    iou_thresh: float = IOU_THRESHOLD
    notes: dict = field(default_factory=dict)

    def to_json(self) -> str:
        body = {
            "iou_thresh": self.iou_thresh,
            "mean_ap": self.mean_ap,
            "per_class": {
                CLASS_NAMES[c]: {
                    "ap": self.per_class_ap[c],
                    "counts": self.counts[c],
                    "pr": [[r, p] for r, p in self.pr_points[c]],
                }
                for c in sorted(self.per_class_ap)
            },
            "notes": self.notes,
        }
        return json.dumps(body, sort_keys=True, indent=2) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())


def evaluate_detections(samples: list[tuple[list[Proposal], list[GroundTruthObject]]],
                        n_classes: int = len(CLASS_NAMES),
                        iou_thresh: float = IOU_THRESHOLD) -> EvalResult:
    """Match every sample, pool the flags, then compute AP once per class.

    mean_ap averages the classes whose AP is defined (absent classes are
    skipped; a class with ground truths but no detections scores 0).
    """
    pooled_scores: dict[int, list[float]] = {c: [] for c in range(n_classes)}
    pooled_flags: dict[int, list[bool]] = {c: [] for c in range(n_classes)}
    gt_counts = {c: 0 for c in range(n_classes)}
    for dets, gts in samples:
        flags = match_detections(dets, gts, iou_thresh)
        for det, flag in zip(dets, flags):
            pooled_scores[det.class_id].append(det.score)
            pooled_flags[det.class_id].append(flag)
        for gt in gts:
            gt_counts[gt.class_id] += 1

    per_class_ap: dict[int, float | None] = {}
    pr_points: dict[int, list[tuple[float, float]]] = {}
    counts: dict[int, dict[str, int]] = {}
    for c in range(n_classes):
        scores = np.array(pooled_scores[c])
        flags = np.array(pooled_flags[c], dtype=bool)
        per_class_ap[c] = _class_ap(scores, flags, gt_counts[c])
        if gt_counts[c] > 0 and len(scores) > 0:
            recall, precision = _precision_recall(scores, flags, gt_counts[c])
            pr_points[c] = list(zip(recall.tolist(), precision.tolist()))
        else:
            pr_points[c] = []
        counts[c] = {
            "num_gt": gt_counts[c],
            "num_det": int(len(scores)),
            "num_tp": int(flags.sum()),
            "num_fp": int((~flags).sum()),
        }
    defined = [ap for ap in per_class_ap.values() if ap is not None]
    mean_ap = float(np.mean(defined)) if defined else 0.0
    return EvalResult(per_class_ap, mean_ap, pr_points, counts, iou_thresh)


def ap_vs_layers(per_layer_samples: dict[int, list[tuple[list[Proposal], list[GroundTruthObject]]]],
                 layer_counts: list[int], n_classes: int = len(CLASS_NAMES),
                 iou_thresh: float = IOU_THRESHOLD) -> list[dict]:
    """Evaluate AP per class for each layer count; rows are plot-ready dicts.

    `per_layer_samples` maps the layer count to its (detections, ground
    truths) sample list; the caller produced those with deterministic stride
    layer selection.
    """
    rows = []
    for count in layer_counts:
        result = evaluate_detections(per_layer_samples[count], n_classes, iou_thresh)
        for c in range(n_classes):
            rows.append({"layer_count": count, "class_id": c,
                         "class_name": CLASS_NAMES[c] if c < len(CLASS_NAMES) else str(c),
                         "ap": result.per_class_ap[c]})
        rows.append({"layer_count": count, "class_id": -1, "class_name": "mean",
                     "ap": result.mean_ap})
    return rows


def curve_to_csv(rows: list[dict]) -> str:
    lines = ["layer_count,class,ap"]
    for row in rows:
        ap = row["ap"]
        lines.append(f"{row['layer_count']},{row['class_name']},"
                     f"{'' if ap is None else format(ap, '.6f')}")
    return "".join(line + "\n" for line in lines)
