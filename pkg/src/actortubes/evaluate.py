"""Recall@IoU, per-class average precision, mAP, and recall-vs-budget curves.

A ground-truth tube counts as recalled when at least one of the first n
proposals of its video overlaps it at or above the IoU threshold. AP ranks
scored tubes across videos, greedily matches each to the best unmatched
same-video ground truth, and integrates the precision-recall curve after
making precision monotone non-increasing from the right (trapezoidal area
over the distinct-recall envelope points).
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import ValidationError
from .geometry import Tube, tube_iou
from .ingest import FORMAT_VERSION, GroundTruth

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RecallReport:
    thetas: tuple[float, ...]
    budgets: tuple[int, ...]
    values: np.ndarray  # (len(thetas), len(budgets))
    num_instances: int


@dataclass(frozen=True)
class ClassAP:
    class_id: int
    class_name: str
    ap: float
    num_gt: int
    num_detections: int
    matched: int


@dataclass(frozen=True)
class APReport:
    theta: float
    per_class: tuple[ClassAP, ...]
    mean_ap: float
    skipped_classes: tuple[int, ...]  # classes with zero ground truth


def _gt_instances(gt: GroundTruth) -> list[tuple[str, Tube]]:
    out = []
    for vid, instances in gt.videos.items():
        for inst in instances:
            out.append((vid, inst.tube))
    return out


def recall_at(
    proposals: Mapping[str, Sequence[Tube]],
    gt: GroundTruth,
    theta: float,
    budget: int,
) -> float:
    """Fraction of ground-truth tubes matched by one of the first ``budget``
    proposals of their video at tube IoU >= theta."""
    if not 0.0 < theta <= 1.0:
        raise ValidationError(f"theta must lie in (0, 1], got {theta}")
    if budget < 1:
        raise ValidationError("budget must be >= 1")
    instances = _gt_instances(gt)
    if not instances:
        raise ValueError("recall is undefined without ground-truth instances")
    recalled = 0
    for vid, gt_tube in instances:
        for cand in list(proposals.get(vid, ()))[:budget]:
            if tube_iou(cand, gt_tube) >= theta:
                recalled += 1
                break
    return recalled / len(instances)


def recall_curve(
    proposals: Mapping[str, Sequence[Tube]],
    gt: GroundTruth,
    thetas: Sequence[float],
    budgets: Sequence[int],
) -> RecallReport:
    """Full recall grid over IoU thresholds and proposal budgets."""
    instances = _gt_instances(gt)
    if not instances:
        raise ValueError("recall is undefined without ground-truth instances")
    thetas = tuple(float(t) for t in thetas)
    budgets = tuple(int(b) for b in budgets)
    if any(b < 1 for b in budgets):
        raise ValidationError("budgets must be >= 1")
    # best achievable IoU per instance at each budget, shared across thetas
    values = np.zeros((len(thetas), len(budgets)))
    best = np.zeros((len(instances), len(budgets)))
    max_budget = max(budgets, default=0)
    for ii, (vid, gt_tube) in enumerate(instances):
        cands = list(proposals.get(vid, ()))[:max_budget]
        prefix = 0.0
        prefix_best = []
        for cand in cands:
            prefix = max(prefix, tube_iou(cand, gt_tube))
            prefix_best.append(prefix)
        for bi, budget in enumerate(budgets):
            if prefix_best:
                best[ii, bi] = prefix_best[min(budget, len(prefix_best)) - 1]
    for ti, theta in enumerate(thetas):
        values[ti] = (best >= theta).mean(axis=0)
    return RecallReport(
        thetas=thetas, budgets=budgets, values=values, num_instances=len(instances)
    )


def _ap_from_flags(tp_flags: Sequence[bool], num_gt: int) -> float:
    tp = np.asarray(tp_flags, dtype=np.float64)
    if tp.size == 0 or tp.sum() == 0:
        return 0.0
    cum_tp = np.cumsum(tp)
    precision = cum_tp / np.arange(1, tp.size + 1)
    recall = cum_tp / num_gt
    for i in range(precision.size - 2, -1, -1):
        precision[i] = max(precision[i], precision[i + 1])
    # first point per distinct positive recall carries the envelope precision
    rs: list[float] = []
    ps: list[float] = []
    for r, p in zip(recall, precision):
        if r > 0 and (not rs or r > rs[-1]):
            rs.append(float(r))
            ps.append(float(p))
    ap = rs[0] * ps[0]
    for i in range(1, len(rs)):
        ap += (rs[i] - rs[i - 1]) * 0.5 * (ps[i] + ps[i - 1])
    return float(ap)


def average_precision(
    scored_tubes: Sequence[tuple[str, float, Tube]],
    gt_tubes: Mapping[str, Sequence[Tube]],
    theta: float,
) -> tuple[float, int]:
    """AP for one class from (video_id, score, tube) detections.

    Detections are ranked by score (ties by video id, then input order) and
    greedily matched to the unmatched same-video ground-truth tube with the
    highest IoU; a detection is a true positive when that IoU reaches theta.
    Returns (ap, number of true positives).
    """
    num_gt = sum(len(v) for v in gt_tubes.values())
    if num_gt == 0:
        raise ValueError("average precision is undefined without ground truth")
    order = sorted(
        range(len(scored_tubes)),
        key=lambda i: (-scored_tubes[i][1], scored_tubes[i][0], i),
    )
    taken: dict[str, set[int]] = {vid: set() for vid in gt_tubes}
    flags: list[bool] = []
    for i in order:
        vid, _, tube = scored_tubes[i]
        candidates = gt_tubes.get(vid, ())
        best_iou = 0.0
        best_j = -1
        for j, gt_tube in enumerate(candidates):
            if j in taken.get(vid, set()):
                continue
            iou = tube_iou(tube, gt_tube)
            if iou > best_iou:
                best_iou = iou
                best_j = j
        if best_j >= 0 and best_iou >= theta:
            taken[vid].add(best_j)
            flags.append(True)
        else:
            flags.append(False)
    return _ap_from_flags(flags, num_gt), int(sum(flags))


def mean_average_precision(
    scored_by_class: Mapping[int, Sequence[tuple[str, float, Tube]]],
    gt: GroundTruth,
    theta: float,
) -> APReport:
    """Unweighted class mean of AP; classes without ground truth are skipped
    with a warning."""
    per_class: list[ClassAP] = []
    skipped: list[int] = []
    for class_id in sorted(gt.classes):
        gt_tubes = {
            vid: [inst.tube for inst in instances if inst.class_id == class_id]
            for vid, instances in gt.videos.items()
        }
        num_gt = sum(len(v) for v in gt_tubes.values())
        if num_gt == 0:
            logger.warning(
                "class %d (%s) has no ground truth; excluded from mAP",
                class_id,
                gt.classes[class_id],
            )
            skipped.append(class_id)
            continue
        detections = list(scored_by_class.get(class_id, ()))
        ap, matched = average_precision(detections, gt_tubes, theta)
        per_class.append(
            ClassAP(
                class_id=class_id,
                class_name=gt.classes[class_id],
                ap=ap,
                num_gt=num_gt,
                num_detections=len(detections),
                matched=matched,
            )
        )
    if not per_class:
        raise ValueError("no class has ground truth; mAP is undefined")
    mean_ap = float(np.mean([c.ap for c in per_class]))
    return APReport(
        theta=theta,
        per_class=tuple(per_class),
        mean_ap=mean_ap,
        skipped_classes=tuple(skipped),
    )


# ---------------------------------------------------------------------------
# report emission
# ---------------------------------------------------------------------------


def emit_recall(report: RecallReport, base_path: Path | str) -> None:
    """Write <base>.tsv (theta, budget, recall rows) and <base>.json."""
    base = Path(base_path)
    lines = ["theta\tbudget\trecall"]
    for ti, theta in enumerate(report.thetas):
        for bi, budget in enumerate(report.budgets):
            lines.append(f"{theta:g}\t{budget}\t{report.values[ti, bi]:.6f}")
    base.with_suffix(".tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    doc = {
        "format_version": FORMAT_VERSION,
        "num_instances": report.num_instances,
        "thetas": list(report.thetas),
        "budgets": list(report.budgets),
        "recall": [[float(v) for v in row] for row in report.values],
    }
    base.with_suffix(".json").write_text(
        json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def emit_ap(report: APReport, base_path: Path | str) -> None:
    """Write <base>.tsv (per-class AP rows) and <base>.json with the mAP."""
    base = Path(base_path)
    lines = ["class_id\tclass_name\tap\tnum_gt\tnum_detections\tmatched"]
    for c in report.per_class:
        lines.append(
            f"{c.class_id}\t{c.class_name}\t{c.ap:.6f}\t{c.num_gt}\t{c.num_detections}\t{c.matched}"
        )
    base.with_suffix(".tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    doc = {
        "format_version": FORMAT_VERSION,
        "theta": report.theta,
        "map": report.mean_ap,
        "skipped_classes": list(report.skipped_classes),
        "per_class": [
            {
                "class_id": c.class_id,
                "class_name": c.class_name,
                "ap": c.ap,
                "num_gt": c.num_gt,
                "num_detections": c.num_detections,
                "matched": c.matched,
            }
            for c in report.per_class
        ],
    }
    base.with_suffix(".json").write_text(
        json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
