"""Evaluation: per-class AP over tIoU thresholds, average mAP, Recall@kx."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from talkit import _accel
from talkit.core import ActionInstance, Detection

DEFAULT_THRESHOLDS = (0.1, 0.2, 0.3, 0.4, 0.5)

Detections = Mapping[str, Sequence[Detection]]
GroundTruth = Mapping[str, Sequence[ActionInstance]]


def _class_arrays(dets: Detections, gts: GroundTruth, class_id: int):
    """Flatten one class into sorted detection arrays and CSR-grouped GT arrays."""
    videos = sorted(set(gts) | set(dets))
    vindex = {v: i for i, v in enumerate(videos)}
    gt_s, gt_e, ptr = [], [], [0]
    for v in videos:
        for g in gts.get(v, ()):
            if g.label_id == class_id:
                gt_s.append(g.segment.start)
                gt_e.append(g.segment.end)
        ptr.append(len(gt_s))
    rows = [
        (-d.score, d.segment.start, v, d.segment.end)
        for v in videos
        for d in dets.get(v, ())
        if d.label_id == class_id
    ]
    rows.sort()
    return (
        np.array([vindex[r[2]] for r in rows], dtype=np.int64),
        np.array([r[1] for r in rows], dtype=np.float64),
        np.array([r[3] for r in rows], dtype=np.float64),
        np.array(ptr, dtype=np.int64),
        np.array(gt_s, dtype=np.float64),
        np.array(gt_e, dtype=np.float64),
    )


def ap_from_hits(hits: np.ndarray, num_gt: int) -> float:
    """All-point interpolated AP from ranked TP flags."""
    if num_gt == 0:
        return math.nan
    if len(hits) == 0:
        return 0.0
    tp = np.cumsum(hits, dtype=np.float64)
    fp = np.cumsum(~hits, dtype=np.float64)
    recall = tp / num_gt
    precision = tp / (tp + fp)
    mrec = np.concatenate([[0.0], recall, [1.0]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    idx = np.nonzero(mrec[1:] != mrec[:-1])[0] + 1
    return float(np.sum((mrec[idx] - mrec[idx - 1]) * mpre[idx]))


def average_precision(dets: Detections, gts: GroundTruth, class_id: int, tiou_thr: float) -> float:
    """AP of one class pooled over videos; NaN when the class has no GT."""
    det_group, det_s, det_e, ptr, gt_s, gt_e = _class_arrays(dets, gts, class_id)
    if len(gt_s) == 0:
        return math.nan
    hits = _accel.greedy_match_kernel(det_group, det_s, det_e, ptr, gt_s, gt_e, float(tiou_thr))
    return ap_from_hits(np.asarray(hits, dtype=bool), len(gt_s))


def _classes(gts: GroundTruth) -> list[int]:
    return sorted({g.label_id for insts in gts.values() for g in insts})


def mean_ap(
    dets: Detections, gts: GroundTruth, thresholds: Sequence[float] = DEFAULT_THRESHOLDS
) -> tuple[dict[float, float], float, dict[float, dict[int, float]]]:
    """Returns (mAP per threshold, average mAP, AP per threshold per class).

    Only classes with at least one GT instance enter the mean.
    """
    classes = _classes(gts)
    per_class = {t: {c: average_precision(dets, gts, c, t) for c in classes} for t in thresholds}
    maps = {t: (float(np.mean(list(per_class[t].values()))) if classes else 0.0) for t in thresholds}
    return maps, float(np.mean(list(maps.values()))), per_class


def recall_at_kx(dets: Detections, gts: GroundTruth, k: float = 1, tiou_thr: float = 0.5) -> float:
    """Fraction of GT matched within the top k*x detections of its (video, class)."""
    total = 0
    matched = 0
    for vid, insts in gts.items():
        by_class: dict[int, list[ActionInstance]] = {}
        for g in insts:
            by_class.setdefault(g.label_id, []).append(g)
        vdets = dets.get(vid, ())
        for c, cg in by_class.items():
            total += len(cg)
            top = sorted((d for d in vdets if d.label_id == c), key=lambda d: (-d.score, d.segment.start))
            top = top[: int(math.floor(k * len(cg)))]
            if not top:
                continue
            hits = _accel.greedy_match_kernel(
                np.zeros(len(top), dtype=np.int64),
                np.array([d.segment.start for d in top], dtype=np.float64),
                np.array([d.segment.end for d in top], dtype=np.float64),
                np.array([0, len(cg)], dtype=np.int64),
                np.array([g.segment.start for g in cg], dtype=np.float64),
                np.array([g.segment.end for g in cg], dtype=np.float64),
                float(tiou_thr),
            )
            matched += int(np.sum(hits))
    return matched / total if total else 0.0


@dataclass
class EvalReport:
    thresholds: list[float]
    ap: dict[float, dict[int, float]]
    mAP: dict[float, float]
    average_mAP: float
    recall_at_1x_tiou05: float
    counts: dict = field(default_factory=dict)
    recall_at_kx: dict | None = None

    def to_dict(self) -> dict:
        def key(t):
            return f"{t:.2f}"

        return {
            "thresholds": list(self.thresholds),
            "ap": {key(t): {str(c): v for c, v in cls.items()} for t, cls in self.ap.items()},
            "mAP": {key(t): v for t, v in self.mAP.items()},
            "average_mAP": self.average_mAP,
            "recall_at_1x_tiou05": self.recall_at_1x_tiou05,
            "recall_at_kx": self.recall_at_kx,
            "counts": self.counts,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=False)

    def format_table(self) -> str:
        lines = ["tIoU   mAP(%)"]
        for t in self.thresholds:
            lines.append(f"{t:.2f}   {100 * self.mAP[t]:.2f}")
        lines.append(f"Average mAP (%): {100 * self.average_mAP:.2f}")
        lines.append(f"Recall@1x tIoU=0.5 (%): {100 * self.recall_at_1x_tiou05:.2f}")
        if self.recall_at_kx and (self.recall_at_kx["k"] != 1 or self.recall_at_kx["tiou"] != 0.5):
            r = self.recall_at_kx
            lines.append(f"Recall@{r['k']:g}x tIoU={r['tiou']:g} (%): {100 * r['value']:.2f}")
        return "\n".join(lines)


def evaluate(
    dets: Detections,
    gts: GroundTruth,
    thresholds: Sequence[float] = DEFAULT_THRESHOLDS,
    k: float = 1,
    recall_tiou: float = 0.5,
    num_classes: int | None = None,
) -> EvalReport:
    thresholds = [float(t) for t in thresholds]
    maps, avg, per_class = mean_ap(dets, gts, thresholds)
    gt_counts: dict[int, int] = {}
    for insts in gts.values():
        for g in insts:
            gt_counts[g.label_id] = gt_counts.get(g.label_id, 0) + 1
    counts = {
        "gt_per_class": {str(c): n for c, n in sorted(gt_counts.items())},
        "detections_used": int(sum(len(dets.get(v, ())) for v in gts)),
    }
    if num_classes is not None:
        counts["classes_without_gt"] = [c for c in range(num_classes) if c not in gt_counts]
    r1 = recall_at_kx(dets, gts, 1, 0.5)
    rk = r1 if (k == 1 and recall_tiou == 0.5) else recall_at_kx(dets, gts, k, recall_tiou)
    return EvalReport(
        thresholds=thresholds,
        ap=per_class,
        mAP=maps,
        average_mAP=avg,
        recall_at_1x_tiou05=r1,
        counts=counts,
        recall_at_kx={"k": k, "tiou": recall_tiou, "value": rk},
    )
