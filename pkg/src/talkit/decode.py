"""Pyramid outputs to scored segments: thresholding, offsets, SoftNMS, cap."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from talkit import _accel
from talkit.core import Detection, EmptySegmentError, Segment, clip_segment
from talkit.io import detection_sort_key
from talkit.model import PyramidOutput


class DecodeConfigError(ValueError):
    pass


@dataclass
class DecodeConfig:
    score_threshold: float = 0.001
    pre_nms_topk: int = 2000
    softnms_sigma: float = 0.9
    softnms_floor: float = 0.001
    max_predictions: int = 2000
    seconds_per_step: float = 16 / 30

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not value > 0:
                raise DecodeConfigError(f"{name} must be positive, got {value}")

    def to_dict(self) -> dict:
        return asdict(self)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def decode_points(p: PyramidOutput, cfg: DecodeConfig, duration: float) -> list[Detection]:
    """Every valid point/class above threshold becomes a clipped segment.

    A point at index j of level l sits at grid position c = j * stride; its
    segment is ((c - d_start*stride) * dt, (c + d_end*stride) * dt).
    """
    dt = cfg.seconds_per_step
    if not dt > 0:
        raise DecodeConfigError(f"seconds_per_step must be positive, got {dt}")
    dets = []
    for lvl, stride in enumerate(p.strides):
        logits = np.asarray(p.class_logits[lvl], dtype=np.float64)
        offsets = np.asarray(p.offsets[lvl], dtype=np.float64)
        probs = _sigmoid(logits)
        if p.masks:
            probs = probs * np.asarray(p.masks[lvl], dtype=bool)[:, None]
        point_idx, cls_idx = np.nonzero(probs > cfg.score_threshold)
        scores = probs[point_idx, cls_idx]
        if len(scores) > cfg.pre_nms_topk:
            # stable ordering so equal scores pick deterministically
            order = np.lexsort((cls_idx, point_idx, -scores))[: cfg.pre_nms_topk]
            point_idx, cls_idx, scores = point_idx[order], cls_idx[order], scores[order]
        centers = point_idx * float(stride)
        starts = (centers - offsets[point_idx, 0] * stride) * dt
        ends = (centers + offsets[point_idx, 1] * stride) * dt
        for s, e, c, sc in zip(starts, ends, cls_idx, scores):
            if not s < e:
                continue
            try:
                seg = clip_segment(Segment(s, e), duration)
            except EmptySegmentError:
                continue
            dets.append(Detection(int(c), float(sc), seg))
    return dets


def soft_nms(dets: Sequence[Detection], cfg: DecodeConfig) -> list[Detection]:
    """Gaussian-decay SoftNMS applied independently per class."""
    by_class: dict[int, list[Detection]] = {}
    for d in dets:
        by_class.setdefault(d.label_id, []).append(d)
    out = []
    for label, group in by_class.items():
        group = sorted(group, key=detection_sort_key)
        starts = np.array([d.segment.start for d in group], dtype=np.float64)
        ends = np.array([d.segment.end for d in group], dtype=np.float64)
        scores = np.array([d.score for d in group], dtype=np.float64)
        keep, new_scores = _accel.soft_nms_kernel(starts, ends, scores, float(cfg.softnms_sigma), float(cfg.softnms_floor))
        for i, s in zip(keep, new_scores):
            d = group[i]
            out.append(d if s == d.score else Detection(label, float(s), d.segment))
    out.sort(key=detection_sort_key)
    return out


def cap_predictions(dets: Sequence[Detection], max_predictions: int) -> list[Detection]:
    return sorted(dets, key=detection_sort_key)[:max_predictions]


def decode_video(p: PyramidOutput, cfg: DecodeConfig, duration: float) -> list[Detection]:
    return cap_predictions(soft_nms(decode_points(p, cfg, duration), cfg), cfg.max_predictions)
