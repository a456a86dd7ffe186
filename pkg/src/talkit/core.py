"""Domain types and interval geometry.

All times are real-valued seconds. Grid indices only exist inside the model
and decoder.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field


class EmptySegmentError(ValueError):
    """Raised when clipping leaves nothing of a segment."""


@dataclass(frozen=True)
class Segment:
    start: float
    end: float

    def __post_init__(self):
        s, e = float(self.start), float(self.end)
        if not (math.isfinite(s) and math.isfinite(e)):
            raise ValueError(f"segment endpoints must be finite, got [{s}, {e}]")
        if not s < e:
            raise ValueError(f"degenerate segment: start {s} >= end {e}")
        object.__setattr__(self, "start", s)
        object.__setattr__(self, "end", e)

    @property
    def length(self) -> float:
        return self.end - self.start

    @property
    def center(self) -> float:
        return 0.5 * (self.start + self.end)


@dataclass(frozen=True)
class ActionInstance:
    label_id: int
    segment: Segment

    def __post_init__(self):
        if int(self.label_id) != self.label_id or self.label_id < 0:
            raise ValueError(f"label_id must be a non-negative integer, got {self.label_id}")
        object.__setattr__(self, "label_id", int(self.label_id))


@dataclass(frozen=True)
class Detection:
    label_id: int
    score: float
    segment: Segment

    def __post_init__(self):
        if int(self.label_id) != self.label_id or self.label_id < 0:
            raise ValueError(f"label_id must be a non-negative integer, got {self.label_id}")
        score = float(self.score)
        if not 0.0 <= score <= 1.0:
            raise ValueError(f"score must lie in [0, 1], got {score}")
        object.__setattr__(self, "label_id", int(self.label_id))
        object.__setattr__(self, "score", score)


@dataclass(frozen=True)
class VideoRecord:
    video_id: str
    duration: float
    instances: tuple[ActionInstance, ...] = field(default_factory=tuple)

    def __post_init__(self):
        duration = float(self.duration)
        if not (math.isfinite(duration) and duration > 0):
            raise ValueError(f"video {self.video_id!r}: duration must be positive, got {duration}")
        object.__setattr__(self, "duration", duration)
        object.__setattr__(self, "instances", tuple(self.instances))
        for idx, inst in enumerate(self.instances):
            if inst.segment.start < 0 or inst.segment.end > duration:
                raise ValueError(
                    f"video {self.video_id!r}: instance {idx} "
                    f"[{inst.segment.start}, {inst.segment.end}] lies outside [0, {duration}]"
                )


def tiou(a: Segment, b: Segment) -> float:
    """Temporal IoU of two segments; 0 when disjoint."""
    inter = min(a.end, b.end) - max(a.start, b.start)
    if inter <= 0:
        return 0.0
    union = max(a.end, b.end) - min(a.start, b.start)
    return inter / union


def clip_segment(s: Segment, duration: float) -> Segment:
    """Clamp both endpoints to [0, duration].

    Raises EmptySegmentError when nothing positive-length remains.
    """
    if not duration > 0:
        raise ValueError(f"duration must be positive, got {duration}")
    start = min(max(s.start, 0.0), duration)
    end = min(max(s.end, 0.0), duration)
    if not start < end:
        raise EmptySegmentError(f"segment [{s.start}, {s.end}] is empty after clipping to [0, {duration}]")
    if start == s.start and end == s.end:
        return s
    return Segment(start, end)
