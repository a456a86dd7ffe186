"""Temporal action localization toolkit.

Multi-source feature fusion, a local-attention pyramid localizer with
point-based decoding, multi-class SoftNMS and mAP / Recall@kx evaluation,
plus a seeded synthetic dataset for desk-scale verification.
"""

from talkit.core import (
    ActionInstance,
    Detection,
    EmptySegmentError,
    Segment,
    VideoRecord,
    clip_segment,
    tiou,
)

__version__ = "0.1.0"

__all__ = [
    "ActionInstance",
    "Detection",
    "EmptySegmentError",
    "Segment",
    "VideoRecord",
    "clip_segment",
    "tiou",
]
