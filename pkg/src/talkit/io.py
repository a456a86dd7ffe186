"""File formats: binary feature matrices, annotations, manifests, detections.

Feature file layout (little-endian)::

    offset  size  field
    0       4     magic  b"TKF1"
    4       1     dtype_code (0 = float32)
    5       4     T (uint32)
    9       4     D (uint32)
    13      3     zero padding
    16      T*D*4 row-major float32 payload
"""

from __future__ import annotations

import json
import math
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from talkit.core import ActionInstance, Detection, Segment, VideoRecord

FEATURE_MAGIC = b"TKF1"
HEADER_SIZE = 16
_HEADER = struct.Struct("<4sBII3s")
DETECTIONS_VERSION = "1.0"
DEFAULT_MAX_PREDICTIONS = 2000


class FormatError(ValueError):
    """A file does not follow its declared binary or JSON layout."""


class ValidationError(ValueError):
    """A file parsed but its content violates a domain invariant."""


# ---------------------------------------------------------------- features


def encode_feature_matrix(matrix) -> bytes:
    m = np.asarray(matrix)
    if m.ndim != 2:
        raise ValueError(f"feature matrix must be 2-D, got shape {m.shape}")
    t, d = m.shape
    if t == 0 or d == 0:
        raise ValueError(f"feature matrix must be non-empty, got shape {m.shape}")
    m32 = np.ascontiguousarray(m, dtype="<f4")
    if not np.isfinite(m32).all():
        raise ValueError("feature matrix contains non-finite values")
    return _HEADER.pack(FEATURE_MAGIC, 0, t, d, b"\0\0\0") + m32.tobytes()


def decode_feature_matrix(buf: bytes) -> np.ndarray:
    if len(buf) < HEADER_SIZE:
        raise FormatError(f"header: need {HEADER_SIZE} bytes, got {len(buf)}")
    magic, dtype_code, t, d, pad = _HEADER.unpack_from(buf, 0)
    if magic != FEATURE_MAGIC:
        raise FormatError(f"magic: expected {FEATURE_MAGIC!r}, got {magic!r}")
    if dtype_code != 0:
        raise FormatError(f"dtype_code: expected 0 (float32), got {dtype_code}")
    if t == 0 or d == 0:
        raise FormatError(f"T/D: both must be positive, got T={t} D={d}")
    if pad != b"\0\0\0":
        raise FormatError("padding: header bytes 13..15 must be zero")
    need = HEADER_SIZE + t * d * 4
    if len(buf) < need:
        raise FormatError(f"payload: truncated, expected {need - HEADER_SIZE} bytes, got {len(buf) - HEADER_SIZE}")
    if len(buf) > need:
        raise FormatError(f"payload: {len(buf) - need} trailing bytes after T*D floats")
    m = np.frombuffer(buf, dtype="<f4", count=t * d, offset=HEADER_SIZE).reshape(t, d)
    if not np.isfinite(m).all():
        raise FormatError("payload: non-finite value")
    return m.astype(np.float32)


def write_feature_file(path, matrix) -> None:
    Path(path).write_bytes(encode_feature_matrix(matrix))


def read_feature_file(path) -> np.ndarray:
    return decode_feature_matrix(Path(path).read_bytes())


def read_feature_header(path) -> tuple[int, int]:
    with open(path, "rb") as fh:
        head = fh.read(HEADER_SIZE)
    if len(head) < HEADER_SIZE:
        raise FormatError(f"header: need {HEADER_SIZE} bytes, got {len(head)}")
    magic, dtype_code, t, d, _ = _HEADER.unpack(head)
    if magic != FEATURE_MAGIC:
        raise FormatError(f"magic: expected {FEATURE_MAGIC!r}, got {magic!r}")
    if dtype_code != 0:
        raise FormatError(f"dtype_code: expected 0 (float32), got {dtype_code}")
    return t, d


# ------------------------------------------------------------- annotations


def _require(cond, msg):
    if not cond:
        raise ValidationError(msg)


def parse_annotations(doc) -> tuple[list[VideoRecord], int]:
    """Validate an annotation document; returns (videos, num_classes)."""
    _require(isinstance(doc, dict), "annotations: top level must be an object")
    _require("videos" in doc and isinstance(doc["videos"], list), "annotations: missing 'videos' list")
    num_classes = doc.get("num_classes")
    _require(
        isinstance(num_classes, int) and not isinstance(num_classes, bool) and num_classes > 0,
        f"annotations: 'num_classes' must be a positive integer, got {num_classes!r}",
    )
    videos = []
    seen = set()
    for vi, v in enumerate(doc["videos"]):
        _require(isinstance(v, dict), f"videos[{vi}]: must be an object")
        vid = v.get("video_id")
        _require(isinstance(vid, str) and vid, f"videos[{vi}]: 'video_id' must be a non-empty string")
        _require(vid not in seen, f"video {vid!r}: duplicate video_id")
        seen.add(vid)
        dur = v.get("duration")
        _require(
            isinstance(dur, (int, float)) and not isinstance(dur, bool) and math.isfinite(dur) and dur > 0,
            f"video {vid!r}: 'duration' must be a positive number, got {dur!r}",
        )
        raw = v.get("instances", [])
        _require(isinstance(raw, list), f"video {vid!r}: 'instances' must be a list")
        instances = []
        for ii, inst in enumerate(raw):
            where = f"video {vid!r} instance {ii}"
            _require(isinstance(inst, dict), f"{where}: must be an object")
            label = inst.get("label_id")
            _require(
                isinstance(label, int) and not isinstance(label, bool) and 0 <= label < num_classes,
                f"{where}: label_id {label!r} outside [0, {num_classes})",
            )
            s, e = inst.get("start"), inst.get("end")
            _require(
                all(isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x) for x in (s, e)),
                f"{where}: start/end must be finite numbers",
            )
            _require(s < e, f"{where}: end {e} <= start {s}")
            _require(0 <= s and e <= dur, f"{where}: [{s}, {e}] outside [0, {dur}]")
            instances.append(ActionInstance(label, Segment(s, e)))
        videos.append(VideoRecord(vid, float(dur), tuple(instances)))
    return videos, num_classes


def read_annotations(path) -> list[VideoRecord]:
    videos, _ = read_annotations_with_classes(path)
    return videos


def read_annotations_with_classes(path) -> tuple[list[VideoRecord], int]:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: not valid UTF-8 JSON ({exc})") from exc
    return parse_annotations(doc)


def annotations_to_dict(videos: Sequence[VideoRecord], num_classes: int) -> dict:
    return {
        "num_classes": int(num_classes),
        "videos": [
            {
                "video_id": v.video_id,
                "duration": v.duration,
                "instances": [
                    {"label_id": i.label_id, "start": i.segment.start, "end": i.segment.end}
                    for i in v.instances
                ],
            }
            for v in videos
        ],
    }


def write_annotations(path, videos: Sequence[VideoRecord], num_classes: int) -> None:
    _atomic_write_text(path, json.dumps(annotations_to_dict(videos, num_classes), indent=1) + "\n")


# -------------------------------------------------------------- detections


def detection_sort_key(det: Detection):
    return (-det.score, det.segment.start, det.label_id)


def detections_to_dict(results: Mapping[str, Sequence[Detection]], cap: int = DEFAULT_MAX_PREDICTIONS) -> dict:
    out = {}
    for vid in sorted(results):
        dets = results[vid]
        if len(dets) > cap:
            raise ValueError(f"video {vid!r}: {len(dets)} detections exceed the cap of {cap}")
        out[vid] = [
            {"label_id": d.label_id, "score": d.score, "segment": [d.segment.start, d.segment.end]}
            for d in sorted(dets, key=detection_sort_key)
        ]
    return {"version": DETECTIONS_VERSION, "detect_results": out}


def dumps_detections(results: Mapping[str, Sequence[Detection]], cap: int = DEFAULT_MAX_PREDICTIONS) -> str:
    # repr-based float formatting in json is shortest round-trip, so output is deterministic
    return json.dumps(detections_to_dict(results, cap), separators=(",", ":"))


def write_detections(path, results: Mapping[str, Sequence[Detection]], cap: int = DEFAULT_MAX_PREDICTIONS) -> None:
    _atomic_write_text(path, dumps_detections(results, cap))


def parse_detections(doc, cap: int = DEFAULT_MAX_PREDICTIONS) -> dict[str, list[Detection]]:
    _require(isinstance(doc, dict), "detections: top level must be an object")
    _require(doc.get("version") == DETECTIONS_VERSION, f"detections: version must be {DETECTIONS_VERSION!r}")
    res = doc.get("detect_results")
    _require(isinstance(res, dict), "detections: 'detect_results' must be an object")
    out = {}
    for vid, entries in res.items():
        _require(isinstance(entries, list), f"video {vid!r}: detections must be a list")
        _require(len(entries) <= cap, f"video {vid!r}: {len(entries)} detections exceed the cap of {cap}")
        dets = []
        for i, e in enumerate(entries):
            where = f"video {vid!r} detection {i}"
            _require(isinstance(e, dict), f"{where}: must be an object")
            label, score, seg = e.get("label_id"), e.get("score"), e.get("segment")
            _require(isinstance(label, int) and not isinstance(label, bool) and label >= 0, f"{where}: bad label_id {label!r}")
            _require(
                isinstance(score, (int, float)) and not isinstance(score, bool) and 0 <= score <= 1,
                f"{where}: score {score!r} outside [0, 1]",
            )
            _require(
                isinstance(seg, list)
                and len(seg) == 2
                and all(isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x) for x in seg),
                f"{where}: segment must be [start, end]",
            )
            _require(seg[0] < seg[1], f"{where}: segment end {seg[1]} <= start {seg[0]}")
            dets.append(Detection(label, score, Segment(seg[0], seg[1])))
        out[vid] = dets
    return out


def read_detections(path, cap: int = DEFAULT_MAX_PREDICTIONS) -> dict[str, list[Detection]]:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: not valid UTF-8 JSON ({exc})") from exc
    return parse_detections(doc, cap)


# ---------------------------------------------------------------- manifest


@dataclass(frozen=True)
class SourceEntry:
    path: str
    frames_per_clip: int
    clip_stride_frames: int
    dim: int


@dataclass(frozen=True)
class ManifestEntry:
    video_id: str
    duration: float
    fps: float
    sources: dict[str, SourceEntry]
    subset: str = "train"


@dataclass
class Manifest:
    videos: list[ManifestEntry]
    reference_source: str
    annotations: str | None = None
    root: Path = field(default_factory=Path)

    def resolve(self, rel: str) -> Path:
        p = Path(rel)
        return p if p.is_absolute() else self.root / p

    def source_names(self) -> list[str]:
        return list(self.videos[0].sources) if self.videos else []


def num_clips(duration: float, fps: float, frames_per_clip: int, clip_stride_frames: int) -> int:
    """Number of whole clips of ``frames_per_clip`` frames, every ``clip_stride_frames``."""
    frames = math.floor(duration * fps + 1e-6)
    if frames < frames_per_clip:
        return 0
    return (frames - frames_per_clip) // clip_stride_frames + 1


def manifest_to_dict(m: Manifest) -> dict:
    return {
        "version": "1.0",
        "reference_source": m.reference_source,
        "annotations": m.annotations,
        "videos": [
            {
                "video_id": v.video_id,
                "duration": v.duration,
                "fps": v.fps,
                "subset": v.subset,
                "sources": {
                    name: {
                        "path": s.path,
                        "frames_per_clip": s.frames_per_clip,
                        "clip_stride_frames": s.clip_stride_frames,
                        "dim": s.dim,
                    }
                    for name, s in v.sources.items()
                },
            }
            for v in m.videos
        ],
    }


def write_manifest(path, m: Manifest) -> None:
    _atomic_write_text(path, json.dumps(manifest_to_dict(m), indent=1) + "\n")


def read_manifest(path, check_files: bool = True) -> Manifest:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: not valid UTF-8 JSON ({exc})") from exc
    _require(isinstance(doc, dict) and isinstance(doc.get("videos"), list), "manifest: missing 'videos' list")
    ref = doc.get("reference_source")
    _require(isinstance(ref, str), "manifest: 'reference_source' must be a string")
    m = Manifest(videos=[], reference_source=ref, annotations=doc.get("annotations"), root=path.parent)
    for vi, v in enumerate(doc["videos"]):
        vid = v.get("video_id")
        where = f"manifest video {vid!r}"
        _require(isinstance(vid, str) and vid, f"manifest videos[{vi}]: bad video_id")
        dur, fps = v.get("duration"), v.get("fps")
        _require(isinstance(dur, (int, float)) and dur > 0, f"{where}: bad duration {dur!r}")
        _require(isinstance(fps, (int, float)) and fps > 0, f"{where}: bad fps {fps!r}")
        srcs = v.get("sources")
        _require(isinstance(srcs, dict) and srcs, f"{where}: 'sources' must be a non-empty object")
        _require(ref in srcs, f"{where}: reference source {ref!r} missing")
        sources = {}
        for name, s in srcs.items():
            fields = ("frames_per_clip", "clip_stride_frames", "dim")
            _require(
                isinstance(s, dict) and isinstance(s.get("path"), str)
                and all(isinstance(s.get(k), int) and s.get(k) > 0 for k in fields),
                f"{where} source {name!r}: needs path and positive integer {', '.join(fields)}",
            )
            entry = SourceEntry(s["path"], s["frames_per_clip"], s["clip_stride_frames"], s["dim"])
            if check_files:
                t, d = read_feature_header(m.resolve(entry.path))
                _require(d == entry.dim, f"{where} source {name!r}: declared dim {entry.dim} != file D {d}")
                expect = num_clips(dur, fps, entry.frames_per_clip, entry.clip_stride_frames)
                _require(t == expect, f"{where} source {name!r}: file T {t} != geometry-implied {expect}")
            sources[name] = entry
        m.videos.append(ManifestEntry(vid, float(dur), float(fps), sources, v.get("subset", "train")))
    return m


def _atomic_write_text(path, text: str) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)
