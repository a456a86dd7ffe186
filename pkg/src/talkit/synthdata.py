"""Seeded synthetic videos with planted action instances.

Each class owns a fixed signature vector per source (orthonormal columns
scaled to unit per-dimension RMS). A clip whose center time falls inside an
instance carries that instance's signature; every clip also carries
Gaussian noise. Instance durations follow a two-part law: a short mode below
``short_cutoff`` seconds with probability ``short_fraction``, else a
log-normal tail above the cutoff.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from talkit import io
from talkit.core import ActionInstance, Detection, Segment, VideoRecord
from talkit.fusion import DEFAULT_SOURCES, FeatureSequence


class GenerationError(ValueError):
    pass


@dataclass
class SourceGeometry:
    frames_per_clip: int
    clip_stride_frames: int
    dim: int
    scale: float = 1.0  # multiplies signal and noise of this source
    signal: float = 1.0  # per-dimension RMS of the class signature


def _default_sources():
    return {name: SourceGeometry(fpc, stride, dim) for name, (fpc, stride, dim) in DEFAULT_SOURCES.items()}


@dataclass
class SynthConfig:
    num_videos: int = 20
    duration_range: tuple[float, float] = (60.0, 130.0)
    num_classes: int = 5
    instances_per_video: tuple[int, int] = (1, 6)
    short_fraction: float = 0.224
    short_cutoff: float = 3.0
    min_duration: float = 1.0
    long_median: float = 8.0
    long_sigma: float = 0.8
    max_instance_duration: float = 60.0
    sources: dict[str, SourceGeometry] = field(default_factory=_default_sources)
    reference_source: str = "slowfast"
    fps: float = 30.0
    noise: float = 1.0
    val_fraction: float = 0.0
    seed: int = 0

    def __post_init__(self):
        self.duration_range = tuple(float(x) for x in self.duration_range)
        self.instances_per_video = tuple(int(x) for x in self.instances_per_video)
        self.sources = {
            k: (v if isinstance(v, SourceGeometry) else SourceGeometry(**v)) for k, v in self.sources.items()
        }
        self.validate()

    def validate(self):
        if not 0 <= self.short_fraction <= 1 or not 0 <= self.val_fraction < 1:
            raise GenerationError("fractions must lie in [0, 1]")
        lo, hi = self.duration_range
        if not 0 < lo <= hi:
            raise GenerationError(f"bad duration_range {self.duration_range}")
        if self.num_videos < 1 or self.num_classes < 1:
            raise GenerationError("num_videos and num_classes must be >= 1")
        nmin, nmax = self.instances_per_video
        if not 0 <= nmin <= nmax:
            raise GenerationError(f"bad instances_per_video {self.instances_per_video}")
        if not 0 < self.min_duration < self.short_cutoff <= self.max_instance_duration:
            raise GenerationError("need 0 < min_duration < short_cutoff <= max_instance_duration")
        if nmin * self.min_duration > lo or (nmax > 0 and self.min_duration > lo):
            raise GenerationError(
                f"infeasible: {nmin} instances of at least {self.min_duration}s cannot fit a {lo}s video"
            )
        if self.reference_source not in self.sources:
            raise GenerationError(f"reference source {self.reference_source!r} not configured")
        for name, s in self.sources.items():
            if s.dim <= 0 or s.frames_per_clip <= 0 or s.clip_stride_frames <= 0:
                raise GenerationError(f"source {name!r}: dims and geometry must be positive")
        if self.noise < 0:
            raise GenerationError("noise must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        return cls(**d)


@dataclass
class SynthDataset:
    config: SynthConfig
    videos: list[VideoRecord]
    features: dict[str, dict[str, np.ndarray]]  # video_id -> source -> T x D float32
    subsets: dict[str, str]
    signatures: dict[str, np.ndarray]  # source -> C x D

    def sequences(self, video_id: str) -> list[FeatureSequence]:
        cfg = self.config
        return [
            FeatureSequence(name, self.features[video_id][name], g.frames_per_clip, g.clip_stride_frames, cfg.fps)
            for name, g in cfg.sources.items()
        ]

    def subset(self, name: str) -> list[VideoRecord]:
        return [v for v in self.videos if self.subsets[v.video_id] == name]


def sample_durations(rng: np.random.Generator, n: int, cfg: SynthConfig) -> np.ndarray:
    short = rng.random(n) < cfg.short_fraction
    short_d = rng.uniform(cfg.min_duration, cfg.short_cutoff, size=n)
    tail = cfg.short_cutoff + rng.lognormal(math.log(max(cfg.long_median - cfg.short_cutoff, 1e-3)), cfg.long_sigma, size=n)
    tail = np.minimum(tail, cfg.max_instance_duration)
    return np.where(short, short_d, tail)


def class_signatures(rng: np.random.Generator, num_classes: int, dim: int, signal: float) -> np.ndarray:
    """C x D rows, mutually orthogonal when C <= D, each with per-dim RMS ``signal``."""
    g = rng.standard_normal((dim, num_classes))
    if num_classes <= dim:
        q, r = np.linalg.qr(g)
        q = q * np.sign(np.diag(r))
        sig = q.T
    else:
        sig = g.T / np.linalg.norm(g.T, axis=1, keepdims=True)
    return sig * signal * math.sqrt(dim)


def _place_instances(rng, duration, lengths):
    """Non-overlapping placement with random gaps; None if they do not fit."""
    free = duration - float(np.sum(lengths))
    if free < 0:
        return None
    gaps = rng.dirichlet(np.ones(len(lengths) + 1)) * free
    order = rng.permutation(len(lengths))
    t = 0.0
    segs = []
    for k, i in enumerate(order):
        t += gaps[k]
        segs.append((t, t + lengths[i]))
        t += lengths[i]
    return segs


def render_features(
    instances, duration: float, geom: SourceGeometry, fps: float, signatures: np.ndarray, noise: float, rng
) -> np.ndarray:
    t = io.num_clips(duration, fps, geom.frames_per_clip, geom.clip_stride_frames)
    if t <= 0:
        raise GenerationError(f"video of {duration}s too short for {geom.frames_per_clip}-frame clips")
    centers = (np.arange(t) * geom.clip_stride_frames + geom.frames_per_clip / 2) / fps
    data = np.zeros((t, geom.dim), dtype=np.float64)
    if noise > 0:
        data += noise * rng.standard_normal((t, geom.dim))
    for inst in instances:
        inside = (centers >= inst.segment.start) & (centers <= inst.segment.end)
        data[inside] += signatures[inst.label_id]
    return (geom.scale * data).astype(np.float32)


def generate(cfg: SynthConfig, out_dir=None) -> SynthDataset:
    """Build the dataset in memory; also write it to ``out_dir`` when given."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    signatures = {
        name: class_signatures(rng, cfg.num_classes, g.dim, g.signal) for name, g in cfg.sources.items()
    }
    n_val = int(round(cfg.num_videos * cfg.val_fraction))
    videos, features, subsets = [], {}, {}
    width = len(str(cfg.num_videos - 1))
    for v in range(cfg.num_videos):
        vid = f"synth_{v:0{width}d}"
        duration = float(rng.uniform(*cfg.duration_range))
        n_inst = int(rng.integers(cfg.instances_per_video[0], cfg.instances_per_video[1] + 1))
        segs = None
        for _ in range(100):
            lengths = sample_durations(rng, n_inst, cfg)
            segs = _place_instances(rng, duration, lengths)
            if segs is not None:
                break
        if segs is None:
            raise GenerationError(f"{vid}: could not fit {n_inst} instances into {duration:.1f}s")
        labels = rng.integers(0, cfg.num_classes, size=n_inst)
        instances = tuple(
            ActionInstance(int(lbl), Segment(s, min(e, duration))) for lbl, (s, e) in zip(labels, segs)
        )
        instances = tuple(sorted(instances, key=lambda i: i.segment.start))
        video = VideoRecord(vid, duration, instances)
        videos.append(video)
        features[vid] = {
            name: render_features(instances, duration, g, cfg.fps, signatures[name], cfg.noise, rng)
            for name, g in cfg.sources.items()
        }
        subsets[vid] = "val" if v >= cfg.num_videos - n_val else "train"
    ds = SynthDataset(cfg, videos, features, subsets, signatures)
    if out_dir is not None:
        write_dataset(ds, out_dir)
    return ds


def write_dataset(ds: SynthDataset, out_dir) -> Path:
    out = Path(out_dir)
    (out / "features").mkdir(parents=True, exist_ok=True)
    cfg = ds.config
    entries = []
    for v in ds.videos:
        sources = {}
        for name, g in cfg.sources.items():
            rel = f"features/{v.video_id}_{name}.tkf"
            io.write_feature_file(out / rel, ds.features[v.video_id][name])
            sources[name] = io.SourceEntry(rel, g.frames_per_clip, g.clip_stride_frames, g.dim)
        entries.append(io.ManifestEntry(v.video_id, v.duration, cfg.fps, sources, ds.subsets[v.video_id]))
    io.write_annotations(out / "annotations.json", ds.videos, cfg.num_classes)
    io.write_manifest(out / "manifest.json", io.Manifest(entries, cfg.reference_source, "annotations.json", out))
    io.write_detections(out / "oracle_detections.json", oracle_detections(ds.videos))
    return out / "manifest.json"


def oracle_detections(videos) -> dict[str, list[Detection]]:
    """Every ground-truth instance as a score-1 detection."""
    return {v.video_id: [Detection(i.label_id, 1.0, i.segment) for i in v.instances] for v in videos}


def permute_labels(dets: dict[str, list[Detection]], num_classes: int, shift: int = 1) -> dict[str, list[Detection]]:
    return {
        vid: [Detection((d.label_id + shift) % num_classes, d.score, d.segment) for d in ds]
        for vid, ds in dets.items()
    }
