"""Multi-source feature alignment and fusion (raw concat vs project-then-concat)."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

# (frames_per_clip, clip_stride_frames, dim) of the three standard sources
DEFAULT_SOURCES = {
    "slowfast": (32, 16, 2304),
    "omnivore": (32, 16, 1536),
    "egovlp": (4, 4, 256),
}
DEFAULT_PROJ_DIMS = {"slowfast": 386, "omnivore": 386, "egovlp": 256}


class AlignmentError(ValueError):
    pass


class FusionError(ValueError):
    pass


@dataclass(frozen=True)
class FeatureSequence:
    source_name: str
    data: np.ndarray
    frames_per_clip: int
    clip_stride_frames: int
    fps: float

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 2 or data.shape[0] == 0 or data.shape[1] == 0:
            raise ValueError(f"source {self.source_name!r}: data must be a non-empty T x D matrix, got {data.shape}")
        if self.frames_per_clip <= 0 or self.clip_stride_frames <= 0 or not self.fps > 0:
            raise ValueError(f"source {self.source_name!r}: clip geometry must be positive")
        object.__setattr__(self, "data", data)

    @property
    def length(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    def center_frames(self) -> np.ndarray:
        return np.arange(self.length) * self.clip_stride_frames + self.frames_per_clip / 2

    def center_times(self) -> np.ndarray:
        return self.center_frames() / self.fps

    @property
    def seconds_per_step(self) -> float:
        return self.clip_stride_frames / self.fps


def nearest_indices(src_centers: np.ndarray, ref_centers: np.ndarray) -> np.ndarray:
    """Index of the nearest source center for each reference center, ties to the lower index."""
    right = np.searchsorted(src_centers, ref_centers, side="left")
    right = np.clip(right, 0, len(src_centers) - 1)
    left = np.clip(right - 1, 0, len(src_centers) - 1)
    pick_left = np.abs(ref_centers - src_centers[left]) <= np.abs(src_centers[right] - ref_centers)
    return np.where(pick_left, left, right)


def _resample_linear(seq: FeatureSequence, ref_centers: np.ndarray) -> np.ndarray:
    c = seq.center_frames()
    pos = np.interp(ref_centers, c, np.arange(len(c), dtype=np.float64))
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, len(c) - 1)
    w = (pos - lo)[:, None]
    return (1 - w) * seq.data[lo] + w * seq.data[hi]


def align_sources(
    sources: Sequence[FeatureSequence], reference: str, method: str = "nearest"
) -> list[FeatureSequence]:
    """Resample every source onto the reference source's clip grid."""
    if not sources:
        raise AlignmentError("no sources to align")
    by_name = {s.source_name: s for s in sources}
    if reference not in by_name:
        raise AlignmentError(f"reference source {reference!r} not among {sorted(by_name)}")
    ref = by_name[reference]
    for s in sources:
        if s.fps != ref.fps:
            raise AlignmentError(f"source {s.source_name!r}: fps {s.fps} != reference fps {ref.fps}")
    ref_centers = ref.center_frames()
    out = []
    for s in sources:
        same_grid = (
            s.length == ref.length
            and s.frames_per_clip == ref.frames_per_clip
            and s.clip_stride_frames == ref.clip_stride_frames
        )
        if same_grid:
            out.append(s)
            continue
        if method == "nearest":
            data = s.data[nearest_indices(s.center_frames(), ref_centers)]
        elif method == "linear":
            data = _resample_linear(s, ref_centers).astype(s.data.dtype)
        else:
            raise AlignmentError(f"unknown alignment method {method!r}")
        out.append(replace(s, data=data, frames_per_clip=ref.frames_per_clip, clip_stride_frames=ref.clip_stride_frames))
    return out


@dataclass
class Projection:
    """Affine map ``x @ weight.T + bias`` for one source."""

    weight: np.ndarray  # out_dim x in_dim
    bias: np.ndarray  # out_dim

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]


@dataclass
class ProjectionSpec:
    projections: dict[str, Projection]

    @property
    def width(self) -> int:
        return sum(p.out_dim for p in self.projections.values())

    @classmethod
    def init(cls, in_dims: dict[str, int], out_dims: dict[str, int], rng: np.random.Generator) -> "ProjectionSpec":
        """Uniform(-1/sqrt(in), 1/sqrt(in)) weights and biases."""
        projections = {}
        for name, d_in in in_dims.items():
            d_out = out_dims[name]
            bound = 1.0 / np.sqrt(d_in)
            projections[name] = Projection(
                rng.uniform(-bound, bound, size=(d_out, d_in)),
                rng.uniform(-bound, bound, size=d_out),
            )
        return cls(projections)


def _check_grid(aligned: Sequence[FeatureSequence]) -> int:
    if not aligned:
        raise FusionError("no sources to fuse")
    lengths = {s.length for s in aligned}
    if len(lengths) != 1:
        raise FusionError(f"sources are not on one grid: lengths {sorted(lengths)}")
    return lengths.pop()


def fuse_proj_cat(aligned: Sequence[FeatureSequence], spec: ProjectionSpec) -> np.ndarray:
    """Project each source independently, then concatenate in source order."""
    _check_grid(aligned)
    blocks = []
    for s in aligned:
        proj = spec.projections.get(s.source_name)
        if proj is None:
            raise FusionError(f"source {s.source_name!r}: no projection in spec")
        if proj.in_dim != s.dim:
            raise FusionError(f"source {s.source_name!r}: dim {s.dim} != projection in_dim {proj.in_dim}")
        blocks.append(s.data @ proj.weight.T + proj.bias)
    return np.concatenate(blocks, axis=1)


def fuse_naive_cat(aligned: Sequence[FeatureSequence]) -> np.ndarray:
    _check_grid(aligned)
    return np.concatenate([s.data for s in aligned], axis=1)
