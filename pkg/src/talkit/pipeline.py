"""Glue between datasets on disk, the model, decoding and evaluation."""

from __future__ import annotations

from typing import Sequence

import numpy as np
import torch

from talkit import io
from talkit.core import Detection, Segment, VideoRecord
from talkit.decode import DecodeConfig, cap_predictions, decode_points, soft_nms
from talkit.fusion import FeatureSequence, align_sources
from talkit.model import ActionLocalizer, ModelConfig, pad_batch, to_pyramid_outputs
from talkit.synthdata import SynthDataset
from talkit.train import VideoSample


def fused_raw_features(sequences: Sequence[FeatureSequence], reference: str, method: str = "nearest") -> tuple[np.ndarray, float]:
    """Align all sources to the reference grid and stack them column-wise."""
    aligned = align_sources(sequences, reference, method)
    ref = next(s for s in aligned if s.source_name == reference)
    return np.concatenate([s.data for s in aligned], axis=1).astype(np.float32), ref.seconds_per_step


def samples_from_synth(ds: SynthDataset, subset: str | None = None, method: str = "nearest") -> list[VideoSample]:
    out = []
    for v in ds.videos:
        if subset is not None and ds.subsets[v.video_id] != subset:
            continue
        feats, dt = fused_raw_features(ds.sequences(v.video_id), ds.config.reference_source, method)
        out.append(VideoSample(v, feats, dt))
    return out


def samples_from_manifest(
    manifest: io.Manifest, videos: Sequence[VideoRecord], subset: str | None = None, method: str = "nearest"
) -> list[VideoSample]:
    by_id = {v.video_id: v for v in videos}
    out = []
    for entry in manifest.videos:
        if subset is not None and entry.subset != subset:
            continue
        video = by_id.get(entry.video_id, VideoRecord(entry.video_id, entry.duration, ()))
        seqs = [
            FeatureSequence(
                name,
                io.read_feature_file(manifest.resolve(s.path)),
                s.frames_per_clip,
                s.clip_stride_frames,
                entry.fps,
            )
            for name, s in entry.sources.items()
        ]
        feats, dt = fused_raw_features(seqs, manifest.reference_source, method)
        out.append(VideoSample(video, feats, dt))
    return out


def build_model(cfg: ModelConfig, source_dims, fusion: str, proj_dims=None, seed: int = 0) -> ActionLocalizer:
    torch.manual_seed(seed)
    model = ActionLocalizer(cfg, source_dims, fusion, proj_dims)
    model.eval()
    return model


@torch.no_grad()
def predict(
    model: ActionLocalizer, samples: Sequence[VideoSample], decode_cfg: DecodeConfig, batch_size: int = 4
) -> dict[str, list[Detection]]:
    """Decode every sample; videos longer than max_seq_len run in consecutive windows."""
    model.eval()
    max_len = model.cfg.max_seq_len
    strides = model.cfg.level_strides()
    chunks = []  # (sample index, window start)
    for i, s in enumerate(samples):
        t = s.features.shape[0]
        chunks.extend((i, start) for start in range(0, max(t, 1), max_len))
    raw: dict[int, list[Detection]] = {i: [] for i in range(len(samples))}
    for b in range(0, len(chunks), batch_size):
        part = chunks[b : b + batch_size]
        arrays = [samples[i].features[start : start + max_len] for i, start in part]
        x, mask = pad_batch(arrays, max_len, dtype=next(model.parameters()).dtype)
        logits, offsets, masks = model(x, mask)
        for (i, start), out in zip(part, to_pyramid_outputs(logits, offsets, masks, strides)):
            s = samples[i]
            cfg = DecodeConfig(**{**decode_cfg.to_dict(), "seconds_per_step": s.seconds_per_step})
            shift = start * s.seconds_per_step
            window = min(max_len * s.seconds_per_step, s.video.duration - shift)
            if window <= 0:
                continue
            for d in decode_points(out, cfg, window):
                raw[i].append(Detection(d.label_id, d.score, Segment(d.segment.start + shift, d.segment.end + shift)))
    results = {}
    for i, s in enumerate(samples):
        cfg = DecodeConfig(**{**decode_cfg.to_dict(), "seconds_per_step": s.seconds_per_step})
        results[s.video.video_id] = cap_predictions(soft_nms(raw[i], cfg), cfg.max_predictions)
    return results


def ground_truth(videos: Sequence[VideoRecord]):
    return {v.video_id: list(v.instances) for v in videos}
