import hashlib
from pathlib import Path

import numpy as np
import pytest

from talkit import io
from talkit.metrics import evaluate
from talkit.pipeline import ground_truth
from talkit.synthdata import (
    GenerationError,
    SourceGeometry,
    SynthConfig,
    class_signatures,
    generate,
    oracle_detections,
    permute_labels,
    sample_durations,
)


def _digest(root: Path) -> dict[str, str]:
    return {
        str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
        for p in sorted(root.rglob("*"))
        if p.is_file()
    }


def test_regeneration_is_byte_identical(tiny_synth_cfg, tmp_path):
    generate(tiny_synth_cfg, tmp_path / "a")
    generate(SynthConfig.from_dict(tiny_synth_cfg.to_dict()), tmp_path / "b")
    da, db = _digest(tmp_path / "a"), _digest(tmp_path / "b")
    assert da == db and len(da) == 3 * 6 + 3
    other = SynthConfig.from_dict({**tiny_synth_cfg.to_dict(), "seed": 8})
    generate(other, tmp_path / "c")
    assert _digest(tmp_path / "c") != da


def test_written_dataset_reads_back(tiny_synth_cfg, tmp_path):
    ds = generate(tiny_synth_cfg, tmp_path)
    manifest = io.read_manifest(tmp_path / "manifest.json")
    videos, num_classes = io.read_annotations_with_classes(tmp_path / "annotations.json")
    assert num_classes == 3 and videos == ds.videos
    assert [e.subset for e in manifest.videos] == [ds.subsets[v.video_id] for v in ds.videos]
    assert sum(ds.subsets[v.video_id] == "val" for v in ds.videos) == 2
    e = manifest.videos[0]
    arr = io.read_feature_file(manifest.resolve(e.sources["egovlp"].path))
    assert np.array_equal(arr, ds.features[e.video_id]["egovlp"])
    assert io.read_detections(tmp_path / "oracle_detections.json") == oracle_detections(ds.videos)


def test_noise_free_features_are_exact_signatures(tiny_synth_cfg):
    cfg = SynthConfig.from_dict({**tiny_synth_cfg.to_dict(), "noise": 0.0})
    ds = generate(cfg)
    for v in ds.videos:
        for seq in ds.sequences(v.video_id):
            centers = seq.center_times()
            sig = ds.signatures[seq.source_name].astype(np.float32)
            for row, c in zip(seq.data, centers):
                inside = [i for i in v.instances if i.segment.start <= c <= i.segment.end]
                expected = sig[inside[0].label_id] if inside else np.zeros_like(row)
                assert len(inside) <= 1
                assert np.array_equal(row, expected)


def test_signatures_orthonormal_with_rms():
    sig = class_signatures(np.random.default_rng(0), 5, 16, 2.0)
    rms = np.sqrt((sig**2).mean(axis=1))
    np.testing.assert_allclose(rms, 2.0, atol=1e-12)
    gram = sig @ sig.T
    np.testing.assert_allclose(gram - np.diag(np.diag(gram)), 0.0, atol=1e-10)


def test_short_fraction_and_bounds():
    cfg = SynthConfig()
    d = sample_durations(np.random.default_rng(0), 10_000, cfg)
    assert abs(np.mean(d < cfg.short_cutoff) - cfg.short_fraction) <= 0.02
    assert d.min() >= cfg.min_duration and d.max() <= cfg.max_instance_duration


def test_generated_videos_respect_config(tiny_synth_cfg):
    cfg = tiny_synth_cfg
    ds = generate(cfg)
    for v in ds.videos:
        assert cfg.duration_range[0] <= v.duration <= cfg.duration_range[1]
        assert cfg.instances_per_video[0] <= len(v.instances) <= cfg.instances_per_video[1]
        segs = sorted((i.segment for i in v.instances), key=lambda s: s.start)
        assert all(a.end <= b.start for a, b in zip(segs, segs[1:]))
        for i in v.instances:
            assert 0 <= i.label_id < cfg.num_classes
            assert i.segment.length <= cfg.max_instance_duration + 1e-9
        for name, g in cfg.sources.items():
            t = io.num_clips(v.duration, cfg.fps, g.frames_per_clip, g.clip_stride_frames)
            assert ds.features[v.video_id][name].shape == (t, g.dim)


def test_oracle_and_permuted_scores(tiny_synth_cfg):
    ds = generate(tiny_synth_cfg)
    gts = ground_truth(ds.videos)
    oracle = oracle_detections(ds.videos)
    rep = evaluate(oracle, gts)
    assert rep.average_mAP == 1.0 and rep.recall_at_1x_tiou05 == 1.0
    bad = evaluate(permute_labels(oracle, 3), gts)
    assert bad.average_mAP == 0.0 and bad.recall_at_1x_tiou05 == 0.0


def test_linear_probe_separates_classes_without_noise():
    cfg = SynthConfig(
        num_videos=8,
        duration_range=(30.0, 40.0),
        num_classes=4,
        instances_per_video=(2, 4),
        max_instance_duration=8.0,
        long_median=5.0,
        sources={"slowfast": SourceGeometry(32, 16, 12)},
        noise=0.0,
        seed=3,
    )
    ds = generate(cfg)
    xs, ys = [], []
    for v in ds.videos:
        seq = ds.sequences(v.video_id)[0]
        for row, c in zip(seq.data, seq.center_times()):
            lab = [i.label_id for i in v.instances if i.segment.start <= c <= i.segment.end]
            if lab:
                xs.append(row)
                ys.append(lab[0])
    x, y = np.array(xs, dtype=np.float64), np.array(ys)
    w, *_ = np.linalg.lstsq(x, np.eye(4)[y], rcond=None)
    assert np.mean((x @ w).argmax(axis=1) == y) == 1.0


def test_scale_multiplies_source():
    base = dict(num_videos=2, duration_range=(20.0, 20.0), num_classes=2, instances_per_video=(1, 1),
                max_instance_duration=8.0, long_median=5.0, seed=1)
    a = generate(SynthConfig(**base, sources={"slowfast": SourceGeometry(32, 16, 4)}))
    b = generate(SynthConfig(**base, sources={"slowfast": SourceGeometry(32, 16, 4, scale=3.0)}))
    np.testing.assert_allclose(
        b.features["synth_0"]["slowfast"], 3 * a.features["synth_0"]["slowfast"], rtol=1e-6
    )


@pytest.mark.parametrize(
    "override",
    [
        {"instances_per_video": (30, 40), "duration_range": (10.0, 12.0), "min_duration": 1.0},
        {"short_fraction": 1.5},
        {"duration_range": (50.0, 10.0)},
        {"reference_source": "nope"},
        {"noise": -1.0},
        {"min_duration": 5.0},
    ],
)
def test_invalid_configs_raise(override):
    with pytest.raises(GenerationError):
        SynthConfig(**override)


def test_unplaceable_instances_raise():
    cfg = SynthConfig(
        num_videos=1, duration_range=(12.0, 12.0), instances_per_video=(5, 5), min_duration=1.0,
        short_fraction=0.0, long_median=10.0, max_instance_duration=20.0,
    )
    with pytest.raises(GenerationError, match="could not fit"):
        generate(cfg)
