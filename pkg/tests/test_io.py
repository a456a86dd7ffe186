import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from talkit import io
from talkit.core import ActionInstance, Detection, Segment, VideoRecord


def test_feature_round_trip(tmp_path, rng):
    m = rng.standard_normal((7, 3)).astype(np.float32)
    io.write_feature_file(tmp_path / "a.tkf", m)
    out = io.read_feature_file(tmp_path / "a.tkf")
    assert out.dtype == np.float32
    assert np.array_equal(out, m)


def test_feature_hand_built_bytes():
    buf = b"TKF1" + bytes([0]) + struct.pack("<II", 2, 2) + b"\0\0\0" + struct.pack("<4f", 1, 2, 3, 4)
    assert len(buf) == 16 + 16
    assert np.array_equal(io.decode_feature_matrix(buf), np.array([[1, 2], [3, 4]], dtype=np.float32))
    assert io.encode_feature_matrix(np.array([[1, 2], [3, 4]])) == buf


def test_feature_truncated():
    buf = b"TKF1" + bytes([0]) + struct.pack("<II", 1, 1) + b"\0\0\0"
    with pytest.raises(io.FormatError, match="truncated"):
        io.decode_feature_matrix(buf)


@pytest.mark.parametrize(
    "mutate, field",
    [
        (lambda b: b"XKF1" + b[4:], "magic"),
        (lambda b: b[:4] + bytes([1]) + b[5:], "dtype_code"),
        (lambda b: b[:5] + struct.pack("<I", 0) + b[9:], "T/D"),
        (lambda b: b[:13] + b"\1" + b[14:], "padding"),
        (lambda b: b + b"\0", "trailing"),
        (lambda b: b[:-1], "truncated"),
        (lambda b: b[:10], "header"),
    ],
)
def test_feature_mutations_rejected(mutate, field):
    good = io.encode_feature_matrix(np.ones((2, 3)))
    with pytest.raises(io.FormatError, match=field):
        io.decode_feature_matrix(mutate(good))


def test_feature_rejects_nonfinite():
    with pytest.raises(ValueError):
        io.encode_feature_matrix(np.array([[np.nan]]))
    buf = bytearray(io.encode_feature_matrix(np.zeros((1, 1))))
    buf[16:20] = struct.pack("<f", float("inf"))
    with pytest.raises(io.FormatError):
        io.decode_feature_matrix(bytes(buf))


@settings(max_examples=50, deadline=None)
@given(arrays(np.float32, st.tuples(st.integers(1, 9), st.integers(1, 9)), elements=st.floats(-1e6, 1e6, width=32)))
def test_feature_round_trip_property(m):
    assert np.array_equal(io.decode_feature_matrix(io.encode_feature_matrix(m)), m)


def _write(tmp_path, doc):
    p = tmp_path / "ann.json"
    p.write_text(json.dumps(doc))
    return p


def test_annotations_examples(tmp_path):
    assert io.read_annotations(_write(tmp_path, {"videos": [], "num_classes": 110})) == []
    doc = {
        "num_classes": 110,
        "videos": [{"video_id": "v", "duration": 5.0, "instances": [{"label_id": 0, "start": 1.0, "end": 2.5}]}],
    }
    (v,) = io.read_annotations(_write(tmp_path, doc))
    assert v == VideoRecord("v", 5.0, (ActionInstance(0, Segment(1.0, 2.5)),))


@pytest.mark.parametrize(
    "inst, msg",
    [
        ({"label_id": 0, "start": 1.0, "end": 1.0}, "end"),
        ({"label_id": 3, "start": 1.0, "end": 2.0}, "label_id"),
        ({"label_id": 0, "start": 1.0, "end": 9.0}, "outside"),
        ({"label_id": 0, "start": -1.0, "end": 2.0}, "outside"),
        ({"label_id": True, "start": 0.0, "end": 2.0}, "label_id"),
    ],
)
def test_annotations_validation(tmp_path, inst, msg):
    doc = {"num_classes": 3, "videos": [{"video_id": "vid7", "duration": 5.0, "instances": [{"label_id": 0, "start": 0, "end": 1}, inst]}]}
    with pytest.raises(io.ValidationError, match=msg) as exc:
        io.read_annotations(_write(tmp_path, doc))
    assert "vid7" in str(exc.value) and "instance 1" in str(exc.value)


def test_annotations_round_trip(tmp_path):
    videos = [
        VideoRecord("a", 10.0, (ActionInstance(1, Segment(0.1, 0.30000000000000004)),)),
        VideoRecord("b", 3.5, ()),
    ]
    io.write_annotations(tmp_path / "a.json", videos, 4)
    assert io.read_annotations_with_classes(tmp_path / "a.json") == (videos, 4)


def test_detections_literal_output(tmp_path):
    assert io.dumps_detections({}) == '{"version":"1.0","detect_results":{}}'
    out = io.dumps_detections({"v": [Detection(3, 0.5, Segment(1, 2))]})
    assert json.loads(out) == {
        "version": "1.0",
        "detect_results": {"v": [{"label_id": 3, "score": 0.5, "segment": [1.0, 2.0]}]},
    }


def test_detections_sorted_and_deterministic(tmp_path):
    dets = [Detection(0, 0.2, Segment(0, 1)), Detection(1, 0.9, Segment(2, 3)), Detection(0, 0.2, Segment(-1, 1))]
    a = io.dumps_detections({"x": dets, "a": dets[:1]})
    b = io.dumps_detections({"a": dets[:1], "x": list(reversed(dets))})
    assert a == b
    scores = [d["score"] for d in json.loads(a)["detect_results"]["x"]]
    assert scores == sorted(scores, reverse=True)
    io.write_detections(tmp_path / "d.json", {"x": dets})
    back = io.read_detections(tmp_path / "d.json")
    assert back["x"] == sorted(dets, key=io.detection_sort_key)


def test_detections_cap():
    dets = [Detection(0, 0.5, Segment(i, i + 1)) for i in range(2001)]
    with pytest.raises(ValueError, match="cap"):
        io.dumps_detections({"v": dets})
    io.dumps_detections({"v": dets[:2000]})


def test_detection_scores_round_trip_exactly():
    r = np.random.default_rng(0)
    dets = [Detection(0, float(s), Segment(float(a), float(a) + 1.0)) for s, a in zip(r.random(50), r.random(50))]
    back = io.parse_detections(json.loads(io.dumps_detections({"v": dets})))
    assert sorted(d.score for d in back["v"]) == sorted(d.score for d in dets)


def test_manifest_checks_geometry(tmp_path):
    t = io.num_clips(10.0, 30.0, 32, 16)
    assert t == (300 - 32) // 16 + 1
    io.write_feature_file(tmp_path / "f.tkf", np.zeros((t, 4)))
    entry = io.ManifestEntry("v", 10.0, 30.0, {"sf": io.SourceEntry("f.tkf", 32, 16, 4)})
    io.write_manifest(tmp_path / "m.json", io.Manifest([entry], "sf", None, tmp_path))
    m = io.read_manifest(tmp_path / "m.json")
    assert m.videos[0] == entry
    io.write_feature_file(tmp_path / "f.tkf", np.zeros((t, 5)))
    with pytest.raises(io.ValidationError, match="dim"):
        io.read_manifest(tmp_path / "m.json")
    io.write_feature_file(tmp_path / "f.tkf", np.zeros((t + 1, 4)))
    with pytest.raises(io.ValidationError, match="geometry"):
        io.read_manifest(tmp_path / "m.json")
