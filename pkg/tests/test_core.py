import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from talkit.core import ActionInstance, Detection, EmptySegmentError, Segment, VideoRecord, clip_segment, tiou

coord = st.floats(min_value=-1e3, max_value=1e3, allow_nan=False)


@st.composite
def segments(draw):
    a = draw(coord)
    length = draw(st.floats(min_value=1e-3, max_value=1e3))
    return Segment(a, a + length)


def test_tiou_examples():
    assert tiou(Segment(0, 10), Segment(0, 10)) == 1.0
    assert tiou(Segment(0, 1), Segment(2, 3)) == 0.0
    assert tiou(Segment(0, 10), Segment(5, 15)) == pytest.approx(1 / 3, abs=1e-12)
    assert tiou(Segment(0, 1), Segment(1, 2)) == 0.0


def test_degenerate_segment_rejected():
    with pytest.raises(ValueError):
        Segment(2.0, 2.0)
    with pytest.raises(ValueError):
        Segment(3.0, 1.0)
    with pytest.raises(ValueError):
        Segment(0.0, math.inf)


@given(segments(), segments())
def test_tiou_symmetric_and_bounded(a, b):
    v = tiou(a, b)
    assert v == tiou(b, a)
    assert 0.0 <= v <= 1.0


@given(segments())
def test_tiou_self_is_one(a):
    assert tiou(a, a) == 1.0


def test_clip_examples():
    assert clip_segment(Segment(-1, 5), 10) == Segment(0, 5)
    assert clip_segment(Segment(2, 3), 10) == Segment(2, 3)
    assert clip_segment(Segment(9, 20), 10) == Segment(9, 10)
    with pytest.raises(EmptySegmentError):
        clip_segment(Segment(11, 12), 10)
    with pytest.raises(EmptySegmentError):
        clip_segment(Segment(-5, -1), 10)
    with pytest.raises(ValueError):
        clip_segment(Segment(0, 1), 0)


@given(segments(), st.floats(min_value=1e-2, max_value=2e3))
def test_clip_idempotent(s, duration):
    try:
        once = clip_segment(s, duration)
    except EmptySegmentError:
        return
    assert clip_segment(once, duration) == once
    assert 0 <= once.start < once.end <= duration


def test_record_invariants():
    inst = ActionInstance(0, Segment(1.0, 2.5))
    v = VideoRecord("a", 3.0, [inst])
    assert v.instances == (inst,)
    with pytest.raises(ValueError):
        VideoRecord("a", 2.0, [inst])
    with pytest.raises(ValueError):
        VideoRecord("a", 0.0)
    with pytest.raises(ValueError):
        Detection(0, 1.5, Segment(0, 1))
    with pytest.raises(ValueError):
        ActionInstance(-1, Segment(0, 1))
