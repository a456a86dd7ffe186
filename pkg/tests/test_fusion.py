import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from talkit.fusion import (
    AlignmentError,
    FeatureSequence,
    FusionError,
    Projection,
    ProjectionSpec,
    align_sources,
    fuse_naive_cat,
    fuse_proj_cat,
    nearest_indices,
)


def _seq(name, t, d, fpc, stride, fps=30.0, rng=None):
    data = np.arange(t * d, dtype=np.float64).reshape(t, d) if rng is None else rng.standard_normal((t, d))
    return FeatureSequence(name, data, fpc, stride, fps)


def test_align_identity():
    sf = _seq("sf", 5, 2, 32, 16)
    (out,) = align_sources([sf], "sf")
    assert out is sf


def test_align_egovlp_to_slowfast_ties_go_low():
    sf = _seq("sf", 4, 1, 32, 16)
    ego = _seq("ego", 20, 1, 4, 4)
    assert list(sf.center_frames()[:2]) == [16, 32]
    assert list(ego.center_frames()[3:5]) == [14, 18]
    _, ego_a = align_sources([sf, ego], "sf")
    # row j of the aligned sequence is source row i; data row i holds value i
    assert ego_a.data[0, 0] == 3
    assert ego_a.data[1, 0] == 7
    assert ego_a.length == sf.length


def test_nearest_indices_edges():
    src = np.array([2.0, 6.0, 10.0])
    assert list(nearest_indices(src, np.array([-5.0, 4.0, 8.0, 100.0]))) == [0, 0, 1, 2]


def test_align_errors():
    with pytest.raises(AlignmentError):
        align_sources([], "sf")
    with pytest.raises(AlignmentError):
        align_sources([_seq("a", 3, 1, 32, 16)], "sf")
    with pytest.raises(AlignmentError, match="fps"):
        align_sources([_seq("sf", 3, 1, 32, 16), _seq("b", 3, 1, 4, 4, fps=25.0)], "sf")


def test_align_idempotent(rng):
    srcs = [_seq("sf", 9, 3, 32, 16, rng=rng), _seq("ego", 40, 2, 4, 4, rng=rng)]
    once = align_sources(srcs, "sf")
    twice = align_sources(once, "sf")
    for a, b in zip(once, twice):
        assert np.array_equal(a.data, b.data)


def test_align_linear_switch():
    sf = _seq("sf", 3, 1, 32, 16)
    ego = _seq("ego", 20, 1, 4, 4)
    _, lin = align_sources([sf, ego], "sf", method="linear")
    # center 16 sits halfway between ego rows 3 (14) and 4 (18)
    assert lin.data[0, 0] == pytest.approx(3.5)


def test_proj_cat_full_widths(rng):
    dims = {"slowfast": 2304, "omnivore": 1536, "egovlp": 256}
    spec = ProjectionSpec.init(dims, {"slowfast": 386, "omnivore": 386, "egovlp": 256}, rng)
    assert spec.width == 1028
    seqs = [_seq(n, 2, d, 32, 16, rng=rng) for n, d in dims.items()]
    assert fuse_proj_cat(seqs, spec).shape == (2, 1028)
    assert fuse_naive_cat(seqs).shape == (2, 4096)


def test_proj_cat_identity_and_arithmetic():
    a = _seq("a", 3, 4, 32, 16)
    spec = ProjectionSpec({"a": Projection(np.eye(4), np.zeros(4))})
    assert np.array_equal(fuse_proj_cat([a], spec), a.data)
    x = FeatureSequence("x", np.array([[2.0]]), 32, 16, 30.0)
    y = FeatureSequence("y", np.array([[3.0]]), 32, 16, 30.0)
    spec = ProjectionSpec({"x": Projection(np.array([[2.0]]), np.zeros(1)), "y": Projection(np.array([[10.0]]), np.zeros(1))})
    assert fuse_proj_cat([x, y], spec).tolist() == [[4.0, 30.0]]


def test_proj_cat_errors(rng):
    a = _seq("a", 3, 4, 32, 16)
    with pytest.raises(FusionError, match="'a'"):
        fuse_proj_cat([a], ProjectionSpec({"a": Projection(np.eye(5), np.zeros(5))}))
    with pytest.raises(FusionError, match="no projection"):
        fuse_proj_cat([a], ProjectionSpec({}))
    with pytest.raises(FusionError, match="grid"):
        fuse_naive_cat([a, _seq("b", 4, 1, 32, 16)])


def test_naive_cat_blocks_follow_source_order(rng):
    a, b = _seq("a", 3, 2, 32, 16, rng=rng), _seq("b", 3, 5, 32, 16, rng=rng)
    assert np.array_equal(fuse_naive_cat([a]), a.data)
    ab, ba = fuse_naive_cat([a, b]), fuse_naive_cat([b, a])
    assert np.array_equal(ab[:, :2], ba[:, 5:]) and np.array_equal(ab[:, 2:], ba[:, :5])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.permutations([0, 1, 2]))
def test_proj_cat_permutation_equivariance(seed, perm):
    r = np.random.default_rng(seed)
    dims = [int(d) for d in r.integers(1, 6, size=3)]
    outs = [int(d) for d in r.integers(1, 6, size=3)]
    names = ["s0", "s1", "s2"]
    seqs = [_seq(n, 4, d, 32, 16, rng=r) for n, d in zip(names, dims)]
    spec = ProjectionSpec.init(dict(zip(names, dims)), dict(zip(names, outs)), r)
    base = fuse_proj_cat(seqs, spec)
    assert base.shape[1] == spec.width == sum(outs)
    permuted = fuse_proj_cat([seqs[i] for i in perm], spec)
    offsets = np.concatenate([[0], np.cumsum(outs)])
    expect = np.concatenate([base[:, offsets[i] : offsets[i + 1]] for i in perm], axis=1)
    assert np.array_equal(permuted, expect)
