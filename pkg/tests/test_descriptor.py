import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from earlyfilter.descriptor import (
    cosine_distance, cosine_distance_matrix, l2_distance, pyramid_pool, read_descriptors_csv,
    write_descriptors_csv,
)
from oracles import l2_loops, pool_loops

finite = st.floats(-100, 100, allow_nan=False, width=32)


def tensors(min_side=1, max_side=7, max_c=4, elements=finite):
    shape = st.tuples(st.integers(1, max_c), st.integers(min_side, max_side), st.integers(min_side, max_side))
    return shape.flatmap(lambda s: arrays(np.float32, s, elements=elements))


def test_2x2_single_channel():
    t = np.array([[[1, 2], [3, 4]]], dtype=np.float32)
    assert pyramid_pool(t).tolist() == [4, 1, 2, 3, 4]


def test_constant_map():
    t = np.full((2, 5, 3), 0.75, dtype=np.float32)
    assert pyramid_pool(t).tolist() == [0.75] * 10


def test_layout_is_channel_major_five_per_channel():
    t = np.zeros((3, 4, 4), dtype=np.float32)
    t[1, 3, 3] = 9.0
    d = pyramid_pool(t)
    assert d.shape == (15,)
    assert d[5:10].tolist() == [9, 0, 0, 0, 9]


def test_single_row_has_empty_top_quadrants():
    t = np.array([[[5, 7, 6]]], dtype=np.float32)
    # H=1: rows split at 0, top half empty; W=3: columns split at 1
    assert pyramid_pool(t).tolist() == [7, 0, 0, 5, 7]


def test_13x13x256_matches_exhaustive_scan():
    t = np.random.default_rng(0).standard_normal((256, 13, 13)).astype(np.float32)
    np.testing.assert_array_equal(pyramid_pool(t), pool_loops(t).astype(np.float32))


@settings(max_examples=60, deadline=None)
@given(tensors())
def test_pool_matches_oracle(t):
    np.testing.assert_array_equal(pyramid_pool(t), pool_loops(t).astype(np.float32))


@settings(max_examples=40, deadline=None)
@given(tensors(min_side=2, elements=st.floats(0, 100, width=32)), st.data())
def test_quadrant_max_bounded_by_global(t, data):
    d = pyramid_pool(t).reshape(-1, 5)
    assert np.all(d[:, 1:] <= d[:, :1])
    assert np.all(d >= 0)


@settings(max_examples=40, deadline=None)
@given(tensors(min_side=2), st.randoms(use_true_random=False))
def test_permutation_within_quadrant_invariant(t, rnd):
    c, h, w = t.shape
    h2, w2 = h // 2, w // 2
    shuffled = t.copy()
    for rows, cols in ((slice(0, h2), slice(0, w2)), (slice(h2, h), slice(w2, w))):
        block = shuffled[:, rows, cols]
        flat = block.reshape(c, -1)
        perm = list(range(flat.shape[1]))
        rnd.shuffle(perm)
        shuffled[:, rows, cols] = flat[:, perm].reshape(block.shape)
    np.testing.assert_array_equal(pyramid_pool(shuffled), pyramid_pool(t))


@settings(max_examples=40, deadline=None)
@given(tensors(elements=st.floats(0, 10, width=32)), st.sampled_from([0.0, 0.5, 2.0, 4.0]))
def test_scale_equivariance(t, lam):
    # powers of two keep float32 scaling exact
    np.testing.assert_array_equal(pyramid_pool(np.float32(lam) * t), np.float32(lam) * pyramid_pool(t))


def test_l2_examples():
    assert l2_distance([1.0, 2.0], [1.0, 2.0]) == 0.0
    assert l2_distance([0.0, 0.0], [3.0, 4.0]) == 5.0


def test_l2_random_vs_summation_oracle():
    rng = np.random.default_rng(1)
    for _ in range(20):
        a, b = rng.standard_normal((2, 160)).astype(np.float32)
        assert abs(l2_distance(a, b) - l2_loops(a, b)) <= 1e-6


def test_cosine_examples():
    assert cosine_distance([1.0, 2.0], [1.0, 2.0]) == pytest.approx(0.0, abs=1e-15)
    assert cosine_distance([1.0, 0.0], [0.0, 3.0]) == 1.0
    assert cosine_distance([0.0, 0.0], [1.0, 1.0]) == 1.0


def test_length_mismatch_raises():
    with pytest.raises(ValueError, match="mismatch"):
        l2_distance([1.0], [1.0, 2.0])
    with pytest.raises(ValueError, match="mismatch"):
        cosine_distance([1.0], [1.0, 2.0])


vectors = st.integers(1, 12).flatmap(lambda n: st.tuples(arrays(np.float64, n, elements=st.floats(-10, 10)),
                                                         arrays(np.float64, n, elements=st.floats(-10, 10))))


@settings(max_examples=60, deadline=None)
@given(vectors, st.floats(0.1, 10))
def test_distance_symmetry_and_scaling(pair, lam):
    a, b = pair
    assert l2_distance(a, b) == l2_distance(b, a)
    assert cosine_distance(a, b) == pytest.approx(cosine_distance(b, a), abs=1e-12)
    assert 0 - 1e-12 <= cosine_distance(a, b) <= 2 + 1e-12
    assert cosine_distance(lam * a, b) == pytest.approx(cosine_distance(a, b), abs=1e-9)


def test_l2_not_scale_invariant():
    a, b = np.array([1.0, 0.0]), np.array([0.0, 1.0])
    assert l2_distance(2 * a, b) != l2_distance(a, b)


def test_distance_matrix_agrees_with_pairwise():
    rng = np.random.default_rng(2)
    q = rng.standard_normal((5, 20))
    r = rng.standard_normal((7, 20))
    r[3] = 0
    m = cosine_distance_matrix(q, r)
    for i in range(5):
        for j in range(7):
            assert m[i, j] == pytest.approx(cosine_distance(q[i], r[j]), abs=1e-12)


def test_descriptor_csv_round_trip(tmp_path):
    d = np.random.default_rng(3).standard_normal((4, 10)).astype(np.float32)
    write_descriptors_csv(tmp_path / "d.csv", d)
    ids, back = read_descriptors_csv(tmp_path / "d.csv")
    assert ids == ["0", "1", "2", "3"]
    np.testing.assert_array_equal(back, d)
