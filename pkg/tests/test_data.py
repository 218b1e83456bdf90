import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from earlyfilter.calibrate import CalibrationConfig, build_triplets
from earlyfilter.data import (
    DataError, Traverse, check_aligned, decode_pnm, encode_pnm, load_traverse, save_traverse,
)
from earlyfilter.recognize import evaluate


def frames(rng, n, c=1, h=4, w=5):
    return tuple((np.round(rng.uniform(0, 1, (c, h, w)) * 255) / 255).astype(np.float32) for _ in range(n))


def test_plain_pgm_with_comment():
    img = decode_pnm(b"P2\n# hello\n3 2\n4\n0 1 2\n3 4 4\n")
    assert img.shape == (1, 2, 3)
    np.testing.assert_allclose(img[0], [[0, 0.25, 0.5], [0.75, 1, 1]])


def test_plain_ppm_channel_order():
    img = decode_pnm(b"P3 1 1 255 255 0 51\n")
    np.testing.assert_allclose(img[:, 0, 0], [1.0, 0.0, 0.2])


def test_sixteen_bit_binary():
    img = np.array([[[0.0, 1.0, 0.5]]])
    back = decode_pnm(encode_pnm(img, maxval=65535))
    np.testing.assert_allclose(back, img, atol=1 / 65535)


@settings(max_examples=30, deadline=None)
@given(st.sampled_from([1, 3]), st.integers(1, 9), st.integers(1, 9), st.integers(0, 2**32 - 1))
def test_binary_round_trip(c, h, w, seed):
    img = np.random.default_rng(seed).integers(0, 256, (c, h, w)) / 255.0
    np.testing.assert_array_equal(decode_pnm(encode_pnm(img)), img.astype(np.float32))


@pytest.mark.parametrize("data, msg", [(b"P7\n", "magic"), (b"P5\n2 2\n255\n\x00", "truncated"),
                                       (b"P2\n2", "truncated"), (b"P2 1 1 0 0", "maxval")])
def test_decode_errors(data, msg):
    with pytest.raises(DataError, match=msg):
        decode_pnm(data)


def test_traverse_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    t = Traverse(frames(rng, 12), "day")
    save_traverse(t, tmp_path / "day")
    back = load_traverse(tmp_path / "day")
    assert len(back) == 12 and back.condition == "day"
    for a, b in zip(t.images, back.images):
        np.testing.assert_array_equal(a, b)
    assert back.paths[0].endswith("000000.pgm")


def test_rgb_traverse_with_mean(tmp_path):
    rng = np.random.default_rng(1)
    t = Traverse(frames(rng, 3, c=3))
    save_traverse(t, tmp_path)
    back = load_traverse(tmp_path, mean=[0.5, 0.25, 0.0])
    np.testing.assert_allclose(back[1][1], t[1][1] - 0.25, atol=1e-7)
    with pytest.raises(DataError, match="channels"):
        load_traverse(tmp_path, mean=[0.5])


def test_empty_directory(tmp_path):
    with pytest.raises(DataError, match="no images"):
        load_traverse(tmp_path)


def test_missing_directory(tmp_path):
    with pytest.raises(DataError):
        load_traverse(tmp_path / "nope")


def test_index_gap(tmp_path):
    rng = np.random.default_rng(2)
    save_traverse(Traverse(frames(rng, 4)), tmp_path)
    (tmp_path / "000002.pgm").unlink()
    with pytest.raises(DataError, match="gap"):
        load_traverse(tmp_path)


def test_unreadable_image(tmp_path):
    (tmp_path / "000000.pgm").write_bytes(b"garbage")
    with pytest.raises(DataError, match="000000.pgm"):
        load_traverse(tmp_path)


def test_manifest_order(tmp_path):
    rng = np.random.default_rng(3)
    t = save_traverse(Traverse(frames(rng, 3)), tmp_path / "imgs")
    (tmp_path / "list.txt").write_text("# order\n000002.pgm\n000000.pgm\n")
    back = load_traverse(tmp_path / "imgs", manifest=tmp_path / "list.txt")
    assert len(back) == 2
    np.testing.assert_array_equal(back[0], t[2])


def test_mixed_shapes_rejected(tmp_path):
    (tmp_path / "0.pgm").write_bytes(encode_pnm(np.zeros((1, 2, 2))))
    (tmp_path / "1.pgm").write_bytes(encode_pnm(np.zeros((1, 3, 2))))
    with pytest.raises(DataError, match="differ in shape"):
        load_traverse(tmp_path)


def test_alignment_check():
    rng = np.random.default_rng(4)
    check_aligned(Traverse(frames(rng, 3)), Traverse(frames(rng, 3)))
    with pytest.raises(DataError, match="length"):
        check_aligned(Traverse(frames(rng, 3)), Traverse(frames(rng, 4)))


@pytest.mark.parametrize("n, tol", [(200, 3), (2000, 10)])
def test_day_night_walk_layout(tmp_path, n, tol):
    rng = np.random.default_rng(5)
    ref = save_traverse(Traverse(frames(rng, n, h=2, w=2), "day"), tmp_path / "day")
    qry = save_traverse(Traverse(frames(rng, n, h=2, w=2), "night"), tmp_path / "night")
    ref, qry = load_traverse(tmp_path / "day"), load_traverse(tmp_path / "night")
    assert len(ref) == len(qry) == n
    check_aligned(ref, qry)
    cfg = CalibrationConfig("conv1", "relu2", tolerance=tol)
    assert len(build_triplets(n, 10, cfg)) == 10
    desc = np.stack([im.reshape(-1) for im in ref.images]) + 0.01
    reports, curve = evaluate(desc, desc, tol, tol)
    assert len(reports) == n and curve.max_f1 == 1.0
