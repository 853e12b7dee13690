"""Dataset ingestion and the synthetic quadrant task."""

import struct

import numpy as np
import pytest

from spikecoding.data import (Dataset, load_idx, load_image_dir, split,
                              synthetic, to_rgb, write_idx)


# -- IDX ---------------------------------------------------------------------


def test_idx_round_trip(tmp_path):
    ds = synthetic(12, classes=3, height=5, width=7, seed=2)
    write_idx(ds, tmp_path / "i.idx", tmp_path / "l.idx")
    back = load_idx(tmp_path / "i.idx", tmp_path / "l.idx")
    np.testing.assert_array_equal(back.images, ds.images)
    np.testing.assert_array_equal(back.labels, ds.labels)


def test_idx_hand_built_bytes(tmp_path):
    # 2 images of 2x2, big-endian headers
    img = tmp_path / "i.idx"
    img.write_bytes(struct.pack(">IIII", 0x00000803, 2, 2, 2) +
                    bytes([1, 2, 3, 4, 250, 251, 252, 253]))
    lab = tmp_path / "l.idx"
    lab.write_bytes(struct.pack(">II", 0x00000801, 2) + bytes([7, 1]))
    ds = load_idx(img, lab)
    assert ds.images.shape == (2, 1, 2, 2)
    np.testing.assert_array_equal(ds.images[0, 0], [[1, 2], [3, 4]])
    np.testing.assert_array_equal(ds.images[1, 0], [[250, 251], [252, 253]])
    np.testing.assert_array_equal(ds.labels, [7, 1])


def test_idx_write_after_load_is_byte_exact(tmp_path):
    img_bytes = struct.pack(">IIII", 0x00000803, 3, 4, 5) + bytes(range(60))
    lab_bytes = struct.pack(">II", 0x00000801, 3) + bytes([2, 0, 1])
    (tmp_path / "i.idx").write_bytes(img_bytes)
    (tmp_path / "l.idx").write_bytes(lab_bytes)
    ds = load_idx(tmp_path / "i.idx", tmp_path / "l.idx")
    write_idx(ds, tmp_path / "i2.idx", tmp_path / "l2.idx")
    assert (tmp_path / "i2.idx").read_bytes() == img_bytes
    assert (tmp_path / "l2.idx").read_bytes() == lab_bytes


def test_idx_without_labels_defaults_to_zero(tmp_path):
    img = tmp_path / "i.idx"
    img.write_bytes(struct.pack(">IIII", 0x00000803, 1, 2, 2) + bytes(4))
    ds = load_idx(img)
    np.testing.assert_array_equal(ds.labels, [0])


def test_idx_error_paths(tmp_path):
    bad_magic = tmp_path / "m.idx"
    bad_magic.write_bytes(struct.pack(">IIII", 0x00000801, 1, 2, 2) + bytes(4))
    with pytest.raises(ValueError, match="magic"):
        load_idx(bad_magic)

    short = tmp_path / "s.idx"
    short.write_bytes(b"\x00\x00")
    with pytest.raises(ValueError, match="short"):
        load_idx(short)

    truncated = tmp_path / "t.idx"
    truncated.write_bytes(struct.pack(">IIII", 0x00000803, 2, 2, 2) + bytes(4))
    with pytest.raises(ValueError, match="truncated"):
        load_idx(truncated)

    img = tmp_path / "ok.idx"
    img.write_bytes(struct.pack(">IIII", 0x00000803, 1, 2, 2) + bytes(4))
    bad_count = tmp_path / "c.idx"
    bad_count.write_bytes(struct.pack(">II", 0x00000801, 5) + bytes(5))
    with pytest.raises(ValueError, match="count"):
        load_idx(img, bad_count)

    bad_lmagic = tmp_path / "lm.idx"
    bad_lmagic.write_bytes(struct.pack(">II", 0x00000803, 1) + bytes(1))
    with pytest.raises(ValueError, match="magic"):
        load_idx(img, bad_lmagic)


def test_write_idx_rejects_rgb(tmp_path):
    ds = to_rgb(synthetic(4, classes=2, height=4, width=4, seed=1))
    with pytest.raises(ValueError):
        write_idx(ds, tmp_path / "i.idx", tmp_path / "l.idx")


# -- synthetic task ----------------------------------------------------------


def test_synthetic_shape_balance_range():
    ds = synthetic(100, classes=10, height=10, width=10, seed=0)
    assert ds.images.shape == (100, 1, 10, 10)
    assert ds.images.min() >= 0 and ds.images.max() <= 255
    counts = np.bincount(ds.labels, minlength=10)
    assert np.all(counts == 10)
    assert ds.num_classes == 10


def test_synthetic_is_deterministic():
    a = synthetic(30, classes=4, height=6, width=6, seed=9)
    b = synthetic(30, classes=4, height=6, width=6, seed=9)
    c = synthetic(30, classes=4, height=6, width=6, seed=10)
    np.testing.assert_array_equal(a.images, b.images)
    assert not np.array_equal(a.images, c.images)


def test_synthetic_quadrants_encode_class_bits():
    ds = synthetic(16, classes=16, height=6, width=6, noise=0.0,
                   low=60, high=180, seed=3)
    for i in range(16):
        c = int(ds.labels[i])
        img = ds.images[i, 0]
        quads = [img[:3, :3], img[:3, 3:], img[3:, :3], img[3:, 3:]]
        for q_idx, q in enumerate(quads):
            want = 180 if (c >> q_idx) & 1 else 60
            assert np.all(q == want), (c, q_idx)


def test_synthetic_is_linearly_separable():
    ds = synthetic(200, classes=10, height=10, width=10, noise=48.0, seed=0)
    x = ds.images.reshape(200, -1).astype(np.float64)
    x = np.hstack([x, np.ones((200, 1))])
    y = np.eye(10)[ds.labels]
    coef, *_ = np.linalg.lstsq(x, y, rcond=None)
    acc = (np.argmax(x @ coef, axis=1) == ds.labels).mean()
    assert acc >= 0.9


def test_synthetic_validation():
    with pytest.raises(ValueError):
        synthetic(5, classes=10)  # fewer samples than classes
    with pytest.raises(ValueError):
        synthetic(10, classes=17)
    with pytest.raises(ValueError):
        synthetic(10, classes=2, height=1, width=4)


# -- dataset container -------------------------------------------------------


def test_dataset_validation():
    with pytest.raises(ValueError):
        Dataset(np.zeros((2, 4, 4), dtype=np.int64), np.zeros(2, dtype=np.int64))
    with pytest.raises(ValueError):
        Dataset(np.zeros((2, 1, 4, 4), dtype=np.int64),
                np.zeros(3, dtype=np.int64))
    with pytest.raises(TypeError):
        Dataset(np.zeros((2, 1, 4, 4)), np.zeros(2, dtype=np.int64))
    with pytest.raises(ValueError):
        Dataset(np.full((2, 1, 4, 4), 256, dtype=np.int64),
                np.zeros(2, dtype=np.int64))


def test_to_rgb():
    ds = synthetic(4, classes=2, height=4, width=4, seed=1)
    rgb = to_rgb(ds)
    assert rgb.images.shape == (4, 3, 4, 4)
    for c in range(3):
        np.testing.assert_array_equal(rgb.images[:, c], ds.images[:, 0])
    assert to_rgb(rgb) is rgb


# -- image directory ---------------------------------------------------------


def _write_tree(root, sizes=None):
    from PIL import Image
    gen = np.random.default_rng(80)
    for cls in ("alpha", "beta"):
        d = root / cls
        d.mkdir(parents=True)
        for i in range(3):
            shape = (sizes or (5, 4)) + (3,)
            arr = gen.integers(0, 256, size=shape, dtype=np.uint8)
            Image.fromarray(arr, "RGB").save(d / f"img{i}.png")


def test_load_image_dir(tmp_path):
    _write_tree(tmp_path)
    ds = load_image_dir(tmp_path)
    assert ds.images.shape == (6, 3, 5, 4)
    np.testing.assert_array_equal(ds.labels, [0, 0, 0, 1, 1, 1])
    assert ds.images.min() >= 0 and ds.images.max() <= 255


def test_load_image_dir_round_trips_pixels(tmp_path):
    from PIL import Image
    d = tmp_path / "only"
    d.mkdir()
    arr = np.arange(24, dtype=np.uint8).reshape(2, 4, 3)
    Image.fromarray(arr, "RGB").save(d / "a.png")
    ds = load_image_dir(tmp_path)
    np.testing.assert_array_equal(ds.images[0], arr.transpose(2, 0, 1))


def test_load_image_dir_errors(tmp_path):
    with pytest.raises(ValueError, match="class"):
        load_image_dir(tmp_path)  # no subdirectories
    from PIL import Image
    d = tmp_path / "x"
    d.mkdir()
    Image.fromarray(np.zeros((4, 4, 3), dtype=np.uint8)).save(d / "a.png")
    Image.fromarray(np.zeros((5, 4, 3), dtype=np.uint8)).save(d / "b.png")
    with pytest.raises(ValueError, match="size"):
        load_image_dir(tmp_path)
