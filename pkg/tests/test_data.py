import numpy as np
import pytest

from dlpl.harness import generate_dataset, load_dataset, save_dataset
from dlpl.harness.data import TEST, TRAIN, homography_from_corners, sample_view
from dlpl.tensor import ConfigurationError


def test_same_seed_is_bitwise_identical():
    a = generate_dataset(6, 3, img_size=32, seed=4)
    b = generate_dataset(6, 3, img_size=32, seed=4)
    for name in ("images", "labels", "view_h", "split"):
        assert getattr(a, name).tobytes() == getattr(b, name).tobytes()


def test_different_seed_differs():
    a = generate_dataset(2, 0, img_size=32, seed=0)
    b = generate_dataset(2, 0, img_size=32, seed=1)
    assert not np.array_equal(a.images, b.images)


def test_zero_strength_is_fronto_parallel():
    ds = generate_dataset(3, 3, img_size=32, warp_strength_train=0.0, warp_strength_test=0.0)
    for h in ds.view_h:
        np.testing.assert_allclose(h / h[2, 2], np.eye(3), atol=1e-12)


@pytest.mark.parametrize("kw", [dict(warp_strength_train=2.0), dict(warp_strength_test=-0.1),
                                dict(n_train=-1), dict(num_classes=1)])
def test_invalid_arguments_rejected(kw):
    with pytest.raises(ConfigurationError):
        generate_dataset(**{"n_train": 2, "n_test": 1, "img_size": 16, **kw})


def test_split_sizes_and_strengths():
    ds = generate_dataset(5, 3, img_size=32)
    assert (ds.split == TRAIN).sum() == 5 and (ds.split == TEST).sum() == 3
    assert len(ds.subset(TEST)) == 3


def _corner_shift(h, size):
    c = np.array([[0, 0, 1], [size, 0, 1], [0, size, 1], [size, size, 1]], dtype=float)
    m = c @ h.T
    return np.abs(m[:, :2] / m[:, 2:] - c[:, :2]).max() / size


def test_corner_jitter_bounded_by_strength():
    rng = np.random.default_rng(0)
    for s in (0.1, 0.4):
        shifts = [_corner_shift(sample_view(rng, 64, s), 64) for _ in range(50)]
        # each corner coordinate moves by at most half the strength times the image size
        assert max(shifts) <= 0.5 * s + 1e-12
        assert max(shifts) > 0.4 * s


def test_four_point_homography_exact():
    src = np.array([[0, 0], [1, 0], [0, 1], [1, 1]], dtype=float)
    dst = src + np.array([[0.1, 0.0], [0.0, 0.05], [-0.02, 0.0], [0.03, -0.04]])
    h = homography_from_corners(src, dst)
    m = np.column_stack([src, np.ones(4)]) @ h.T
    np.testing.assert_allclose(m[:, :2] / m[:, 2:], dst, atol=1e-12)


def test_pixels_quantised_and_labels_in_range():
    flat = generate_dataset(1, 0, img_size=32, warp_strength_train=0.0, seed=3)
    assert set(np.unique(flat.labels)) <= {0, 1, 2, 3}
    assert flat.images.min() >= 0 and flat.images.max() <= 1
    np.testing.assert_array_equal(np.round(flat.images * 255) / 255, flat.images)


def test_all_classes_present_in_most_samples():
    ds = generate_dataset(1000, 0, img_size=64, seed=0)
    present = np.array([len(np.unique(l)) == ds.num_classes for l in ds.labels])
    assert present.mean() >= 0.95


def test_file_round_trip(tmp_path):
    ds = generate_dataset(4, 2, img_size=16, seed=2)
    save_dataset(tmp_path / "d.bin", ds)
    raw = (tmp_path / "d.bin").read_bytes()
    assert raw[:4] == b"DLPD"
    back = load_dataset(tmp_path / "d.bin")
    np.testing.assert_array_equal(back.images, ds.images)
    for name in ("labels", "view_h", "split"):
        assert getattr(back, name).tobytes() == getattr(ds, name).tobytes()
    assert back.num_classes == ds.num_classes


def test_corrupt_files_rejected(tmp_path):
    ds = generate_dataset(2, 0, img_size=16)
    save_dataset(tmp_path / "d.bin", ds)
    raw = (tmp_path / "d.bin").read_bytes()
    (tmp_path / "short.bin").write_bytes(raw[:-3])
    (tmp_path / "magic.bin").write_bytes(b"XXXX" + raw[4:])
    for name in ("short.bin", "magic.bin"):
        with pytest.raises(IOError):
            load_dataset(tmp_path / name)


def test_labels_are_the_canonical_labels_seen_through_the_view():
    from dlpl.harness.data import render_sample
    size = 64
    _, canon, _ = render_sample(np.random.default_rng(11), size, 4, 0.0)
    _, warped, h = render_sample(np.random.default_rng(11), size, 4, 0.4)
    v, u = np.mgrid[0:size, 0:size] + 0.5
    src = np.linalg.inv(h) @ np.stack([u.ravel(), v.ravel(), np.ones(u.size)])
    x, y = src[0] / src[2], src[1] / src[2]
    inside = (x >= 0) & (x < size) & (y >= 0) & (y < size)
    near = canon[np.clip(y.astype(int), 0, size - 1), np.clip(x.astype(int), 0, size - 1)]
    agree = (near == warped.ravel())[inside].mean()
    assert agree > 0.97
