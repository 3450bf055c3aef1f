import numpy as np
import pytest

from rsam.data import (
    BatchPlan,
    Dataset,
    IdxFormatError,
    batches,
    load_mnist,
    parse_idx_images,
    parse_idx_labels,
    serialize_idx_images,
    serialize_idx_labels,
    synthetic_clusters,
)
from rsam.errors import ShapeError


def tiny_image_bytes():
    """Two 2x2 images, hand-assembled big-endian: header then raw pixels."""
    header = bytes([0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2])
    pixels = bytes([0, 51, 102, 255, 255, 204, 153, 0])
    return header + pixels


class TestIdxParsing:
    def test_hand_built_images(self):
        x = parse_idx_images(tiny_image_bytes())
        assert x.shape == (2, 4)
        assert np.allclose(x[0], [0, 51 / 255, 102 / 255, 1.0])
        assert np.allclose(x[1], [1.0, 204 / 255, 153 / 255, 0])

    def test_hand_built_labels(self):
        data = bytes([0, 0, 8, 1, 0, 0, 0, 3]) + bytes([7, 0, 9])
        y = parse_idx_labels(data)
        assert y.dtype == np.int64
        assert np.array_equal(y, [7, 0, 9])

    def test_bad_image_magic(self):
        data = bytearray(tiny_image_bytes())
        data[3] = 1
        with pytest.raises(IdxFormatError):
            parse_idx_images(bytes(data))

    def test_bad_label_magic(self):
        with pytest.raises(IdxFormatError):
            parse_idx_labels(bytes([0, 0, 8, 3, 0, 0, 0, 0]))

    def test_truncated_image_payload(self):
        with pytest.raises(IdxFormatError):
            parse_idx_images(tiny_image_bytes()[:-1])

    def test_truncated_image_header(self):
        with pytest.raises(IdxFormatError):
            parse_idx_images(b"\x00\x00\x08\x03")

    def test_truncated_label_payload(self):
        data = bytes([0, 0, 8, 1, 0, 0, 0, 5]) + bytes([1, 2])
        with pytest.raises(IdxFormatError):
            parse_idx_labels(data)

    def test_image_round_trip_bytes(self):
        data = tiny_image_bytes()
        x = parse_idx_images(data)
        assert serialize_idx_images(x, 2, 2) == data

    def test_label_round_trip_bytes(self):
        data = bytes([0, 0, 8, 1, 0, 0, 0, 4]) + bytes([3, 1, 4, 1])
        assert serialize_idx_labels(parse_idx_labels(data)) == data

    def test_load_mnist(self, tmp_path):
        img = tmp_path / "imgs"
        lab = tmp_path / "labels"
        img.write_bytes(tiny_image_bytes())
        lab.write_bytes(bytes([0, 0, 8, 1, 0, 0, 0, 2]) + bytes([4, 9]))
        ds = load_mnist(str(img), str(lab))
        assert len(ds) == 2
        assert np.array_equal(ds.y, [4, 9])
        assert ds.x.shape == (2, 4)


class TestSyntheticClusters:
    def test_shapes_and_labels(self):
        ds = synthetic_clusters(3, 10, 5, 4.0, seed=0)
        assert ds.x.shape == (30, 5)
        assert np.array_equal(np.bincount(ds.y), [10, 10, 10])

    def test_deterministic(self):
        a = synthetic_clusters(4, 7, 6, 2.0, seed=11)
        b = synthetic_clusters(4, 7, 6, 2.0, seed=11)
        assert np.array_equal(a.x, b.x)
        assert np.array_equal(a.y, b.y)

    def test_seed_changes_samples(self):
        a = synthetic_clusters(2, 5, 4, 2.0, seed=0)
        b = synthetic_clusters(2, 5, 4, 2.0, seed=1)
        assert not np.array_equal(a.x, b.x)

    def test_well_separated_nearest_center(self):
        # at separation 10 with unit noise, assigning each sample to the
        # nearest class center recovers almost every label
        classes, per_class, dim = 5, 200, 8
        ds = synthetic_clusters(classes, per_class, dim, 10.0, seed=3)
        centers = np.zeros((classes, dim))
        centers[np.arange(classes), np.arange(classes)] = 10.0
        d2 = ((ds.x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        acc = np.mean(np.argmin(d2, axis=1) == ds.y)
        assert acc >= 0.99

    def test_empirical_centroids(self):
        ds = synthetic_clusters(3, 2000, 4, 6.0, seed=5)
        for c in range(3):
            centroid = ds.x[ds.y == c].mean(axis=0)
            want = np.zeros(4)
            want[c] = 6.0
            assert np.linalg.norm(centroid - want) <= 0.15

    def test_feature_dim_guard(self):
        with pytest.raises(ShapeError):
            synthetic_clusters(5, 10, 3, 1.0, seed=0)

    def test_negative_separation(self):
        with pytest.raises(ValueError):
            synthetic_clusters(2, 3, 4, -1.0, seed=0)


class TestBatches:
    def dataset(self, n=23, dim=3, seed=0):
        rng = np.random.default_rng(seed)
        return Dataset(x=rng.standard_normal((n, dim)), y=rng.integers(0, 3, size=n))

    def test_epoch_covers_every_sample_once(self):
        ds = self.dataset()
        plan = BatchPlan(batch_size=5, seed=1)
        rows = np.concatenate([b.x for b in batches(ds, plan, epoch=0)])
        assert rows.shape == ds.x.shape
        # multiset equality: sort both by full row content
        key = np.lexsort(rows.T)
        key_ds = np.lexsort(ds.x.T)
        assert np.allclose(rows[key], ds.x[key_ds])

    def test_last_partial_batch_kept(self):
        ds = self.dataset(n=23)
        sizes = [len(b.y) for b in batches(ds, BatchPlan(batch_size=5, seed=0), 0)]
        assert sizes == [5, 5, 5, 5, 3]

    def test_deterministic_per_epoch(self):
        ds = self.dataset()
        plan = BatchPlan(batch_size=4, seed=9)
        a = [b.x for b in batches(ds, plan, epoch=2)]
        b2 = [b.x for b in batches(ds, plan, epoch=2)]
        for xa, xb in zip(a, b2):
            assert np.array_equal(xa, xb)

    def test_epochs_reshuffle(self):
        ds = self.dataset(n=40)
        plan = BatchPlan(batch_size=40, seed=9)
        (a,) = batches(ds, plan, epoch=0)
        (b,) = batches(ds, plan, epoch=1)
        assert not np.array_equal(a.x, b.x)

    def test_labels_follow_rows(self):
        ds = self.dataset()
        for b in batches(ds, BatchPlan(batch_size=6, seed=4), 1):
            for xi, yi in zip(b.x, b.y):
                j = np.argmin(np.linalg.norm(ds.x - xi, axis=1))
                assert ds.y[j] == yi

    def test_multiview_structure(self):
        ds = self.dataset(n=10)
        plan = BatchPlan(batch_size=4, seed=2, multiview=True, jitter=0.05)
        for b in batches(ds, plan, 0):
            n = len(b.y) // 2
            assert b.x.shape[0] == 2 * n
            assert b.pairing is not None
            for k in range(n):
                assert b.pairing[2 * k] == 2 * k + 1
                assert b.pairing[2 * k + 1] == 2 * k
                assert b.y[2 * k] == b.y[2 * k + 1]
                # the two views differ only by small jitter
                gap = np.linalg.norm(b.x[2 * k] - b.x[2 * k + 1])
                assert 0 < gap < 1.0

    def test_zero_jitter_views_identical(self):
        ds = self.dataset(n=6)
        plan = BatchPlan(batch_size=3, seed=0, multiview=True, jitter=0.0)
        for b in batches(ds, plan, 0):
            assert np.array_equal(b.x[0::2], b.x[1::2])

    def test_batch_size_validation(self):
        with pytest.raises(ValueError):
            BatchPlan(batch_size=0)

    def test_dataset_length_mismatch(self):
        with pytest.raises(ShapeError):
            Dataset(x=np.zeros((3, 2)), y=np.zeros(2, dtype=np.int64))
