import struct

import numpy as np
import pytest

from kanfed.data import (
    Dataset,
    check_partition,
    load_idx,
    load_mnist,
    normalize,
    partition_report,
    pathological_partition,
    write_idx,
    write_partition_csv,
    write_partition_json,
)
from kanfed.errors import ConfigurationError, DataError
from kanfed.numerics import RngStream

from conftest import make_synth_dataset


def write_fixture_idx(tmp_path, pixels, labels):
    n = len(labels)
    imgs = tmp_path / "imgs"
    labs = tmp_path / "labs"
    with open(imgs, "wb") as f:
        f.write(struct.pack(">IIII", 0x803, n, 28, 28))
        f.write(bytes(pixels))
    with open(labs, "wb") as f:
        f.write(struct.pack(">II", 0x801, n))
        f.write(bytes(labels))
    return imgs, labs


class TestLoadIdx:
    def test_two_image_fixture(self, tmp_path):
        pixels = [7] * 784 + [250] * 784
        imgs, labs = write_fixture_idx(tmp_path, pixels, [3, 9])
        ds = load_idx(imgs, labs)
        assert ds.images.shape == (2, 784)
        assert np.all(ds.images[0] == 7.0)
        assert np.all(ds.images[1] == 250.0)
        assert list(ds.labels) == [3, 9]

    def test_count_mismatch(self, tmp_path):
        a = tmp_path / "a"
        b = tmp_path / "b"
        a.mkdir(), b.mkdir()
        imgs, _ = write_fixture_idx(a, [0] * 784, [1])
        _, labs = write_fixture_idx(b, [0] * 2 * 784, [1, 2])
        with pytest.raises(DataError, match="mismatch"):
            load_idx(imgs, labs)

    def test_bad_magic(self, tmp_path):
        bad = tmp_path / "bad"
        bad.write_bytes(struct.pack(">IIII", 0xDEAD, 1, 28, 28) + bytes(784))
        _, labs = write_fixture_idx(tmp_path, [0] * 784, [1])
        with pytest.raises(DataError, match="magic"):
            load_idx(bad, labs)

    def test_truncated_file(self, tmp_path):
        bad = tmp_path / "trunc"
        bad.write_bytes(struct.pack(">IIII", 0x803, 2, 28, 28) + bytes(100))
        _, labs = write_fixture_idx(tmp_path, [0] * 784, [1, 2])
        with pytest.raises(DataError, match="truncated"):
            load_idx(bad, labs)

    def test_round_trip_through_write_idx(self, tmp_path):
        ds = make_synth_dataset(20, 5)
        write_idx(ds, tmp_path / "i", tmp_path / "l")
        back = load_idx(tmp_path / "i", tmp_path / "l")
        assert np.array_equal(back.images, ds.images)
        assert np.array_equal(back.labels, ds.labels)


class TestNormalize:
    def test_pixel_extremes(self):
        ds = Dataset(images=np.array([[0.0, 255.0]]), labels=np.array([0]))
        out = normalize(ds)
        assert abs(out.images[0, 0] - (0 - 0.1307) / 0.3081) < 1e-12
        assert abs(out.images[0, 1] - (1 - 0.1307) / 0.3081) < 1e-12
        assert abs(out.images[0, 0] - (-0.4242)) < 1e-4
        assert abs(out.images[0, 1] - 2.8215) < 1e-4

    def test_double_normalize_rejected(self):
        ds = normalize(Dataset(images=np.zeros((1, 2)), labels=np.array([0])))
        with pytest.raises(DataError):
            normalize(ds)


class TestPartition:
    @pytest.fixture()
    def parts(self, mnist_shaped_labels):
        p = pathological_partition(
            mnist_shaped_labels, n_clients=100, labels_per_client=2, rng=RngStream(0)
        )
        return p

    def test_contract(self, parts, mnist_shaped_labels):
        assert len(parts) == 100
        check_partition(parts, len(mnist_shaped_labels))
        for p in parts:
            assert len(p.label_set) == 2
            labs = set(mnist_shaped_labels.labels[p.indices])
            assert labs == set(p.label_set)

    def test_mean_size_exactly_600(self, parts):
        sizes = [len(p) for p in parts]
        assert sum(sizes) / len(sizes) == 600.0

    def test_sizes_in_band_with_imbalance(self, parts):
        sizes = [len(p) for p in parts]
        assert min(sizes) >= 400 and max(sizes) <= 900
        assert min(sizes) < max(sizes)
        assert min(sizes) >= 100

    def test_deterministic(self, mnist_shaped_labels, parts):
        again = pathological_partition(
            mnist_shaped_labels, n_clients=100, labels_per_client=2, rng=RngStream(0)
        )
        for a, b in zip(parts, again):
            assert np.array_equal(a.indices, b.indices)
            assert a.label_set == b.label_set

    def test_indivisible_shard_count_rejected(self, mnist_shaped_labels):
        with pytest.raises(ConfigurationError):
            pathological_partition(
                mnist_shaped_labels, n_clients=7, labels_per_client=3, rng=RngStream(1)
            )

    def test_per_label_totals_conserved(self, parts, mnist_shaped_labels):
        totals = np.zeros(10, dtype=int)
        for p in parts:
            labs, counts = np.unique(
                mnist_shaped_labels.labels[p.indices], return_counts=True
            )
            totals[labs] += counts
        expected = np.bincount(mnist_shaped_labels.labels, minlength=10)
        assert np.array_equal(totals, expected)


class TestPartitionReport:
    def test_conservation(self, mnist_shaped_labels, tmp_path):
        parts = pathological_partition(
            mnist_shaped_labels, n_clients=100, labels_per_client=2, rng=RngStream(2)
        )
        rows = partition_report(parts, mnist_shaped_labels)
        by_client = {}
        by_label = {}
        for cid, lab, cnt in rows:
            by_client[cid] = by_client.get(cid, 0) + cnt
            by_label[lab] = by_label.get(lab, 0) + cnt
        for p in parts:
            assert by_client[p.client_id] == len(p)
        expected = np.bincount(mnist_shaped_labels.labels, minlength=10)
        for lab in range(10):
            assert by_label[lab] == expected[lab]
        write_partition_csv(rows, tmp_path / "p.csv")
        write_partition_json(parts, tmp_path / "p.json")
        assert (tmp_path / "p.csv").stat().st_size > 0
        assert (tmp_path / "p.json").stat().st_size > 0


class TestLoadMnistDir:
    def test_load_from_synth_dir(self, synth_idx_dir):
        train, test = load_mnist(synth_idx_dir)
        assert len(train) == 6000 and len(test) == 1000
        assert train.normalized and test.normalized

    def test_missing_dir(self, tmp_path):
        with pytest.raises(DataError):
            load_mnist(tmp_path / "nope")
