import gzip

import numpy as np
import pytest

from hashnets.data import (
    Dataset,
    bundled_mnist_path,
    load_bundled_mnist,
    load_csv,
    load_idx,
    train_test_split,
    write_csv,
    write_idx,
)
from hashnets.errors import FormatError, InvalidInputError
from hashnets.linalg import Rng


def _images(count=4, side=3, seed=0):
    gen = np.random.default_rng(seed)
    return gen.integers(0, 256, (count, side, side), dtype=np.uint8), gen.integers(0, 10, count)


class TestIdx:
    @pytest.mark.parametrize("suffix", ["", ".gz"])
    def test_round_trip(self, tmp_path, suffix):
        imgs, labels = _images()
        ip, lp = tmp_path / f"img{suffix}", tmp_path / f"lab{suffix}"
        write_idx(ip, lp, imgs, labels)
        if suffix:
            assert ip.read_bytes()[:2] == b"\x1f\x8b"
        d = load_idx(ip, lp)
        np.testing.assert_array_equal(d.features, imgs.reshape(4, -1) / 255.0)
        np.testing.assert_array_equal(d.labels, labels)
        assert d.n_classes == 10

    def test_bad_magic(self, tmp_path):
        imgs, labels = _images()
        write_idx(tmp_path / "i", tmp_path / "l", imgs, labels)
        with pytest.raises(FormatError) as e:
            load_idx(tmp_path / "l", tmp_path / "l")
        assert e.value.field == "magic"

    def test_truncated(self, tmp_path):
        imgs, labels = _images()
        write_idx(tmp_path / "i", tmp_path / "l", imgs, labels)
        raw = (tmp_path / "i").read_bytes()
        (tmp_path / "i").write_bytes(raw[:-5])
        with pytest.raises(FormatError) as e:
            load_idx(tmp_path / "i", tmp_path / "l")
        assert e.value.field == "data"
        (tmp_path / "i").write_bytes(raw[:6])
        with pytest.raises(FormatError) as e:
            load_idx(tmp_path / "i", tmp_path / "l")
        assert e.value.field == "header"

    def test_count_mismatch(self, tmp_path):
        imgs, labels = _images()
        write_idx(tmp_path / "i", tmp_path / "l", imgs, labels)
        write_idx(tmp_path / "i3", tmp_path / "l3", imgs[:3], labels[:3])
        with pytest.raises(FormatError) as e:
            load_idx(tmp_path / "i", tmp_path / "l3")
        assert e.value.field == "count"

    def test_label_out_of_range(self, tmp_path):
        imgs, _ = _images()
        write_idx(tmp_path / "i", tmp_path / "l", imgs, [0, 1, 2, 12])
        with pytest.raises(FormatError) as e:
            load_idx(tmp_path / "i", tmp_path / "l")
        assert e.value.field == "labels"

    def test_gzip_read_by_content_not_name(self, tmp_path):
        imgs, labels = _images()
        write_idx(tmp_path / "i.gz", tmp_path / "l.gz", imgs, labels)
        (tmp_path / "i.gz").rename(tmp_path / "images.bin")
        d = load_idx(tmp_path / "images.bin", tmp_path / "l.gz")
        assert d.m == 4


class TestCsv:
    def test_hand_file(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("0,255,1\n51,102,0\n\n")
        d = load_csv(p, scale=255.0)
        np.testing.assert_array_equal(d.features, [[0.0, 1.0], [0.2, 0.4]])
        np.testing.assert_array_equal(d.labels, [1, 0])
        assert d.n_classes == 2

    def test_empty(self, tmp_path):
        p = tmp_path / "e.csv"
        p.write_text("")
        d = load_csv(p, n_features=3)
        assert d.m == 0 and d.features.shape == (0, 3)

    def test_ragged(self, tmp_path):
        p = tmp_path / "r.csv"
        p.write_text("0.1,0.2,1\n0.3,0\n")
        with pytest.raises(FormatError) as e:
            load_csv(p)
        assert e.value.field == "row 2"

    def test_non_numeric_and_bad_label(self, tmp_path):
        p = tmp_path / "x.csv"
        p.write_text("0.1,abc,1\n")
        with pytest.raises(FormatError):
            load_csv(p)
        p.write_text("0.1,0.2,1.5\n")
        with pytest.raises(FormatError):
            load_csv(p)

    def test_out_of_range_features(self, tmp_path):
        p = tmp_path / "x.csv"
        p.write_text("0.1,2.0,1\n")
        with pytest.raises(InvalidInputError):
            load_csv(p)

    @pytest.mark.parametrize("name", ["d.csv", "d.csv.gz"])
    def test_round_trip(self, tmp_path, name):
        gen = np.random.default_rng(0)
        d = Dataset(gen.random((7, 5)), gen.integers(0, 3, 7), 3)
        write_csv(tmp_path / name, d)
        back = load_csv(tmp_path / name, n_classes=3)
        np.testing.assert_array_equal(back.features, d.features)
        np.testing.assert_array_equal(back.labels, d.labels)

    def test_gzip_csv(self, tmp_path):
        p = tmp_path / "d.gz"
        with gzip.open(p, "wb") as f:
            f.write(b"0.5,0.25,0\n")
        assert load_csv(p).features.tolist() == [[0.5, 0.25]]


class TestSplit:
    def test_partition(self):
        d = Dataset(np.linspace(0, 1, 20)[:, None], np.arange(20) % 2, 2)
        train, test = train_test_split(d, 5, Rng(0))
        assert (train.m, test.m) == (15, 5)
        got = np.sort(np.r_[train.features[:, 0], test.features[:, 0]])
        np.testing.assert_array_equal(got, d.features[:, 0])

    def test_deterministic(self):
        d = Dataset(np.linspace(0, 1, 20)[:, None], np.zeros(20), 1)
        a, b = train_test_split(d, 5, Rng(3)), train_test_split(d, 5, Rng(3))
        np.testing.assert_array_equal(a[1].features, b[1].features)

    def test_invalid(self):
        d = Dataset(np.zeros((3, 1)), np.zeros(3), 1)
        with pytest.raises(InvalidInputError):
            train_test_split(d, 4, Rng(0))


@pytest.mark.skipif(bundled_mnist_path() is None, reason="mlxtend not installed")
def test_bundled_mnist():
    d = load_bundled_mnist()
    assert (d.m, d.n, d.n_classes) == (5000, 784, 10)
    np.testing.assert_array_equal(np.bincount(d.labels), np.full(10, 500))
    assert d.features.min() == 0.0 and d.features.max() == 1.0
