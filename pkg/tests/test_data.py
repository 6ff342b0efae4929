import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from qgars.data import (
    Dataset,
    generate_synthetic_polyps,
    load_dataset,
    load_image_patches,
    load_mnist_idx,
    save_dataset,
    split_train_test,
)
from qgars.errors import ConfigError, DataFormatError

from conftest import mnist_paths, requires_mnist


def write_idx(tmp_path, images, labels, image_magic=2051, label_magic=2049):
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, rows, cols = images.shape
    img_path = tmp_path / "images-idx3-ubyte"
    lab_path = tmp_path / "labels-idx1-ubyte"
    with open(img_path, "wb") as fh:
        fh.write(struct.pack(">IIII", image_magic, n, rows, cols))
        fh.write(images.tobytes())
    with open(lab_path, "wb") as fh:
        fh.write(struct.pack(">II", label_magic, n))
        fh.write(labels.tobytes())
    return img_path, lab_path


class TestMnistLoader:
    def test_filters_and_scales(self, tmp_path):
        rng = np.random.default_rng(0)
        images = rng.integers(0, 256, size=(6, 28, 28))
        labels = np.array([0, 1, 2, 1, 7, 0])
        img, lab = write_idx(tmp_path, images, labels)
        ds = load_mnist_idx(img, lab)
        assert len(ds) == 4
        assert ds.images.shape == (4, 784)
        assert set(ds.labels.tolist()) <= {0, 1}
        np.testing.assert_allclose(ds.images[0], images[0].ravel() / 255.0)

    def test_max_n(self, tmp_path):
        images = np.zeros((5, 4, 4))
        labels = np.array([0, 1, 0, 1, 0])
        img, lab = write_idx(tmp_path, images, labels)
        ds = load_mnist_idx(img, lab, max_n=3)
        assert len(ds) == 3

    def test_all_zero_image(self, tmp_path):
        img, lab = write_idx(tmp_path, np.zeros((1, 3, 3)), np.array([1]))
        ds = load_mnist_idx(img, lab)
        np.testing.assert_array_equal(ds.images[0], np.zeros(9))

    def test_bad_magic_reports_observed(self, tmp_path):
        img, lab = write_idx(tmp_path, np.zeros((1, 2, 2)), np.array([0]), image_magic=1234)
        with pytest.raises(DataFormatError, match="1234"):
            load_mnist_idx(img, lab)

    def test_truncated_payload(self, tmp_path):
        img, lab = write_idx(tmp_path, np.zeros((2, 2, 2)), np.array([0, 1]))
        raw = img.read_bytes()
        img.write_bytes(raw[:-3])
        with pytest.raises(DataFormatError, match="bytes"):
            load_mnist_idx(img, lab)

    @requires_mnist
    def test_real_mnist_zero_one_count(self):
        img, lab = mnist_paths()
        ds = load_mnist_idx(img, lab)
        assert len(ds) == 12665


class TestSyntheticPolyps:
    def test_balanced(self):
        ds = generate_synthetic_polyps(100, image_size=16, seed=0)
        assert int(ds.labels.sum()) == 50

    def test_odd_count(self):
        ds = generate_synthetic_polyps(7, image_size=8, seed=0)
        assert int(ds.labels.sum()) == 4  # positives = ceil(n/2)

    def test_deterministic(self):
        a = generate_synthetic_polyps(20, image_size=16, seed=9)
        b = generate_synthetic_polyps(20, image_size=16, seed=9)
        assert np.array_equal(a.images, b.images)
        assert np.array_equal(a.labels, b.labels)

    def test_pixel_range(self):
        ds = generate_synthetic_polyps(50, image_size=16, seed=3)
        assert ds.images.min() >= 0.0 and ds.images.max() <= 1.0

    def test_positive_mean_intensity_exceeds_negative(self):
        ds = generate_synthetic_polyps(500, image_size=32, seed=1)
        pos = ds.images[ds.labels == 1].mean()
        neg = ds.images[ds.labels == 0].mean()
        assert pos > neg

    def test_intensity_gap_stable_across_seeds(self):
        gaps = []
        for seed in range(4):
            ds = generate_synthetic_polyps(500, image_size=32, seed=seed)
            gaps.append(ds.images[ds.labels == 1].mean() - ds.images[ds.labels == 0].mean())
        center = np.mean(gaps)
        assert all(abs(g - center) <= 0.2 * center for g in gaps)

    def test_rejects_empty(self):
        with pytest.raises(ConfigError):
            generate_synthetic_polyps(0)


class TestImagePatches:
    def make_patches(self, tmp_path, pixels_list):
        manifest = tmp_path / "manifest.csv"
        rows = ["path,label"]
        for i, pixels in enumerate(pixels_list):
            name = f"img_{i}.png"
            Image.fromarray(np.asarray(pixels, dtype=np.uint8), mode="L").save(tmp_path / name)
            rows.append(f"{name},{i % 2}")
        manifest.write_text("\n".join(rows) + "\n")
        return manifest

    def test_manifest_of_four(self, tmp_path):
        manifest = self.make_patches(tmp_path, [np.full((8, 8), 100)] * 4)
        ds = load_image_patches(tmp_path, manifest, patch_size=4)
        assert len(ds) == 4
        assert ds.images.shape == (4, 16)

    def test_full_brightness_maps_to_one(self, tmp_path):
        manifest = self.make_patches(tmp_path, [np.full((4, 4), 255)])
        ds = load_image_patches(tmp_path, manifest, patch_size=2)
        np.testing.assert_array_equal(ds.images[0], np.ones(4))

    def test_area_resampling_average(self, tmp_path):
        pixels = np.array([[10, 20], [30, 40]])
        manifest = self.make_patches(tmp_path, [pixels])
        ds = load_image_patches(tmp_path, manifest, patch_size=1)
        assert ds.images[0, 0] == pytest.approx(25.0 / 255.0, abs=1e-12)

    def test_center_crop_rectangular(self, tmp_path):
        # 4x2 image: crop keeps the middle 2x2 block
        pixels = np.array([[0, 0, 100, 100], [0, 0, 100, 100]])  # (rows=2, cols=4)
        manifest = self.make_patches(tmp_path, [pixels])
        ds = load_image_patches(tmp_path, manifest, patch_size=1)
        assert ds.images[0, 0] == pytest.approx(50.0 / 255.0, abs=1e-12)

    def test_missing_file(self, tmp_path):
        manifest = tmp_path / "manifest.csv"
        manifest.write_text("path,label\nghost.png,0\n")
        with pytest.raises(DataFormatError, match="ghost.png"):
            load_image_patches(tmp_path, manifest)

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(DataFormatError):
            load_image_patches(tmp_path, tmp_path / "none.csv")


class TestSplit:
    def test_sizes_and_disjoint(self):
        ds = generate_synthetic_polyps(120, image_size=8, seed=0)
        train, test = split_train_test(ds, 80, 20, seed=1)
        assert len(train) == 80 and len(test) == 20
        train_rows = {tuple(r) for r in train.images}
        test_rows = {tuple(r) for r in test.images}
        assert not train_rows & test_rows

    def test_paper_sizes_balance(self):
        ds = generate_synthetic_polyps(2400, image_size=8, seed=0)
        train, test = split_train_test(ds, 2000, 400, seed=5)
        assert abs(int(train.labels.sum()) - 1000) <= 1
        assert abs(int(test.labels.sum()) - 200) <= 1

    def test_zero_test_rejected(self):
        ds = generate_synthetic_polyps(10, image_size=8, seed=0)
        with pytest.raises(ConfigError):
            split_train_test(ds, 8, 0, seed=0)

    def test_insufficient_samples(self):
        ds = generate_synthetic_polyps(10, image_size=8, seed=0)
        with pytest.raises(ConfigError):
            split_train_test(ds, 8, 4, seed=0)

    def test_deterministic(self):
        ds = generate_synthetic_polyps(60, image_size=8, seed=0)
        a_train, a_test = split_train_test(ds, 40, 20, seed=7)
        b_train, b_test = split_train_test(ds, 40, 20, seed=7)
        assert np.array_equal(a_train.images, b_train.images)
        assert np.array_equal(a_test.labels, b_test.labels)

    @given(st.integers(0, 1000), st.integers(10, 40), st.integers(5, 30))
    @settings(max_examples=25, deadline=None)
    def test_stratification_property(self, seed, n_train, n_test):
        rng = np.random.default_rng(seed)
        n = n_train + n_test + int(rng.integers(0, 20))
        labels = rng.integers(0, 2, n)
        if labels.sum() in (0, n):
            labels[0] = 1 - labels[0]
        ds = Dataset(images=rng.random((n, 4)), labels=labels)
        train, test = split_train_test(ds, n_train, n_test, seed)
        frac_tr = train.labels.mean()
        frac_te = test.labels.mean()
        assert abs(frac_tr - frac_te) <= 1.0 / n_test + 1e-12


class TestCacheRoundTrip:
    def test_round_trip_identical(self, tmp_path):
        ds = generate_synthetic_polyps(12, image_size=8, seed=2)
        prefix = tmp_path / "cache" / "polyps"
        save_dataset(prefix, ds)
        back = load_dataset(prefix)
        assert np.array_equal(back.images, ds.images)
        assert np.array_equal(back.labels, ds.labels)
        assert back.provenance == ds.provenance
        assert back.split == ds.split


class TestDatasetValidation:
    def test_rejects_out_of_range_pixels(self):
        with pytest.raises(ConfigError):
            Dataset(images=np.array([[1.5]]), labels=np.array([0]))

    def test_rejects_nonbinary_labels(self):
        with pytest.raises(ConfigError):
            Dataset(images=np.array([[0.5]]), labels=np.array([2]))

    def test_rejects_length_mismatch(self):
        with pytest.raises(ConfigError):
            Dataset(images=np.zeros((2, 3)), labels=np.array([0]))
