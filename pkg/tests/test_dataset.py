"""Synthetic corpus generation and PPM image files."""

import numpy as np
import pytest

from gicx.dataset import (KINDS, ToyDatasetSpec, generate_toy_dataset, load_dataset,
                          read_ppm, save_dataset, write_ppm)
from gicx.errors import FormatError, ParameterError


class TestGeneration:
    def test_shape_and_range(self):
        images = generate_toy_dataset(ToyDatasetSpec(count=6, resolution=32, seed=7))
        assert images.shape == (6, 3, 32, 32)
        assert images.min() >= 0.0
        assert images.max() <= 1.0

    def test_deterministic(self):
        spec = ToyDatasetSpec(count=4, resolution=16, seed=3)
        assert np.array_equal(generate_toy_dataset(spec), generate_toy_dataset(spec))

    def test_count_extension_preserves_prefix(self):
        small = generate_toy_dataset(ToyDatasetSpec(count=3, resolution=16, seed=5))
        large = generate_toy_dataset(ToyDatasetSpec(count=6, resolution=16, seed=5))
        assert np.array_equal(small, large[:3])

    def test_seed_changes_content(self):
        a = generate_toy_dataset(ToyDatasetSpec(count=2, resolution=16, seed=1))
        b = generate_toy_dataset(ToyDatasetSpec(count=2, resolution=16, seed=2))
        assert not np.array_equal(a, b)

    @pytest.mark.parametrize("kind", KINDS)
    def test_all_kinds_generate(self, kind):
        images = generate_toy_dataset(ToyDatasetSpec(count=3, resolution=16,
                                                     seed=0, kind=kind))
        assert images.shape == (3, 3, 16, 16)

    def test_histogram_coverage(self):
        images = generate_toy_dataset(ToyDatasetSpec(count=24, resolution=32, seed=7))
        counts, _ = np.histogram(images.ravel(), bins=10, range=(0.0, 1.0))
        assert (counts > 0).sum() >= 8

    def test_images_are_not_flat(self):
        images = generate_toy_dataset(ToyDatasetSpec(count=8, resolution=32, seed=7))
        per_image_std = images.std(axis=(1, 2, 3))
        assert per_image_std.min() > 0.05

    def test_spec_validation(self):
        with pytest.raises(ParameterError):
            ToyDatasetSpec(count=0, resolution=32, seed=0)
        with pytest.raises(ParameterError):
            ToyDatasetSpec(count=1, resolution=30, seed=0)
        with pytest.raises(ParameterError):
            ToyDatasetSpec(count=1, resolution=32, seed=0, kind="fractals")


class TestPpm:
    def test_round_trip_within_quantization(self, tmp_path):
        rng = np.random.default_rng(0)
        image = rng.random((3, 8, 12))
        path = tmp_path / "x.ppm"
        write_ppm(path, image)
        back = read_ppm(path)
        assert back.shape == (3, 8, 12)
        assert np.abs(back - image).max() <= 0.5 / 255 + 1e-12

    def test_written_bytes_are_deterministic(self, tmp_path):
        image = np.random.default_rng(1).random((3, 8, 8))
        a, b = tmp_path / "a.ppm", tmp_path / "b.ppm"
        write_ppm(a, image)
        write_ppm(b, image)
        assert a.read_bytes() == b.read_bytes()

    def test_header_with_comments(self, tmp_path):
        path = tmp_path / "c.ppm"
        body = bytes([255, 0, 0, 0, 255, 0, 0, 0, 255, 10, 20, 30])
        path.write_bytes(b"P6\n# a comment\n2 2\n# another\n255\n" + body)
        image = read_ppm(path)
        assert image.shape == (3, 2, 2)
        assert image[0, 0, 0] == pytest.approx(1.0)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.ppm"
        path.write_bytes(b"P5\n2 2\n255\n" + bytes(12))
        with pytest.raises(FormatError):
            read_ppm(path)

    def test_wrong_maxval(self, tmp_path):
        path = tmp_path / "bad.ppm"
        path.write_bytes(b"P6\n2 2\n65535\n" + bytes(24))
        with pytest.raises(FormatError):
            read_ppm(path)

    def test_truncated_body(self, tmp_path):
        path = tmp_path / "bad.ppm"
        path.write_bytes(b"P6\n2 2\n255\n" + bytes(5))
        with pytest.raises(FormatError):
            read_ppm(path)


class TestDirectoryIo:
    def test_save_and_load_preserves_order(self, tmp_path):
        images = generate_toy_dataset(ToyDatasetSpec(count=5, resolution=16, seed=2))
        paths = save_dataset(images, tmp_path)
        assert len(paths) == 5
        loaded, names = load_dataset(tmp_path)
        assert loaded.shape == images.shape
        assert names == sorted(names)
        assert np.abs(loaded - images).max() <= 0.5 / 255 + 1e-12

    def test_empty_directory_rejected(self, tmp_path):
        with pytest.raises(ParameterError):
            load_dataset(tmp_path)
