import math
from collections import Counter

import numpy as np
import pytest

from teachrobust import framework as fw
from teachrobust import shapes
from teachrobust.shapes import ShapeSpec


class TestRender:
    def test_square_area(self):
        img = shapes.render_shape(ShapeSpec("square", 20, 50, 50))
        assert np.count_nonzero(img.pixels) == 41 * 41
        assert set(np.unique(img.pixels)) == {0.0, 1.0}

    def test_textured_square_checkerboard(self):
        img = shapes.render_shape(ShapeSpec("square", 20, 50, 50, textured=True))
        assert np.count_nonzero(img.pixels == 0.5) in (840, 841)
        assert np.count_nonzero(img.pixels) == 1681
        # corner (30, 30) has an even coordinate sum
        assert img.pixels[30, 30] == 0.5 and img.pixels[30, 31] == 1.0

    def test_square_bounds_inclusive(self):
        img = shapes.render_shape(ShapeSpec("square", 12, 12, 87)).pixels
        assert img[0, 75] == 1 and img[24, 99] == 1
        assert img[25, 87] == 0 and img[12, 74] == 0

    def test_disk_symmetry(self):
        spec = ShapeSpec("disk", 17, 40, 60)
        img = shapes.render_shape(spec).pixels
        block = img[40 - 17 : 40 + 18, 60 - 17 : 60 + 18]
        np.testing.assert_array_equal(block, block[::-1, :])
        np.testing.assert_array_equal(block, block[:, ::-1])
        np.testing.assert_array_equal(block, block.T)

    def test_disk_by_enumeration(self):
        spec = ShapeSpec("disk", 13, 30, 70)
        img = shapes.render_shape(spec).pixels
        for i in range(100):
            for j in range(100):
                assert (img[i, j] == 1) == ((i - 30) ** 2 + (j - 70) ** 2 <= 169)

    def test_out_of_frame_rejected(self):
        with pytest.raises(ValueError):
            ShapeSpec("square", 20, 80, 50)
        with pytest.raises(ValueError):
            ShapeSpec("disk", 11, 50, 50)
        with pytest.raises(ValueError):
            ShapeSpec("triangle", 20, 50, 50)

    def test_pixel_counts(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            kind = rng.choice(["square", "disk"])
            spec = shapes.sample_spec(str(kind), rng)
            n = np.count_nonzero(shapes.render_shape(spec).pixels)
            if kind == "square":
                assert n == (2 * spec.r + 1) ** 2
            else:
                assert math.pi * (spec.r - 1) ** 2 <= n <= math.pi * (spec.r + 1) ** 2


class TestSampleSpec:
    def test_center_range_for_r20(self):
        rng = np.random.default_rng(1)
        seen = set()
        while len(seen) < 60:
            spec = shapes.sample_spec("square", rng)
            if spec.r == 20:
                seen.update((spec.cx, spec.cy))
                assert 20 <= spec.cx <= 79 and 20 <= spec.cy <= 79
            if len(seen) >= 60:
                break
        assert min(seen) == 20 and max(seen) == 79

    def test_in_frame_and_radius_frequency(self):
        rng = np.random.default_rng(2)
        specs = [shapes.sample_spec("disk", rng) for _ in range(10_000)]
        counts = Counter(s.r for s in specs)
        assert sorted(counts) == list(range(12, 26))
        for r in range(12, 26):
            assert abs(counts[r] / 10_000 - 1 / 14) < 0.02
        chi2 = sum((counts[r] - 10_000 / 14) ** 2 / (10_000 / 14) for r in range(12, 26))
        assert chi2 < 34.5  # 99.9% quantile, 13 degrees of freedom


class TestDataset:
    def test_clean_exact(self):
        ds = shapes.gen_dataset(1000, "clean", "exact", seed=0)
        assert (ds.labels == shapes.SQUARE).sum() == 500
        for label, spec in zip(ds.labels, ds.specs):
            assert spec.textured == (label == shapes.SQUARE)
            assert spec.label == label

    def test_adversarial_bernoulli(self):
        ds = shapes.gen_dataset(1000, "adversarial", "bernoulli", seed=1)
        for label, spec in zip(ds.labels, ds.specs):
            assert spec.textured == (label == shapes.DISK)
        assert 400 < (ds.labels == shapes.SQUARE).sum() < 600

    def test_deterministic(self):
        assert shapes.gen_dataset(40, seed=3) == shapes.gen_dataset(40, seed=3)
        assert shapes.gen_dataset(40, seed=3) != shapes.gen_dataset(40, seed=4)

    def test_odd_exact_rejected(self):
        with pytest.raises(ValueError):
            shapes.gen_dataset(11, "clean", "exact")

    def test_clean_adversarial_duality(self):
        clean = shapes.gen_dataset(60, "clean", "bernoulli", seed=5)
        adv = shapes.gen_dataset(60, "adversarial", "bernoulli", seed=5)
        np.testing.assert_array_equal(clean.labels, adv.labels)
        for a, b in zip(clean.specs, adv.specs):
            assert shapes.with_texture(a, not a.textured) == b

    def test_tri_value_and_support_invariance(self):
        rng = np.random.default_rng(6)
        for _ in range(1000):
            spec = shapes.sample_spec(str(rng.choice(["square", "disk"])), rng)
            plain = shapes.render_shape(shapes.with_texture(spec, False)).pixels
            textured = shapes.render_shape(shapes.with_texture(spec, True)).pixels
            assert set(np.unique(plain)) == {0.0, 1.0}
            assert set(np.unique(textured)) == {0.0, 0.5, 1.0}
            np.testing.assert_array_equal(plain > 0, textured > 0)


class TestPersistence:
    def test_round_trip(self, tmp_path):
        ds = shapes.gen_dataset(30, "adversarial", "bernoulli", seed=2)
        shapes.save_dataset(ds, tmp_path / "a.shd")
        back = shapes.load_dataset(tmp_path / "a.shd")
        assert back == ds
        assert back.pixels.tobytes() == ds.pixels.tobytes()

    def test_layout(self, tmp_path):
        ds = shapes.gen_dataset(2, "clean", "exact", seed=0)
        shapes.save_dataset(ds, tmp_path / "a.shd")
        raw = (tmp_path / "a.shd").read_bytes()
        assert raw[:4] == b"SHD1" and raw[4] == 1 and raw[5] == 0
        assert int.from_bytes(raw[6:10], "little") == 2
        assert len(raw) == 14 + 2 * (5 + 10_000)
        assert set(raw[14 + 5 : 14 + 5 + 10_000]) <= {0, 128, 255}

    def test_bad_magic(self, tmp_path):
        ds = shapes.gen_dataset(2, seed=0)
        path = tmp_path / "a.shd"
        shapes.save_dataset(ds, path)
        raw = bytearray(path.read_bytes())
        raw[0:4] = b"XXXX"
        path.write_bytes(bytes(raw))
        with pytest.raises(shapes.DatasetFormatError, match="magic"):
            shapes.load_dataset(path)

    def test_bad_pixel_byte(self, tmp_path):
        ds = shapes.gen_dataset(2, seed=0)
        path = tmp_path / "a.shd"
        shapes.save_dataset(ds, path)
        raw = bytearray(path.read_bytes())
        raw[14 + 5 + 123] = 7
        path.write_bytes(bytes(raw))
        with pytest.raises(shapes.DatasetFormatError, match=r"byte 7 at offset 142"):
            shapes.load_dataset(path)

    def test_truncated(self, tmp_path):
        ds = shapes.gen_dataset(2, seed=0)
        path = tmp_path / "a.shd"
        shapes.save_dataset(ds, path)
        path.write_bytes(path.read_bytes()[:-10])
        with pytest.raises(shapes.DatasetFormatError, match="promises"):
            shapes.load_dataset(path)
        path.write_bytes(b"SHD")
        with pytest.raises(shapes.DatasetFormatError, match="header"):
            shapes.load_dataset(path)


class TestPGM:
    def test_header_and_size(self, tmp_path):
        img = shapes.render_shape(ShapeSpec("disk", 20, 50, 50, True))
        shapes.export_pgm(img, tmp_path / "a.pgm")
        raw = (tmp_path / "a.pgm").read_bytes()
        assert raw.startswith(b"P5\n100 100\n255\n")
        assert len(raw) == len(b"P5\n100 100\n255\n") + 10_000

    def test_background(self, tmp_path):
        shapes.export_pgm(np.zeros((100, 100)), tmp_path / "z.pgm")
        assert (tmp_path / "z.pgm").read_bytes()[15:] == bytes(10_000)

    def test_reimport(self, tmp_path):
        img = shapes.render_shape(ShapeSpec("square", 15, 40, 30, True))
        shapes.export_pgm(img, tmp_path / "a.pgm")
        np.testing.assert_array_equal(shapes.import_pgm(tmp_path / "a.pgm"), img.pixels)


class TestShapeTeacher:
    def test_labels_follow_geometry(self):
        rng = np.random.default_rng(9)
        for _ in range(300):
            kind = str(rng.choice(["square", "disk"]))
            spec = shapes.sample_spec(kind, rng, textured=bool(rng.integers(0, 2)))
            assert shapes.shape_teacher(shapes.render_shape(spec).pixels) == spec.label

    def test_uncertain_cases(self):
        assert shapes.shape_teacher(np.zeros((100, 100))) is fw.UNCERTAIN
        blob = np.zeros((100, 100))
        blob[10:20, 10:40] = 1
        assert shapes.shape_teacher(blob) is fw.UNCERTAIN

    def test_as_external_teacher(self):
        teacher = fw.External(shapes.shape_teacher)
        img = shapes.render_shape(ShapeSpec("disk", 20, 50, 50, True)).pixels
        assert fw.evaluate_teacher(teacher, img) == shapes.DISK
