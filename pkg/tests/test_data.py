import numpy as np
import pytest

from oracles import resize_bilinear_oracle
from sketchreid.data import (CAMERAS, SynthConfig, bilinear_resize, dataset_split,
                             extract_sketch, load_and_normalize, read_manifest,
                             read_pgm, synth_generate, write_dataset, write_pgm)
from sketchreid.errors import ConfigError, InputError


class TestLoadNormalize:
    def test_blank_becomes_zero(self):
        out = load_and_normalize(np.full((6, 4), 255.0), 8)
        assert out.shape == (8, 8)
        assert np.all(out == 0.0)

    def test_portrait_padding_symmetric(self):
        raw = np.zeros((4, 2))
        out = load_and_normalize(raw, 4)
        # 4x2 pads one 255-column each side; inversion makes them 0
        assert np.all(out[:, 0] == 0.0) and np.all(out[:, 3] == 0.0)
        assert np.all(out[:, 1:3] == 1.0)

    def test_wide_crop_pads_rows(self):
        raw = np.zeros((2, 4))
        out = load_and_normalize(raw, 4)
        assert np.all(out[0, :] == 0.0) and np.all(out[3, :] == 0.0)
        assert np.all(out[1:3, :] == 1.0)

    def test_checkerboard_resize_matches_oracle(self):
        rng = np.random.default_rng(0)
        img = (np.indices((8, 8)).sum(axis=0) % 2).astype(float) * 255.0
        img += rng.random((8, 8))
        resized = bilinear_resize(img, 4)
        assert np.allclose(resized, resize_bilinear_oracle(img, 4), atol=1e-12, rtol=0)

    def test_empty_rejected(self):
        with pytest.raises(InputError):
            load_and_normalize(np.zeros((0, 0)), 8)

    def test_range_and_background(self):
        rng = np.random.default_rng(1)
        raw = rng.uniform(0, 255, size=(10, 7))
        out = load_and_normalize(raw, 12)
        assert out.min() >= 0.0 and out.max() <= 1.0


class TestExtractSketch:
    def test_constant_image_zero(self):
        assert np.all(extract_sketch(np.full((9, 9), 0.4)) == 0.0)

    def test_step_edge_bright_column(self):
        img = np.zeros((9, 9))
        img[:, 5:] = 1.0
        out = extract_sketch(img)
        assert out[:, 4:6].max() > 0.5
        assert np.all(out[:, :3] == 0.0) and np.all(out[:, 7:] == 0.0)

    def test_ramp_uniform_interior_response(self):
        slope = 0.05
        img = np.arange(12)[None, :] * slope * np.ones((12, 1))
        out = extract_sketch(img, threshold=0.02, ramp=0.1)
        interior = out[1:-1, 1:-1]
        # Sobel response to a slope-s x-ramp is 8s, normalized by 4*sqrt(2)
        expected = np.clip((8 * slope / (4 * np.sqrt(2)) - 0.02) / 0.1, 0, 1)
        assert np.allclose(interior, expected, atol=1e-12, rtol=0)

    def test_rgb_accepted(self):
        rng = np.random.default_rng(2)
        out = extract_sketch(rng.uniform(0, 255, size=(8, 8, 3)))
        assert out.shape == (8, 8)
        assert out.min() >= 0.0 and out.max() <= 1.0


class TestSynthGenerate:
    def test_deterministic(self):
        cfg = SynthConfig(n_identities=3, images_per_camera=2, seed=5)
        d1, d2 = synth_generate(cfg), synth_generate(cfg)
        assert len(d1) == len(d2) == 3 * 3 * 2
        for a, b in zip(d1.images, d2.images):
            assert np.array_equal(a, b)
        assert d1.metas == d2.metas

    def test_zero_jitter_a_equals_b(self):
        cfg = SynthConfig(n_identities=2, images_per_camera=3, jitter_rotation=0.0,
                          jitter_scale=0.0, jitter_translation=0.0, pixel_noise=0.0)
        d = synth_generate(cfg)
        by_cam = {}
        for img, meta in zip(d.images, d.metas):
            by_cam.setdefault((meta.identity, meta.camera), []).append(img)
        for ident in range(2):
            for a_img, b_img in zip(by_cam[(ident, "A")], by_cam[(ident, "B")]):
                assert np.array_equal(a_img, b_img)

    def test_camera_c_uses_other_variant(self):
        cfg = SynthConfig(n_identities=2, images_per_camera=1)
        d = synth_generate(cfg)
        for meta in d.metas:
            if meta.camera in ("A", "B"):
                assert meta.variant == 0
            else:
                assert meta.variant == 1

    def test_images_square_in_range_background_zero(self):
        cfg = SynthConfig(n_identities=2, images_per_camera=2, side=40)
        d = synth_generate(cfg)
        for img in d.images:
            assert img.shape == (40, 40)
            assert img.min() == 0.0 and img.max() <= 1.0
            assert (img == 0.0).mean() > 0.5  # mostly background

    def test_overlapping_bands_rejected(self):
        with pytest.raises(ConfigError):
            SynthConfig(body_harmonics=(1, 2, 5), clothing_harmonics=(5, 6))

    def test_same_identity_closer_than_other_identities(self):
        cfg = SynthConfig(n_identities=8, images_per_camera=4, seed=7)
        d = synth_generate(cfg)
        groups = {}
        for img, meta in zip(d.images, d.metas):
            groups.setdefault((meta.identity, meta.camera), []).append(img)

        def mean_l1(xs, ys):
            return float(np.mean([np.abs(x - y).mean() for x in xs for y in ys]))

        wins = 0
        for ident in range(8):
            d_same = mean_l1(groups[(ident, "A")], groups[(ident, "C")])
            d_other = np.mean([mean_l1(groups[(ident, "A")], groups[(j, "C")])
                               for j in range(8) if j != ident])
            wins += d_same < d_other
        assert wins >= 8 * 0.95 - 1e-9  # frozen regression floor

    def test_nearest_centroid_separability_floor(self):
        cfg = SynthConfig(n_identities=10, images_per_camera=6, seed=7)
        d = synth_generate(cfg)
        feats, labels = [], []
        for img, meta in zip(d.images, d.metas):
            if meta.camera == "A":
                feats.append(img.reshape(-1))
                labels.append(meta.identity)
        feats = np.array(feats)
        labels = np.array(labels)
        centroids = np.array([feats[labels == i].mean(axis=0) for i in range(10)])
        dists = ((feats[:, None, :] - centroids[None]) ** 2).sum(axis=2)
        acc = (dists.argmin(axis=1) == labels).mean()
        assert acc > 0.9


class TestSplit:
    def test_counts(self):
        train, test = dataset_split(range(30), 2 / 3, seed=0)
        assert len(train) == 20 and len(test) == 10

    def test_deterministic(self):
        assert dataset_split(range(12), 0.5, 3) == dataset_split(range(12), 0.5, 3)

    def test_partition(self):
        ids = list(range(9))
        train, test = dataset_split(ids, 0.4, 1)
        assert sorted(train + test) == ids
        assert not set(train) & set(test)

    def test_bad_fraction(self):
        with pytest.raises(ConfigError):
            dataset_split(range(4), 1.5, 0)

    def test_too_few_identities(self):
        with pytest.raises(ConfigError):
            dataset_split([1], 0.5, 0)


class TestIO:
    def test_pgm_round_trip(self, tmp_path):
        rng = np.random.default_rng(3)
        img = rng.random((7, 5))
        p = tmp_path / "x.pgm"
        write_pgm(p, img)
        back = read_pgm(p) / 255.0
        assert np.abs(back - img).max() <= 0.5 / 255.0 + 1e-12

    def test_pgm_deterministic_bytes(self, tmp_path):
        img = np.random.default_rng(4).random((6, 6))
        p1, p2 = tmp_path / "a.pgm", tmp_path / "b.pgm"
        write_pgm(p1, img)
        write_pgm(p2, img)
        assert p1.read_bytes() == p2.read_bytes()

    def test_manifest_round_trip(self, tmp_path):
        cfg = SynthConfig(n_identities=2, images_per_camera=2, side=24)
        d = synth_generate(cfg)
        manifest = write_dataset(d, tmp_path)
        back = read_manifest(manifest)
        assert len(back) == len(d)
        assert [m.identity for m in back.metas] == [m.identity for m in d.metas]
        assert [m.camera for m in back.metas] == [m.camera for m in d.metas]
        assert [m.variant for m in back.metas] == [m.variant for m in d.metas]
        for cam in CAMERAS:
            assert (tmp_path / cam).is_dir()

    def test_manifest_row_count(self, tmp_path):
        cfg = SynthConfig(n_identities=3, images_per_camera=2, side=24)
        manifest = write_dataset(synth_generate(cfg), tmp_path)
        rows = manifest.read_text().strip().split("\n")
        assert len(rows) == 1 + 3 * 3 * 2

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(InputError):
            read_manifest(tmp_path / "nope.csv")

    def test_png_grayscale_read(self, tmp_path):
        from PIL import Image

        from sketchreid.data import read_gray
        rng = np.random.default_rng(5)
        arr = (rng.random((9, 7)) * 255).astype(np.uint8)
        p = tmp_path / "x.png"
        Image.fromarray(arr, mode="L").save(p)
        back = read_gray(p)
        assert np.array_equal(back, arr.astype(np.float64))
