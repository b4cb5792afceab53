"""Synthetic data generator: determinism, parallax physics, augmentation
invariants, file formats, dataset round trip."""

import dataclasses
import json
import os

import numpy as np
import pytest

from ucorr.data import (AugmentationConfig, Sample, SceneConfig, augment,
                        build_scene, flight_seed, generate_dataset,
                        generate_flight, generate_sample, read_dataset,
                        read_utf, render_frame, resize_nni, write_utf)


def single_wire_cfg(**kw):
    defaults = dict(image_size=(64, 64), wire_count_range=(1, 1),
                    wire_sag_range=(0.5, 1.5), background_layers=1,
                    cam_translation=(0.5, 0.0))
    defaults.update(kw)
    return SceneConfig(**defaults)


def mask_centroid_y(mask):
    ys, xs = np.nonzero(mask)
    return ys.mean()


class TestDeterminism:
    def test_sample_bit_exact(self):
        cfg = SceneConfig()
        a = generate_sample(cfg, 12)
        b = generate_sample(cfg, 12)
        np.testing.assert_array_equal(a.frame_curr, b.frame_curr)
        np.testing.assert_array_equal(a.frame_prev, b.frame_prev)
        np.testing.assert_array_equal(a.wire_mask, b.wire_mask)
        np.testing.assert_array_equal(a.depth, b.depth)

    def test_different_seeds_differ(self):
        cfg = SceneConfig()
        a = generate_sample(cfg, 0)
        b = generate_sample(cfg, 1)
        assert not np.array_equal(a.frame_curr, b.frame_curr)

    def test_flight_seed_stable_and_split_independent(self):
        assert flight_seed(0, "train", 3) == flight_seed(0, "train", 3)
        assert flight_seed(0, "train", 3) != flight_seed(0, "val", 3)
        assert flight_seed(0, "train", 3) != flight_seed(1, "train", 3)

    def test_augment_deterministic_per_seed(self):
        s = generate_sample(SceneConfig(), 5)
        cfg = AugmentationConfig()
        a = augment(s, cfg, 100)
        b = augment(s, cfg, 100)
        np.testing.assert_array_equal(a.frame_curr, b.frame_curr)
        c = augment(s, cfg, 101)
        assert not np.array_equal(a.frame_curr, c.frame_curr)


class TestSampleContent:
    def test_shapes_dtypes_ranges(self):
        cfg = SceneConfig(image_size=(48, 56))
        s = generate_sample(cfg, 0)
        assert s.frame_curr.shape == (48, 56, 3)
        assert s.frame_prev.shape == (48, 56, 3)
        assert s.frame_curr.dtype == np.float32
        assert s.frame_curr.min() >= 0.0 and s.frame_curr.max() <= 1.0
        assert s.wire_mask.shape == (48, 56)
        assert set(np.unique(s.wire_mask)) <= {0, 1}
        assert s.depth.shape == (48, 56)
        assert np.all(s.depth > 0) and np.all(s.depth <= cfg.far_plane)

    def test_wire_pixel_rate_in_band(self):
        rates = [generate_sample(SceneConfig(), seed).wire_mask.mean()
                 for seed in range(30)]
        assert 0.001 <= np.mean(rates) <= 0.05

    def test_wire_depth_on_mask(self):
        cfg = single_wire_cfg(wire_depth_range=(8.0, 8.0))
        s = generate_sample(cfg, 2)
        assert s.wire_mask.sum() > 0
        np.testing.assert_allclose(s.depth[s.wire_mask == 1], 8.0)

    def test_frames_actually_move(self):
        s = generate_sample(SceneConfig(), 3)
        assert not np.array_equal(s.frame_prev, s.frame_curr)

    def test_degenerate_focal_rejected(self):
        with pytest.raises(ValueError, match="focal"):
            build_scene(SceneConfig(focal=0.0), 0)


class TestParallax:
    def test_wire_centroid_shift_matches_pinhole(self):
        """A wire at depth z must shift by focal * ty / z pixels between the
        two frames, within half a pixel on the mask centroid. The translation
        is vertical: wires run horizontally, so a horizontal move slides them
        along themselves and hides the parallax."""
        checked = 0
        for seed in range(12):
            z = 6.0 + seed
            cfg = single_wire_cfg(wire_depth_range=(z, z), image_size=(96, 96),
                                  cam_translation=(0.0, 1.0))
            scene = build_scene(cfg, seed)
            _, a0, _ = render_frame(scene, (0.0, 0.0))
            _, a1, _ = render_frame(scene, cfg.cam_translation)
            m0 = a0 > 0.5
            m1 = a1 > 0.5
            # only vertically interior wires measure cleanly; clipping at the
            # top or bottom edge biases the centroid
            if not m0.any() or not m1.any():
                continue
            if m0[0].any() or m0[-1].any() or m1[0].any() or m1[-1].any():
                continue
            shift = mask_centroid_y(m0) - mask_centroid_y(m1)
            expect = cfg.focal * 1.0 / z
            assert shift == pytest.approx(expect, abs=0.5), f"seed {seed}"
            checked += 1
        assert checked >= 5

    def test_nearer_wires_shift_more(self):
        """Across 20 scenes, measured parallax must decrease with depth."""
        shifts = []
        for seed in range(20):
            z = 5.0 + seed
            cfg = single_wire_cfg(wire_depth_range=(z, z), image_size=(96, 96),
                                  cam_translation=(0.0, 0.8))
            scene = build_scene(cfg, 1000 + seed)
            _, a0, _ = render_frame(scene, (0.0, 0.0))
            _, a1, _ = render_frame(scene, cfg.cam_translation)
            m0 = a0 > 0.5
            m1 = a1 > 0.5
            if not m0.any() or not m1.any():
                continue
            if m0[0].any() or m0[-1].any() or m1[0].any() or m1[-1].any():
                continue
            shifts.append((z, mask_centroid_y(m0) - mask_centroid_y(m1)))
        assert len(shifts) >= 12
        zs = np.array([s[0] for s in shifts])
        dy = np.array([s[1] for s in shifts])
        assert np.all(dy > 0)
        # rank ordering of shift magnitude must be the inverse depth ordering
        assert np.corrcoef(1.0 / zs, dy)[0, 1] > 0.99

    def test_background_moves_less_than_wires(self):
        cfg = single_wire_cfg(wire_depth_range=(6.0, 6.0),
                              background_depth_range=(60.0, 80.0))
        s = generate_sample(cfg, 4)
        assert not np.array_equal(s.frame_prev, s.frame_curr)


class TestAugmentation:
    def _sample(self, seed=0):
        return generate_sample(SceneConfig(), seed)

    def test_disabled_is_identity(self):
        s = self._sample()
        out = augment(s, AugmentationConfig.disabled(), 0)
        np.testing.assert_array_equal(out.frame_curr, s.frame_curr)
        np.testing.assert_array_equal(out.frame_prev, s.frame_prev)
        np.testing.assert_array_equal(out.wire_mask, s.wire_mask)
        np.testing.assert_array_equal(out.depth, s.depth)

    def test_photometric_never_touches_labels(self):
        s = self._sample(1)
        cfg = dataclasses.replace(AugmentationConfig(), horizontal_flip=False)
        for seed in range(10):
            out = augment(s, cfg, seed)
            np.testing.assert_array_equal(out.wire_mask, s.wire_mask)
            np.testing.assert_array_equal(out.depth, s.depth)

    def test_flip_moves_labels_with_frames(self):
        s = self._sample(2)
        cfg = dataclasses.replace(AugmentationConfig.disabled(),
                                  horizontal_flip=True, flip_probability=1.0)
        out = augment(s, cfg, 3)
        np.testing.assert_array_equal(out.frame_curr, s.frame_curr[:, ::-1])
        np.testing.assert_array_equal(out.wire_mask, s.wire_mask[:, ::-1])
        np.testing.assert_array_equal(out.depth, s.depth[:, ::-1])

    def test_invert_is_involution(self):
        s = self._sample(3)
        cfg = dataclasses.replace(AugmentationConfig.disabled(),
                                  invert=True, invert_probability=1.0)
        once = augment(s, cfg, 0)
        twice = augment(once, cfg, 0)
        np.testing.assert_allclose(twice.frame_curr, s.frame_curr, atol=1e-6)

    def test_prev2_receives_same_transforms(self):
        s = self._sample(4)
        s = dataclasses.replace(s, frame_prev2=s.frame_prev.copy())
        out = augment(s, AugmentationConfig(), 7)
        # prev and prev2 start equal, so any shared transform keeps them equal
        np.testing.assert_array_equal(out.frame_prev, out.frame_prev2)

    def test_outputs_stay_in_range(self):
        s = self._sample(5)
        for seed in range(10):
            out = augment(s, AugmentationConfig(), seed)
            assert out.frame_curr.min() >= 0.0 and out.frame_curr.max() <= 1.0


class TestResize:
    def test_identity_size(self):
        a = np.arange(12.0).reshape(3, 4)
        out = resize_nni(a, (3, 4))
        np.testing.assert_array_equal(out, a)
        assert out is not a

    def test_no_new_values(self):
        rng = np.random.default_rng(0)
        depth = rng.uniform(1, 50, (31, 47)).astype(np.float32)
        out = resize_nni(depth, (64, 64))
        assert set(np.unique(out)) <= set(np.unique(depth))

    def test_mask_stays_binary(self):
        mask = (np.random.default_rng(1).random((100, 100)) > 0.5).astype(np.uint8)
        out = resize_nni(mask, (64, 64))
        assert set(np.unique(out)) <= {0, 1}

    def test_exact_downsample_by_two(self):
        a = np.arange(16.0).reshape(4, 4)
        out = resize_nni(a, (2, 2))
        np.testing.assert_array_equal(out, [[5.0, 7.0], [13.0, 15.0]])

    def test_invalid_size_rejected(self):
        with pytest.raises(ValueError):
            resize_nni(np.zeros((4, 4)), (0, 4))


class TestTensorFile:
    def test_round_trip(self, tmp_path):
        arr = np.random.default_rng(0).standard_normal((3, 5, 7)).astype(np.float32)
        p = tmp_path / "x.utf"
        write_utf(p, arr)
        np.testing.assert_array_equal(read_utf(p), arr)

    def test_bad_magic_rejected(self, tmp_path):
        p = tmp_path / "bad.utf"
        p.write_bytes(b"NOPE" + b"\0" * 16)
        with pytest.raises(ValueError, match="magic"):
            read_utf(p)

    def test_header_layout(self, tmp_path):
        arr = np.zeros((2, 3), np.float32)
        p = tmp_path / "h.utf"
        write_utf(p, arr)
        raw = p.read_bytes()
        assert raw[:4] == b"UCTF"
        assert raw[4:8] == (1).to_bytes(4, "little")   # version
        assert raw[8:12] == (2).to_bytes(4, "little")  # rank
        assert len(raw) == 12 + 8 + 4 * 6


class TestDataset:
    def _make(self, tmp_path, frames=4):
        cfg = SceneConfig()
        return generate_dataset(str(tmp_path), cfg,
                                {"train": 2, "val": 1}, frames, seed=0), cfg

    def test_manifest_and_layout(self, tmp_path):
        manifest, _ = self._make(tmp_path)
        on_disk = json.load(open(tmp_path / "manifest.json"))
        assert on_disk == manifest
        assert [e["id"] for e in manifest["splits"]["train"]] == \
            ["flight_000", "flight_001"]
        assert os.path.exists(tmp_path / "train" / "flight_000" / "frame_0000.png")
        assert os.path.exists(tmp_path / "train" / "flight_000" / "depth_0003.utf")

    def test_checksums_reproducible(self, tmp_path):
        m1, _ = self._make(tmp_path / "a")
        m2, _ = self._make(tmp_path / "b")
        assert [e["checksum"] for e in m1["splits"]["train"]] == \
            [e["checksum"] for e in m2["splits"]["train"]]

    def test_splits_disjoint_content(self, tmp_path):
        manifest, _ = self._make(tmp_path)
        train = {e["checksum"] for e in manifest["splits"]["train"]}
        val = {e["checksum"] for e in manifest["splits"]["val"]}
        assert not train & val

    def test_reader_yields_consecutive_pairs(self, tmp_path):
        self._make(tmp_path, frames=4)
        samples = list(read_dataset(str(tmp_path), "train"))
        # 4 frames per flight give 3 pairs; 2 flights
        assert len(samples) == 6
        for s in samples:
            assert s.frame_curr.shape == (64, 64, 3)
            assert s.meta["frame"] >= 1
        # prev2 appears from the third frame of a flight onward
        by_frame = {(s.meta["flight"], s.meta["frame"]): s for s in samples}
        assert by_frame[("flight_000", 1)].frame_prev2 is None
        assert by_frame[("flight_000", 2)].frame_prev2 is not None

    def test_reader_round_trips_labels(self, tmp_path):
        cfg = SceneConfig()
        generate_dataset(str(tmp_path), cfg, {"test": 1}, 3, seed=7)
        frames = generate_flight(cfg, flight_seed(7, "test", 0), 3)
        samples = list(read_dataset(str(tmp_path), "test"))
        assert len(samples) == 2
        s = samples[0]
        rgb, mask, depth = frames[1]
        np.testing.assert_array_equal(s.wire_mask, mask)
        np.testing.assert_array_equal(s.depth, depth)
        # 8-bit png quantization bounds the frame error
        assert np.abs(s.frame_curr - rgb).max() <= 0.5 / 255.0 + 1e-6

    def test_reader_skips_frames_missing_companions(self, tmp_path):
        self._make(tmp_path, frames=4)
        os.remove(tmp_path / "train" / "flight_000" / "depth_0001.utf")
        samples = list(read_dataset(str(tmp_path), "train"))
        # flight_000 loses the (0,1) and (1,2) pairs, keeps (2,3)
        assert len(samples) == 4
        f0 = [s.meta["frame"] for s in samples if s.meta["flight"] == "flight_000"]
        assert f0 == [3]

    def test_missing_split_raises(self, tmp_path):
        self._make(tmp_path)
        with pytest.raises(FileNotFoundError):
            list(read_dataset(str(tmp_path), "nope"))

    def test_flight_frames_share_one_scene(self, tmp_path):
        cfg = SceneConfig(wire_count_range=(2, 2))
        frames = generate_flight(cfg, 0, 3)
        # wire depth values present in each frame's depth map must agree
        wire_depths = [np.unique(f[2][f[1] == 1]) for f in frames if f[1].any()]
        assert len(wire_depths) >= 2
        for d in wire_depths[1:]:
            assert set(np.round(d, 4)) <= set(np.round(wire_depths[0], 4)) or \
                np.intersect1d(d, wire_depths[0]).size > 0
