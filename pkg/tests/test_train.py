"""Training loop: schedule, determinism, resume, logging, evaluation."""

import csv
import glob
import os

import numpy as np
import pytest

from ucorr.checkpoint import load_checkpoint
from ucorr.correlation import CorrConfig
from ucorr.data import SceneConfig, generate_sample
from ucorr.losses import LossConfig
from ucorr.model import ModelConfig
from ucorr.optim import lr_at_epoch
from ucorr.train import (LOG_COLUMNS, TrainConfig, batch_targets,
                         batch_to_frames, evaluate, predict, train)


def tiny_train_cfg(**kw):
    defaults = dict(
        epochs=2, batch_size=2, initial_lr=5e-3, lr_decay=0.9, seed=0,
        model=ModelConfig(variant="ucorr_deep", base_channels=2,
                          encoder_depth=3, input_size=(32, 32),
                          corr=CorrConfig(max_displacement=2)),
        loss=LossConfig(msssim_scales=2),
        augmentation=None, checkpoint_every=1,
    )
    defaults.update(kw)
    return TrainConfig(**defaults)


@pytest.fixture(scope="module")
def samples():
    cfg = SceneConfig(image_size=(32, 32), focal=32.0)
    return [generate_sample(cfg, i) for i in range(4)]


class TestSchedule:
    def test_closed_form_decay(self):
        for epoch in range(20):
            want = 5e-3 * 0.9 ** epoch
            assert lr_at_epoch(5e-3, 0.9, epoch) == pytest.approx(want, abs=1e-6)

    def test_logged_lr_follows_schedule(self, samples, tmp_path):
        cfg = tiny_train_cfg(epochs=3)
        _, rows = train(cfg, samples, str(tmp_path))
        by_epoch = {}
        for step, epoch, lr, *_ in rows:
            by_epoch.setdefault(epoch, lr)
        for epoch, lr in by_epoch.items():
            assert lr == pytest.approx(5e-3 * 0.9 ** epoch, abs=1e-6)


class TestBatching:
    def test_frame_order_and_shapes(self, samples):
        frames = batch_to_frames(samples[:2], 2)
        assert len(frames) == 2
        assert frames[0].data.shape == (2, 3, 32, 32)
        np.testing.assert_array_equal(
            frames[0].data[0], samples[0].frame_curr.transpose(2, 0, 1))
        np.testing.assert_array_equal(
            frames[1].data[0], samples[0].frame_prev.transpose(2, 0, 1))

    def test_missing_prev2_falls_back_to_prev(self, samples):
        assert samples[0].frame_prev2 is None
        frames = batch_to_frames(samples[:1], 3)
        np.testing.assert_array_equal(frames[2].data, frames[1].data)

    def test_targets_shapes(self, samples):
        mask, depth = batch_targets(samples[:3])
        assert mask.data.shape == (3, 1, 32, 32)
        assert depth.data.shape == (3, 1, 32, 32)
        assert set(np.unique(mask.data)) <= {0.0, 1.0}


class TestTrainLoop:
    def test_run_is_deterministic(self, samples, tmp_path):
        cfg = tiny_train_cfg()
        m1, r1 = train(cfg, samples, str(tmp_path / "a"))
        m2, r2 = train(cfg, samples, str(tmp_path / "b"))
        assert r1 == r2
        for name in m1.params:
            np.testing.assert_array_equal(m1.params[name].data,
                                          m2.params[name].data)

    def test_loss_decreases_on_average(self, samples, tmp_path):
        cfg = tiny_train_cfg(epochs=8)
        _, rows = train(cfg, samples, str(tmp_path))
        first = np.mean([r[3] for r in rows[:4]])
        last = np.mean([r[3] for r in rows[-4:]])
        assert last < first

    def test_csv_log_format(self, samples, tmp_path):
        cfg = tiny_train_cfg()
        _, rows = train(cfg, samples, str(tmp_path))
        path = tmp_path / "logs" / "train_log.csv"
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            body = list(reader)
        assert tuple(header) == LOG_COLUMNS
        assert len(body) == len(rows)
        assert float(body[0][3]) == pytest.approx(rows[0][3])

    def test_checkpoints_written_per_schedule(self, samples, tmp_path):
        cfg = tiny_train_cfg(epochs=5, checkpoint_every=2)
        train(cfg, samples, str(tmp_path))
        names = sorted(os.path.basename(p) for p in
                       glob.glob(str(tmp_path / "checkpoints" / "*.uckp")))
        # epochs 2 and 4 by cadence, epoch 5 because it is final
        assert names == ["epoch_0002.uckp", "epoch_0004.uckp", "epoch_0005.uckp"]

    def test_resume_is_bit_exact(self, samples, tmp_path):
        cfg = tiny_train_cfg(epochs=4, checkpoint_every=2)
        m_full, r_full = train(cfg, samples, str(tmp_path / "full"))
        train(tiny_train_cfg(epochs=2, checkpoint_every=2), samples,
              str(tmp_path / "half"))
        ckpt = str(tmp_path / "half" / "checkpoints" / "epoch_0002.uckp")
        m_res, r_res = train(cfg, samples, str(tmp_path / "res"),
                             resume_from=ckpt)
        steps_per_epoch = 2
        assert r_res == r_full[2 * steps_per_epoch:]
        for name in m_full.params:
            np.testing.assert_array_equal(m_full.params[name].data,
                                          m_res.params[name].data)

    def test_checkpoint_carries_optimizer_state(self, samples, tmp_path):
        cfg = tiny_train_cfg(epochs=1)
        model, _ = train(cfg, samples, str(tmp_path))
        ck = load_checkpoint(tmp_path / "checkpoints" / "epoch_0001.uckp")
        assert set(ck.velocities) == set(model.params)
        assert any(np.abs(v).max() > 0 for v in ck.velocities.values())
        assert ck.epoch == 1

    def test_empty_dataset_rejected(self, tmp_path):
        with pytest.raises(ValueError, match="empty"):
            train(tiny_train_cfg(), [], str(tmp_path))

    def test_size_mismatch_rejected(self, tmp_path):
        bad = [generate_sample(SceneConfig(image_size=(64, 64)), 0)]
        with pytest.raises(ValueError, match="size"):
            train(tiny_train_cfg(), bad, str(tmp_path))

    def test_augmentation_changes_trajectory(self, samples, tmp_path):
        from ucorr.data import AugmentationConfig
        base = tiny_train_cfg()
        aug = tiny_train_cfg(augmentation=AugmentationConfig())
        _, r1 = train(base, samples, str(tmp_path / "a"))
        _, r2 = train(aug, samples, str(tmp_path / "b"))
        assert [r[3] for r in r1] != [r[3] for r in r2]


class TestPredictEvaluate:
    def test_predict_output_ranges(self, samples, tmp_path):
        model, _ = train(tiny_train_cfg(epochs=1), samples, str(tmp_path))
        probs, depth = predict(model, samples[0])
        assert probs.shape == (32, 32)
        assert probs.min() >= 0.0 and probs.max() <= 1.0
        assert depth.shape == (32, 32)
        assert np.all(depth >= 0)

    def test_evaluate_produces_full_report(self, samples, tmp_path):
        model, _ = train(tiny_train_cfg(epochs=1), samples, str(tmp_path))
        rep = evaluate(model, samples)
        assert rep.n_samples == len(samples)
        for key in ("iou", "precision", "recall", "f1", "abs_rel", "mae"):
            assert getattr(rep, key) is not None
