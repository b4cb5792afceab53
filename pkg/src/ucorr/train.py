"""Training loop with the paper-style recipe (momentum SGD, per-epoch lr
decay, online augmentation) plus dataset evaluation.

Determinism contract: with a fixed seed every stochastic draw (shuffle order,
augmentation parameters) is a pure function of (seed, epoch, step), so a run
resumed from an epoch-boundary checkpoint continues bit-identically to the
uninterrupted run on a single thread.
"""

from __future__ import annotations

import csv
import hashlib
import os
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .checkpoint import load_checkpoint, save_checkpoint
from .data import AugmentationConfig, Sample, augment
from .losses import LossConfig, total_loss
from .metrics import EvalReport, MetricAccumulator
from .model import Model, ModelConfig, build_model
from .optim import SGD, lr_at_epoch
from .tensor import Tensor


@dataclass
class TrainConfig:
    epochs: int = 15
    batch_size: int = 4
    initial_lr: float = 5e-3
    lr_decay: float = 0.9
    momentum: float = 0.9
    weight_decay: float = 0.01
    clip_norm: float | None = None   # global grad-norm clip; None disables
    seed: int = 0
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    augmentation: AugmentationConfig | None = field(default_factory=AugmentationConfig)
    checkpoint_every: int = 5   # epochs; final epoch always checkpointed

    @property
    def steps_per_epoch(self):
        return None  # depends on dataset size; resolved in train()


LOG_COLUMNS = ("step", "epoch", "lr", "total", "wire", "mae", "msssim")


def _stack_frames(images: list[np.ndarray]) -> Tensor:
    arr = np.stack([im.transpose(2, 0, 1) for im in images]).astype(np.float32)
    return Tensor(arr)


def batch_to_frames(samples: list[Sample], n_frames: int) -> list[Tensor]:
    """Model inputs for a batch, ordered [current, previous, previous2].

    When a sample has no two-back frame the previous frame stands in, so
    three-frame variants still accept pair-only data.
    """
    frames = [_stack_frames([s.frame_curr for s in samples])]
    if n_frames >= 2:
        frames.append(_stack_frames([s.frame_prev for s in samples]))
    if n_frames >= 3:
        frames.append(_stack_frames(
            [s.frame_prev2 if s.frame_prev2 is not None else s.frame_prev
             for s in samples]))
    return frames


def batch_targets(samples: list[Sample]) -> tuple[Tensor, Tensor]:
    mask = np.stack([s.wire_mask for s in samples])[:, None].astype(np.float32)
    depth = np.stack([s.depth for s in samples])[:, None].astype(np.float32)
    return Tensor(mask), Tensor(depth)


def _derived_seed(*parts) -> int:
    digest = hashlib.sha256("/".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(digest[:8], "little")


def train(cfg: TrainConfig, samples: list[Sample], out_dir: str,
          resume_from: str | None = None):
    """Train a model on in-memory samples; returns (model, log_rows).

    Writes ``checkpoints/`` and ``logs/train_log.csv`` under ``out_dir``.
    """
    if not samples:
        raise ValueError("training set is empty")
    h, w = samples[0].frame_curr.shape[:2]
    if (h, w) != tuple(cfg.model.input_size):
        raise ValueError(
            f"model expects input size {cfg.model.input_size} but dataset "
            f"frames are {h}x{w}"
        )
    ckpt_dir = os.path.join(out_dir, "checkpoints")
    log_dir = os.path.join(out_dir, "logs")
    os.makedirs(ckpt_dir, exist_ok=True)
    os.makedirs(log_dir, exist_ok=True)

    model = build_model(cfg.model, cfg.seed)
    opt = SGD(model.params, lr=cfg.initial_lr, momentum=cfg.momentum,
              weight_decay=cfg.weight_decay, clip_norm=cfg.clip_norm)
    start_epoch = 0
    global_step = 0
    if resume_from is not None:
        ck = load_checkpoint(resume_from)
        model.load_arrays(ck.params)
        for name in opt.velocity:
            opt.velocity[name] = ck.velocities[name].copy()
        start_epoch = ck.epoch
        global_step = ck.step

    log_rows = []
    n = len(samples)
    for epoch in range(start_epoch, cfg.epochs):
        opt.lr = lr_at_epoch(cfg.initial_lr, cfg.lr_decay, epoch)
        order = np.random.default_rng(_derived_seed(cfg.seed, "shuffle", epoch)
                                      ).permutation(n)
        for b0 in range(0, n, cfg.batch_size):
            idx = order[b0:b0 + cfg.batch_size]
            batch = []
            for i in idx:
                s = samples[i]
                if cfg.augmentation is not None:
                    s = augment(s, cfg.augmentation,
                                _derived_seed(cfg.seed, "aug", epoch, int(i)))
                batch.append(s)
            frames = batch_to_frames(batch, cfg.model.n_frames)
            mask_t, depth_t = batch_targets(batch)
            out = model.forward(frames)
            breakdown = total_loss(out.wire_logits, out.depth, mask_t, depth_t,
                                   cfg.loss)
            breakdown.loss.backward()
            opt.step()
            global_step += 1
            log_rows.append((global_step, epoch, opt.lr, breakdown.total,
                             breakdown.wire, breakdown.depth_mae,
                             breakdown.depth_msssim))
        last = epoch == cfg.epochs - 1
        if last or (epoch + 1) % cfg.checkpoint_every == 0:
            save_checkpoint(os.path.join(ckpt_dir, f"epoch_{epoch + 1:04d}.uckp"),
                            model.params, opt.velocity,
                            epoch + 1, global_step, opt.lr)

    with open(os.path.join(log_dir, "train_log.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(LOG_COLUMNS)
        writer.writerows(log_rows)
    return model, log_rows


def predict(model: Model, sample: Sample):
    """(wire probability map, depth map) for one sample, as H x W arrays."""
    frames = batch_to_frames([sample], model.cfg.n_frames)
    out = model.forward(frames)
    probs = T.sigmoid(out.wire_logits).data[0, 0]
    depth = out.depth.data[0, 0]
    return probs, depth


def evaluate(model: Model, samples, threshold: float = 0.5,
             wd_dilation: int = 0) -> EvalReport:
    """All nine metrics over an iterable of samples."""
    acc = MetricAccumulator(threshold=threshold, wd_dilation=wd_dilation)
    for s in samples:
        probs, depth = predict(model, s)
        acc.add(probs, s.wire_mask, depth, s.depth)
    return acc.report()
