"""Command-line harness: dataset generation, training, evaluation, the
ablation suite, inference, and a correlation-kernel benchmark.

Config files are plain text ``key = value`` lines (``#`` comments). Keys are
prefixed by section: ``scene.*``, ``train.*``, ``model.*``, ``corr.*``,
``loss.*``, ``aug.*``, ``data.*``. Every run dumps its effective config into
the output directory for provenance.
"""

from __future__ import annotations

import argparse
import ast
import dataclasses
import json
import os
import sys
import time

import numpy as np
from PIL import Image

from .correlation import CorrConfig, correlate, correlate_oracle
from .checkpoint import load_checkpoint
from .data import (AugmentationConfig, SceneConfig, generate_dataset,
                   read_dataset, resize_nni, write_utf)
from .losses import LossConfig
from .metrics import EvalReport
from .model import (Model, ModelConfig, build_model, config_from_dict,
                    config_to_dict, make_variant_suite)
from .tensor import Tensor
from .train import TrainConfig, evaluate, predict, train

DEFAULT_FLIGHTS = {"train": 30, "val": 5, "test": 5}
DEFAULT_FRAMES_PER_FLIGHT = 10


# -- config plumbing --------------------------------------------------------

def parse_config_file(path: str) -> dict:
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, _, raw = line.partition("=")
            raw = raw.strip()
            try:
                value = ast.literal_eval(raw)
            except (ValueError, SyntaxError):
                value = raw
            out[key.strip()] = value
    return out


def _apply_section(obj, section: str, cfg: dict):
    for key, value in cfg.items():
        if not key.startswith(section + "."):
            continue
        name = key[len(section) + 1:]
        if not hasattr(obj, name):
            raise ValueError(f"unknown config key '{key}'")
        if isinstance(value, list):
            value = tuple(value)
        setattr(obj, name, value)
    return obj


def build_configs(cfg: dict, seed: int | None = None, variant: str | None = None):
    scene = _apply_section(SceneConfig(), "scene", cfg)
    corr = _apply_section(CorrConfig(max_displacement=4), "corr", cfg)
    model = _apply_section(ModelConfig(base_channels=8, corr=corr), "model", cfg)
    loss = _apply_section(LossConfig(), "loss", cfg)
    aug = _apply_section(AugmentationConfig(), "aug", cfg)
    tc = TrainConfig(model=model, loss=loss, augmentation=aug)
    _apply_section(tc, "train", cfg)
    if cfg.get("train.augmentation") is False:
        tc.augmentation = None
    if seed is not None:
        tc.seed = seed
    if variant is not None:
        tc.model = dataclasses.replace(tc.model, variant=variant)
    tc.model.__post_init__()  # revalidate after overrides
    return scene, tc


def dump_effective_config(path: str, objs: dict):
    lines = []
    for section, obj in objs.items():
        if obj is None:
            lines.append(f"{section}.enabled = False")
            continue
        for f in dataclasses.fields(obj):
            v = getattr(obj, f.name)
            if dataclasses.is_dataclass(v):
                continue  # nested sections dumped separately
            lines.append(f"{section}.{f.name} = {v!r}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _require_empty_or_force(root: str, force: bool):
    if os.path.isdir(root) and os.listdir(root) and not force:
        raise SystemExit(
            f"output directory {root} is not empty; pass --force to overwrite"
        )


# -- subcommands ------------------------------------------------------------

def cmd_gen_data(args):
    cfg = parse_config_file(args.config) if args.config else {}
    scene, _ = build_configs(cfg, seed=args.seed)
    flights = dict(DEFAULT_FLIGHTS)
    if "data.flights" in cfg:
        flights = dict(cfg["data.flights"])
    frames = int(cfg.get("data.frames_per_flight", DEFAULT_FRAMES_PER_FLIGHT))
    _require_empty_or_force(args.out, args.force)
    os.makedirs(args.out, exist_ok=True)
    seed = args.seed if args.seed is not None else 0
    manifest = generate_dataset(args.out, scene, flights, frames, seed)
    total_flights = sum(len(v) for v in manifest["splits"].values())
    total_frames = total_flights * frames
    wire_px = 0
    total_px = 0
    for split in manifest["splits"]:
        for s in read_dataset(args.out, split):
            wire_px += int(s.wire_mask.sum())
            total_px += s.wire_mask.size
    rate = 100.0 * wire_px / max(total_px, 1)
    print(f"flights={total_flights} frames={total_frames} "
          f"wire_pixel_rate={rate:.3f}%")
    print(f"manifest written to {os.path.join(args.out, 'manifest.json')}")


def _load_split(root: str, split: str):
    return list(read_dataset(root, split))


def cmd_train(args):
    cfg = parse_config_file(args.config) if args.config else {}
    _, tc = build_configs(cfg, seed=args.seed, variant=args.variant)
    samples = _load_split(args.data, "train")
    os.makedirs(args.out, exist_ok=True)
    dump_effective_config(os.path.join(args.out, "config.txt"), {
        "train": tc, "model": tc.model, "corr": tc.model.corr,
        "loss": tc.loss, "aug": tc.augmentation,
    })
    with open(os.path.join(args.out, "model_config.json"), "w") as fh:
        json.dump(config_to_dict(tc.model), fh, indent=2)
    model, rows = train(tc, samples, args.out, resume_from=args.resume)
    final = sorted(os.listdir(os.path.join(args.out, "checkpoints")))[-1]
    print(f"trained {tc.model.variant} for {tc.epochs} epochs "
          f"({len(rows)} steps); final checkpoint: checkpoints/{final}")


def _load_model_for_checkpoint(ckpt_path: str) -> Model:
    run_dir = os.path.dirname(os.path.dirname(os.path.abspath(ckpt_path)))
    cfg_path = os.path.join(run_dir, "model_config.json")
    if not os.path.exists(cfg_path):
        raise SystemExit(f"cannot find model_config.json next to {ckpt_path}")
    with open(cfg_path) as fh:
        mcfg = config_from_dict(json.load(fh))
    model = build_model(mcfg, seed=0)
    ck = load_checkpoint(ckpt_path)
    model.load_arrays(ck.params)
    return model


def _write_report(out_dir: str, name: str, report: EvalReport):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, f"{name}_report.txt"), "w") as fh:
        fh.write(report.to_text_table() + "\n")
    with open(os.path.join(out_dir, f"{name}_report.kv"), "w") as fh:
        fh.write(report.to_kv_lines())


def cmd_eval(args):
    model = _load_model_for_checkpoint(args.checkpoint)
    samples = _load_split(args.data, args.split)
    report = evaluate(model, samples, threshold=args.threshold,
                      wd_dilation=args.wd_dilation)
    _write_report(args.out, args.split, report)
    print(report.to_text_table())


@dataclasses.dataclass
class AblationRow:
    variant: str
    precision: float
    recall: float
    f1: float
    d_precision: float = 0.0
    d_recall: float = 0.0
    d_f1: float = 0.0


def _pct_delta(value: float, ref: float) -> float:
    if ref == 0:
        return 0.0 if value == 0 else float("inf")
    return 100.0 * (value - ref) / ref


def _ablation_table(title: str, rows: list[AblationRow], ref_name: str) -> str:
    ref = next(r for r in rows if r.variant == ref_name)
    lines = [title,
             f"{'variant':<16} {'d_precision':>12} {'d_recall':>10} {'d_f1':>10}"]
    for r in rows:
        r.d_precision = _pct_delta(r.precision, ref.precision)
        r.d_recall = _pct_delta(r.recall, ref.recall)
        r.d_f1 = _pct_delta(r.f1, ref.f1)
        fmt = lambda d: "    -" if r.variant == ref_name else f"{d:+.1f}%"
        lines.append(f"{r.variant:<16} {fmt(r.d_precision):>12} "
                     f"{fmt(r.d_recall):>10} {fmt(r.d_f1):>10}")
    return "\n".join(lines)


def cmd_ablate(args):
    cfg = parse_config_file(args.config) if args.config else {}
    _, base_tc = build_configs(cfg, seed=args.seed)
    train_samples = _load_split(args.data, "train")
    eval_samples = _load_split(args.data, args.split)
    os.makedirs(args.out, exist_ok=True)
    rows = {}
    reports = {}
    for mcfg in make_variant_suite(base_tc.model):
        tc = dataclasses.replace(base_tc, model=mcfg)
        run_dir = os.path.join(args.out, mcfg.variant)
        model, _ = train(tc, train_samples, run_dir)
        report = evaluate(model, eval_samples)
        reports[mcfg.variant] = report
        _write_report(os.path.join(run_dir, "reports"), args.split, report)
        rows[mcfg.variant] = AblationRow(mcfg.variant, report.precision,
                                         report.recall, report.f1)
        print(f"{mcfg.variant}: f1={report.f1:.4f} iou={report.iou:.4f}")

    tables = [
        _ablation_table("correlation placement (reference: ucorr_deep)",
                        [rows["ucorr_pixel"], rows["ucorr_shallow"],
                         rows["ucorr_deep"]], "ucorr_deep"),
        _ablation_table("frame-concatenation UNet (reference: unet_1f)",
                        [rows["unet_1f"], rows["unet_2f"], rows["unet_3f"]],
                        "unet_1f"),
        _ablation_table("skip connections (reference: ucorr_deep)",
                        [rows["ucorr_deep"], rows["ucorr_noskip"]],
                        "ucorr_deep"),
    ]
    iou_deep = reports["ucorr_deep"].iou
    iou_unet = reports["unet_1f"].iou
    direction = "ahead of" if iou_deep > iou_unet else "behind"
    summary = (f"ucorr_deep IoU {iou_deep:.4f} vs unet_1f IoU {iou_unet:.4f} "
               f"({direction} the single-frame baseline at this scale)")
    text = "\n\n".join(tables) + "\n\n" + summary + "\n"
    with open(os.path.join(args.out, "ablation_tables.txt"), "w") as fh:
        fh.write(text)
    with open(os.path.join(args.out, "ablation_raw.json"), "w") as fh:
        json.dump({v: r.as_dict() for v, r in reports.items()}, fh, indent=2)
    print(text)


def _depth_colormap(depth: np.ndarray) -> np.ndarray:
    import matplotlib.cm as cm
    lo, hi = float(depth.min()), float(depth.max())
    norm = (depth - lo) / (hi - lo) if hi > lo else np.zeros_like(depth)
    return (cm.viridis(norm)[..., :3] * 255).astype(np.uint8)


def cmd_infer(args):
    model = _load_model_for_checkpoint(args.checkpoint)
    size = tuple(model.cfg.input_size)
    imgs = []
    for p in (args.frame_prev, args.frame_curr):
        im = np.asarray(Image.open(p).convert("RGB"), dtype=np.float32) / 255.0
        imgs.append(im)
    if imgs[0].shape != imgs[1].shape:
        raise SystemExit(
            f"frame sizes differ: {imgs[0].shape} vs {imgs[1].shape}"
        )
    imgs = [resize_nni(im, size) for im in imgs]
    from .data import Sample
    sample = Sample(frame_prev=imgs[0], frame_curr=imgs[1],
                    wire_mask=np.zeros(size, np.uint8),
                    depth=np.ones(size, np.float32))
    probs, depth = predict(model, sample)
    os.makedirs(args.out, exist_ok=True)
    Image.fromarray((probs * 255).astype(np.uint8)).save(
        os.path.join(args.out, "wire_prob.png"))
    write_utf(os.path.join(args.out, "depth.utf"), depth)
    overlay = imgs[1].copy()
    overlay[..., 0] = np.maximum(overlay[..., 0], probs)
    panel = np.concatenate([
        (imgs[1] * 255).astype(np.uint8),
        (overlay * 255).astype(np.uint8),
        _depth_colormap(depth),
    ], axis=1)
    Image.fromarray(panel).save(os.path.join(args.out, "panel.png"))
    print(f"wrote wire_prob.png, depth.utf, panel.png to {args.out}")


def cmd_bench_corr(args):
    rng = np.random.default_rng(0)
    shape = (1, 8, args.size, args.size)
    f1 = Tensor(rng.standard_normal(shape).astype(np.float32))
    f2 = Tensor(rng.standard_normal(shape).astype(np.float32))
    cfg = CorrConfig(max_displacement=args.displacement, patch_radius=args.patch_radius)
    for name, fn in (("optimized", correlate), ("oracle", correlate_oracle)):
        t0 = time.perf_counter()
        out = fn(f1, f2, cfg)
        dt = time.perf_counter() - t0
        rate = out.data.size / dt
        print(f"{name:>9}: {dt * 1e3:8.2f} ms  {rate:12.0f} output elems/s")


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="ucorr",
        description="wire segmentation + depth estimation harness",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--config")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--variant", choices=None)
    p.add_argument("--resume")
    p.add_argument("--deterministic", action="store_true",
                   help="force synchronous loading (always on in this build)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--out", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--wd-dilation", type=int, default=0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train and compare all 7 variants")
    p.add_argument("--config")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="val")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("infer", help="run inference on a frame pair")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("frame_prev")
    p.add_argument("frame_curr")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("bench-corr", help="correlation kernel throughput")
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--displacement", type=int, default=4)
    p.add_argument("--patch-radius", type=int, default=0)
    p.set_defaults(func=cmd_bench_corr)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
