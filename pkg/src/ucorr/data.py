"""Procedural synthetic flight generator, augmentation pipeline, and the
on-disk dataset format.

A scene is a stack of fronto-parallel textured background layers plus a few
catenary wires, viewed by a pinhole camera that translates between frames.
Everything at depth z shifts by focal * t / z pixels under a camera
translation t, so wire parallax is physically consistent and thin wires are
rendered with anti-aliased strokes at sub-pixel width.

Dataset layout: ``root/<split>/flight_<id>/`` with ``frame_%04d.png`` (8-bit
RGB), ``wire_%04d.png`` (8-bit, {0, 255}) and ``depth_%04d.utf`` (custom f32
tensor file, magic "UCTF"). A ``manifest.json`` at the root lists flights per
split. The reader yields consecutive-frame samples within a flight only.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import struct
from dataclasses import dataclass, field, replace

import cv2
import numpy as np
from PIL import Image

log = logging.getLogger(__name__)

UTF_MAGIC = b"UCTF"
UTF_VERSION = 1


# -- sample & configs -------------------------------------------------------

@dataclass
class Sample:
    frame_prev: np.ndarray   # H x W x 3 float32 in [0, 1]
    frame_curr: np.ndarray   # H x W x 3 float32 in [0, 1]
    wire_mask: np.ndarray    # H x W uint8 {0, 1}, current frame
    depth: np.ndarray        # H x W float32 meters > 0, current frame
    meta: dict = field(default_factory=dict)
    frame_prev2: np.ndarray | None = None  # two frames back, when available


@dataclass
class SceneConfig:
    image_size: tuple = (64, 64)            # (H, W)
    focal: float = 64.0                     # pixels
    wire_count_range: tuple = (1, 3)
    wire_sag_range: tuple = (0.5, 3.0)      # meters of catenary sag
    wire_depth_range: tuple = (5.0, 25.0)   # meters
    wire_width_range: tuple = (1.0, 2.0)    # stroke width, pixels
    background_layers: int = 3
    background_depth_range: tuple = (30.0, 90.0)
    cam_translation: tuple = (0.5, 0.0)     # meters per frame, (x, y)
    rotation_jitter: float = 0.0            # radians, applied as a pan shift
    far_plane: float = 100.0


@dataclass
class AugmentationConfig:
    """Per-transform switches; photometric params are drawn once per sample
    and applied identically to both frames."""
    motion_blur: bool = True
    motion_blur_len: tuple = (3, 7)
    horizontal_flip: bool = True
    flip_probability: float = 0.5
    rgb_shift: bool = True
    rgb_shift_limit: float = 0.08
    color_jitter: bool = True
    color_jitter_limit: float = 0.2
    hue_saturation: bool = True
    hue_shift_limit: float = 10.0       # degrees
    saturation_limit: float = 0.2
    invert: bool = True
    invert_probability: float = 0.1
    clahe: bool = True
    clahe_probability: float = 0.3
    clahe_clip: float = 2.0
    clahe_tile: int = 8
    brightness_contrast: bool = True
    brightness_limit: float = 0.15
    contrast_limit: float = 0.15
    gamma: bool = True
    gamma_range: tuple = (0.8, 1.25)

    @classmethod
    def disabled(cls) -> "AugmentationConfig":
        off = {f: False for f in ("motion_blur", "horizontal_flip", "rgb_shift",
                                  "color_jitter", "hue_saturation", "invert",
                                  "clahe", "brightness_contrast", "gamma")}
        return cls(**off)


# -- scene construction -----------------------------------------------------

@dataclass
class _BgLayer:
    z: float
    texture: np.ndarray        # coarse value-noise grid
    color: np.ndarray          # base RGB
    coverage: np.ndarray | None  # coarse noise grid for the layer's mask
    cover_thresh: float


@dataclass
class _Wire:
    x0: float
    y0: float
    x1: float
    y1: float
    z: float
    sag: float
    width: float
    color: np.ndarray


@dataclass
class Scene:
    cfg: SceneConfig
    layers: list
    wires: list
    pan: tuple = (0.0, 0.0)


def build_scene(cfg: SceneConfig, seed: int) -> Scene:
    if cfg.focal <= 0:
        raise ValueError(f"degenerate camera: focal {cfg.focal}")
    rng = np.random.default_rng(seed)
    h, w = cfg.image_size
    zs = np.sort(rng.uniform(*cfg.background_depth_range, size=cfg.background_layers))[::-1]
    layers = []
    for i, z in enumerate(zs):
        grid = rng.random((10, 10))
        color = rng.uniform(0.3, 1.0, size=3)
        if i == 0:
            coverage, thresh = None, 0.0  # farthest layer covers everything
        else:
            coverage = rng.random((6, 6))
            thresh = rng.uniform(0.45, 0.7)
        layers.append(_BgLayer(float(z), grid, color.astype(np.float32),
                               coverage, float(thresh)))
    n_wires = int(rng.integers(cfg.wire_count_range[0], cfg.wire_count_range[1] + 1))
    wires = []
    for _ in range(n_wires):
        z = float(rng.uniform(*cfg.wire_depth_range))
        half_w = 0.7 * w * z / cfg.focal   # world half-span with margin
        y_px0 = rng.uniform(0.1 * h, 0.9 * h)
        y_px1 = rng.uniform(0.1 * h, 0.9 * h)
        wires.append(_Wire(
            x0=-half_w, x1=half_w,
            y0=float((y_px0 - h / 2) * z / cfg.focal),
            y1=float((y_px1 - h / 2) * z / cfg.focal),
            z=z,
            sag=float(rng.uniform(*cfg.wire_sag_range)),
            width=float(rng.uniform(*cfg.wire_width_range)),
            color=rng.uniform(0.0, 0.25, size=3).astype(np.float32),
        ))
    pan = (float(rng.uniform(-1, 1) * cfg.rotation_jitter),
           float(rng.uniform(-1, 1) * cfg.rotation_jitter))
    return Scene(cfg=cfg, layers=layers, wires=wires, pan=pan)


def _sample_grid(grid: np.ndarray, uu: np.ndarray, vv: np.ndarray,
                 freq: float) -> np.ndarray:
    """Bilinear sample of a coarse grid at pixel coords, wrapping; smooth
    value noise at the chosen frequency."""
    gh, gw = grid.shape
    y = (vv * freq) % gh
    x = (uu * freq) % gw
    y0 = np.floor(y).astype(int) % gh
    x0 = np.floor(x).astype(int) % gw
    y1 = (y0 + 1) % gh
    x1 = (x0 + 1) % gw
    fy = y - np.floor(y)
    fx = x - np.floor(x)
    top = grid[y0, x0] * (1 - fx) + grid[y0, x1] * fx
    bot = grid[y1, x0] * (1 - fx) + grid[y1, x1] * fx
    return top * (1 - fy) + bot * fy


def wire_alpha(scene: Scene, wire: _Wire, cam_offset=(0.0, 0.0),
               supersample: int = 4) -> np.ndarray:
    """Anti-aliased coverage of one wire at the given camera offset."""
    cfg = scene.cfg
    h, w = cfg.image_size
    f = cfg.focal
    tx, ty = cam_offset
    n = 8 * max(h, w) * supersample
    s = np.linspace(0.0, 1.0, n)
    X = wire.x0 + s * (wire.x1 - wire.x0)
    # catenary in camera-height coordinates, sag meters at the midpoint
    t = 2.0 * s - 1.0
    c = 2.0
    shape = (np.cosh(c * t) - 1.0) / (np.cosh(c) - 1.0)   # 1 at ends, 0 mid
    Y = wire.y0 + s * (wire.y1 - wire.y0) + wire.sag * (1.0 - shape)
    u = f * (X - tx) / wire.z + w / 2 + f * scene.pan[0]
    v = f * (Y - ty) / wire.z + h / 2 + f * scene.pan[1]
    ss = supersample
    buf = np.zeros((h * ss, w * ss), dtype=bool)
    r = wire.width * ss / 2.0
    ri = int(np.ceil(r))
    dy, dx = np.mgrid[-ri:ri + 1, -ri:ri + 1]
    disc = np.argwhere(dy ** 2 + dx ** 2 <= r ** 2) - ri
    ui = np.round(u * ss).astype(int)
    vi = np.round(v * ss).astype(int)
    for oy, ox in disc:
        yy = vi + oy
        xx = ui + ox
        ok = (yy >= 0) & (yy < h * ss) & (xx >= 0) & (xx < w * ss)
        buf[yy[ok], xx[ok]] = True
    return buf.reshape(h, ss, w, ss).mean(axis=(1, 3)).astype(np.float32)


def render_frame(scene: Scene, cam_offset=(0.0, 0.0)):
    """Render (rgb, wire_alpha_combined, depth) at the given camera offset."""
    cfg = scene.cfg
    h, w = cfg.image_size
    f = cfg.focal
    tx, ty = cam_offset
    vv, uu = np.mgrid[0:h, 0:w].astype(np.float64)
    rgb = np.zeros((h, w, 3), dtype=np.float32)
    depth = np.full((h, w), cfg.far_plane, dtype=np.float32)
    for i, layer in enumerate(scene.layers):
        su = uu + f * tx / layer.z + f * scene.pan[0]
        sv = vv + f * ty / layer.z + f * scene.pan[1]
        tex = _sample_grid(layer.texture, su, sv, 0.13).astype(np.float32)
        col = layer.color[None, None, :] * (0.4 + 0.6 * tex[..., None])
        if layer.coverage is None:
            mask = np.ones((h, w), dtype=bool)
        else:
            cov = _sample_grid(layer.coverage, su, sv, 0.06)
            mask = cov > layer.cover_thresh
        rgb[mask] = col[mask]
        depth[mask] = layer.z
    alpha_all = np.zeros((h, w), dtype=np.float32)
    for wire in sorted(scene.wires, key=lambda wr: -wr.z):
        a = wire_alpha(scene, wire, cam_offset)
        rgb = a[..., None] * wire.color[None, None, :] + (1.0 - a[..., None]) * rgb
        covered = (a > 0.5) & (wire.z < depth)
        depth[covered] = wire.z
        alpha_all = np.maximum(alpha_all, a)
    return rgb.astype(np.float32), alpha_all, depth


def generate_sample(cfg: SceneConfig, seed: int) -> Sample:
    """One supervised pair: previous and current frame with labels for the
    current frame. The camera moves by cfg.cam_translation between frames."""
    scene = build_scene(cfg, seed)
    prev_rgb, _, _ = render_frame(scene, (0.0, 0.0))
    curr_rgb, alpha, depth = render_frame(scene, cfg.cam_translation)
    mask = (alpha > 0.5).astype(np.uint8)
    return Sample(frame_prev=prev_rgb, frame_curr=curr_rgb,
                  wire_mask=mask, depth=depth,
                  meta={"seed": seed, "cam_translation": cfg.cam_translation})


# -- augmentation -----------------------------------------------------------

def _apply_photometric(img: np.ndarray, fn) -> np.ndarray:
    return np.clip(fn(img), 0.0, 1.0).astype(np.float32)


def augment(sample: Sample, cfg: AugmentationConfig, seed: int) -> Sample:
    """Apply the configured augmentations; geometric transforms hit both
    frames, the mask and the depth map identically, photometric transforms
    share one parameter draw across the two frames and never touch labels."""
    rng = np.random.default_rng(seed)
    frames = [sample.frame_curr.copy(), sample.frame_prev.copy()]
    if sample.frame_prev2 is not None:
        frames.append(sample.frame_prev2.copy())
    mask = sample.wire_mask.copy()
    depth = sample.depth.copy()

    if cfg.horizontal_flip and rng.random() < cfg.flip_probability:
        frames = [f[:, ::-1].copy() for f in frames]
        mask = mask[:, ::-1].copy()
        depth = depth[:, ::-1].copy()

    if cfg.motion_blur:
        length = int(rng.integers(cfg.motion_blur_len[0], cfg.motion_blur_len[1] + 1))
        angle = rng.uniform(0, np.pi)
        kern = _motion_kernel(length, angle)
        fn = lambda im: cv2.filter2D(im, -1, kern, borderType=cv2.BORDER_REFLECT)
        frames = [_apply_photometric(f, fn) for f in frames]

    if cfg.rgb_shift:
        shift = rng.uniform(-cfg.rgb_shift_limit, cfg.rgb_shift_limit, size=3)
        fn = lambda im: im + shift[None, None, :]
        frames = [_apply_photometric(f, fn) for f in frames]

    if cfg.color_jitter:
        b = rng.uniform(-cfg.color_jitter_limit, cfg.color_jitter_limit)
        cmul = 1.0 + rng.uniform(-cfg.color_jitter_limit, cfg.color_jitter_limit)
        smul = 1.0 + rng.uniform(-cfg.color_jitter_limit, cfg.color_jitter_limit)
        def fn(im):
            im = (im - 0.5) * cmul + 0.5 + b
            gray = im.mean(axis=2, keepdims=True)
            return gray + (im - gray) * smul
        frames = [_apply_photometric(f, fn) for f in frames]

    if cfg.hue_saturation:
        hshift = rng.uniform(-cfg.hue_shift_limit, cfg.hue_shift_limit)
        smul = 1.0 + rng.uniform(-cfg.saturation_limit, cfg.saturation_limit)
        def fn(im):
            hsv = cv2.cvtColor(im, cv2.COLOR_RGB2HSV)
            hsv[..., 0] = (hsv[..., 0] + hshift) % 360.0
            hsv[..., 1] = np.clip(hsv[..., 1] * smul, 0, 1)
            return cv2.cvtColor(hsv, cv2.COLOR_HSV2RGB)
        frames = [_apply_photometric(f, fn) for f in frames]

    if cfg.invert and rng.random() < cfg.invert_probability:
        frames = [_apply_photometric(f, lambda im: 1.0 - im) for f in frames]

    if cfg.clahe and rng.random() < cfg.clahe_probability:
        clahe = cv2.createCLAHE(clipLimit=cfg.clahe_clip,
                                tileGridSize=(cfg.clahe_tile, cfg.clahe_tile))
        def fn(im):
            u8 = (im * 255).astype(np.uint8)
            hsv = cv2.cvtColor(u8, cv2.COLOR_RGB2HSV)
            hsv[..., 2] = clahe.apply(hsv[..., 2])
            return cv2.cvtColor(hsv, cv2.COLOR_HSV2RGB).astype(np.float32) / 255.0
        frames = [_apply_photometric(f, fn) for f in frames]

    if cfg.brightness_contrast:
        b = rng.uniform(-cfg.brightness_limit, cfg.brightness_limit)
        c = 1.0 + rng.uniform(-cfg.contrast_limit, cfg.contrast_limit)
        fn = lambda im: (im - 0.5) * c + 0.5 + b
        frames = [_apply_photometric(f, fn) for f in frames]

    if cfg.gamma:
        g = rng.uniform(*cfg.gamma_range)
        fn = lambda im: np.power(np.clip(im, 0, 1), g)
        frames = [_apply_photometric(f, fn) for f in frames]

    return Sample(frame_prev=frames[1], frame_curr=frames[0], wire_mask=mask,
                  depth=depth, meta=dict(sample.meta),
                  frame_prev2=frames[2] if len(frames) > 2 else None)


def _motion_kernel(length: int, angle: float) -> np.ndarray:
    kern = np.zeros((length, length), dtype=np.float32)
    c = (length - 1) / 2.0
    for i in range(length * 4):
        t = i / (length * 4 - 1) - 0.5
        y = int(round(c + t * (length - 1) * np.sin(angle)))
        x = int(round(c + t * (length - 1) * np.cos(angle)))
        kern[y, x] = 1.0
    return kern / kern.sum()


def resize_nni(arr: np.ndarray, size: tuple) -> np.ndarray:
    """Nearest-neighbor resample to (H, W); never introduces new values, so
    it is safe for masks and depth maps."""
    th, tw = size
    if th <= 0 or tw <= 0:
        raise ValueError(f"resize_nni: invalid target size {size}")
    h, w = arr.shape[:2]
    if (th, tw) == (h, w):
        return arr.copy()
    yi = np.minimum((np.floor((np.arange(th) + 0.5) * h / th)).astype(int), h - 1)
    xi = np.minimum((np.floor((np.arange(tw) + 0.5) * w / tw)).astype(int), w - 1)
    return arr[np.ix_(yi, xi)].copy()


# -- tensor file format -----------------------------------------------------

def write_utf(path, arr: np.ndarray):
    arr = np.ascontiguousarray(arr, dtype="<f4")
    tmp = str(path) + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(UTF_MAGIC)
        fh.write(struct.pack("<II", UTF_VERSION, arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(arr.tobytes())
    os.replace(tmp, path)


def read_utf(path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != UTF_MAGIC:
            raise ValueError(f"not a tensor file: bad magic {magic!r}")
        version, rank = struct.unpack("<II", fh.read(8))
        if version != UTF_VERSION:
            raise ValueError(f"unsupported tensor file version {version}")
        extents = struct.unpack(f"<{rank}I", fh.read(4 * rank))
        n = int(np.prod(extents)) if rank else 1
        return np.frombuffer(fh.read(4 * n), dtype="<f4").reshape(extents).copy()


def _write_png(path, arr_u8: np.ndarray):
    tmp = str(path) + ".tmp"
    Image.fromarray(arr_u8).save(tmp, format="PNG")
    os.replace(tmp, path)


# -- dataset read/write -----------------------------------------------------

def write_flight(flight_dir, frames):
    """frames: list of (rgb float [0,1], mask uint8 {0,1}, depth float32)."""
    os.makedirs(flight_dir, exist_ok=True)
    for i, (rgb, mask, depth) in enumerate(frames):
        _write_png(os.path.join(flight_dir, f"frame_{i:04d}.png"),
                   np.clip(np.round(rgb * 255), 0, 255).astype(np.uint8))
        _write_png(os.path.join(flight_dir, f"wire_{i:04d}.png"),
                   (mask.astype(np.uint8) * 255))
        write_utf(os.path.join(flight_dir, f"depth_{i:04d}.utf"), depth)


def generate_flight(cfg: SceneConfig, seed: int, n_frames: int):
    """Render a frame sequence of one flight: a fixed scene seen from a
    camera translating by cfg.cam_translation per frame."""
    scene = build_scene(cfg, seed)
    frames = []
    for t in range(n_frames):
        off = (cfg.cam_translation[0] * t, cfg.cam_translation[1] * t)
        rgb, alpha, depth = render_frame(scene, off)
        frames.append((rgb, (alpha > 0.5).astype(np.uint8), depth))
    return frames


def flight_seed(base_seed: int, split: str, flight_idx: int) -> int:
    # splittable seeding: independent per (split, flight), stable across runs
    digest = hashlib.sha256(f"{base_seed}/{split}/{flight_idx}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def generate_dataset(root, cfg: SceneConfig, flights_per_split: dict,
                     frames_per_flight: int, seed: int) -> dict:
    """Write the full dataset; returns the manifest (also saved to disk)."""
    manifest = {"seed": seed, "frames_per_flight": frames_per_flight, "splits": {}}
    for split, n_flights in flights_per_split.items():
        entries = []
        for fi in range(n_flights):
            fid = f"flight_{fi:03d}"
            fdir = os.path.join(root, split, fid)
            frames = generate_flight(cfg, flight_seed(seed, split, fi),
                                     frames_per_flight)
            write_flight(fdir, frames)
            entries.append({"id": fid, "frames": frames_per_flight,
                            "checksum": _flight_checksum(fdir)})
        manifest["splits"][split] = entries
    with open(os.path.join(root, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2)
    return manifest


def _flight_checksum(flight_dir) -> str:
    h = hashlib.sha256()
    for name in sorted(os.listdir(flight_dir)):
        with open(os.path.join(flight_dir, name), "rb") as fh:
            h.update(name.encode())
            h.update(fh.read())
    return h.hexdigest()


def _load_frame(flight_dir, idx: int):
    fp = os.path.join(flight_dir, f"frame_{idx:04d}.png")
    wp = os.path.join(flight_dir, f"wire_{idx:04d}.png")
    dp = os.path.join(flight_dir, f"depth_{idx:04d}.utf")
    for p in (fp, wp, dp):
        if not os.path.exists(p):
            log.warning("skipping frame %d in %s: missing %s", idx, flight_dir,
                        os.path.basename(p))
            return None
    rgb = np.asarray(Image.open(fp).convert("RGB"), dtype=np.float32) / 255.0
    mask = (np.asarray(Image.open(wp)) > 127).astype(np.uint8)
    depth = read_utf(dp)
    return rgb, mask, depth


def read_dataset(root, split):
    """Yield consecutive-frame Samples within each flight of a split."""
    split_dir = os.path.join(root, split)
    if not os.path.isdir(split_dir):
        raise FileNotFoundError(f"missing dataset split: {split_dir}")
    for fid in sorted(os.listdir(split_dir)):
        fdir = os.path.join(split_dir, fid)
        if not os.path.isdir(fdir):
            continue
        indices = sorted(
            int(n[6:10]) for n in os.listdir(fdir)
            if n.startswith("frame_") and n.endswith(".png")
        )
        prev = None
        prev2 = None
        prev_idx = None
        for idx in indices:
            loaded = _load_frame(fdir, idx)
            if loaded is None:
                prev = None
                prev2 = None
                continue
            if prev is not None and idx == prev_idx + 1:
                rgb, mask, depth = loaded
                yield Sample(frame_prev=prev[0], frame_curr=rgb,
                             wire_mask=mask, depth=depth,
                             meta={"flight": fid, "frame": idx},
                             frame_prev2=prev2[0] if prev2 is not None else None)
                prev2 = prev
            else:
                prev2 = None
            prev = loaded
            prev_idx = idx
