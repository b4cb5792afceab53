"""Twin-encoder segmentation + depth network and its ablation variants.

The backbone is a small UNet: per resolution level one 3x3 conv + leaky relu, max
pooling between levels, nearest-neighbor upsampling and skip concatenation on
the way back up, and two 1x1 heads (wire logits, nonnegative depth via
softplus).

Correlation variants insert a temporal correlation layer at a chosen level:
the two input frames run through the levels below it with one shared weight
set, the cost volume between their features is concatenated onto the
current-frame features, and the rest of the network continues single-path.
Skip connections always originate from the current-frame path.

Variants:
    ucorr_deep     correlation after the full shared encoder (level 2, 1/4 res)
    ucorr_shallow  correlation after one conv block (level 1, 1/2 res)
    ucorr_pixel    correlation on raw RGB (level 0, full res)
    ucorr_noskip   ucorr_deep without decoder skip connections
    unet_1f/2f/3f  plain UNet over 1/2/3 channel-concatenated frames
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import tensor as T
from .correlation import CorrConfig, correlate
from .tensor import Tensor, kaiming_uniform

VARIANTS = ("ucorr_deep", "ucorr_shallow", "ucorr_pixel",
            "unet_1f", "unet_2f", "unet_3f", "ucorr_noskip")

_ARITY = {"unet_1f": 1, "unet_2f": 2, "unet_3f": 3,
          "ucorr_deep": 2, "ucorr_shallow": 2, "ucorr_pixel": 2,
          "ucorr_noskip": 2}

_CORR_LEVEL = {"ucorr_pixel": 0, "ucorr_shallow": 1, "ucorr_deep": 2,
               "ucorr_noskip": 2}


@dataclass
class ModelConfig:
    variant: str = "ucorr_deep"
    base_channels: int = 16
    encoder_depth: int = 4          # resolution levels, full res included
    corr: CorrConfig = field(default_factory=lambda: CorrConfig(max_displacement=4))
    input_size: tuple = (64, 64)
    depth_scale: float = 20.0       # softplus output scaling, meters

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant '{self.variant}'; choose from {VARIANTS}")
        div = 2 ** (self.encoder_depth - 1)
        h, w = self.input_size
        if h % div or w % div:
            raise ValueError(
                f"input size {h}x{w} must be divisible by {div} "
                f"for encoder depth {self.encoder_depth}"
            )
        if self.variant in _CORR_LEVEL and _CORR_LEVEL[self.variant] >= self.encoder_depth:
            raise ValueError(
                f"{self.variant} needs encoder depth > {_CORR_LEVEL[self.variant]}"
            )

    @property
    def n_frames(self) -> int:
        return _ARITY[self.variant]

    @property
    def corr_level(self) -> int | None:
        return _CORR_LEVEL.get(self.variant)

    def channels(self) -> list[int]:
        # width doubles per level, capped at 4x base to keep the trunk small
        return [self.base_channels * 2 ** min(i, 2) for i in range(self.encoder_depth)]


@dataclass
class ModelOutput:
    wire_logits: Tensor   # N x 1 x H x W, pre-sigmoid
    depth: Tensor         # N x 1 x H x W, meters, nonnegative


class Model:
    """Parameter set plus a functional forward pass (define-by-run)."""

    def __init__(self, cfg: ModelConfig, params: dict[str, Tensor]):
        self.cfg = cfg
        self.params = params

    def parameter_count(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def load_arrays(self, arrays: dict[str, np.ndarray]):
        for name, p in self.params.items():
            if name not in arrays:
                raise ValueError(f"checkpoint is missing parameter '{name}'")
            if arrays[name].shape != p.data.shape:
                raise ValueError(
                    f"parameter '{name}' shape {arrays[name].shape} != "
                    f"expected {p.data.shape}"
                )
            p.data = arrays[name].astype(np.float32).copy()

    # -- forward ------------------------------------------------------------
    def _conv(self, name: str, x: Tensor, kernel: int) -> Tensor:
        pad = kernel // 2
        return T.conv2d(x, self.params[f"{name}.w"], self.params[f"{name}.b"],
                        stride=1, padding=pad)

    def forward(self, frames: list[Tensor]) -> ModelOutput:
        cfg = self.cfg
        if len(frames) != cfg.n_frames:
            raise ValueError(
                f"{cfg.variant} takes {cfg.n_frames} frame(s), got {len(frames)}"
            )
        for f in frames[1:]:
            if f.data.shape != frames[0].data.shape:
                raise ValueError("all input frames must share one shape")
        levels = cfg.encoder_depth
        skips = {}

        if cfg.corr_level is None:
            x = frames[0]
            for f in frames[1:]:
                x = T.concat_channels(x, f)
            for i in range(levels):
                x = T.leaky_relu(self._conv(f"enc{i}", x, 3))
                if i < levels - 1:
                    skips[i] = x
                    x = T.max_pool2d(x)
        else:
            j = cfg.corr_level
            cur, prev = frames[0], frames[1]
            # shared levels below the correlation point
            for i in range(j):
                cur = T.leaky_relu(self._conv(f"enc{i}", cur, 3))
                prev = T.leaky_relu(self._conv(f"enc{i}", prev, 3))
                skips[i] = cur
                cur = T.max_pool2d(cur)
                prev = T.max_pool2d(prev)
            cost = correlate(cur, prev, cfg.corr)
            x = T.concat_channels(cur, cost)
            for i in range(j, levels):
                x = T.leaky_relu(self._conv(f"enc{i}", x, 3))
                if i < levels - 1:
                    skips[i] = x
                    x = T.max_pool2d(x)

        use_skips = cfg.variant != "ucorr_noskip"
        for i in range(levels - 2, -1, -1):
            x = T.upsample_nearest2(x)
            if use_skips:
                x = T.concat_channels(x, skips[i])
            x = T.leaky_relu(self._conv(f"dec{i}", x, 3))

        wire_logits = self._conv("wire_head", x, 1)
        depth = T.scale(T.softplus(self._conv("depth_head", x, 1)), cfg.depth_scale)
        return ModelOutput(wire_logits=wire_logits, depth=depth)


def layer_shapes(cfg: ModelConfig) -> dict[str, tuple]:
    """Weight shapes for every conv, a pure function of the config."""
    ch = cfg.channels()
    levels = cfg.encoder_depth
    shapes = {}
    in0 = 3 * cfg.n_frames if cfg.corr_level is None else 3
    for i in range(levels):
        cin = in0 if i == 0 else ch[i - 1]
        if cfg.corr_level == i:
            cin += cfg.corr.out_channels
        shapes[f"enc{i}"] = (ch[i], cin, 3, 3)
    use_skips = cfg.variant != "ucorr_noskip"
    for i in range(levels - 2, -1, -1):
        cin = ch[i + 1] + (ch[i] if use_skips else 0)
        shapes[f"dec{i}"] = (ch[i], cin, 3, 3)
    shapes["wire_head"] = (1, ch[0], 1, 1)
    shapes["depth_head"] = (1, ch[0], 1, 1)
    return shapes


def build_model(cfg: ModelConfig, seed: int = 0) -> Model:
    """Construct and initialize a model; same (cfg, seed) gives bit-identical
    parameters. Conv weights are He-uniform (fan-in), biases zero."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in layer_shapes(cfg).items():
        o, i, kh, kw = shape
        fan_in = i * kh * kw
        params[f"{name}.w"] = Tensor(kaiming_uniform(rng, shape, fan_in),
                                     requires_grad=True, name=f"{name}.w")
        params[f"{name}.b"] = Tensor(np.zeros(o, dtype=np.float32),
                                     requires_grad=True, name=f"{name}.b")
    return Model(cfg, params)


def config_to_dict(cfg: ModelConfig) -> dict:
    return {
        "variant": cfg.variant,
        "base_channels": cfg.base_channels,
        "encoder_depth": cfg.encoder_depth,
        "input_size": list(cfg.input_size),
        "depth_scale": cfg.depth_scale,
        "corr": {
            "max_displacement": cfg.corr.max_displacement,
            "patch_radius": cfg.corr.patch_radius,
            "stride": cfg.corr.stride,
            "normalize": cfg.corr.normalize,
        },
    }


def config_from_dict(d: dict) -> ModelConfig:
    return ModelConfig(
        variant=d["variant"],
        base_channels=int(d["base_channels"]),
        encoder_depth=int(d["encoder_depth"]),
        input_size=tuple(d["input_size"]),
        depth_scale=float(d["depth_scale"]),
        corr=CorrConfig(**d["corr"]),
    )


def make_variant_suite(base: ModelConfig | None = None) -> list[ModelConfig]:
    """The seven ablation configs, sharing every non-variant hyperparameter."""
    base = base or ModelConfig()
    return [replace(base, variant=v) for v in VARIANTS]
