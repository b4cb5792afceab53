"""Local patch correlation between two feature maps, bounded by a maximum
displacement.

For each output position, the layer compares the patch around that position in
the first feature map against patches in the second map offset by every
displacement (dy, dx) with |dy|, |dx| <= max_displacement on the stride grid.
A comparison is the sum over the patch window of per-pixel channel inner
products. Out-of-bounds reads are zero. One output channel per displacement,
ordered row-major over (dy, dx) from (-d, -d) to (d, d).

``correlate`` is the vectorized kernel used by the model; ``correlate_oracle``
is a literal nested-loop transcription kept for tests and benchmarks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import ShapeError, Tensor, _result


@dataclass
class CorrConfig:
    max_displacement: int = 10
    patch_radius: int = 0       # patch size K = 2*patch_radius + 1
    stride: int = 1             # displacement-grid stride
    normalize: bool = True      # divide each comparison by K^2 * C

    def __post_init__(self):
        if self.max_displacement < 0 or self.patch_radius < 0 or self.stride < 1:
            raise ValueError(f"invalid correlation config: {self}")

    @property
    def displacements(self) -> list[tuple[int, int]]:
        steps = self.max_displacement // self.stride
        vals = [i * self.stride for i in range(-steps, steps + 1)]
        return [(dy, dx) for dy in vals for dx in vals]

    @property
    def out_channels(self) -> int:
        return (2 * (self.max_displacement // self.stride) + 1) ** 2


def _shift2d(x: np.ndarray, dy: int, dx: int) -> np.ndarray:
    """shift(x)[..., y, x] = x[..., y+dy, x+dx], zero-padded."""
    h, w = x.shape[-2], x.shape[-1]
    out = np.zeros_like(x)
    ys0, ys1 = max(0, dy), min(h, h + dy)
    xs0, xs1 = max(0, dx), min(w, w + dx)
    if ys0 >= ys1 or xs0 >= xs1:
        return out
    out[..., ys0 - dy:ys1 - dy, xs0 - dx:xs1 - dx] = x[..., ys0:ys1, xs0:xs1]
    return out


def _box_sum(x: np.ndarray, k: int) -> np.ndarray:
    """Sum over the (2k+1)^2 window centered at each pixel, zero-padded."""
    if k == 0:
        return x
    out = np.zeros_like(x)
    for oy in range(-k, k + 1):
        for ox in range(-k, k + 1):
            out += _shift2d(x, oy, ox)
    return out


def correlate(f1: Tensor, f2: Tensor, cfg: CorrConfig) -> Tensor:
    """Correlation cost volume between two NCHW feature maps.

    Output shape is N x D^2 x H x W with D = 2*floor(d/stride)+1.
    Differentiable in both inputs.
    """
    if f1.data.shape != f2.data.shape:
        raise ShapeError(
            f"correlate: feature maps differ in shape, {f1.data.shape} vs {f2.data.shape}"
        )
    if f1.data.ndim != 4:
        raise ShapeError("correlate: expects rank-4 NCHW tensors")
    n, c, h, w = f1.data.shape
    k = cfg.patch_radius
    disps = cfg.displacements
    norm = 1.0 / ((2 * k + 1) ** 2 * c) if cfg.normalize else 1.0
    out = np.empty((n, len(disps), h, w), dtype=f1.dtype)
    shifted = []
    for ch, (dy, dx) in enumerate(disps):
        f2s = _shift2d(f2.data, dy, dx)
        shifted.append(f2s)
        prod = (f1.data * f2s).sum(axis=1)  # (n, h, w)
        out[:, ch] = _box_sum(prod, k) * norm

    def bk(outt):
        def _backward(g):
            need1 = f1.requires_grad or f1._parents
            need2 = f2.requires_grad or f2._parents
            g1 = np.zeros_like(f1.data) if need1 else None
            g2 = np.zeros_like(f2.data) if need2 else None
            for ch, (dy, dx) in enumerate(disps):
                box = _box_sum(g[:, ch] * norm, k)[:, None]  # (n,1,h,w)
                if need1:
                    g1 += box * shifted[ch]
                if need2:
                    g2 += _shift2d(f1.data * box, -dy, -dx)
            if need1:
                f1._accumulate(g1)
            if need2:
                f2._accumulate(g2)
        return _backward

    return _result(out, (f1, f2), bk)


def correlate_oracle(f1: Tensor, f2: Tensor, cfg: CorrConfig) -> Tensor:
    """Literal nested-loop reference for ``correlate`` (forward only).

    Slow by construction; used in tests and the benchmark subcommand.
    """
    if f1.data.shape != f2.data.shape:
        raise ShapeError(
            f"correlate_oracle: feature maps differ in shape, "
            f"{f1.data.shape} vs {f2.data.shape}"
        )
    n, c, h, w = f1.data.shape
    k = cfg.patch_radius
    disps = cfg.displacements
    norm = 1.0 / ((2 * k + 1) ** 2 * c) if cfg.normalize else 1.0
    a, b = f1.data, f2.data
    out = np.zeros((n, len(disps), h, w), dtype=np.float64)
    for ni in range(n):
        for ch, (dy, dx) in enumerate(disps):
            for y in range(h):
                for x in range(w):
                    acc = 0.0
                    for oy in range(-k, k + 1):
                        for ox in range(-k, k + 1):
                            y1, x1 = y + oy, x + ox
                            y2, x2 = y + dy + oy, x + dx + ox
                            if 0 <= y1 < h and 0 <= x1 < w and 0 <= y2 < h and 0 <= x2 < w:
                                for ci in range(c):
                                    acc += float(a[ni, ci, y1, x1]) * float(b[ni, ci, y2, x2])
                    out[ni, ch, y, x] = acc * norm
    return Tensor(out.astype(f1.dtype))
