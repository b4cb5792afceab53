"""Composite training objective: weighted binary cross-entropy for wires plus
MAE and multi-scale structural similarity for depth.

total = wire + mae + lambda * (1 - msssim)

MS-SSIM is a similarity (1 at a perfect match), so the depth term converts it
to a dissimilarity before weighting; the stored ``depth_msssim`` component is
the converted value.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor

# Exponent weights from the standard 5-scale MS-SSIM reference; when fewer
# scales are configured the leading weights are renormalized to sum to 1.
_REFERENCE_SCALE_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)


@dataclass
class LossConfig:
    positive_weight: float = 20.0
    lam: float = 0.8
    msssim_scales: int = 3
    msssim_window: int = 11
    msssim_sigma: float = 1.5
    depth_range: float = 100.0      # meters; normalizes depth before MS-SSIM
    c1: float = 0.01 ** 2           # on normalized depth in [0, 1]
    c2: float = 0.03 ** 2

    def scale_weights(self) -> np.ndarray:
        w = np.asarray(_REFERENCE_SCALE_WEIGHTS[: self.msssim_scales], dtype=np.float64)
        return w / w.sum()


@dataclass
class LossBreakdown:
    total: float
    wire: float
    depth_mae: float
    depth_msssim: float
    loss: Tensor = field(repr=False, default=None)  # graph node for backward


def wire_loss(logits: Tensor, target: Tensor, positive_weight: float = 20.0) -> Tensor:
    """Mean weighted binary cross-entropy, computed in log-space from logits.

    per pixel: -(w+ * y * log p + (1 - y) * log(1 - p)), p = sigmoid(logit).
    log p = -softplus(-logit), log(1-p) = -softplus(logit).
    """
    if logits.data.shape != target.data.shape:
        raise ShapeError(
            f"wire_loss: logits {logits.data.shape} vs target {target.data.shape}"
        )
    tv = target.data
    if not np.all((tv == 0) | (tv == 1)):
        raise ValueError("wire_loss: target must be binary (0/1)")
    y = Tensor(tv.astype(logits.dtype))
    one_minus_y = Tensor((1.0 - tv).astype(logits.dtype))
    pos = T.mul(y, T.softplus(T.scale(logits, -1.0)))
    neg = T.mul(one_minus_y, T.softplus(logits))
    return T.tmean(T.add(T.scale(pos, positive_weight), neg))


def depth_mae(pred: Tensor, target: Tensor) -> Tensor:
    """Mean absolute error over all pixels (raw meters)."""
    if pred.data.shape != target.data.shape:
        raise ShapeError(
            f"depth_mae: pred {pred.data.shape} vs target {target.data.shape}"
        )
    return T.tmean(T.absolute(T.sub(pred, target)))


def _gaussian_kernel(window: int, sigma: float, dtype) -> np.ndarray:
    ax = np.arange(window) - (window - 1) / 2.0
    g = np.exp(-(ax ** 2) / (2.0 * sigma ** 2))
    k2 = np.outer(g, g)
    k2 /= k2.sum()
    return k2.reshape(1, 1, window, window).astype(dtype)


def _ssim_terms(a: Tensor, b: Tensor, cfg: LossConfig):
    """Per-scale mean luminance and contrast-structure terms (scalars)."""
    kern = Tensor(_gaussian_kernel(cfg.msssim_window, cfg.msssim_sigma, a.dtype))
    conv = lambda t: T.conv2d(t, kern, None, stride=1, padding=0)
    mu_a = conv(a)
    mu_b = conv(b)
    mu_aa = T.mul(mu_a, mu_a)
    mu_bb = T.mul(mu_b, mu_b)
    mu_ab = T.mul(mu_a, mu_b)
    var_a = T.sub(conv(T.mul(a, a)), mu_aa)
    var_b = T.sub(conv(T.mul(b, b)), mu_bb)
    cov = T.sub(conv(T.mul(a, b)), mu_ab)
    lum = T.div(T.add_scalar(T.scale(mu_ab, 2.0), cfg.c1),
                T.add_scalar(T.add(mu_aa, mu_bb), cfg.c1))
    cs = T.div(T.add_scalar(T.scale(cov, 2.0), cfg.c2),
               T.add_scalar(T.add(var_a, var_b), cfg.c2))
    return T.tmean(lum), T.tmean(cs)


def msssim(pred: Tensor, target: Tensor, cfg: LossConfig | None = None) -> Tensor:
    """Multi-scale SSIM on N x 1 x H x W inputs normalized to [0, 1].

    Contrast-structure terms are collected at every dyadic scale; the
    luminance term enters at the coarsest scale only. Exponent weights are
    the 5-scale reference weights renormalized over the configured scales.
    """
    cfg = cfg or LossConfig()
    if pred.data.shape != target.data.shape:
        raise ShapeError(
            f"msssim: pred {pred.data.shape} vs target {target.data.shape}"
        )
    h, w = pred.data.shape[2], pred.data.shape[3]
    need = cfg.msssim_window * 2 ** (cfg.msssim_scales - 1)
    if h < need or w < need:
        raise ShapeError(
            f"msssim: image {h}x{w} too small for {cfg.msssim_scales} scales; "
            f"needs at least {need}x{need}"
        )
    weights = cfg.scale_weights()
    a, b = pred, target
    result = None
    for s in range(cfg.msssim_scales):
        lum, cs = _ssim_terms(a, b, cfg)
        if s == cfg.msssim_scales - 1:
            term = T.mul(lum, cs)
        else:
            term = cs
        # clamp keeps the fractional power defined if cs dips negative
        factor = T.power(T.clamp_min(term, 1e-6), float(weights[s]))
        result = factor if result is None else T.mul(result, factor)
        if s < cfg.msssim_scales - 1:
            a = T.avg_pool2d(a)
            b = T.avg_pool2d(b)
    return result


def total_loss(wire_logits: Tensor, depth_pred: Tensor,
               wire_target: Tensor, depth_target: Tensor,
               cfg: LossConfig | None = None) -> LossBreakdown:
    """Composite objective; returns the scalar graph node plus components."""
    cfg = cfg or LossConfig()
    wire = wire_loss(wire_logits, wire_target, cfg.positive_weight)
    mae = depth_mae(depth_pred, depth_target)
    inv = 1.0 / cfg.depth_range
    sim = msssim(T.scale(depth_pred, inv), T.scale(depth_target, inv), cfg)
    dissim = T.add_scalar(T.scale(sim, -1.0), 1.0)
    total = T.add(T.add(wire, mae), T.scale(dissim, cfg.lam))
    return LossBreakdown(
        total=total.item(),
        wire=wire.item(),
        depth_mae=mae.item(),
        depth_msssim=dissim.item(),
        loss=total,
    )
