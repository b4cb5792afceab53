"""Evaluation suite: six segmentation metrics and three depth metrics,
including the wire-restricted absolute relative depth error.

Segmentation ratios are micro-averaged: pixel counts are pooled across the
dataset before any division. Degenerate 0/0 cases evaluate to 0 and are
flagged rather than raised.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

COLUMN_ORDER = ("iou", "auc", "ap", "precision", "recall", "f1",
                "abs_rel", "mae", "abs_rel_wd")


@dataclass
class SegCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def merge(self, other: "SegCounts") -> "SegCounts":
        return SegCounts(self.tp + other.tp, self.fp + other.fp,
                         self.fn + other.fn, self.tn + other.tn)


@dataclass
class EvalReport:
    iou: float = 0.0
    auc: float | None = None
    ap: float | None = None
    precision: float = 0.0
    recall: float = 0.0
    f1: float = 0.0
    abs_rel: float | None = None
    mae: float | None = None
    abs_rel_wd: float | None = None
    n_samples: int = 0
    threshold: float = 0.5
    flags: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in COLUMN_ORDER}

    def to_text_table(self) -> str:
        fmt = lambda v: "  null" if v is None else f"{v:6.4f}"
        header = "  ".join(f"{k:>9s}" for k in COLUMN_ORDER)
        row = "  ".join(f"{fmt(getattr(self, k)):>9s}" for k in COLUMN_ORDER)
        lines = [header, row]
        if self.flags:
            lines.append("flags: " + ", ".join(self.flags))
        return "\n".join(lines)

    def to_kv_lines(self) -> str:
        lines = [f"{k} = {'null' if getattr(self, k) is None else repr(float(getattr(self, k)))}"
                 for k in COLUMN_ORDER]
        lines.append(f"n_samples = {self.n_samples}")
        lines.append(f"threshold = {self.threshold}")
        lines.append(f"flags = {','.join(self.flags)}")
        return "\n".join(lines) + "\n"


def _check_binary(arr: np.ndarray, what: str):
    if not np.all((arr == 0) | (arr == 1)):
        raise ValueError(f"{what} must be binary (0/1)")


def seg_counts(pred_mask: np.ndarray, gt_mask: np.ndarray) -> SegCounts:
    """Exact pixel confusion counts for one image (or any pixel pool)."""
    if pred_mask.shape != gt_mask.shape:
        raise ValueError(
            f"seg_counts: shapes differ, {pred_mask.shape} vs {gt_mask.shape}"
        )
    _check_binary(pred_mask, "pred_mask")
    _check_binary(gt_mask, "gt_mask")
    p = pred_mask.astype(bool)
    g = gt_mask.astype(bool)
    tp = int(np.count_nonzero(p & g))
    fp = int(np.count_nonzero(p & ~g))
    fn = int(np.count_nonzero(~p & g))
    tn = int(np.count_nonzero(~p & ~g))
    return SegCounts(tp, fp, fn, tn)


def threshold_metrics(counts: SegCounts):
    """(iou, precision, recall, f1, flags); any 0/0 ratio is 0 and flagged."""
    flags = []

    def ratio(num, den, name):
        if den == 0:
            flags.append(f"degenerate_{name}")
            return 0.0
        return num / den

    iou = ratio(counts.tp, counts.tp + counts.fp + counts.fn, "iou")
    precision = ratio(counts.tp, counts.tp + counts.fp, "precision")
    recall = ratio(counts.tp, counts.tp + counts.fn, "recall")
    if precision + recall > 0:
        f1 = 2 * precision * recall / (precision + recall)
    else:
        flags.append("degenerate_f1")
        f1 = 0.0
    return iou, precision, recall, f1, flags


def ranking_metrics(scores: np.ndarray, gt_mask: np.ndarray):
    """(auc, ap, flags) over pooled per-pixel scores.

    AUC uses the Mann-Whitney rank statistic with tie correction; AP is the
    area under the precision-recall step curve over distinct thresholds.
    Single-class ground truth yields (None, None) with a flag.
    """
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    g = np.asarray(gt_mask).reshape(-1).astype(bool)
    if s.shape != g.shape:
        raise ValueError(f"ranking_metrics: {s.shape} scores vs {g.shape} mask")
    n_pos = int(np.count_nonzero(g))
    n_neg = g.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return None, None, ["single_class_gt"]

    # AUC: mean rank of positives (average ranks on ties)
    order = np.argsort(s, kind="stable")
    ranks = np.empty(s.size, dtype=np.float64)
    sorted_s = s[order]
    i = 0
    while i < s.size:
        j = i
        while j + 1 < s.size and sorted_s[j + 1] == sorted_s[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0  # average 1-based rank
        i = j + 1
    auc = (ranks[g].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)

    # AP: step-curve area over distinct thresholds, descending
    desc = np.argsort(-s, kind="stable")
    s_desc = s[desc]
    g_desc = g[desc].astype(np.float64)
    cum_tp = np.cumsum(g_desc)
    ks = np.arange(1, s.size + 1, dtype=np.float64)
    distinct = np.nonzero(np.diff(s_desc, append=-np.inf))[0]  # last index of each tie block
    prec = cum_tp[distinct] / ks[distinct]
    rec = cum_tp[distinct] / n_pos
    prev_rec = np.concatenate([[0.0], rec[:-1]])
    ap = float(np.sum((rec - prev_rec) * prec))
    return float(auc), ap, []


def depth_metrics(pred_depth: np.ndarray, gt_depth: np.ndarray,
                  valid_mask: np.ndarray | None = None):
    """(abs_rel, mae, flags) over valid pixels; gt must be positive there."""
    pred = np.asarray(pred_depth, dtype=np.float64)
    gt = np.asarray(gt_depth, dtype=np.float64)
    if valid_mask is None:
        valid = np.ones_like(gt, dtype=bool)
    else:
        valid = np.asarray(valid_mask).astype(bool)
    if not valid.any():
        return None, None, ["empty_valid_mask"]
    p, g = pred[valid], gt[valid]
    if np.any(g <= 0):
        raise ValueError("depth_metrics: ground-truth depth must be > 0 on valid pixels")
    abs_rel = float(np.mean(np.abs(p - g) / g))
    mae = float(np.mean(np.abs(p - g)))
    return abs_rel, mae, []


def wire_depth_abs_rel(pred_depth: np.ndarray, gt_depth: np.ndarray,
                       gt_wire_mask: np.ndarray, dilation_radius: int = 0):
    """Absolute relative depth error restricted to ground-truth wire pixels.

    The mask may be dilated by ``dilation_radius`` (square structuring
    element) so near-wire pixels count. Returns (value, flags); None when the
    image has no wire pixels.
    """
    mask = np.asarray(gt_wire_mask).astype(bool)
    if dilation_radius > 0:
        mask = _dilate(mask, dilation_radius)
    if not mask.any():
        return None, ["no_wire_pixels"]
    abs_rel, _, _ = depth_metrics(pred_depth, gt_depth, mask)
    return abs_rel, []


def _dilate(mask: np.ndarray, r: int) -> np.ndarray:
    out = np.zeros_like(mask)
    h, w = mask.shape[-2], mask.shape[-1]
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            ys0, ys1 = max(0, dy), min(h, h + dy)
            xs0, xs1 = max(0, dx), min(w, w + dx)
            out[..., ys0 - dy:ys1 - dy, xs0 - dx:xs1 - dx] |= mask[..., ys0:ys1, xs0:xs1]
    return out


class MetricAccumulator:
    """Mergeable per-dataset accumulator producing an EvalReport.

    Thresholded metrics micro-average pooled pixel counts; ranking metrics
    pool raw scores; abs_rel_wd averages per-image over images with wires.
    """

    def __init__(self, threshold: float = 0.5, wd_dilation: int = 0):
        self.threshold = threshold
        self.wd_dilation = wd_dilation
        self.counts = SegCounts()
        self.scores = []
        self.gts = []
        self.abs_err_sum = 0.0
        self.rel_err_sum = 0.0
        self.n_depth_px = 0
        self.wd_values = []
        self.n_samples = 0

    def add(self, wire_scores: np.ndarray, gt_mask: np.ndarray,
            pred_depth: np.ndarray, gt_depth: np.ndarray):
        pred_mask = (wire_scores >= self.threshold).astype(np.uint8)
        gt_bin = np.asarray(gt_mask).astype(np.uint8)
        self.counts = self.counts.merge(seg_counts(pred_mask, gt_bin))
        self.scores.append(np.asarray(wire_scores, dtype=np.float32).reshape(-1))
        self.gts.append(gt_bin.reshape(-1))
        p = np.asarray(pred_depth, dtype=np.float64)
        g = np.asarray(gt_depth, dtype=np.float64)
        self.abs_err_sum += float(np.abs(p - g).sum())
        self.rel_err_sum += float((np.abs(p - g) / g).sum())
        self.n_depth_px += g.size
        wd, _ = wire_depth_abs_rel(p, g, gt_bin, self.wd_dilation)
        if wd is not None:
            self.wd_values.append(wd)
        self.n_samples += 1

    def report(self) -> EvalReport:
        iou, precision, recall, f1, flags = threshold_metrics(self.counts)
        scores = np.concatenate(self.scores) if self.scores else np.zeros(0)
        gts = np.concatenate(self.gts) if self.gts else np.zeros(0)
        auc, ap, rflags = (None, None, ["no_data"]) if scores.size == 0 else \
            ranking_metrics(scores, gts)
        flags += rflags
        if self.n_depth_px:
            abs_rel = self.rel_err_sum / self.n_depth_px
            mae = self.abs_err_sum / self.n_depth_px
        else:
            abs_rel, mae = None, None
            flags.append("no_depth_pixels")
        if self.wd_values:
            abs_rel_wd = float(np.mean(self.wd_values))
        else:
            abs_rel_wd = None
            flags.append("no_wire_pixels_in_split")
        return EvalReport(iou=iou, auc=auc, ap=ap, precision=precision,
                          recall=recall, f1=f1, abs_rel=abs_rel, mae=mae,
                          abs_rel_wd=abs_rel_wd, n_samples=self.n_samples,
                          threshold=self.threshold, flags=flags)
