"""Evaluation: region similarity J, boundary accuracy F, the negative-video
false-alarm measure R, and consensus-classification accuracy/AUC.

J and F average over positive pairs only; R compares total predicted
foreground between negative and positive pairs, so a model that treats every
negative video as background scores R = 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.stats import rankdata

_CROSS = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)


def region_J(pred: np.ndarray, gt: np.ndarray) -> float:
    """Intersection-over-union of two binary masks; both empty count as 1."""
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {gt.shape}")
    union = np.logical_or(pred, gt).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(pred, gt).sum() / union)


def _boundary(mask: np.ndarray) -> np.ndarray:
    """4-connected erosion difference; frame-edge object pixels count."""
    return mask & ~ndimage.binary_erosion(mask, structure=_CROSS, border_value=0)


def _disk(radius: int) -> np.ndarray:
    grid = np.arange(-radius, radius + 1)
    yy, xx = np.meshgrid(grid, grid, indexing="ij")
    return yy * yy + xx * xx <= radius * radius


def contour_F(pred: np.ndarray, gt: np.ndarray, tolerance_factor: float = 0.008) -> float:
    """Boundary F-measure with a match radius of ceil(factor * diagonal)."""
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {gt.shape}")
    pred_any, gt_any = pred.any(), gt.any()
    if not pred_any and not gt_any:
        return 1.0
    if pred_any != gt_any:
        return 0.0
    radius = math.ceil(tolerance_factor * math.hypot(*pred.shape))
    disk = _disk(radius)
    pred_b = _boundary(pred)
    gt_b = _boundary(gt)
    gt_dil = ndimage.binary_dilation(gt_b, structure=disk)
    pred_dil = ndimage.binary_dilation(pred_b, structure=disk)
    precision = (pred_b & gt_dil).sum() / pred_b.sum()
    recall = (gt_b & pred_dil).sum() / gt_b.sum()
    if precision + recall == 0:
        return 0.0
    return float(2 * precision * recall / (precision + recall))


def video_J(pred_masks: np.ndarray, gt_masks: np.ndarray) -> float:
    """Mean per-frame J over a (T, H, W) clip."""
    return float(np.mean([region_J(p, g) for p, g in zip(pred_masks, gt_masks)]))


def video_F(pred_masks: np.ndarray, gt_masks: np.ndarray) -> float:
    return float(np.mean([contour_F(p, g) for p, g in zip(pred_masks, gt_masks)]))


def false_alarm_R(neg_area: float, pos_area: float):
    """1 - (negative foreground) / (positive foreground); None when the
    normalization term vanishes."""
    if pos_area <= 0:
        return None
    return 1.0 - neg_area / pos_area


def consensus_metrics(probs, labels):
    """Accuracy at threshold 0.5 and rank-statistic AUC (ties count 1/2).

    labels are consensus flags; AUC is None for a single-class label set."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=bool)
    predicted = probs > 0.5
    accuracy = float((predicted == labels).mean())
    n_pos = int(labels.sum())
    n_neg = int((~labels).sum())
    if n_pos == 0 or n_neg == 0:
        return accuracy, None
    ranks = rankdata(probs)  # average ranks give ties a half count
    auc = (ranks[labels].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg)
    return accuracy, float(auc)


@dataclass
class MetricsReport:
    J_mean: float
    F_mean: float
    JF_mean: float
    R: float | None
    JF_R_mean: float | None
    consensus_accuracy: float
    consensus_AUC: float | None
    num_positive: int
    num_negative: int

    def summary_lines(self) -> list:
        def fmt(x):
            return "missing" if x is None else f"{x:.4f}"

        return [
            f"J_mean\t{fmt(self.J_mean)}",
            f"F_mean\t{fmt(self.F_mean)}",
            f"JF_mean\t{fmt(self.JF_mean)}",
            f"R\t{fmt(self.R)}",
            f"JF_R_mean\t{fmt(self.JF_R_mean)}",
            f"consensus_accuracy\t{fmt(self.consensus_accuracy)}",
            f"consensus_AUC\t{fmt(self.consensus_AUC)}",
            f"num_positive\t{self.num_positive}",
            f"num_negative\t{self.num_negative}",
        ]


def build_report(pair_rows: list) -> MetricsReport:
    """Aggregate per-pair rows into the final report.

    Each row: dict with is_positive, J, F (positives only), pred_area, and
    optionally prob (consensus probability)."""
    pos_rows = [r for r in pair_rows if r["is_positive"]]
    neg_rows = [r for r in pair_rows if not r["is_positive"]]
    J = float(np.mean([r["J"] for r in pos_rows])) if pos_rows else 0.0
    Fm = float(np.mean([r["F"] for r in pos_rows])) if pos_rows else 0.0
    R = false_alarm_R(
        sum(r["pred_area"] for r in neg_rows), sum(r["pred_area"] for r in pos_rows)
    )
    probs = [r["prob"] for r in pair_rows if r.get("prob") is not None]
    labels = [r["is_positive"] for r in pair_rows if r.get("prob") is not None]
    if probs:
        accuracy, auc = consensus_metrics(probs, labels)
    else:
        accuracy, auc = 0.0, None
    return MetricsReport(
        J_mean=J,
        F_mean=Fm,
        JF_mean=(J + Fm) / 2,
        R=R,
        JF_R_mean=None if R is None else (J + Fm + R) / 3,
        consensus_accuracy=accuracy,
        consensus_AUC=auc,
        num_positive=len(pos_rows),
        num_negative=len(neg_rows),
    )
