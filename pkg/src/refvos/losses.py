"""Training objectives.

Text reconstruction uses relational cycle consistency: the pairwise-distance
and angle structure of the original sentence embeddings must survive the
text-video-text round trip. Both relational terms run the Huber loss over
unordered tuples and normalize by tuple count; distances normalize by each
set's own mean pairwise distance, which makes the loss invariant to
similarity transforms. Segmentation follows the set-prediction recipe:
Hungarian matching on a per-video cost, then dice+BCE masks, focal
confidence, and GIoU+L1 boxes on the matched slot. All expression-dependent
terms gate on the ground-truth consensus flag.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from scipy.optimize import linear_sum_assignment

from .config import RunConfig

_MU_FLOOR = 1e-8
_EDGE_EPS = 1e-12


@dataclass
class LossWeights:
    lambda_text: float = 0.5
    lambda_segm: float = 1.0
    lambda_align: float = 0.5
    lambda_angle: float = 1.0
    lambda_mask: float = 2.0
    lambda_conf: float = 2.0
    giou_weight: float = 2.0
    l1_weight: float = 5.0
    constraint: str = "rd+ra"
    focal_alpha: float = 0.25
    focal_gamma: float = 2.0

    @classmethod
    def from_run(cls, cfg: RunConfig) -> "LossWeights":
        return cls(
            lambda_text=cfg["loss.lambda_text"],
            lambda_segm=cfg["loss.lambda_segm"],
            lambda_align=cfg["loss.lambda_align"],
            lambda_angle=cfg["loss.lambda_angle"],
            lambda_mask=cfg["loss.lambda_mask"],
            lambda_conf=cfg["loss.lambda_conf"],
            giou_weight=cfg["loss.giou_weight"],
            l1_weight=cfg["loss.l1_weight"],
            constraint=cfg["loss.constraint"],
        )


def huber(x, x_prime):
    """Quadratic within unit residual, linear beyond."""
    diff = torch.abs(torch.as_tensor(x) - torch.as_tensor(x_prime))
    return torch.where(diff <= 1.0, 0.5 * diff * diff, diff - 0.5)


def _pair_distances(embeddings: torch.Tensor) -> torch.Tensor:
    """Euclidean distances over unordered index pairs i<j, flattened."""
    return torch.pdist(embeddings)


def dist_loss(E: torch.Tensor, E_prime: torch.Tensor) -> torch.Tensor:
    """Distance-structure mismatch between embedding sets (n, d).

    Each set's distances normalize by its own mean pairwise distance, so any
    similarity transform of either set leaves the loss at zero. Fewer than 2
    points yields 0."""
    if E.shape[0] < 2:
        return E.sum() * 0.0
    d = _pair_distances(E)
    d_prime = _pair_distances(E_prime)
    mu = torch.clamp(d.mean(), min=_MU_FLOOR)
    mu_prime = torch.clamp(d_prime.mean(), min=_MU_FLOOR)
    return huber(d / mu, d_prime / mu_prime).mean()


def _triple_cosines(embeddings: torch.Tensor) -> torch.Tensor:
    """cos of the angle at e_j for every unordered triple i<j<k.

    Degenerate edges (coincident points) contribute a constant 0 with no
    gradient."""
    n = embeddings.shape[0]
    idx = torch.combinations(torch.arange(n, device=embeddings.device), r=3)
    i, j, k = idx[:, 0], idx[:, 1], idx[:, 2]
    a = embeddings[i] - embeddings[j]
    b = embeddings[k] - embeddings[j]
    na = a.norm(dim=1)
    nb = b.norm(dim=1)
    degenerate = (na < _EDGE_EPS) | (nb < _EDGE_EPS)
    safe_na = torch.where(degenerate, torch.ones_like(na), na)
    safe_nb = torch.where(degenerate, torch.ones_like(nb), nb)
    cos = (a * b).sum(dim=1) / (safe_na * safe_nb)
    return torch.where(degenerate, torch.zeros_like(cos), cos)


def angle_loss(E: torch.Tensor, E_prime: torch.Tensor) -> torch.Tensor:
    """Angle-structure mismatch over unordered triples; 0 below 3 points."""
    if E.shape[0] < 3:
        return E.sum() * 0.0
    return huber(_triple_cosines(E), _triple_cosines(E_prime)).mean()


def pointwise_loss(E: torch.Tensor, E_prime: torch.Tensor) -> torch.Tensor:
    """Ablation baseline: summed squared point-to-point distances."""
    return ((E - E_prime) ** 2).sum()


@dataclass
class TextLossParts:
    total: torch.Tensor
    dist: torch.Tensor
    angle: torch.Tensor
    degenerate: bool  # too few positives for some enabled term


def text_loss(
    E: torch.Tensor,
    E_prime: torch.Tensor,
    positive: torch.Tensor,
    lambda_angle: float = 1.0,
    constraint: str = "rd+ra",
) -> TextLossParts:
    """Cycle-consistency loss over the positive subset of a batch.

    E, E_prime: (B, d); positive: (B,) bool consensus flags. The constraint
    selects which terms are active: rd (distance), ra (angle), rd+ra, pw
    (point-wise baseline), or none."""
    zero = E.sum() * 0.0
    pos_E = E[positive]
    pos_E_prime = E_prime[positive]
    n = pos_E.shape[0]
    if constraint == "none" or n == 0:
        return TextLossParts(zero, zero, zero, degenerate=n == 0 and constraint != "none")
    if constraint == "pw":
        return TextLossParts(pointwise_loss(pos_E, pos_E_prime), zero, zero, False)
    use_dist = constraint in ("rd", "rd+ra")
    use_angle = constraint in ("ra", "rd+ra")
    d = dist_loss(pos_E, pos_E_prime) if use_dist else zero
    a = angle_loss(pos_E, pos_E_prime) if use_angle else zero
    degenerate = (use_dist and n < 2) or (use_angle and n < 3)
    return TextLossParts(d + lambda_angle * a, d, a, degenerate)


# ---------------------------------------------------------------------------
# segmentation terms

def dice_bce(logits: torch.Tensor, target: torch.Tensor, eps: float = 1.0) -> torch.Tensor:
    """Dice + mean BCE per leading index; logits/target (..., H, W)."""
    prob = torch.sigmoid(logits)
    target = target.to(logits.dtype)
    inter = (prob * target).sum(dim=(-2, -1))
    total = prob.sum(dim=(-2, -1)) + target.sum(dim=(-2, -1))
    dice = 1.0 - (2.0 * inter + eps) / (total + eps)
    bce = F.binary_cross_entropy_with_logits(logits, target, reduction="none").mean(dim=(-2, -1))
    return dice + bce


def mask_loss(logits: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Mean dice+BCE over frames; logits/target (T, H, W)."""
    return dice_bce(logits, target).mean()


def focal_terms(
    logits: torch.Tensor, targets: torch.Tensor, alpha: float = 0.25, gamma: float = 2.0
) -> torch.Tensor:
    """Elementwise binary focal loss; targets in {0, 1}."""
    targets = targets.to(logits.dtype)
    log_p = F.logsigmoid(logits)
    log_not_p = F.logsigmoid(-logits)
    p = torch.sigmoid(logits)
    pos = -alpha * (1.0 - p) ** gamma * log_p
    neg = -(1.0 - alpha) * p**gamma * log_not_p
    return targets * pos + (1.0 - targets) * neg


def conf_loss(
    scores: torch.Tensor, target_slot: int, alpha: float = 0.25, gamma: float = 2.0
) -> torch.Tensor:
    """Focal loss over N slot logits with one positive slot; mean over slots."""
    targets = torch.zeros_like(scores)
    targets[..., target_slot] = 1.0
    return focal_terms(scores, targets, alpha, gamma).mean()


def box_cxcywh_to_xyxy(boxes: torch.Tensor) -> torch.Tensor:
    cx, cy, w, h = boxes.unbind(-1)
    return torch.stack([cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2], dim=-1)


def box_xyxy_to_cxcywh(boxes: torch.Tensor) -> torch.Tensor:
    x1, y1, x2, y2 = boxes.unbind(-1)
    return torch.stack([(x1 + x2) / 2, (y1 + y2) / 2, x2 - x1, y2 - y1], dim=-1)


def generalized_iou(boxes1: torch.Tensor, boxes2: torch.Tensor) -> torch.Tensor:
    """Elementwise GIoU for xyxy boxes with x2>=x1, y2>=y1."""
    x1 = torch.maximum(boxes1[..., 0], boxes2[..., 0])
    y1 = torch.maximum(boxes1[..., 1], boxes2[..., 1])
    x2 = torch.minimum(boxes1[..., 2], boxes2[..., 2])
    y2 = torch.minimum(boxes1[..., 3], boxes2[..., 3])
    inter = (x2 - x1).clamp(min=0) * (y2 - y1).clamp(min=0)
    area1 = (boxes1[..., 2] - boxes1[..., 0]) * (boxes1[..., 3] - boxes1[..., 1])
    area2 = (boxes2[..., 2] - boxes2[..., 0]) * (boxes2[..., 3] - boxes2[..., 1])
    union = area1 + area2 - inter
    ex1 = torch.minimum(boxes1[..., 0], boxes2[..., 0])
    ey1 = torch.minimum(boxes1[..., 1], boxes2[..., 1])
    ex2 = torch.maximum(boxes1[..., 2], boxes2[..., 2])
    ey2 = torch.maximum(boxes1[..., 3], boxes2[..., 3])
    enclosure = (ex2 - ex1) * (ey2 - ey1)
    iou = inter / union
    return iou - (enclosure - union) / enclosure


def box_loss(
    pred: torch.Tensor, gt: torch.Tensor, giou_weight: float = 1.0, l1_weight: float = 1.0
) -> torch.Tensor:
    """(1 - GIoU) + L1 over normalized (cx, cy, w, h); weights fold in the
    conventional 2x/5x balance when called from the matching cost."""
    giou = generalized_iou(box_cxcywh_to_xyxy(pred), box_cxcywh_to_xyxy(gt))
    l1 = torch.abs(pred - gt).sum(dim=-1)
    return giou_weight * (1.0 - giou) + l1_weight * l1


def hungarian_match(cost) -> list:
    """Minimum-cost one-to-one assignment for an (N, G) cost matrix.

    Returns [(slot, target), ...] sorted by target index; unmatched slots are
    implicit no-object predictions."""
    cost_t = torch.as_tensor(cost)
    if not torch.isfinite(cost_t).all():
        raise ValueError("matching cost must be finite")
    rows, cols = linear_sum_assignment(cost_t.detach().cpu().numpy())
    pairs = sorted(zip(rows.tolist(), cols.tolist()), key=lambda rc: rc[1])
    return pairs


def match_cost_matrix(
    masks: torch.Tensor,
    boxes: torch.Tensor,
    scores: torch.Tensor,
    gt_masks: torch.Tensor,
    gt_boxes: torch.Tensor,
    weights: LossWeights,
) -> torch.Tensor:
    """Per-slot matching cost summed over frames, single referent.

    masks (T, N, H, W), boxes (T, N, 4), scores (T, N), gt_masks (T, H, W),
    gt_boxes (T, 4) -> (N, 1)."""
    T, N = scores.shape
    with torch.no_grad():
        mask_c = dice_bce(masks, gt_masks[:, None].expand_as(masks)).sum(dim=0)  # (N,)
        box_c = box_loss(
            boxes, gt_boxes[:, None, :], weights.giou_weight, weights.l1_weight
        ).sum(dim=0)
        conf_c = focal_terms(
            scores, torch.ones_like(scores), weights.focal_alpha, weights.focal_gamma
        ).sum(dim=0)
        cost = weights.lambda_mask * mask_c + box_c + weights.lambda_conf * conf_c
    return cost[:, None]


def segm_loss(
    masks: torch.Tensor,
    boxes: torch.Tensor,
    scores: torch.Tensor,
    gt_masks: torch.Tensor,
    gt_boxes: torch.Tensor,
    weights: LossWeights,
):
    """Hungarian-matched segmentation loss for one positive pair, averaged
    over frames. Returns (loss, matched_slot)."""
    pairs = hungarian_match(match_cost_matrix(masks, boxes, scores, gt_masks, gt_boxes, weights))
    slot = pairs[0][0]
    mask_term = mask_loss(masks[:, slot], gt_masks)
    box_term = box_loss(
        boxes[:, slot], gt_boxes, weights.giou_weight, weights.l1_weight
    ).mean()
    conf_term = torch.stack(
        [
            conf_loss(scores[t], slot, weights.focal_alpha, weights.focal_gamma)
            for t in range(scores.shape[0])
        ]
    ).mean()
    loss = weights.lambda_mask * mask_term + box_term + weights.lambda_conf * conf_term
    return loss, slot


@dataclass
class LossBreakdown:
    total: torch.Tensor
    text: torch.Tensor
    dist: torch.Tensor
    angle: torch.Tensor
    segm: torch.Tensor
    align: torch.Tensor
    degenerate_text: bool

    def columns(self) -> dict:
        return {
            "L_text": float(self.text.detach()),
            "L_dist": float(self.dist.detach()),
            "L_angle": float(self.angle.detach()),
            "L_segm": float(self.segm.detach()),
            "L_align": float(self.align.detach()),
            "total": float(self.total.detach()),
        }


def compute_losses(outputs: dict, batch: dict, weights: LossWeights) -> LossBreakdown:
    """Total training loss for one batch.

    batch: gt_masks (B, T, H, W) float, gt_boxes (B, T, 4) normalized cxcywh,
    positive (B,) bool. Segmentation and text terms gate on the positive
    flags; alignment BCE covers every pair."""
    positive = batch["positive"]
    parts = text_loss(
        outputs["e"],
        outputs["e_prime"],
        positive,
        lambda_angle=weights.lambda_angle,
        constraint=weights.constraint,
    )
    zero = outputs["alignment"].sum() * 0.0
    segm_terms = []
    for b in range(positive.shape[0]):
        if not bool(positive[b]):
            continue
        loss_b, _ = segm_loss(
            outputs["masks"][b],
            outputs["boxes"][b],
            outputs["scores"][b],
            batch["gt_masks"][b],
            batch["gt_boxes"][b],
            weights,
        )
        segm_terms.append(loss_b)
    segm = torch.stack(segm_terms).mean() if segm_terms else zero
    align = F.binary_cross_entropy_with_logits(
        outputs["alignment"], positive.to(outputs["alignment"].dtype)
    )
    total = weights.lambda_text * parts.total + weights.lambda_segm * segm + weights.lambda_align * align
    breakdown = LossBreakdown(total, parts.total, parts.dist, parts.angle, segm, align, parts.degenerate)
    for name in ("total", "text", "segm", "align"):
        value = getattr(breakdown, name)
        if not torch.isfinite(value).all():
            raise FloatingPointError(
                f"non-finite loss term {name}: "
                + " ".join(f"{k}={v:.4g}" for k, v in breakdown.columns().items())
            )
    return breakdown
