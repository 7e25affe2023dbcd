"""Mask losses: focal, dice, and the min-over-masks multimask objective."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor


@dataclass
class LossWeights:
    # dice must carry real weight at desk scale: with focal-dominant weights a
    # from-scratch model parks in the cheap all-background/all-foreground pair
    focal_weight: float = 1.0
    dice_weight: float = 4.0
    iou_weight: float = 1.0
    gamma: float = 2.0
    alpha: float = 0.5

    def __post_init__(self):
        if self.focal_weight == 0 and self.dice_weight == 0 and self.iou_weight == 0:
            raise ValueError("all loss weights are zero")


def focal_loss(logits: Tensor, gt: np.ndarray, gamma: float = 2.0, alpha: float = 0.25) -> Tensor:
    """Mean of -alpha_t * (1 - p_t)^gamma * log(p_t) over points.

    Computed from log-sigmoid pieces so large logits stay finite. With
    gamma=0 and alpha=0.5 this is exactly half the binary cross-entropy.
    """
    g = Tensor(np.asarray(gt, dtype=logits.data.dtype))
    log_p = -ag.softplus(-logits)
    log_1p = -ag.softplus(logits)
    log_pt = g * log_p + (1.0 - g) * log_1p
    alpha_t = ag.scale(g, alpha) + ag.scale(1.0 - g, 1.0 - alpha)
    if gamma == 0.0:
        per_point = -(alpha_t * log_pt)
    else:
        pt = ag.exp(log_pt)
        per_point = -(alpha_t * ag.pow_(1.0 - pt, gamma) * log_pt)
    return ag.mean_over(per_point)


def dice_loss(logits: Tensor, gt: np.ndarray, smooth: float = 1.0) -> Tensor:
    g = Tensor(np.asarray(gt, dtype=logits.data.dtype))
    p = ag.sigmoid(logits)
    inter = ag.sum_over(p * g)
    denom = ag.sum_over(p) + float(np.asarray(gt, dtype=np.float64).sum())
    return 1.0 - (ag.scale(inter, 2.0) + smooth) / (denom + smooth)


def mask_loss(logits: Tensor, gt: np.ndarray, weights: LossWeights) -> Tensor:
    return ag.scale(focal_loss(logits, gt, weights.gamma, weights.alpha), weights.focal_weight) + ag.scale(
        dice_loss(logits, gt), weights.dice_weight
    )


def actual_iou(pred_mask: np.ndarray, gt: np.ndarray) -> float:
    inter = np.logical_and(pred_mask, gt).sum()
    union = np.logical_or(pred_mask, gt).sum()
    return 1.0 if union == 0 else float(inter) / float(union)


def hindsight_multimask_loss(pred, gt: np.ndarray, weights: LossWeights):
    """Min over output masks of the focal+dice term, plus the IoU-head MSE on
    every output mask (targets are the thresholded masks' true IoUs).

    Returns ``(loss, info)`` where info carries the winning index, the mask
    and IoU terms, and the per-mask losses for inspection.
    """
    gt = np.asarray(gt, dtype=bool)
    n_masks = pred.n_masks
    per_mask = [mask_loss(pred.logits_t[m], gt, weights) for m in range(n_masks)]
    argmin = int(np.argmin([t.item() for t in per_mask]))
    mask_term = per_mask[argmin]

    targets = np.array([actual_iou(pred.mask_logits[m] > 0, gt) for m in range(n_masks)], dtype=np.float32)
    err = pred.iou_t - Tensor(targets)
    iou_term = ag.mean_over(err * err)

    total = mask_term + ag.scale(iou_term, weights.iou_weight)
    info = {
        "argmin": argmin,
        "mask_term": mask_term.item(),
        "iou_term": iou_term.item(),
        "per_mask": [t.item() for t in per_mask],
        "iou_targets": targets,
    }
    return total, info
