"""Deterministic click simulation for interactive segmentation.

The first click is the foreground point farthest from the background set
("center" of the target). Each correction click comes from the error set:
the false-positive and false-negative candidates farthest from their
complementary sets compete, and the farther one wins (false negatives win
ties). No randomness anywhere; ties break toward the lower point index.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .geometry import PointCloud, min_dists_to_set
from .model import PromptSet

FOREGROUND = 1
BACKGROUND = 0


@dataclass
class ClickState:
    gt_mask: np.ndarray
    pred_mask: np.ndarray
    prompts_so_far: list[tuple[int, int]] = field(default_factory=list)


def _argmax_tiebreak_low(values: np.ndarray) -> int:
    return int(np.argmax(values))  # np.argmax returns the first maximum


def first_click(gt_mask: np.ndarray, points: np.ndarray) -> tuple[int, int]:
    """Foreground point maximizing distance to background; (index, label)."""
    gt_mask = np.asarray(gt_mask, dtype=bool)
    fg = np.flatnonzero(gt_mask)
    if fg.size == 0:
        raise ValueError("ground-truth mask has no foreground")
    bg = np.flatnonzero(~gt_mask)
    if bg.size == 0:
        centroid = points.mean(axis=0)
        d = ((points - centroid) ** 2).sum(axis=1)
        return int(np.argmin(d)), FOREGROUND
    d = min_dists_to_set(points[fg], points[bg])
    return int(fg[_argmax_tiebreak_low(d)]), FOREGROUND


def _error_candidate(err_idx: np.ndarray, points: np.ndarray):
    """(index, distance^2 to the complementary set) for the farthest error point."""
    comp = np.ones(points.shape[0], dtype=bool)
    comp[err_idx] = False
    comp_idx = np.flatnonzero(comp)
    if comp_idx.size == 0:
        # everything is an error point: fall back to the lowest index at +inf
        return int(err_idx[0]), np.inf
    d = min_dists_to_set(points[err_idx], points[comp_idx])
    j = _argmax_tiebreak_low(d)
    return int(err_idx[j]), float(d[j])


def next_click(gt_mask: np.ndarray, pred_mask: np.ndarray, points: np.ndarray) -> tuple[int, int]:
    """Correction click: farthest-from-complement error point; FN beats FP on ties."""
    gt_mask = np.asarray(gt_mask, dtype=bool)
    pred_mask = np.asarray(pred_mask, dtype=bool)
    fp = np.flatnonzero(pred_mask & ~gt_mask)
    fn = np.flatnonzero(~pred_mask & gt_mask)
    if fp.size == 0 and fn.size == 0:
        raise ValueError("prediction equals ground truth; nothing to correct")
    fn_cand = _error_candidate(fn, points) if fn.size else (None, -np.inf)
    fp_cand = _error_candidate(fp, points) if fp.size else (None, -np.inf)
    if fn_cand[1] >= fp_cand[1]:
        return fn_cand[0], FOREGROUND
    return fp_cand[0], BACKGROUND


def interact(model, cloud: PointCloud, gt_mask: np.ndarray, k: int, session=None) -> list[float]:
    """Run the k-click protocol and return the IoU after each click.

    Click 1 is the mask center; the prediction is multimask and the output
    with the highest predicted IoU is kept. From click 2 on, the previous
    best logits ride along as a mask prompt and a single mask is decoded.
    Once the prediction matches the ground truth exactly, the IoU is carried
    forward (there is no error point left to click).
    """
    from .evaluate import mask_iou

    if k < 1:
        raise ValueError("k must be >= 1")
    gt_mask = np.asarray(gt_mask, dtype=bool)
    with ag.no_grad():
        if session is None:
            session = model.start_session(cloud)
        idx, label = first_click(gt_mask, session.cloud.points)
        prompts = session.prompts_from_indices([idx], [label])
        pred = session.predict(prompts)
        best = pred.best_index()
        logits = pred.mask_logits[best].copy()
        mask = logits > 0
        ious = [mask_iou(mask, gt_mask)]
        for _ in range(1, k):
            if np.array_equal(mask, gt_mask):
                ious.append(ious[-1])
                continue
            idx, label = next_click(gt_mask, mask, session.cloud.points)
            prompts = prompts.extended(session.cloud.points[idx], label)
            prompts.mask_logits = logits
            pred = session.predict(prompts)
            logits = pred.mask_logits[0].copy()
            mask = logits > 0
            ious.append(mask_iou(mask, gt_mask))
    return ious
