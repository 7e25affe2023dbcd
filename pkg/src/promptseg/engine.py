"""Pseudo-label generation: a pluggable 2D segmenter oracle proposes per-view
masks, a first-view refinement loop turns each into a 3D mask via lifted
prompts, and the remaining views verify and refine it (discarding proposals
the other views contradict). Survivors are deduplicated with mask NMS.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol

import numpy as np
from scipy import ndimage

from . import autograd as ag
from .evaluate import Proposal, mask_iou, mask_nms
from .geometry import PointCloud
from .render import Camera, ViewRender, project_mask, render_views


class ViewOracle(Protocol):
    """2D segmenter stand-in. ``proposals`` seeds the pipeline with diverse
    masks per view; ``candidates`` answers a point prompt with multiple masks
    (the caller picks the best against its own projection)."""

    def proposals(self, view_id: int, render: ViewRender) -> list[np.ndarray]: ...

    def candidates(self, view_id: int, render: ViewRender, pixel: tuple[int, int]) -> list[np.ndarray]: ...


class GtPartOracle:
    """Oracle backed by ground-truth part masks, optionally corrupted by
    partial one-pixel dilation or erosion (a random fraction of the boundary
    flips) to mimic 2D segmenter noise."""

    def __init__(
        self,
        parts: list[np.ndarray],
        noise: float = 0.0,
        rng: np.random.Generator | None = None,
        strength: float = 0.3,
    ):
        self.parts = [np.asarray(p, dtype=bool) for p in parts]
        self.noise = noise
        self.strength = strength
        self.rng = rng if rng is not None else np.random.default_rng(0)

    def _corrupt(self, mask2d: np.ndarray) -> np.ndarray:
        if self.noise <= 0.0 or self.rng.random() >= self.noise:
            return mask2d
        if self.rng.random() < 0.5:
            morphed = ndimage.binary_dilation(mask2d, iterations=1)
        else:
            morphed = ndimage.binary_erosion(mask2d, iterations=1)
        changed = morphed ^ mask2d
        flip = changed & (self.rng.random(mask2d.shape) < self.strength)
        out = mask2d ^ flip
        return out if out.any() else mask2d

    def _view_masks(self, render: ViewRender) -> list[np.ndarray]:
        out = []
        for part in self.parts:
            m = project_mask(part, render)
            if m.any():
                m = self._corrupt(m)
                if m.any():
                    out.append(m)
        return out

    def proposals(self, view_id: int, render: ViewRender) -> list[np.ndarray]:
        return self._view_masks(render)

    def candidates(self, view_id: int, render: ViewRender, pixel: tuple[int, int]) -> list[np.ndarray]:
        return self._view_masks(render)


class EchoOracle:
    """Returns the queried projection itself; useful as a best-case bound."""

    def __init__(self, renders_project=project_mask):
        self._last: np.ndarray | None = None

    def proposals(self, view_id: int, render: ViewRender) -> list[np.ndarray]:
        return []

    def set_echo(self, mask2d: np.ndarray):
        self._last = mask2d

    def candidates(self, view_id: int, render: ViewRender, pixel) -> list[np.ndarray]:
        return [self._last] if self._last is not None else []


def sample_error_prompt(prop2d: np.ndarray, proj2d: np.ndarray, valid: np.ndarray, rng: np.random.Generator):
    """Uniform pixel from the symmetric difference restricted to rendered pixels.

    Returns ``((row, col), label)`` with label 1 where the proposal wants
    foreground (false negative) and 0 where it wants background (false
    positive), or ``None`` once the projection matches the proposal.
    """
    fp = proj2d & ~prop2d & valid
    fn = prop2d & ~proj2d & valid
    err = fp | fn
    n_err = int(err.sum())
    if n_err == 0:
        return None
    flat = np.flatnonzero(err.ravel())
    pick = int(flat[int(rng.integers(n_err))])
    row, col = divmod(pick, err.shape[1])
    label = 1 if fn[row, col] else 0
    return (row, col), label


@dataclass
class RefineResult:
    mask: np.ndarray
    logits: np.ndarray
    iou2d: float
    iterations: int
    score: float  # model-predicted IoU of the final mask


def _predict_masked(session, prompts, logits):
    prompts.mask_logits = logits
    pred = session.predict(prompts)
    if pred.multimask:
        best = pred.best_index()
        return pred.mask_logits[best].copy(), float(pred.iou_pred[best])
    return pred.mask_logits[0].copy(), float(pred.iou_pred[0])


def refine_first_view(
    session,
    prop2d: np.ndarray,
    view: ViewRender,
    rng: np.random.Generator,
    accept_iou: float = 0.9,
    max_iters: int = 8,
    start_logits: np.ndarray | None = None,
    start_score: float = 0.0,
    keep_best: bool = False,
) -> RefineResult | None:
    """Lift prompts sampled from the 2D proposal (then from the error region)
    until the 3D mask's projection agrees with it.

    Without ``keep_best`` the proposal is discarded when agreement never
    reaches ``accept_iou`` (the seeding semantics). With it, the best state
    seen, including the incoming one, survives (best-effort refinement for
    views that already passed verification).
    """
    if not prop2d.any():
        return None
    valid = view.valid
    from .model import PromptSet

    prompts: PromptSet | None = None
    logits = start_logits
    proj = project_mask(logits > 0, view) if logits is not None else np.zeros_like(prop2d)
    best: RefineResult | None = None
    if logits is not None and (logits > 0).any():
        best = RefineResult(mask=logits > 0, logits=logits, iou2d=mask_iou(proj, prop2d), iterations=0, score=start_score)
    for it in range(1, max_iters + 1):
        if prompts is None:
            seed = prop2d & valid
            if not seed.any():
                return best if keep_best else None
            flat = np.flatnonzero(seed.ravel())
            pick = int(flat[int(rng.integers(flat.size))])
            row, col = divmod(pick, prop2d.shape[1])
            label = 1
        else:
            picked = sample_error_prompt(prop2d, proj, valid, rng)
            if picked is None:  # projection already matches
                break
            (row, col), label = picked
        point_idx = int(view.index[row, col])
        coord = session.cloud.points[point_idx]
        prompts = (
            session.prompts_from_indices([point_idx], [label])
            if prompts is None
            else prompts.extended(coord, label)
        )
        with ag.no_grad():
            logits, score = _predict_masked(session, prompts, logits)
        mask = logits > 0
        proj = project_mask(mask, view)
        iou2d = mask_iou(proj, prop2d)
        if mask.any() and (best is None or iou2d > best.iou2d):
            best = RefineResult(mask=mask, logits=logits, iou2d=iou2d, iterations=it, score=score)
        if iou2d >= accept_iou:
            return RefineResult(mask=mask, logits=logits, iou2d=iou2d, iterations=it, score=score)
    return best if keep_best else None


def refine_other_view(
    session,
    result: RefineResult,
    view_id: int,
    view: ViewRender,
    oracle: ViewOracle,
    rng: np.random.Generator,
    verify_iou: float = 0.5,
    accept_iou: float = 0.9,
    max_iters: int = 8,
) -> RefineResult | None:
    """Verify a 3D proposal in another view and refine it against the
    oracle's best-matching 2D mask; ``None`` discards the proposal.

    A view where the proposal projects to nothing offers no evidence and
    leaves the proposal untouched.
    """
    proj = project_mask(result.mask, view)
    if not proj.any():
        return result
    seed = np.flatnonzero(proj.ravel())
    pick = int(seed[int(rng.integers(seed.size))])
    row, col = divmod(pick, proj.shape[1])
    cands = oracle.candidates(view_id, view, (row, col))
    if not cands:
        return result
    ious = [mask_iou(c, proj) for c in cands]
    best = int(np.argmax(ious))
    if ious[best] < verify_iou:
        return None
    prop2d = cands[best]
    if mask_iou(proj, prop2d) >= accept_iou:  # already consistent
        return RefineResult(result.mask, result.logits, ious[best], 0, result.score)
    # verification passed: refinement is best-effort, the proposal survives
    return refine_first_view(
        session,
        prop2d,
        view,
        rng,
        accept_iou=accept_iou,
        max_iters=max_iters,
        start_logits=result.logits,
        start_score=result.score,
        keep_best=True,
    )


@dataclass
class PseudoLabelConfig:
    accept_iou: float = 0.9
    verify_iou: float = 0.5
    max_iters: int = 8
    nms_thresh: float = 0.7
    splat_radius: int = 2
    cross_view: bool = True
    max_proposals_per_view: int | None = None


def generate_pseudo_labels(
    model,
    cloud: PointCloud,
    oracle: ViewOracle,
    cameras: list[Camera],
    rng: np.random.Generator,
    config: PseudoLabelConfig | None = None,
) -> tuple[list[np.ndarray], dict]:
    """Full engine pass over one cloud; returns surviving masks + provenance."""
    cfg = config or PseudoLabelConfig()
    renders = render_views(cloud, cameras, splat_radius=cfg.splat_radius)
    with ag.no_grad():
        session = model.start_session(cloud)
    survivors: list[Proposal] = []
    provenance = {"views": len(renders), "attempted": 0, "first_view_ok": 0, "cross_view_ok": 0, "records": []}

    for view_id, render in enumerate(renders):
        props = oracle.proposals(view_id, render)
        if cfg.max_proposals_per_view is not None:
            props = props[: cfg.max_proposals_per_view]
        for prop2d in props:
            provenance["attempted"] += 1
            result = refine_first_view(
                session, prop2d, render, rng, accept_iou=cfg.accept_iou, max_iters=cfg.max_iters
            )
            if result is None:
                continue
            provenance["first_view_ok"] += 1
            record = {"view": view_id, "first_iou2d": result.iou2d, "iterations": [result.iterations]}
            if cfg.cross_view:
                ok = True
                for other_id, other in enumerate(renders):
                    if other_id == view_id:
                        continue
                    result = refine_other_view(
                        session,
                        result,
                        other_id,
                        other,
                        oracle,
                        rng,
                        verify_iou=cfg.verify_iou,
                        accept_iou=cfg.accept_iou,
                        max_iters=cfg.max_iters,
                    )
                    if result is None:
                        ok = False
                        break
                    record["iterations"].append(result.iterations)
                if not ok:
                    continue
            provenance["cross_view_ok"] += 1
            record["final_iou2d"] = result.iou2d
            record["score"] = result.score
            provenance["records"].append(record)
            if result.mask.any():
                survivors.append(Proposal(mask=result.mask, score=result.score, prompt_index=view_id))

    kept = mask_nms(survivors, cfg.nms_thresh)
    provenance["kept"] = len(kept)
    return [p.mask for p in kept], provenance
