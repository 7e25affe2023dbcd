"""Evaluation harnesses: IoU-after-k-clicks, whole-shape proposal generation
with point-wise mask NMS, average recall, and the patch-configuration sweep.
"""

from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .clicks import interact
from .geometry import PointCloud, farthest_point_sample, knn_indices
from .model import PromptSet

DEFAULT_KS = (1, 3, 5, 7, 10)


def mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    """|a and b| / |a or b|; two empty masks count as identical (1.0)."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise ValueError(f"mask shapes differ: {a.shape} vs {b.shape}")
    union = np.logical_or(a, b).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(a, b).sum()) / float(union)


@dataclass
class EvalInstance:
    cloud: PointCloud
    gt_mask: np.ndarray
    shape_id: str = ""
    mask_name: str = ""


@dataclass
class EvalReport:
    ks: tuple[int, ...]
    rows: list[dict] = field(default_factory=list)  # per-instance IoU@k
    runtime_s: float = 0.0

    @property
    def means(self) -> dict[int, float]:
        return {k: float(np.mean([r["iou"][k] for r in self.rows])) for k in self.ks}

    def to_json(self) -> dict:
        return {
            "ks": list(self.ks),
            "instances": [
                {
                    "shape": r["shape"],
                    "mask": r["mask"],
                    "iou": {str(k): r["iou"][k] for k in self.ks},
                }
                for r in self.rows
            ],
            "means": {str(k): v for k, v in self.means.items()},
            "runtime": {"total_s": self.runtime_s, "per_instance_s": self.runtime_s / max(len(self.rows), 1)},
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["shape", "mask"] + [f"iou@{k}" for k in self.ks])
        for r in self.rows:
            writer.writerow([r["shape"], r["mask"]] + [f"{r['iou'][k]:.6f}" for k in self.ks])
        return buf.getvalue()


def iou_at_k(model, instances: list[EvalInstance], ks=DEFAULT_KS, session_opts: dict | None = None) -> EvalReport:
    """Run the click protocol per instance; sessions are shared per cloud."""
    ks = tuple(sorted(ks))
    k_max = ks[-1]
    report = EvalReport(ks=ks)
    t0 = time.perf_counter()
    sessions: dict[int, object] = {}
    for inst in instances:
        key = id(inst.cloud)
        if key not in sessions:
            with ag.no_grad():
                sessions[key] = model.start_session(inst.cloud, **(session_opts or {}))
        ious = interact(model, inst.cloud, inst.gt_mask, k_max, session=sessions[key])
        report.rows.append(
            {"shape": inst.shape_id, "mask": inst.mask_name, "iou": {k: ious[k - 1] for k in ks}}
        )
    report.runtime_s = time.perf_counter() - t0
    return report


@dataclass
class Proposal:
    mask: np.ndarray
    score: float
    prompt_index: int

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=bool)
        if not self.mask.any():
            raise ValueError("proposal mask is empty")
        if not np.isfinite(self.score):
            raise ValueError("proposal score must be finite")


def mask_nms(proposals: list[Proposal], thresh: float) -> list[Proposal]:
    """Greedy suppression: keep by descending score (ties by input order),
    drop anything whose IoU with a kept mask exceeds ``thresh``."""
    order = sorted(range(len(proposals)), key=lambda i: (-proposals[i].score, i))
    kept: list[int] = []
    for i in order:
        if all(mask_iou(proposals[i].mask, proposals[j].mask) <= thresh for j in kept):
            kept.append(i)
    return [proposals[i] for i in kept]


def segment_everything(
    model,
    cloud: PointCloud,
    n_prompts: int = 1024,
    nms_thresh: float = 0.3,
    top: int = 250,
    score_floor: float | None = None,
    session=None,
) -> list[Proposal]:
    """FPS prompts -> 3 masks each -> threshold at logit 0 -> NMS -> top slice."""
    with ag.no_grad():
        if session is None:
            session = model.start_session(cloud)
        n_prompts = min(n_prompts, session.n)
        prompt_idx = farthest_point_sample(session.cloud, n_prompts)
        raw: list[Proposal] = []
        for pi in prompt_idx:
            pred = session.predict(session.prompts_from_indices([pi], [1]))
            for m in range(pred.n_masks):
                mask = pred.mask_logits[m] > 0
                if not mask.any():
                    continue
                score = float(pred.iou_pred[m])
                if score_floor is not None and score < score_floor:
                    continue
                raw.append(Proposal(mask=mask, score=score, prompt_index=int(pi)))
    kept = mask_nms(raw, nms_thresh)
    return kept[:top]


def average_recall(proposals: list[Proposal], gt_masks: list[np.ndarray], iou_threshold: float) -> float:
    """Fraction of ground-truth masks matched one-to-one, best IoU pairs first."""
    if not gt_masks:
        raise ValueError("no ground-truth masks")
    if not proposals:
        return 0.0
    pairs = []
    for gi, gt in enumerate(gt_masks):
        for pi, prop in enumerate(proposals):
            iou = mask_iou(prop.mask, gt)
            if iou >= iou_threshold:
                pairs.append((iou, gi, pi))
    pairs.sort(key=lambda t: (-t[0], t[1], t[2]))
    used_g, used_p = set(), set()
    matched = 0
    for iou, gi, pi in pairs:
        if gi in used_g or pi in used_p:
            continue
        used_g.add(gi)
        used_p.add(pi)
        matched += 1
    return matched / len(gt_masks)


def downsample_propagate(full_points: np.ndarray, subset_points: np.ndarray, subset_masks: np.ndarray) -> np.ndarray:
    """Label every full-resolution point with its nearest subset point's label.

    ``subset_masks`` is (M, S) or (S,); output matches with N columns.
    """
    if subset_points.shape[0] == 0:
        raise ValueError("empty subset")
    nn_idx, _ = knn_indices(subset_points, full_points, 1)
    nn_idx = nn_idx[:, 0]
    subset_masks = np.asarray(subset_masks)
    if subset_masks.ndim == 1:
        return subset_masks[nn_idx]
    return subset_masks[:, nn_idx]


def patch_sensitivity_sweep(
    model,
    instances: list[EvalInstance],
    grid=((512, 64), (512, 256), (2048, 64), (2048, 256)),
    ks=DEFAULT_KS,
) -> dict:
    """IoU@k for each (patch count, patch size) configuration; one table column each."""
    table = {"configs": [f"({l},{k})" for l, k in grid], "ks": list(ks), "iou": []}
    for l_eff, k_eff in grid:
        report = iou_at_k(model, instances, ks=ks, session_opts={"n_patches": l_eff, "patch_size": k_eff})
        table["iou"].append([report.means[k] for k in ks])
    # rows are ks, columns configs, mirroring the usual sensitivity layout
    table["iou"] = [list(col) for col in zip(*table["iou"])]
    return table


def report_table(table: dict) -> str:
    header = "k | " + " | ".join(table["configs"])
    lines = [header, "-" * len(header)]
    for k, row in zip(table["ks"], table["iou"]):
        lines.append(f"{k} | " + " | ".join(f"{v:.3f}" for v in row))
    return "\n".join(lines)
