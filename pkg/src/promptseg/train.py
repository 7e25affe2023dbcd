"""Interactive training: the 7-iteration click loop with summed losses,
augmentations, the learning-rate schedule, and the end-to-end run driver.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from . import autograd as ag
from .clicks import first_click, next_click
from .geometry import PointCloud
from .losses import LossWeights, actual_iou, hindsight_multimask_loss, mask_loss
from .model import ModelConfig, PromptSegModel, PromptSet
from .optim import AdamW
from .rng import RngPool
from .synth import TrainSample, synth_dataset
from .autograd import Tensor


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    # data
    seed: int = 0
    n_shapes: int = 20
    n_points: int = 640
    parts_min: int = 4
    parts_max: int = 5
    colored: bool = True
    # model
    n_patches: int = 80
    patch_size: int = 20
    d_patch: int = 128
    d_model: int = 128
    d_classifier: int = 128
    depth: int = 4
    heads: int = 4
    # optimization
    steps: int = 2000
    k_iters: int = 7
    base_lr: float = 3e-4
    lr_floor: float = 5e-8
    warmup_steps: int = 150
    milestone_fracs: tuple[float, float] = (0.85, 0.95)
    lr_decay: float = 0.1
    weight_decay: float = 0.05
    grad_clip: float = 0.0        # global-norm clip; 0 disables
    # losses
    focal_weight: float = 1.0
    dice_weight: float = 4.0
    iou_weight: float = 1.0
    focal_gamma: float = 2.0
    focal_alpha: float = 0.5
    # pipeline
    augment: bool = True
    first_click_jitter: float = 0.0  # chance the rollout opens with a uniform
                                     # foreground click instead of the center
    probe_every: int = 0          # 0 disables the convergence probe
    stop_iou1: float = 0.0        # early stop once the probe reaches both targets
    stop_iou5: float = 0.0

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            n_patches=self.n_patches,
            patch_size=self.patch_size,
            d_patch=self.d_patch,
            d_model=self.d_model,
            d_classifier=self.d_classifier,
            depth=self.depth,
            heads=self.heads,
            seed=self.seed,
        )

    def loss_weights(self) -> LossWeights:
        return LossWeights(
            focal_weight=self.focal_weight,
            dice_weight=self.dice_weight,
            iou_weight=self.iou_weight,
            gamma=self.focal_gamma,
            alpha=self.focal_alpha,
        )

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "TrainConfig":
        doc = json.loads(text)
        known = {k: v for k, v in doc.items() if k in cls.__dataclass_fields__}
        if "milestone_fracs" in known:
            known["milestone_fracs"] = tuple(known["milestone_fracs"])
        return cls(**known)


def lr_schedule(step: int, warmup: int, milestones: list[int], base_lr: float, decay: float = 0.1, floor: float = 5e-8) -> float:
    """Linear warmup from ``floor`` to ``base_lr``, then a decay at each milestone."""
    if step < 0:
        raise ValueError("step must be >= 0")
    if warmup > 0 and step < warmup:
        return floor + (base_lr - floor) * step / warmup
    n_hit = sum(1 for m in milestones if step >= m)
    return base_lr * decay ** n_hit


def _rotation(axis: int, angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    m = np.eye(3, dtype=np.float32)
    i, j = [(1, 2), (0, 2), (0, 1)][axis]
    m[i, i] = c
    m[j, j] = c
    m[i, j] = -s if axis != 1 else s
    m[j, i] = s if axis != 1 else -s
    return m


def augment(sample: TrainSample, rng: np.random.Generator) -> TrainSample:
    """Random shrink to [0.8, 1.0], full-turn y rotation, small x/z tilts.

    Masks are index-aligned and untouched. Points stay inside the unit sphere
    because rotations preserve norms and the scale never exceeds one.
    """
    scale = rng.uniform(0.8, 1.0)
    ry = _rotation(1, rng.uniform(-np.pi, np.pi))
    perturb = np.clip(np.abs(rng.normal(0.0, 0.06, size=2)), 0.0, 0.18)
    signs = np.where(rng.random(2) < 0.5, -1.0, 1.0)
    rx = _rotation(0, float(perturb[0] * signs[0]))
    rz = _rotation(2, float(perturb[1] * signs[1]))
    rot = rx @ rz @ ry
    pts = (sample.cloud.points * scale) @ rot.T
    cloud = PointCloud(points=pts.astype(np.float32), colors=sample.cloud.colors)
    return TrainSample(cloud=cloud, masks=sample.masks, mask_names=sample.mask_names, provenance=sample.provenance)


def train_step(
    model: PromptSegModel,
    sample: TrainSample,
    mask_idx: int,
    optimizer: AdamW,
    weights: LossWeights,
    k_iters: int = 7,
    grad_clip: float = 0.0,
    first_click_jitter: float = 0.0,
    rng: np.random.Generator | None = None,
) -> tuple[float, dict]:
    """One optimizer step over the summed losses of the interactive rollout.

    Iteration 1 decodes multimask with the hindsight objective; the winning
    mask's logits ride forward as the next iteration's mask prompt (detached:
    the simulator picks clicks from thresholded masks anyway). Later
    iterations decode a single mask and add its focal+dice plus the IoU-head
    error. The cloud is consumed as-is (already normalized, possibly
    augmented); the session encodes it exactly once.
    """
    gt = np.asarray(sample.masks[mask_idx], dtype=bool)
    session = model.start_session(sample.cloud, assume_normalized=True)
    pts = session.cloud.points

    if first_click_jitter and rng is not None and rng.random() < first_click_jitter:
        fg = np.flatnonzero(gt)
        idx, label = int(fg[int(rng.integers(fg.size))]), 1
    else:
        idx, label = first_click(gt, pts)
    prompts = session.prompts_from_indices([idx], [label])
    pred = session.predict(prompts)
    loss, info = hindsight_multimask_loss(pred, gt, weights)
    losses = [loss.item()]
    # carry forward the mask the click protocol would pick at evaluation time
    # (highest predicted IoU), so later iterations train on realistic prompts
    cur_logits = pred.mask_logits[pred.best_index()].copy()
    cur_mask = cur_logits > 0

    for _ in range(1, k_iters):
        if np.array_equal(cur_mask, gt):
            break
        idx, label = next_click(gt, cur_mask, pts)
        prompts = prompts.extended(pts[idx], label)
        prompts.mask_logits = cur_logits
        pred = session.predict(prompts)
        step_loss = mask_loss(pred.logits_t[0], gt, weights)
        iou_target = np.float32(actual_iou(pred.mask_logits[0] > 0, gt))
        err = pred.iou_t - Tensor(np.array([iou_target]))
        step_loss = step_loss + ag.scale(ag.mean_over(err * err), weights.iou_weight)
        losses.append(step_loss.item())
        loss = loss + step_loss
        cur_logits = pred.mask_logits[0].copy()
        cur_mask = cur_logits > 0

    total = loss.item()
    if not np.isfinite(total):
        raise TrainingDiverged(
            f"non-finite loss {total} on {sample.provenance!r} mask {mask_idx}; per-iteration {losses}"
        )
    optimizer.zero_grad()
    loss.backward()
    if grad_clip:
        optimizer.clip_grad_norm(grad_clip)
    optimizer.step()
    return total, {"per_iteration": losses, "iterations": len(losses)}


def probe_train_iou(model: PromptSegModel, dataset: list[TrainSample], k: int = 5) -> tuple[float, float]:
    """Mean IoU@1 and IoU@k over every (shape, mask) training instance."""
    from .clicks import interact

    first, last = [], []
    for sample in dataset:
        with ag.no_grad():
            session = model.start_session(sample.cloud, assume_normalized=True)
        for mask in sample.masks:
            ious = interact(model, sample.cloud, mask, k, session=session)
            first.append(ious[0])
            last.append(ious[-1])
    return float(np.mean(first)), float(np.mean(last))


def run_training(
    config: TrainConfig,
    out_dir,
    dataset: list[TrainSample] | None = None,
    log_every: int = 50,
    quiet: bool = True,
):
    """Full training run; writes ``checkpoint.psc`` (+ config echo) and ``loss.csv``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    pool = RngPool(config.seed)
    if dataset is None:
        dataset = synth_dataset(
            config.n_shapes,
            pool.stream("data"),
            n_points=config.n_points,
            parts=(config.parts_min, config.parts_max),
            colored=config.colored,
        )
    model = PromptSegModel(config.model_config())
    optimizer = AdamW(model.parameters(), lr=config.base_lr, weight_decay=config.weight_decay)
    weights = config.loss_weights()
    milestones = [int(f * config.steps) for f in config.milestone_fracs]

    history: list[tuple[int, float, float]] = []
    pick = pool.stream("picks")
    t0 = time.perf_counter()
    steps_run = 0
    for step in range(config.steps):
        lr = lr_schedule(step, config.warmup_steps, milestones, config.base_lr, config.lr_decay, config.lr_floor)
        optimizer.lr = lr
        sample = dataset[int(pick.integers(len(dataset)))]
        mask_idx = int(pick.integers(len(sample.masks)))
        if config.augment:
            sample = augment(sample, pool.stream(f"aug/{step}"))
        loss, _ = train_step(
            model,
            sample,
            mask_idx,
            optimizer,
            weights,
            k_iters=config.k_iters,
            grad_clip=config.grad_clip,
            first_click_jitter=config.first_click_jitter,
            rng=pool.stream(f"click/{step}"),
        )
        history.append((step, lr, loss))
        steps_run = step + 1
        if not quiet and log_every and step % log_every == 0:
            print(f"step {step:5d} lr {lr:.2e} loss {loss:.4f}", flush=True)
        if config.probe_every and (step + 1) % config.probe_every == 0:
            iou1, iou5 = probe_train_iou(model, dataset)
            if not quiet:
                print(f"step {step:5d} train IoU@1 {iou1:.3f} IoU@5 {iou5:.3f}", flush=True)
            if config.stop_iou1 and iou1 >= config.stop_iou1 and iou5 >= config.stop_iou5:
                break

    elapsed = time.perf_counter() - t0
    ckpt = out_dir / "checkpoint.psc"
    model.save(ckpt)
    (out_dir / "train_config.json").write_text(config.to_json())
    with open(out_dir / "loss.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "lr", "loss"])
        writer.writerows((s, f"{lr:.8e}", f"{l:.6f}") for s, lr, l in history)
    return model, {"history": history, "elapsed_s": elapsed, "dataset": dataset, "steps_run": steps_run}
