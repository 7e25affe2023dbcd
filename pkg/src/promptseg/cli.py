"""Command-line entry points: train, synth-data, eval-iou, proposals,
pseudo-label, serve.
"""

from __future__ import annotations

import json
import os
import sys
from pathlib import Path

import click
import numpy as np

from . import autograd as ag
from .evaluate import DEFAULT_KS, EvalInstance, Proposal, iou_at_k, segment_everything
from .model import PromptSegModel
from .pcio import load_cloud, load_labels, save_cloud, save_labels
from .rng import RngPool
from .synth import synth_dataset
from .train import TrainConfig, run_training


@click.group()
def main():
    """Promptable point-cloud segmentation toolkit."""


@main.command()
@click.argument("config_path", type=click.Path(exists=True))
@click.option("--out", "out_dir", default="runs/train", show_default=True, help="output directory")
@click.option("--verbose/--quiet", default=True)
def train(config_path, out_dir, verbose):
    """Train a model from a flat JSON config; writes checkpoint + loss CSV."""
    config = TrainConfig.from_json(Path(config_path).read_text())
    _, info = run_training(config, out_dir, quiet=not verbose)
    click.echo(f"done: {info['steps_run']} steps in {info['elapsed_s']:.1f}s -> {out_dir}/checkpoint.psc")


@main.command("synth-data")
@click.option("--count", default=10, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", "out_dir", default="data/synth", show_default=True)
@click.option("--points", default=10_000, show_default=True)
@click.option("--parts-min", default=4, show_default=True)
@click.option("--parts-max", default=6, show_default=True)
@click.option("--colorless", is_flag=True, default=False)
def synth_data(count, seed, out_dir, points, parts_min, parts_max, colorless):
    """Generate synthetic part-labeled shapes as PCB1 + label JSON pairs."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    pool = RngPool(seed)
    samples = synth_dataset(
        count, pool.stream("data"), n_points=points, parts=(parts_min, parts_max), colored=not colorless
    )
    for i, sample in enumerate(samples):
        save_cloud(out / f"shape_{i:04d}.pcb", sample.cloud)
        save_labels(out / f"shape_{i:04d}.labels.json", sample.cloud.n, list(zip(sample.mask_names, sample.masks)))
    click.echo(f"wrote {count} shapes to {out}")


def _load_dataset_dir(data_dir) -> list[EvalInstance]:
    instances = []
    for pcb in sorted(Path(data_dir).glob("*.pcb")):
        labels_path = pcb.with_suffix("").with_suffix(".labels.json")
        if not labels_path.exists():
            labels_path = Path(str(pcb)[: -len(".pcb")] + ".labels.json")
        if not labels_path.exists():
            continue
        cloud = load_cloud(pcb)
        _, masks = load_labels(labels_path)
        for name, mask in masks:
            instances.append(EvalInstance(cloud=cloud, gt_mask=mask, shape_id=pcb.stem, mask_name=name))
    if not instances:
        raise click.ClickException(f"no .pcb + .labels.json pairs under {data_dir}")
    return instances


class _GtOracleModel:
    """Debug stand-in returning perfect logits for each instance's own mask."""

    def __init__(self):
        self._gt = None

    def bind(self, gt):
        self._gt = gt

    def start_session(self, cloud, **kw):
        from .model import Prediction, PromptSet
        from .autograd import Tensor

        outer = self

        class _Sess:
            def __init__(self):
                self.cloud = cloud
                self.n = cloud.n

            def prompts_from_indices(self, indices, labels, mask_logits=None):
                return PromptSet(points=cloud.points[np.asarray(indices)], labels=labels, mask_logits=mask_logits)

            def predict(self, prompts, multimask=None):
                gate = prompts.q == 1 and prompts.mask_logits is None
                rows = 3 if gate else 1
                logits = np.where(outer._gt, 9.0, -9.0).astype(np.float32)
                return Prediction(
                    logits_t=Tensor(np.tile(logits, (rows, 1))),
                    iou_t=Tensor(np.full(rows, 0.9, dtype=np.float32)),
                    multimask=gate,
                )

        return _Sess()


@main.command("eval-iou")
@click.argument("checkpoint", type=click.Path())
@click.argument("data_dir", type=click.Path(exists=True))
@click.option("--ks", default="1,3,5,7,10", show_default=True)
@click.option("--out", "out_dir", default="runs/eval", show_default=True)
@click.option("--gt-oracle", is_flag=True, default=False, help="bypass the model with a perfect oracle (protocol check)")
def eval_iou(checkpoint, data_dir, ks, out_dir, gt_oracle):
    """IoU@k over a directory of PCB1 + label JSON pairs; writes CSV and JSON."""
    ks = tuple(int(v) for v in ks.split(","))
    instances = _load_dataset_dir(data_dir)
    if gt_oracle:
        model = _GtOracleModel()
        report_rows = []
        import time

        t0 = time.perf_counter()
        from .evaluate import EvalReport
        from .clicks import interact

        report = EvalReport(ks=tuple(sorted(ks)))
        for inst in instances:
            model.bind(inst.gt_mask)
            ious = interact(model, inst.cloud, inst.gt_mask, max(ks))
            report.rows.append(
                {"shape": inst.shape_id, "mask": inst.mask_name, "iou": {k: ious[k - 1] for k in sorted(ks)}}
            )
        report.runtime_s = time.perf_counter() - t0
    else:
        model = PromptSegModel.load(checkpoint)
        report = iou_at_k(model, instances, ks=ks)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "iou_report.csv").write_text(report.to_csv())
    (out / "iou_report.json").write_text(json.dumps(report.to_json(), indent=1) + "\n")
    for k, v in report.means.items():
        click.echo(f"IoU@{k}: {v:.4f}")
    click.echo(f"wrote {out}/iou_report.csv")


@main.command()
@click.argument("checkpoint", type=click.Path(exists=True))
@click.argument("cloud_path", type=click.Path(exists=True))
@click.option("--n-prompts", default=1024, show_default=True)
@click.option("--nms", default=0.3, show_default=True)
@click.option("--top", default=250, show_default=True)
@click.option("--score-floor", default=None, type=float)
@click.option("--out", "out_path", default="proposals.labels.json", show_default=True)
def proposals(checkpoint, cloud_path, n_prompts, nms, top, score_floor, out_path):
    """Whole-shape mask proposals via FPS prompts + point-wise NMS."""
    model = PromptSegModel.load(checkpoint)
    cloud = load_cloud(cloud_path)
    props = segment_everything(model, cloud, n_prompts=n_prompts, nms_thresh=nms, top=top, score_floor=score_floor)
    save_labels(out_path, cloud.n, [(f"proposal_{i:03d}_score={p.score:.3f}", p.mask) for i, p in enumerate(props)])
    click.echo(f"{len(props)} proposals -> {out_path}")


@main.command("pseudo-label")
@click.argument("checkpoint", type=click.Path(exists=True))
@click.argument("data_dir", type=click.Path(exists=True))
@click.option("--accept-iou", default=0.9, show_default=True)
@click.option("--verify-iou", default=0.5, show_default=True)
@click.option("--max-iters", default=8, show_default=True)
@click.option("--noise", default=0.5, show_default=True, help="oracle corruption probability")
@click.option("--seed", default=0, show_default=True)
@click.option("--out", "out_dir", default="runs/pseudo", show_default=True)
def pseudo_label(checkpoint, data_dir, accept_iou, verify_iou, max_iters, noise, seed, out_dir):
    """Multi-view pseudo-label generation with the ground-truth-backed oracle."""
    from .engine import GtPartOracle, PseudoLabelConfig, generate_pseudo_labels
    from .render import default_cameras

    model = PromptSegModel.load(checkpoint)
    pool = RngPool(seed)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = PseudoLabelConfig(accept_iou=accept_iou, verify_iou=verify_iou, max_iters=max_iters)
    cameras = default_cameras()
    n_masks = 0
    for pcb in sorted(Path(data_dir).glob("*.pcb")):
        labels_path = Path(str(pcb)[: -len(".pcb")] + ".labels.json")
        if not labels_path.exists():
            continue
        cloud = load_cloud(pcb)
        _, named = load_labels(labels_path)
        parts = [m for name, m in named if name != "object"]
        oracle = GtPartOracle(parts, noise=noise, rng=pool.stream(f"noise/{pcb.stem}"))
        masks, prov = generate_pseudo_labels(model, cloud, oracle, cameras, pool.stream(f"engine/{pcb.stem}"), cfg)
        save_labels(out / f"{pcb.stem}.pseudo.json", cloud.n, [(f"pseudo_{i:03d}", m) for i, m in enumerate(masks)])
        (out / f"{pcb.stem}.provenance.json").write_text(json.dumps(prov, indent=1, default=float) + "\n")
        n_masks += len(masks)
        click.echo(f"{pcb.stem}: {len(masks)} masks (attempted {prov['attempted']})")
    click.echo(f"total {n_masks} pseudo masks -> {out}")


@main.command()
@click.argument("checkpoint", type=click.Path(), required=False)
@click.option("--port", default=8444, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--cloud-root", default=".", show_default=True)
@click.option("--static-dir", default=None, help="serve the annotator UI bundle from this directory")
def serve(checkpoint, port, host, cloud_root, static_dir):
    """Start the interactive annotation service (env PROMPTSEG_CHECKPOINT works too)."""
    from .server import serve as _serve

    ckpt = checkpoint or os.environ.get("PROMPTSEG_CHECKPOINT")
    if not ckpt:
        raise click.ClickException("pass CHECKPOINT or set PROMPTSEG_CHECKPOINT")
    model = PromptSegModel.load(ckpt)
    click.echo(f"serving on http://{host}:{port}")
    _serve(model, port=port, host=host, cloud_root=cloud_root, static_dir=static_dir)


if __name__ == "__main__":
    main()
