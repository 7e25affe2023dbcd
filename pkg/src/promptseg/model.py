"""Promptable point-cloud segmentation network.

Pipeline: FPS centers -> k-NN patches -> PointNet patch features -> ViT-style
encoder over patch tokens -> prompt encoding (Fourier positions + label
embeddings, optional dense mask-logit branch) -> two-way attention decoder ->
per-point mask logits via a dynamic linear classifier, plus a predicted IoU
score per output mask.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .checkpoint import load_checkpoint, save_checkpoint
from .geometry import (
    NormalizationTransform,
    PatchSet,
    PointCloud,
    farthest_point_sample,
    knn_group,
    normalize_unit_sphere,
    three_nn_weights,
)
from .nn import Attention, HeadMlp, LayerNorm, Linear, PointNetEmbed, TransformerBlock, TwoWayBlock, trunc_normal
from .rng import RngPool

FOREGROUND = 1
BACKGROUND = 0


@dataclass
class ModelConfig:
    n_patches: int = 512          # L
    patch_size: int = 64          # K
    d_patch: int = 128            # width of patch features
    d_model: int = 128            # transformer width
    d_classifier: int = 32        # upsampled/classifier width
    depth: int = 4
    heads: int = 4
    n_multimask: int = 3          # plus one single-mask token
    fourier_bands: int | None = None  # defaults to d_model // 2
    seed: int = 0
    # patch configuration switch for large inputs
    big_cloud_threshold: int = 32768
    big_n_patches: int = 2048
    big_patch_size: int = 512

    def __post_init__(self):
        if self.fourier_bands is None:
            self.fourier_bands = self.d_model // 2
        if self.d_model % self.heads:
            raise ValueError("d_model must be divisible by heads")
        if 2 * self.fourier_bands != self.d_model:
            raise ValueError("fourier_bands must equal d_model / 2")
        if self.d_classifier > self.d_model:
            raise ValueError("d_classifier must not exceed d_model")

    @property
    def n_mask_tokens(self) -> int:
        return self.n_multimask + 1

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, doc: dict) -> "ModelConfig":
        known = {k: v for k, v in doc.items() if k in cls.__dataclass_fields__}
        return cls(**known)


@dataclass
class PromptSet:
    """Ordered point prompts in normalized space, plus optional dense mask logits."""

    points: np.ndarray                     # (Q, 3)
    labels: np.ndarray                     # (Q,), 1 foreground / 0 background
    mask_logits: np.ndarray | None = None  # (N,)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float32).reshape(-1, 3)
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if self.labels.shape[0] != self.points.shape[0]:
            raise ValueError("labels must match points")
        if self.labels.size and not np.isin(self.labels, [0, 1]).all():
            raise ValueError("labels must be 0 (background) or 1 (foreground)")
        if self.mask_logits is not None:
            self.mask_logits = np.asarray(self.mask_logits, dtype=np.float32).reshape(-1)

    @property
    def q(self) -> int:
        return self.points.shape[0]

    def extended(self, point, label) -> "PromptSet":
        return PromptSet(
            points=np.concatenate([self.points, np.asarray(point, dtype=np.float32).reshape(1, 3)]),
            labels=np.concatenate([self.labels, [label]]),
            mask_logits=self.mask_logits,
        )


@dataclass
class Prediction:
    """Point-wise mask logits for each output mask plus predicted IoU scores."""

    logits_t: Tensor   # (M', N)
    iou_t: Tensor      # (M',)
    multimask: bool

    @property
    def mask_logits(self) -> np.ndarray:
        return self.logits_t.data

    @property
    def iou_pred(self) -> np.ndarray:
        return self.iou_t.data

    @property
    def masks(self) -> np.ndarray:
        return self.mask_logits > 0

    @property
    def n_masks(self) -> int:
        return self.mask_logits.shape[0]

    def best_index(self) -> int:
        return int(np.argmax(self.iou_pred))


@dataclass
class Encoding:
    """Cached per-cloud state: patch tokens and everything decoding needs."""

    patch_tokens: Tensor          # (L, d_model)
    patch_pe: Tensor              # (L, d_model), constant
    point_pe: Tensor              # (N, d_model), constant
    patch_set: PatchSet
    normalization: NormalizationTransform
    cloud: PointCloud             # normalized cloud the encoding was built from
    up_idx: np.ndarray            # (N, 3) 3-NN supports per point
    up_w: np.ndarray              # (N, 3) interpolation weights
    layer_taps: list[np.ndarray] = field(default_factory=list)
    # re-centered neighbor coordinates, cached for the mask-prompt branch
    recentered: np.ndarray | None = None


def fourier_pe(x: np.ndarray, bands: np.ndarray) -> np.ndarray:
    """[sin(2*pi*B*x) || cos(2*pi*B*x)] positional features, one row per point."""
    ang = 2.0 * np.pi * (np.asarray(x, dtype=np.float32) @ np.asarray(bands, dtype=np.float32).T)
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=-1).astype(np.float32)


class PromptSegModel:
    def __init__(self, config: ModelConfig):
        self.config = config
        self.encode_calls = 0
        rng = RngPool(config.seed).stream("init")
        d1, d2, d4 = config.d_patch, config.d_model, config.d_classifier

        self.patch_embed = PointNetEmbed(rng, 6, 64, d1)
        self.patch_proj = Linear(rng, d1, d2)
        self.pe_bands = Tensor(rng.normal(0.0, 1.0, size=(config.fourier_bands, 3)).astype(np.float32))
        self.blocks = [TransformerBlock(rng, d2, config.heads) for _ in range(config.depth)]
        self.enc_norm = LayerNorm(d2)

        self.label_embed = Tensor(trunc_normal(rng, (2, d2)), requires_grad=True)  # row 0 bg, row 1 fg
        self.mask_encoder = PointNetEmbed(rng, 4, 64, d2)

        self.iou_token = Tensor(trunc_normal(rng, (1, d2)), requires_grad=True)
        self.mask_tokens = Tensor(trunc_normal(rng, (config.n_mask_tokens, d2)), requires_grad=True)
        self.two_way = [TwoWayBlock(rng, d2, config.heads, skip_first_pe=(i == 0)) for i in range(2)]
        self.final_attn = Attention(rng, d2, config.heads)
        self.final_norm = LayerNorm(d2)
        self.up_mlp = [Linear(rng, d2, d4), Linear(rng, d4, d4)]
        self.hyper_mlps = [HeadMlp(rng, d2, d2, d4) for _ in range(config.n_mask_tokens)]
        self.iou_mlp = HeadMlp(rng, d2, d2, config.n_mask_tokens)

        self._named = self._collect_params()

    # -- parameters ---------------------------------------------------------

    def _collect_params(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        out.update(self.patch_embed.params("patch_embed"))
        out.update(self.patch_proj.params("patch_proj"))
        out["pe_bands"] = self.pe_bands
        for i, blk in enumerate(self.blocks):
            out.update(blk.params(f"encoder.{i}"))
        out.update(self.enc_norm.params("enc_norm"))
        out["label_embed"] = self.label_embed
        out.update(self.mask_encoder.params("mask_encoder"))
        out["iou_token"] = self.iou_token
        out["mask_tokens"] = self.mask_tokens
        for i, blk in enumerate(self.two_way):
            out.update(blk.params(f"decoder.{i}"))
        out.update(self.final_attn.params("decoder.final_attn"))
        out.update(self.final_norm.params("decoder.final_norm"))
        out.update(self.up_mlp[0].params("up_mlp.0"))
        out.update(self.up_mlp[1].params("up_mlp.1"))
        for i, m in enumerate(self.hyper_mlps):
            out.update(m.params(f"hyper.{i}"))
        out.update(self.iou_mlp.params("iou_mlp"))
        return out

    def named_tensors(self) -> dict[str, Tensor]:
        """All model tensors, including frozen ones (checkpoint contents)."""
        return dict(self._named)

    def parameters(self) -> dict[str, Tensor]:
        """Trainable tensors only."""
        return {k: v for k, v in self._named.items() if v.requires_grad}

    def num_parameters(self) -> int:
        return sum(int(np.prod(t.data.shape)) for t in self.parameters().values())

    def save(self, path) -> None:
        import json
        from pathlib import Path

        save_checkpoint(path, {k: v.data for k, v in self._named.items()})
        Path(str(path) + ".json").write_text(json.dumps(self.config.to_dict(), indent=1) + "\n")

    @classmethod
    def load(cls, path) -> "PromptSegModel":
        import json
        from pathlib import Path

        cfg_path = Path(str(path) + ".json")
        if not cfg_path.exists():
            raise FileNotFoundError(f"missing config echo {cfg_path}")
        config = ModelConfig.from_dict(json.loads(cfg_path.read_text()))
        model = cls(config)
        arrays = load_checkpoint(path)
        missing = set(model._named) - set(arrays)
        extra = set(arrays) - set(model._named)
        if missing or extra:
            raise ValueError(f"checkpoint mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        for name, tensor in model._named.items():
            arr = arrays[name]
            if arr.shape != tensor.data.shape:
                raise ValueError(f"{name}: shape {arr.shape} != expected {tensor.data.shape}")
            tensor.data = np.ascontiguousarray(arr, dtype=np.float32)
        return model

    # -- encoding -----------------------------------------------------------

    def positional(self, x: np.ndarray) -> np.ndarray:
        return fourier_pe(x, self.pe_bands.data)

    def _patch_inputs(self, cloud: PointCloud, patch_set: PatchSet) -> Tensor:
        nb = patch_set.neighbor_indices
        coords = cloud.points[nb] - patch_set.centers[:, None, :]
        if cloud.colors is not None:
            colors = cloud.colors[nb]
        else:
            colors = np.full(coords.shape, 0.5, dtype=np.float32)
        per_point = np.concatenate([coords, colors], axis=-1).reshape(-1, 6)
        return Tensor(per_point)

    def encode(self, cloud: PointCloud, patch_set: PatchSet, keep_layer_taps: bool = False):
        """Patch features + positions through the transformer encoder."""
        self.encode_calls += 1
        l, k = patch_set.l, patch_set.k
        feats = self.patch_embed(self._patch_inputs(cloud, patch_set), l, k)
        h = self.patch_proj(feats) + Tensor(self.positional(patch_set.centers))
        taps: list[np.ndarray] = []
        for blk in self.blocks:
            h = blk(h)
            if keep_layer_taps:
                taps.append(h.data.copy())
        return self.enc_norm(h), taps

    def encode_prompt_points(self, prompts: PromptSet) -> Tensor:
        pe = Tensor(self.positional(prompts.points))
        return pe + ag.take_rows(self.label_embed, prompts.labels)

    def encode_mask_prompt(
        self, mask_logits: np.ndarray, cloud: PointCloud, patch_set: PatchSet, recentered: np.ndarray | None = None
    ) -> Tensor:
        if mask_logits.shape[0] != cloud.n:
            raise ValueError(f"mask prompt length {mask_logits.shape[0]} != cloud size {cloud.n}")
        nb = patch_set.neighbor_indices
        if recentered is None:
            recentered = cloud.points[nb] - patch_set.centers[:, None, :]
        logits = np.asarray(mask_logits, dtype=np.float32)[nb][..., None]
        per_point = np.concatenate([recentered, logits], axis=-1).reshape(-1, 4)
        return self.mask_encoder(Tensor(per_point), patch_set.l, patch_set.k)

    # -- decoding -----------------------------------------------------------

    def decode(self, enc: Encoding, point_embed: Tensor, mask_embed: Tensor | None, multimask: bool) -> Prediction:
        if point_embed.shape[0] < 1:
            raise ValueError("decoding requires at least one point prompt")
        src = enc.patch_tokens + mask_embed if mask_embed is not None else enc.patch_tokens
        tokens0 = ag.concat([self.iou_token, self.mask_tokens, point_embed], axis=0)
        queries, keys = tokens0, src
        for blk in self.two_way:
            queries, keys = blk(queries, keys, tokens0, enc.patch_pe)
        q = queries + tokens0
        k = keys + enc.patch_pe
        queries = self.final_norm(queries + self.final_attn(q, k, keys))

        token_ids = [1, 2, 3] if multimask else [0]
        hyper = ag.concat([self.hyper_mlps[j](queries[1 + j : 2 + j]) for j in token_ids], axis=0)
        # dense positional features ride along so the dynamic classifier can
        # express click-centered kernels at point resolution
        up = ag.weighted_gather(keys, enc.up_idx, enc.up_w) + enc.point_pe
        x_pc = self.up_mlp[1](ag.gelu(self.up_mlp[0](up)))
        logits = ag.transpose(ag.matmul(x_pc, ag.transpose(hyper)))
        iou_all = ag.sigmoid(self.iou_mlp(queries[0:1]))
        iou = ag.reshape(iou_all[:, token_ids[0] : token_ids[-1] + 1], (len(token_ids),))
        return Prediction(logits_t=logits, iou_t=iou, multimask=multimask)

    # -- sessions -----------------------------------------------------------

    def start_session(self, cloud: PointCloud, **kwargs) -> "Session":
        return Session(self, cloud, **kwargs)

    def predict(self, cloud: PointCloud, prompts: PromptSet, multimask: bool | None = None, **kwargs) -> Prediction:
        return Session(self, cloud, **kwargs).predict(prompts, multimask=multimask)

    def multi_layer_features(self, cloud: PointCloud, layer_ids: list[int], **kwargs) -> np.ndarray:
        """Per-point features from selected encoder blocks (1-based ids), concatenated."""
        for lid in layer_ids:
            if not 1 <= lid <= self.config.depth:
                raise ValueError(f"layer id {lid} out of range 1..{self.config.depth}")
        with ag.no_grad():
            session = Session(self, cloud, keep_layer_taps=True, **kwargs)
        taps = session.encoding.layer_taps
        idx, w = session.encoding.up_idx, session.encoding.up_w
        feats = [np.einsum("qj,qjd->qd", w, taps[lid - 1][idx]) for lid in layer_ids]
        return np.concatenate(feats, axis=1).astype(np.float32)


class Session:
    """Per-cloud interaction state: the encoding is computed exactly once."""

    def __init__(
        self,
        model: PromptSegModel,
        cloud: PointCloud,
        assume_normalized: bool = False,
        n_patches: int | None = None,
        patch_size: int | None = None,
        seed_index: int = 0,
        keep_layer_taps: bool = False,
    ):
        self.model = model
        cfg = model.config
        if assume_normalized:
            norm_cloud, tf = cloud, NormalizationTransform(centroid=np.zeros(3, dtype=np.float32), scale=1.0)
        else:
            norm_cloud, tf = normalize_unit_sphere(cloud)
        n = norm_cloud.n
        big = n > cfg.big_cloud_threshold
        l_eff = n_patches if n_patches is not None else (cfg.big_n_patches if big else cfg.n_patches)
        k_eff = patch_size if patch_size is not None else (cfg.big_patch_size if big else cfg.patch_size)
        l_eff = min(l_eff, n)
        if k_eff > n:
            raise ValueError(f"patch size {k_eff} exceeds point count {n}")
        if l_eff < 3:
            raise ValueError("need at least 3 patches for feature interpolation")

        centers = farthest_point_sample(norm_cloud, l_eff, seed_index=seed_index)
        patch_set = knn_group(norm_cloud, centers, k_eff)
        tokens, taps = model.encode(norm_cloud, patch_set, keep_layer_taps=keep_layer_taps)
        up_idx, up_w = three_nn_weights(norm_cloud.points, patch_set.centers)
        recentered = norm_cloud.points[patch_set.neighbor_indices] - patch_set.centers[:, None, :]
        self.encoding = Encoding(
            patch_tokens=tokens,
            patch_pe=Tensor(model.positional(patch_set.centers)),
            point_pe=Tensor(model.positional(norm_cloud.points)),
            patch_set=patch_set,
            normalization=tf,
            cloud=norm_cloud,
            up_idx=up_idx,
            up_w=up_w,
            layer_taps=taps,
            recentered=recentered,
        )
        self.encode_count = 1

    @property
    def cloud(self) -> PointCloud:
        return self.encoding.cloud

    @property
    def n(self) -> int:
        return self.encoding.cloud.n

    def prompts_from_indices(self, indices, labels, mask_logits=None) -> PromptSet:
        idx = np.asarray(indices, dtype=np.int64).reshape(-1)
        return PromptSet(points=self.cloud.points[idx], labels=np.asarray(labels), mask_logits=mask_logits)

    def predict(self, prompts: PromptSet, multimask: bool | None = None) -> Prediction:
        if prompts.q < 1:
            raise ValueError("at least one point prompt required")
        gate = prompts.q == 1 and prompts.mask_logits is None
        if multimask is None:
            multimask = gate
        elif multimask and not gate:
            raise ValueError("multimask output requires exactly one point prompt and no mask prompt")
        point_embed = self.model.encode_prompt_points(prompts)
        mask_embed = None
        if prompts.mask_logits is not None:
            mask_embed = self.model.encode_mask_prompt(
                prompts.mask_logits, self.cloud, self.encoding.patch_set, recentered=self.encoding.recentered
            )
        return self.model.decode(self.encoding, point_embed, mask_embed, multimask)
