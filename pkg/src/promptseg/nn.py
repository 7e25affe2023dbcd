"""Network building blocks on top of the autograd engine.

Initialization follows the usual transformer recipe: truncated normal
(sigma 0.02, clipped at two sigma) for projections, zeros for biases.
Every block exposes ``params(prefix)`` returning its named parameter dict.
"""

from __future__ import annotations

import numpy as np

from . import autograd as ag
from .autograd import Tensor


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02) -> np.ndarray:
    x = rng.normal(0.0, std, size=shape)
    return np.clip(x, -2.0 * std, 2.0 * std).astype(np.float32)


class Linear:
    # fan-in-scaled truncated normal: a flat 0.02 everywhere starves the
    # encoder of gradient through the bilinear classifier head at this scale
    def __init__(self, rng, d_in: int, d_out: int, zero_init: bool = False):
        std = 1.0 / np.sqrt(d_in)
        w = np.zeros((d_in, d_out), dtype=np.float32) if zero_init else trunc_normal(rng, (d_in, d_out), std)
        self.w = Tensor(w, requires_grad=True)
        self.b = Tensor(np.zeros(d_out, dtype=np.float32), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return ag.matmul(x, self.w) + self.b

    def params(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.w": self.w, f"{prefix}.b": self.b}


class LayerNorm:
    def __init__(self, d: int, eps: float = 1e-5):
        self.g = Tensor(np.ones(d, dtype=np.float32), requires_grad=True)
        self.b = Tensor(np.zeros(d, dtype=np.float32), requires_grad=True)
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return ag.layernorm(x, self.g, self.b, self.eps)

    def params(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.g": self.g, f"{prefix}.b": self.b}


class Mlp:
    """Two-layer feed-forward with GELU, the transformer-block default."""

    def __init__(self, rng, d: int, hidden: int):
        self.fc1 = Linear(rng, d, hidden)
        self.fc2 = Linear(rng, hidden, d)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(ag.gelu(self.fc1(x)))

    def params(self, prefix: str) -> dict[str, Tensor]:
        return {**self.fc1.params(f"{prefix}.fc1"), **self.fc2.params(f"{prefix}.fc2")}


class HeadMlp:
    """Stack of linear layers with ReLU between them (decoder heads)."""

    def __init__(self, rng, d_in: int, d_hidden: int, d_out: int, n_layers: int = 3):
        dims = [d_in] + [d_hidden] * (n_layers - 1) + [d_out]
        self.layers = [Linear(rng, dims[i], dims[i + 1]) for i in range(n_layers)]

    def __call__(self, x: Tensor) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = ag.relu(x)
        return x

    def params(self, prefix: str) -> dict[str, Tensor]:
        out = {}
        for i, layer in enumerate(self.layers):
            out.update(layer.params(f"{prefix}.{i}"))
        return out


class Attention:
    """Multi-head attention over (tokens, dim) matrices."""

    def __init__(self, rng, d: int, heads: int):
        if d % heads:
            raise ValueError(f"width {d} not divisible by {heads} heads")
        self.heads = heads
        self.d_head = d // heads
        self.scale = 1.0 / np.sqrt(self.d_head)
        self.wq = Linear(rng, d, d)
        self.wk = Linear(rng, d, d)
        self.wv = Linear(rng, d, d)
        self.wo = Linear(rng, d, d)

    def _heads(self, x: Tensor, n: int) -> Tensor:
        return ag.transpose(ag.reshape(x, (n, self.heads, self.d_head)), (1, 0, 2))

    def __call__(self, q: Tensor, k: Tensor, v: Tensor) -> Tensor:
        nq, nk = q.shape[0], k.shape[0]
        qh = self._heads(self.wq(q), nq)
        kh = self._heads(self.wk(k), nk)
        vh = self._heads(self.wv(v), nk)
        attn = ag.softmax(ag.scale(ag.bmm(qh, ag.transpose(kh, (0, 2, 1))), self.scale), axis=-1)
        out = ag.reshape(ag.transpose(ag.bmm(attn, vh), (1, 0, 2)), (nq, self.heads * self.d_head))
        return self.wo(out)

    def params(self, prefix: str) -> dict[str, Tensor]:
        out = {}
        for name in ("wq", "wk", "wv", "wo"):
            out.update(getattr(self, name).params(f"{prefix}.{name}"))
        return out


class TransformerBlock:
    """Pre-norm self-attention block (encoder)."""

    def __init__(self, rng, d: int, heads: int, mlp_ratio: int = 4):
        self.ln1 = LayerNorm(d)
        self.attn = Attention(rng, d, heads)
        self.ln2 = LayerNorm(d)
        self.mlp = Mlp(rng, d, d * mlp_ratio)

    def __call__(self, x: Tensor) -> Tensor:
        h = self.ln1(x)
        x = x + self.attn(h, h, h)
        return x + self.mlp(self.ln2(x))

    def params(self, prefix: str) -> dict[str, Tensor]:
        return {
            **self.ln1.params(f"{prefix}.ln1"),
            **self.attn.params(f"{prefix}.attn"),
            **self.ln2.params(f"{prefix}.ln2"),
            **self.mlp.params(f"{prefix}.mlp"),
        }


class TwoWayBlock:
    """Decoder block: token self-attention, token->patch cross-attention,
    token MLP, then patch->token cross-attention, each with residual + norm.

    Positional terms are re-added to queries and keys at every attention;
    the first block skips them in self-attention because the queries still
    equal their own positional content there.
    """

    def __init__(self, rng, d: int, heads: int, mlp_ratio: int = 4, skip_first_pe: bool = False):
        self.self_attn = Attention(rng, d, heads)
        self.norm1 = LayerNorm(d)
        self.cross_token_to_patch = Attention(rng, d, heads)
        self.norm2 = LayerNorm(d)
        self.mlp = Mlp(rng, d, d * mlp_ratio)
        self.norm3 = LayerNorm(d)
        self.cross_patch_to_token = Attention(rng, d, heads)
        self.norm4 = LayerNorm(d)
        self.skip_first_pe = skip_first_pe

    def __call__(self, queries: Tensor, keys: Tensor, query_pe: Tensor, key_pe: Tensor):
        if self.skip_first_pe:
            queries = self.self_attn(queries, queries, queries)
        else:
            q = queries + query_pe
            queries = queries + self.self_attn(q, q, queries)
        queries = self.norm1(queries)
        q = queries + query_pe
        k = keys + key_pe
        queries = self.norm2(queries + self.cross_token_to_patch(q, k, keys))
        queries = self.norm3(queries + self.mlp(queries))
        q = queries + query_pe
        k = keys + key_pe
        keys = self.norm4(keys + self.cross_patch_to_token(k, q, queries))
        return queries, keys

    def params(self, prefix: str) -> dict[str, Tensor]:
        out = {}
        out.update(self.self_attn.params(f"{prefix}.self_attn"))
        out.update(self.norm1.params(f"{prefix}.norm1"))
        out.update(self.cross_token_to_patch.params(f"{prefix}.cross_tp"))
        out.update(self.norm2.params(f"{prefix}.norm2"))
        out.update(self.mlp.params(f"{prefix}.mlp"))
        out.update(self.norm3.params(f"{prefix}.norm3"))
        out.update(self.cross_patch_to_token.params(f"{prefix}.cross_pt"))
        out.update(self.norm4.params(f"{prefix}.norm4"))
        return out


class PointNetEmbed:
    """Shared per-point MLP, max-pool over each patch, then a patch-level MLP."""

    def __init__(self, rng, d_in: int, d_mid: int, d_out: int):
        self.lin1 = Linear(rng, d_in, d_mid)
        self.lin2 = Linear(rng, d_mid, d_out)
        self.post1 = Linear(rng, d_out, d_out)
        self.post2 = Linear(rng, d_out, d_out)

    def __call__(self, per_point: Tensor, n_patches: int, patch_size: int) -> Tensor:
        h = self.lin2(ag.relu(self.lin1(per_point)))
        h = ag.reshape(h, (n_patches, patch_size, h.shape[-1]))
        pooled = ag.max_over(h, axis=1)
        return self.post2(ag.relu(self.post1(pooled)))

    def params(self, prefix: str) -> dict[str, Tensor]:
        out = {}
        for name in ("lin1", "lin2", "post1", "post2"):
            out.update(getattr(self, name).params(f"{prefix}.{name}"))
        return out
