"""Exact geometric kernels: FPS, k-NN grouping, inverse-distance interpolation,
unit-sphere normalization, and uniform subsampling.

All selections are deterministic: distance ties break toward the lower point
index everywhere. Pairwise distances are evaluated blockwise with the plain
squared-difference formula so results are reproducible and exactly comparable
against brute-force references.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

EPS_INTERP = 1e-8
_BRUTE_BLOCK_BUDGET = 4_000_000  # query-rows x points per distance block
_GRID_MIN_POINTS = 50_000


@dataclass
class PointCloud:
    """N x 3 coordinates with optional per-point color in [0, 1]."""

    points: np.ndarray
    colors: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.ascontiguousarray(self.points, dtype=np.float32)
        if self.points.ndim != 2 or self.points.shape[1] != 3 or self.points.shape[0] < 1:
            raise ValueError(f"points must be (N>=1, 3), got {self.points.shape}")
        if not np.isfinite(self.points).all():
            raise ValueError("points contain non-finite values")
        if self.colors is not None:
            self.colors = np.ascontiguousarray(self.colors, dtype=np.float32)
            if self.colors.shape != self.points.shape:
                raise ValueError("colors must match points shape")
            if self.colors.min() < 0.0 or self.colors.max() > 1.0:
                raise ValueError("colors must lie in [0, 1]")

    @property
    def n(self) -> int:
        return self.points.shape[0]


@dataclass
class PatchSet:
    """FPS centers plus each center's K nearest neighbors in the cloud."""

    centers: np.ndarray           # (L, 3)
    center_indices: np.ndarray    # (L,)
    neighbor_indices: np.ndarray  # (L, K)

    @property
    def l(self) -> int:
        return self.centers.shape[0]

    @property
    def k(self) -> int:
        return self.neighbor_indices.shape[1]


@dataclass
class NormalizationTransform:
    """Centroid shift + uniform scale mapping a cloud into the unit sphere."""

    centroid: np.ndarray
    scale: float

    def apply(self, points: np.ndarray) -> np.ndarray:
        return ((points - self.centroid) * self.scale).astype(np.float32)

    def invert(self, points: np.ndarray) -> np.ndarray:
        return (points / self.scale + self.centroid).astype(np.float32)


# ---------------------------------------------------------------------------
# pairwise-distance machinery
# ---------------------------------------------------------------------------


def _sq_dists(queries: np.ndarray, points: np.ndarray) -> np.ndarray:
    """(Q, N) squared distances via direct differencing (no matmul trick)."""
    diff = queries[:, None, :] - points[None, :, :]
    return np.einsum("qnd,qnd->qn", diff, diff)


def _select_k_sorted(d2: np.ndarray, k: int) -> np.ndarray:
    """Per row: indices of the k smallest entries ordered by (value, index)."""
    q, n = d2.shape
    if n <= 512 or k * 4 >= n:
        order = np.argsort(d2, axis=1, kind="stable")
        return order[:, :k]
    part = np.argpartition(d2, k - 1, axis=1)[:, :k]
    part_sorted = np.sort(part, axis=1)  # index-ascending so stable sort breaks ties right
    vals = np.take_along_axis(d2, part_sorted, axis=1)
    kth = vals.max(axis=1)
    out = np.take_along_axis(part_sorted, np.argsort(vals, axis=1, kind="stable"), axis=1)
    # rows with ties crossing the partition boundary need the exact candidate set
    tie_rows = np.flatnonzero((d2 <= kth[:, None]).sum(axis=1) > k)
    for r in tie_rows:
        cand = np.flatnonzero(d2[r] <= kth[r])
        order = np.argsort(d2[r, cand], kind="stable")
        out[r] = cand[order[:k]]
    return out


def _knn_brute(points: np.ndarray, queries: np.ndarray, k: int):
    n = points.shape[0]
    block = max(1, _BRUTE_BLOCK_BUDGET // max(n, 1))
    idx_out = np.empty((queries.shape[0], k), dtype=np.int64)
    d2_out = np.empty((queries.shape[0], k), dtype=np.float32)
    for start in range(0, queries.shape[0], block):
        stop = min(start + block, queries.shape[0])
        d2 = _sq_dists(queries[start:stop], points)
        idx = _select_k_sorted(d2, k)
        idx_out[start:stop] = idx
        d2_out[start:stop] = np.take_along_axis(d2, idx, axis=1)
    return idx_out, d2_out


class _VoxelGrid:
    """Uniform hash grid over points; used to prune k-NN candidates on big clouds."""

    def __init__(self, points: np.ndarray, target_per_cell: float = 8.0):
        self.points = points
        lo = points.min(axis=0)
        hi = points.max(axis=0)
        extent = np.maximum(hi - lo, 1e-9)
        vol = float(extent.prod())
        self.cell = max((vol * target_per_cell / points.shape[0]) ** (1.0 / 3.0), 1e-9)
        self.lo = lo
        self.dims = np.maximum((extent / self.cell).astype(np.int64) + 1, 1)
        coords = ((points - lo) / self.cell).astype(np.int64)
        coords = np.minimum(coords, self.dims - 1)
        flat = (coords[:, 0] * self.dims[1] + coords[:, 1]) * self.dims[2] + coords[:, 2]
        order = np.argsort(flat, kind="stable")
        self.sorted_idx = order
        self.sorted_keys = flat[order]

    def cell_of(self, q: np.ndarray) -> np.ndarray:
        c = ((q - self.lo) / self.cell).astype(np.int64)
        return np.clip(c, 0, self.dims - 1)

    def points_in_cells(self, cells: np.ndarray) -> np.ndarray:
        """Point indices in the given (M, 3) integer cells, ascending."""
        keys = (cells[:, 0] * self.dims[1] + cells[:, 1]) * self.dims[2] + cells[:, 2]
        keys = np.unique(keys)
        starts = np.searchsorted(self.sorted_keys, keys, side="left")
        stops = np.searchsorted(self.sorted_keys, keys, side="right")
        chunks = [self.sorted_idx[a:b] for a, b in zip(starts, stops) if b > a]
        if not chunks:
            return np.empty(0, dtype=np.int64)
        return np.sort(np.concatenate(chunks))


def _ring_cells(center: np.ndarray, r: int, dims: np.ndarray) -> np.ndarray:
    """Integer cells at Chebyshev distance exactly r from ``center``, in bounds."""
    if r == 0:
        return center[None, :]
    rng = np.arange(-r, r + 1)
    faces = []
    for axis in range(3):
        for sign in (-r, r):
            a, b = np.meshgrid(rng, rng, indexing="ij")
            cells = np.empty((a.size, 3), dtype=np.int64)
            cells[:, axis] = sign
            others = [ax for ax in range(3) if ax != axis]
            cells[:, others[0]] = a.ravel()
            cells[:, others[1]] = b.ravel()
            if axis > 0:  # drop rows already emitted by lower-axis faces
                keep = np.abs(cells[:, :axis]).max(axis=1) < r
                cells = cells[keep]
            faces.append(cells)
    cells = np.concatenate(faces, axis=0) + center
    ok = (cells >= 0).all(axis=1) & (cells < dims).all(axis=1)
    return cells[ok]


def _knn_grid(points: np.ndarray, queries: np.ndarray, k: int):
    grid = _VoxelGrid(points)
    idx_out = np.empty((queries.shape[0], k), dtype=np.int64)
    d2_out = np.empty((queries.shape[0], k), dtype=np.float32)
    max_ring = int(grid.dims.max()) + 1
    for qi in range(queries.shape[0]):
        q = queries[qi : qi + 1]
        center = grid.cell_of(q[0])
        cand: list[np.ndarray] = []
        count = 0
        kth_d2 = np.inf
        for r in range(max_ring + 1):
            cells = _ring_cells(center, r, grid.dims)
            if cells.size:
                pts_idx = grid.points_in_cells(cells)
                if pts_idx.size:
                    cand.append(pts_idx)
                    count += pts_idx.size
            # once k candidates exist, stop when the next ring cannot beat the kth
            if count >= k:
                all_idx = np.concatenate(cand)
                d2 = _sq_dists(q, points[all_idx])[0]
                order = np.argsort(d2, kind="stable")[:k]
                kth_d2 = d2[order[-1]]
                ring_lower = max(r, 0) * grid.cell  # next ring is >= r cells away
                if kth_d2 < ring_lower * ring_lower:
                    idx_out[qi] = all_idx[order]
                    d2_out[qi] = d2[order]
                    break
        else:
            all_idx = np.concatenate(cand) if cand else np.arange(points.shape[0])
            d2 = _sq_dists(q, points[all_idx])[0]
            order = np.argsort(d2, kind="stable")[:k]
            idx_out[qi] = all_idx[order]
            d2_out[qi] = d2[order]
    return idx_out, d2_out


def knn_indices(points: np.ndarray, queries: np.ndarray, k: int, method: str = "auto"):
    """Exact k nearest points for each query, sorted by (distance, index).

    Returns ``(indices, squared_distances)`` of shape (Q, k). ``method`` is
    "brute", "grid", or "auto" (grid only pays off past ~50k points).
    """
    points = np.asarray(points, dtype=np.float32)
    queries = np.asarray(queries, dtype=np.float32)
    if k > points.shape[0]:
        raise ValueError(f"k={k} exceeds point count {points.shape[0]}")
    if method == "auto":
        method = "grid" if points.shape[0] > _GRID_MIN_POINTS and queries.shape[0] <= 16_384 else "brute"
    if method == "grid":
        return _knn_grid(points, queries, k)
    return _knn_brute(points, queries, k)


def min_dists_to_set(queries: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Per query, squared distance to the nearest point of ``points`` (blocked)."""
    queries = np.asarray(queries, dtype=np.float32)
    points = np.asarray(points, dtype=np.float32)
    out = np.empty(queries.shape[0], dtype=np.float32)
    block = max(1, _BRUTE_BLOCK_BUDGET // max(points.shape[0], 1))
    for start in range(0, queries.shape[0], block):
        stop = min(start + block, queries.shape[0])
        out[start:stop] = _sq_dists(queries[start:stop], points).min(axis=1)
    return out


# ---------------------------------------------------------------------------
# spec operations
# ---------------------------------------------------------------------------


def farthest_point_sample(cloud: PointCloud, count: int, seed_index: int = 0) -> np.ndarray:
    """Greedy max-min selection of ``count`` point indices, starting at ``seed_index``.

    Each pick maximizes the distance to the already-selected set; ties break
    toward the lower index, so the result is deterministic and prefix-stable.
    """
    pts = cloud.points
    n = pts.shape[0]
    if not 1 <= count <= n:
        raise ValueError(f"count={count} out of range [1, {n}]")
    if not 0 <= seed_index < n:
        raise ValueError(f"seed_index={seed_index} out of range")
    selected = np.empty(count, dtype=np.int64)
    d2 = np.full(n, np.inf, dtype=np.float32)
    cur = int(seed_index)
    for i in range(count):
        selected[i] = cur
        diff = pts - pts[cur]
        np.minimum(d2, np.einsum("nd,nd->n", diff, diff), out=d2)
        cur = int(np.argmax(d2))
    return selected


def knn_group(cloud: PointCloud, center_indices: np.ndarray, k: int, method: str = "auto") -> PatchSet:
    """Group the k nearest points around each center into a patch."""
    if k > cloud.n:
        raise ValueError(f"k={k} exceeds cloud size {cloud.n}")
    center_indices = np.asarray(center_indices, dtype=np.int64)
    centers = cloud.points[center_indices]
    idx, _ = knn_indices(cloud.points, centers, k, method=method)
    return PatchSet(centers=centers, center_indices=center_indices, neighbor_indices=idx)


def three_nn_weights(queries: np.ndarray, support: np.ndarray):
    """Indices and normalized inverse-distance weights of the 3 nearest supports.

    A query closer than 1e-8 to its nearest support copies that support
    exactly (weight one-hot).
    """
    if support.shape[0] < 3:
        raise ValueError("need at least 3 support points")
    idx, d2 = knn_indices(support, queries, 3)
    d = np.sqrt(d2)
    w = 1.0 / (d + EPS_INTERP)
    w /= w.sum(axis=1, keepdims=True)
    coincident = d[:, 0] < EPS_INTERP
    if coincident.any():
        w[coincident] = 0.0
        w[coincident, 0] = 1.0
    return idx, w.astype(np.float32)


def interpolate_3nn(queries: np.ndarray, support: np.ndarray, support_features: np.ndarray) -> np.ndarray:
    """Inverse-distance weighted average of each query's 3 nearest support features."""
    idx, w = three_nn_weights(queries, support)
    return np.einsum("qj,qjd->qd", w, support_features[idx]).astype(support_features.dtype)


def normalize_unit_sphere(cloud: PointCloud) -> tuple[PointCloud, NormalizationTransform]:
    """Center on the centroid and scale so the farthest point sits on the unit sphere."""
    centroid = cloud.points.mean(axis=0)
    centered = cloud.points - centroid
    r = float(np.sqrt(np.einsum("nd,nd->n", centered, centered).max()))
    scale = 1.0 / r if r > 0 else 1.0
    tf = NormalizationTransform(centroid=centroid.astype(np.float32), scale=np.float32(scale))
    return PointCloud(points=(centered * scale), colors=cloud.colors), tf


def random_subsample(
    cloud: PointCloud,
    masks: list[np.ndarray],
    n: int,
    rng: np.random.Generator,
) -> tuple[PointCloud, list[np.ndarray]]:
    """Uniform sample of ``n`` points without replacement; masks re-indexed to match."""
    if n > cloud.n:
        raise ValueError(f"n={n} exceeds cloud size {cloud.n}")
    idx = rng.choice(cloud.n, size=n, replace=False)
    colors = cloud.colors[idx] if cloud.colors is not None else None
    sub = PointCloud(points=cloud.points[idx], colors=colors)
    return sub, [np.asarray(m)[idx] for m in masks]
