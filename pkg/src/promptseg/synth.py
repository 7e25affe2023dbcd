"""Synthetic part-labeled shapes: composed primitives surface-sampled into
point clouds with per-part masks plus the whole-object union mask.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import PointCloud, normalize_unit_sphere


@dataclass
class Primitive:
    kind: str                 # sphere | box | cylinder
    center: np.ndarray        # (3,)
    size: np.ndarray          # (3,) semi-axes / half-extents; cylinder: (r, r, half_h)
    rotation: np.ndarray | None = None
    color: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("sphere", "box", "cylinder"):
            raise ValueError(f"unknown primitive kind {self.kind!r}")
        self.center = np.asarray(self.center, dtype=np.float32)
        self.size = np.asarray(self.size, dtype=np.float32)
        if (self.size <= 0).any():
            raise ValueError("primitive size must be positive")

    def area(self) -> float:
        a, b, c = (float(v) for v in self.size)
        if self.kind == "sphere":
            p = 1.6075
            return 4.0 * np.pi * (((a * b) ** p + (a * c) ** p + (b * c) ** p) / 3.0) ** (1.0 / p)
        if self.kind == "box":
            return 8.0 * (a * b + b * c + a * c)
        r, h = a, c
        return 2.0 * np.pi * r * (2.0 * h) + 2.0 * np.pi * r * r


@dataclass
class SynthShapeSpec:
    primitives: list[Primitive]
    n_points: int = 10_000
    colored: bool = True

    def __post_init__(self):
        if len(self.primitives) < 2:
            raise ValueError("a shape needs at least two parts")
        if self.n_points < 4 * len(self.primitives):
            raise ValueError("too few points for the number of parts")


@dataclass
class TrainSample:
    cloud: PointCloud                      # normalized to the unit sphere
    masks: list[np.ndarray]                # per-part masks then the union mask
    mask_names: list[str] = field(default_factory=list)
    provenance: str = ""


def _unit_sphere_surface(n, rng):
    v = rng.normal(size=(n, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return v


def _box_surface(n, rng):
    # faces weighted equally in unit-cube half-extent space; size scaling keeps
    # the weighting close enough for desk-scale data
    face = rng.integers(0, 6, size=n)
    uv = rng.uniform(-1.0, 1.0, size=(n, 2))
    pts = np.empty((n, 3))
    axis = face // 2
    sign = np.where(face % 2 == 0, 1.0, -1.0)
    for a in range(3):
        rows = axis == a
        others = [i for i in range(3) if i != a]
        pts[rows, a] = sign[rows]
        pts[rows, others[0]] = uv[rows, 0]
        pts[rows, others[1]] = uv[rows, 1]
    return pts


def _cylinder_surface(n, rng):
    # unit radius, unit half-height; caps weighted by area ratio
    side_area = 2 * np.pi * 2.0
    cap_area = 2 * np.pi
    p_side = side_area / (side_area + cap_area)
    on_side = rng.random(n) < p_side
    theta = rng.uniform(0, 2 * np.pi, size=n)
    pts = np.empty((n, 3))
    pts[on_side, 0] = np.cos(theta[on_side])
    pts[on_side, 1] = np.sin(theta[on_side])
    pts[on_side, 2] = rng.uniform(-1.0, 1.0, size=int(on_side.sum()))
    flat = ~on_side
    r = np.sqrt(rng.random(int(flat.sum())))
    pts[flat, 0] = r * np.cos(theta[flat])
    pts[flat, 1] = r * np.sin(theta[flat])
    pts[flat, 2] = np.where(rng.random(int(flat.sum())) < 0.5, 1.0, -1.0)
    return pts


_SAMPLERS = {"sphere": _unit_sphere_surface, "box": _box_surface, "cylinder": _cylinder_surface}


def sample_primitive(prim: Primitive, n: int, rng: np.random.Generator) -> np.ndarray:
    pts = _SAMPLERS[prim.kind](n, rng) * prim.size
    if prim.rotation is not None:
        pts = pts @ prim.rotation.T
    return (pts + prim.center).astype(np.float32)


def _allocate_counts(areas: np.ndarray, total: int, floor: int) -> np.ndarray:
    counts = np.maximum(np.round(areas / areas.sum() * total).astype(int), floor)
    # trim or pad on the largest part to hit the exact total
    while counts.sum() != total:
        j = int(np.argmax(counts))
        counts[j] += 1 if counts.sum() < total else -1
    return counts


def build_sample(spec: SynthShapeSpec, rng: np.random.Generator, provenance: str = "") -> TrainSample:
    areas = np.array([p.area() for p in spec.primitives])
    floor = max(8, spec.n_points // (len(spec.primitives) * 20))
    counts = _allocate_counts(areas, spec.n_points, floor)

    chunks, colors, part_ids = [], [], []
    for pid, (prim, cnt) in enumerate(zip(spec.primitives, counts)):
        pts = sample_primitive(prim, int(cnt), rng)
        chunks.append(pts)
        part_ids.append(np.full(int(cnt), pid))
        if spec.colored:
            base = prim.color if prim.color is not None else rng.uniform(0.1, 0.9, size=3)
            noise = rng.normal(0.0, 0.03, size=(int(cnt), 3))
            colors.append(np.clip(base + noise, 0.0, 1.0))
    points = np.concatenate(chunks).astype(np.float32)
    part_ids = np.concatenate(part_ids)
    color_arr = np.concatenate(colors).astype(np.float32) if spec.colored else None

    perm = rng.permutation(spec.n_points)
    points, part_ids = points[perm], part_ids[perm]
    if color_arr is not None:
        color_arr = color_arr[perm]

    cloud, _ = normalize_unit_sphere(PointCloud(points=points, colors=color_arr))
    masks = [part_ids == pid for pid in range(len(spec.primitives))]
    names = [f"part_{pid}" for pid in range(len(spec.primitives))]
    masks.append(np.ones(spec.n_points, dtype=bool))
    names.append("object")
    for m in masks:
        if not m.any():
            raise ValueError("degenerate spec: a part produced an empty mask")
    return TrainSample(cloud=cloud, masks=masks, mask_names=names, provenance=provenance)


def _hsv_to_rgb(h: float, s: float, v: float) -> np.ndarray:
    i = int(h * 6) % 6
    f = h * 6 - int(h * 6)
    p, q, t = v * (1 - s), v * (1 - f * s), v * (1 - (1 - f) * s)
    rgb = [(v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q)][i]
    return np.asarray(rgb)


def _spread_anchors(n: int, rng: np.random.Generator, min_angle_deg: float = 72.0) -> np.ndarray:
    """n unit vectors with guaranteed pairwise angular separation."""
    min_cos = np.cos(np.radians(min_angle_deg))
    for _ in range(200):
        anchors: list[np.ndarray] = []
        for _ in range(6 * n):
            v = rng.normal(size=3)
            v /= np.linalg.norm(v)
            if all(float(v @ a) < min_cos for a in anchors):
                anchors.append(v)
            if len(anchors) == n:
                return np.stack(anchors)
    raise RuntimeError(f"could not spread {n} anchors at {min_angle_deg} degrees")


def random_shape_spec(
    rng: np.random.Generator,
    n_points: int = 10_000,
    parts: tuple[int, int] = (4, 6),
    colored: bool = True,
) -> SynthShapeSpec:
    """Primitives sit on well-separated spherical anchors (parts never touch);
    part colors come from well-separated hues."""
    n_parts = int(rng.integers(parts[0], parts[1] + 1))
    hue0 = rng.random()
    # anchors >= 72 degrees apart at radius ~0.55 keep centers >= ~0.64 apart,
    # above twice the largest primitive radius (|size| <= ~0.31)
    anchors = _spread_anchors(n_parts, rng)
    prims: list[Primitive] = []
    for i in range(n_parts):
        kind = ["sphere", "box", "cylinder"][int(rng.integers(0, 3))]
        size = rng.uniform(0.14, 0.18, size=3)
        if kind == "cylinder":
            size[1] = size[0]
        center = anchors[i] * rng.uniform(0.52, 0.60)
        angle = rng.uniform(0, 2 * np.pi)
        c, s = np.cos(angle), np.sin(angle)
        rot = np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]], dtype=np.float32)
        color = _hsv_to_rgb((hue0 + i / n_parts) % 1.0, rng.uniform(0.6, 0.9), rng.uniform(0.6, 0.95))
        prims.append(Primitive(kind=kind, center=center, size=size, rotation=rot, color=color))
    return SynthShapeSpec(primitives=prims, n_points=n_points, colored=colored)


def synth_dataset(
    count: int,
    rng: np.random.Generator,
    n_points: int = 10_000,
    parts: tuple[int, int] = (4, 6),
    colored: bool = True,
    tag: str = "synth",
) -> list[TrainSample]:
    if count < 1:
        raise ValueError("count must be >= 1")
    out = []
    for i in range(count):
        spec = random_shape_spec(rng, n_points=n_points, parts=parts, colored=colored)
        out.append(build_sample(spec, rng, provenance=f"{tag}/{i}"))
    return out
