"""Multi-view point rendering: pinhole cameras, z-buffered point splatting,
mask projection, and pixel-to-point lifting.

Index maps record, per pixel, which cloud point won the depth test (-1 for
empty pixels); depth ties break toward the lower point index.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import PointCloud


@dataclass
class Camera:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    rotation: np.ndarray     # (3, 3), world -> camera
    translation: np.ndarray  # (3,)

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float32)
        self.translation = np.asarray(self.translation, dtype=np.float32)
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal length must be positive")
        err = np.abs(self.rotation.T @ self.rotation - np.eye(3)).max()
        if err > 1e-5:
            raise ValueError(f"rotation not orthonormal (deviation {err:.2e})")

    def to_camera(self, points: np.ndarray) -> np.ndarray:
        return points @ self.rotation.T + self.translation

    def project(self, points: np.ndarray):
        """Pixel coordinates (col, row) and depth for world-space points."""
        cam = self.to_camera(points)
        z = cam[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            u = self.fx * cam[:, 0] / z + self.cx
            v = self.fy * cam[:, 1] / z + self.cy
        return u, v, z


@dataclass
class ViewRender:
    depth: np.ndarray   # (H, W) float32, +inf where empty
    index: np.ndarray   # (H, W) int32, -1 where empty
    camera: Camera

    @property
    def valid(self) -> np.ndarray:
        return self.index >= 0

    @property
    def empty(self) -> bool:
        return not (self.index >= 0).any()


def look_at(eye, target, up=(0.0, 1.0, 0.0)) -> tuple[np.ndarray, np.ndarray]:
    """World->camera rotation and translation, camera +z looking at ``target``."""
    eye = np.asarray(eye, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    fwd = target - eye
    fwd /= np.linalg.norm(fwd)
    up = np.asarray(up, dtype=np.float64)
    if abs(np.dot(fwd, up) / np.linalg.norm(up)) > 0.999:
        up = np.array([1.0, 0.0, 0.0]) if abs(fwd[0]) < 0.9 else np.array([0.0, 0.0, 1.0])
    right = np.cross(fwd, up)
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    rot = np.stack([right, down, fwd], axis=0)
    return rot.astype(np.float32), (-rot @ eye).astype(np.float32)


def default_cameras(
    n: int = 6,
    distance: float = 2.2,
    resolution: int = 256,
    focal: float = 280.0,
) -> list[Camera]:
    """Axis-aligned ring of cameras looking at the origin (unit-sphere clouds)."""
    dirs = [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)]
    cams = []
    for d in dirs[:n]:
        eye = np.asarray(d, dtype=np.float64) * distance
        rot, trans = look_at(eye, (0.0, 0.0, 0.0))
        cams.append(
            Camera(
                fx=focal,
                fy=focal,
                cx=resolution / 2.0,
                cy=resolution / 2.0,
                width=resolution,
                height=resolution,
                rotation=rot,
                translation=trans,
            )
        )
    return cams


def _splat_offsets(radius: int) -> np.ndarray:
    r = np.arange(-radius, radius + 1)
    dv, du = np.meshgrid(r, r, indexing="ij")
    keep = dv * dv + du * du <= radius * radius
    return np.stack([dv[keep], du[keep]], axis=1)


def render_views(cloud: PointCloud, cameras: list[Camera], splat_radius: int = 2) -> list[ViewRender]:
    """Z-buffered splatting of every point into every camera."""
    renders = []
    offsets = _splat_offsets(splat_radius)
    for cam in cameras:
        h, w = cam.height, cam.width
        u, v, z = cam.project(cloud.points)
        front = z > 1e-6
        cols = np.rint(u).astype(np.int64)
        rows = np.rint(v).astype(np.int64)
        pts = np.flatnonzero(front)

        prows = (rows[pts, None] + offsets[None, :, 0]).ravel()
        pcols = (cols[pts, None] + offsets[None, :, 1]).ravel()
        pidx = np.repeat(pts, offsets.shape[0])
        ok = (prows >= 0) & (prows < h) & (pcols >= 0) & (pcols < w)
        prows, pcols, pidx = prows[ok], pcols[ok], pidx[ok]
        depth = np.full((h, w), np.inf, dtype=np.float32)
        index = np.full((h, w), -1, dtype=np.int32)
        if pidx.size:
            flat = prows * w + pcols
            pz = z[pidx].astype(np.float32)
            order = np.lexsort((pidx, pz, flat))  # per pixel: nearest depth, then lowest index
            flat_s = flat[order]
            first = np.ones(flat_s.size, dtype=bool)
            first[1:] = flat_s[1:] != flat_s[:-1]
            sel = order[first]
            depth.ravel()[flat[sel]] = pz[sel]
            index.ravel()[flat[sel]] = pidx[sel]
        renders.append(ViewRender(depth=depth, index=index, camera=cam))
    return renders


def project_mask(mask3d: np.ndarray, view: ViewRender) -> np.ndarray:
    """Pixels whose winning point belongs to the 3-D mask."""
    mask3d = np.asarray(mask3d, dtype=bool)
    out = np.zeros(view.index.shape, dtype=bool)
    valid = view.index >= 0
    out[valid] = mask3d[view.index[valid]]
    return out


def lift_prompt(pixel: tuple[int, int], view: ViewRender) -> int:
    """Point index rendered at (row, col); empty pixels are an error."""
    row, col = int(pixel[0]), int(pixel[1])
    idx = int(view.index[row, col])
    if idx < 0:
        raise ValueError(f"pixel {pixel} is empty in this view")
    return idx
