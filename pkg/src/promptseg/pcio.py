"""Point-cloud and label file formats.

Binary clouds use the "PCB1" layout: magic, u32 N, u8 flags (bit0 =
has_colors), N x 3 f32 LE coordinates, then optionally N x 3 u8 colors
(mapped to [0, 1] by /255). The ASCII fallback is one ``x y z [r g b]`` line
per point. Labels are JSON: ``{"num_points": N, "masks": [{"name", "indices"}]}``
with sorted unique indices.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .geometry import PointCloud

PCB_MAGIC = b"PCB1"


def encode_pcb(cloud: PointCloud) -> bytes:
    flags = 1 if cloud.colors is not None else 0
    parts = [PCB_MAGIC, struct.pack("<IB", cloud.n, flags)]
    parts.append(np.ascontiguousarray(cloud.points, dtype="<f4").tobytes())
    if cloud.colors is not None:
        parts.append(np.clip(np.rint(cloud.colors * 255.0), 0, 255).astype(np.uint8).tobytes())
    return b"".join(parts)


def decode_pcb(buf: bytes) -> PointCloud:
    if buf[:4] != PCB_MAGIC:
        raise ValueError("not a PCB1 buffer")
    n, flags = struct.unpack_from("<IB", buf, 4)
    off = 9
    pts = np.frombuffer(buf, dtype="<f4", count=n * 3, offset=off).reshape(n, 3)
    off += n * 12
    colors = None
    if flags & 1:
        colors = np.frombuffer(buf, dtype=np.uint8, count=n * 3, offset=off).reshape(n, 3) / 255.0
        off += n * 3
    if off != len(buf):
        raise ValueError("PCB1 buffer has trailing bytes")
    return PointCloud(points=pts.astype(np.float32), colors=colors)


def save_cloud(path, cloud: PointCloud, ascii_fallback: bool = False) -> None:
    path = Path(path)
    if ascii_fallback:
        lines = []
        for i in range(cloud.n):
            row = " ".join(f"{v:.8g}" for v in cloud.points[i])
            if cloud.colors is not None:
                row += " " + " ".join(f"{v:.8g}" for v in cloud.colors[i])
            lines.append(row)
        path.write_text("\n".join(lines) + "\n")
    else:
        path.write_bytes(encode_pcb(cloud))


def load_cloud(path) -> PointCloud:
    path = Path(path)
    buf = path.read_bytes()
    if buf[:4] == PCB_MAGIC:
        return decode_pcb(buf)
    rows = []
    for line in buf.decode("utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        vals = [float(v) for v in line.split()]
        if len(vals) not in (3, 6):
            raise ValueError(f"{path}: expected 3 or 6 columns, got {len(vals)}")
        rows.append(vals)
    if not rows:
        raise ValueError(f"{path}: no points")
    arr = np.asarray(rows, dtype=np.float32)
    if arr.shape[1] == 6:
        return PointCloud(points=arr[:, :3], colors=arr[:, 3:])
    return PointCloud(points=arr)


def masks_to_label_json(num_points: int, masks: list[tuple[str, np.ndarray]]) -> dict:
    out = {"num_points": int(num_points), "masks": []}
    for name, mask in masks:
        mask = np.asarray(mask)
        if mask.dtype == bool:
            idx = np.flatnonzero(mask)
        else:
            idx = np.unique(mask.astype(np.int64))
        out["masks"].append({"name": str(name), "indices": [int(i) for i in idx]})
    return out


def label_json_to_masks(doc: dict) -> tuple[int, list[tuple[str, np.ndarray]]]:
    n = int(doc["num_points"])
    masks = []
    for entry in doc["masks"]:
        mask = np.zeros(n, dtype=bool)
        idx = np.asarray(entry["indices"], dtype=np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= n):
            raise ValueError(f"mask {entry['name']!r} has out-of-range indices")
        mask[idx] = True
        masks.append((str(entry["name"]), mask))
    return n, masks


def save_labels(path, num_points: int, masks: list[tuple[str, np.ndarray]]) -> None:
    Path(path).write_text(json.dumps(masks_to_label_json(num_points, masks), indent=1) + "\n")


def load_labels(path) -> tuple[int, list[tuple[str, np.ndarray]]]:
    return label_json_to_masks(json.loads(Path(path).read_text()))
