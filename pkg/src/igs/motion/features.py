"""2D motion feature maps: extractors, pose/depth modulation, and the 3D lift onto anchors."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.ndimage import uniform_filter

from ..core import Camera
from .fps import AnchorSet
from .weights import ModulationWeights

IGSF_MAGIC = b"IGSF"
_IGSF_HEADER = struct.Struct("<4sIIII")


class FeatureError(ValueError):
    pass


@dataclass(frozen=True)
class FeatureMapSet:
    values: np.ndarray  # (V, C, H, W)
    cameras: tuple

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 4:
            raise FeatureError("feature values must be (V, C, H, W)")
        if len(self.cameras) != v.shape[0]:
            raise FeatureError("need one camera per view")
        if not np.isfinite(v).all():
            raise FeatureError("feature values must be finite")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "cameras", tuple(self.cameras))

    views = property(lambda self: self.values.shape[0])
    channels = property(lambda self: self.values.shape[1])
    height = property(lambda self: self.values.shape[2])
    width = property(lambda self: self.values.shape[3])


def _grid_sample_points(h: int, w: int, gh: int, gw: int):
    """Full-resolution pixel coordinates of feature-cell centers."""
    xs = (np.arange(gw) + 0.5) * (w / gw) - 0.5
    ys = (np.arange(gh) + 0.5) * (h / gh) - 0.5
    return np.meshgrid(xs, ys)


def bilinear_sample(field: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Sample a (..., H, W) field at float pixel coordinates, clamped to the border."""
    h, w = field.shape[-2:]
    x = np.clip(x, 0.0, w - 1)
    y = np.clip(y, 0.0, h - 1)
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    wx = x - x0
    wy = y - y0
    return (
        field[..., y0, x0] * (1 - wx) * (1 - wy)
        + field[..., y0, x1] * wx * (1 - wy)
        + field[..., y1, x0] * (1 - wx) * wy
        + field[..., y1, x1] * wx * wy
    )


def encode_flow(flow: np.ndarray, channels: int) -> np.ndarray:
    """(2, H, W) flow -> (C, H, W): raw flow in channels 0-1, then sinusoids that vanish at zero."""
    if channels < 2:
        raise FeatureError("need at least two channels to hold a flow field")
    out = np.zeros((channels,) + flow.shape[1:])
    out[:2] = flow
    for c in range(2, channels):
        freq = 0.5 * 2.0 ** ((c - 2) // 2 % 8)
        out[c] = np.sin(freq * flow[c % 2])
    return out


class SyntheticExtractor:
    """Deterministic block matching over integer displacements within ``radius`` pixels."""

    name = "synthetic"

    def __init__(self, channels: int = 128, grid=(128, 128), radius: int = 3, patch: int = 5):
        self.channels = channels
        self.grid = tuple(grid)
        self.radius = radius
        self.patch = patch
        r = radius
        offs = [(dy, dx) for dy in range(-r, r + 1) for dx in range(-r, r + 1)]
        # stable sort by length: on equal cost the shortest displacement wins
        self.offsets = sorted(offs, key=lambda o: o[0] ** 2 + o[1] ** 2)

    def flow(self, prev: np.ndarray, curr: np.ndarray) -> np.ndarray:
        a = np.asarray(prev, dtype=np.float64).mean(axis=-1)
        b = np.asarray(curr, dtype=np.float64).mean(axis=-1)
        h, w = a.shape
        r = self.radius
        bp = np.pad(b, r, mode="edge")
        costs = np.empty((len(self.offsets), h, w))
        for i, (dy, dx) in enumerate(self.offsets):
            shifted = bp[r + dy : r + dy + h, r + dx : r + dx + w]
            costs[i] = uniform_filter(np.abs(shifted - a), size=self.patch, mode="nearest")
        gh, gw = self.grid
        xs, ys = _grid_sample_points(h, w, gh, gw)
        xi = np.clip(np.rint(xs), 0, w - 1).astype(np.int64)
        yi = np.clip(np.rint(ys), 0, h - 1).astype(np.int64)
        best = np.argmin(costs[:, yi, xi], axis=0)
        offs = np.asarray(self.offsets, dtype=np.float64)
        return np.stack([offs[best, 1], offs[best, 0]])

    def __call__(self, prev, curr, view: int) -> np.ndarray:
        return encode_flow(self.flow(prev, curr), self.channels)


class OracleExtractor:
    """Wraps ground-truth flow (per view, (H, W, 2) in full-resolution pixels)."""

    name = "oracle"

    def __init__(self, flows: Sequence[np.ndarray], channels: int = 128, grid=(128, 128)):
        self.flows = [np.asarray(f, dtype=np.float64) for f in flows]
        self.channels = channels
        self.grid = tuple(grid)

    def __call__(self, prev, curr, view: int) -> np.ndarray:
        f = self.flows[view]
        gh, gw = self.grid
        if f.shape[:2] == (gh, gw):
            uv = np.moveaxis(f, -1, 0)
        else:
            xs, ys = _grid_sample_points(f.shape[0], f.shape[1], gh, gw)
            uv = bilinear_sample(np.moveaxis(f, -1, 0), xs, ys)
        out = np.zeros((self.channels, gh, gw))
        out[:2] = uv
        return out


class MapFileExtractor:
    """Serves precomputed (pre-modulation) embeddings from an IGSF file."""

    name = "file"

    def __init__(self, path):
        self.maps = read_feature_maps(path)
        self.channels = self.maps.shape[1]
        self.grid = self.maps.shape[2:]

    def __call__(self, prev, curr, view: int) -> np.ndarray:
        return self.maps[view]


def get_extractor(name: str, channels: int = 128, grid=(128, 128), flows=None, path=None, **kw):
    if name == "synthetic":
        return SyntheticExtractor(channels, grid, **kw)
    if name == "oracle":
        if flows is None:
            raise FeatureError("oracle extractor needs ground-truth flows")
        return OracleExtractor(flows, channels, grid)
    if name == "file" or (path is None and Path(name).suffix == ".igsf"):
        return MapFileExtractor(path or name)
    raise FeatureError(f"unknown feature extractor {name!r}")


def pose_encoding(cam: Camera) -> np.ndarray:
    return np.concatenate([cam.center, cam.forward])


def extract_motion_features(
    prev: Sequence,
    curr: Sequence,
    cams: Sequence[Camera],
    depth: Sequence,
    extractor,
    modulation: Optional[ModulationWeights] = None,
) -> FeatureMapSet:
    nv = len(cams)
    if not (len(prev) == len(curr) == len(depth) == nv):
        raise FeatureError("prev, curr, depth and cameras must have the same view count")
    maps = []
    for v in range(nv):
        a = np.asarray(getattr(prev[v], "values", prev[v]))
        b = np.asarray(getattr(curr[v], "values", curr[v]))
        d = np.asarray(getattr(depth[v], "values", depth[v]), dtype=np.float64)
        d = d[..., 0] if d.ndim == 3 else d
        size = (cams[v].height, cams[v].width)
        if a.shape[:2] != size or b.shape[:2] != size or d.shape != size:
            raise FeatureError(f"view {v}: image resolution does not match camera {size}")
        emb = np.asarray(extractor(a, b, v), dtype=np.float64)
        if modulation is not None:
            c, gh, gw = emb.shape
            xs, ys = _grid_sample_points(size[0], size[1], gh, gw)
            d_grid = bilinear_sample(d, xs, ys)
            inputs = np.concatenate(
                [np.broadcast_to(pose_encoding(cams[v]), (gh, gw, 6)), d_grid[..., None]], axis=-1
            )
            s, sh = modulation(inputs)
            emb = np.moveaxis(s, -1, 0) * emb + np.moveaxis(sh, -1, 0)
        maps.append(emb)
    return FeatureMapSet(np.stack(maps), tuple(cams))


def lift_features(anchors: AnchorSet, maps: FeatureMapSet, strict: bool = False) -> AnchorSet:
    """Average bilinear reads of each anchor's projection over the views that see it."""
    m = anchors.count
    acc = np.zeros((m, maps.channels))
    counts = np.zeros(m, dtype=np.int64)
    gh, gw = maps.height, maps.width
    for j, cam in enumerate(maps.cameras):
        cg = cam.scaled(gw, gh)
        t = cg.world_to_camera(anchors.positions)
        z = t[:, 2]
        front = z > cg.near
        zs = np.where(front, z, 1.0)
        u = cg.fx * t[:, 0] / zs + cg.cx
        v = cg.fy * t[:, 1] / zs + cg.cy
        ok = front & (u >= 0) & (u <= gw - 1) & (v >= 0) & (v <= gh - 1)
        if not ok.any():
            continue
        read = bilinear_sample(maps.values[j], u[ok], v[ok])  # (C, n_ok)
        acc[ok] += read.T
        counts += ok
    if strict:
        feats = acc / maps.views
    else:
        feats = np.where(counts[:, None] > 0, acc / np.maximum(counts, 1)[:, None], 0.0)
    return anchors.with_features(feats, counts)


def write_feature_maps(path, maps: np.ndarray) -> None:
    arr = np.asarray(getattr(maps, "values", maps), dtype="<f4")
    if arr.ndim != 4:
        raise FeatureError("feature maps must be (V, C, H, W)")
    Path(path).write_bytes(_IGSF_HEADER.pack(IGSF_MAGIC, *arr.shape) + np.ascontiguousarray(arr).tobytes())


def read_feature_maps(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < _IGSF_HEADER.size:
        raise FeatureError("truncated IGSF file")
    magic, *dims = _IGSF_HEADER.unpack_from(data)
    if magic != IGSF_MAGIC:
        raise FeatureError(f"bad IGSF magic {magic!r}")
    n = int(np.prod(dims))
    if len(data) != _IGSF_HEADER.size + 4 * n:
        raise FeatureError("IGSF payload size does not match its dimensions")
    return np.frombuffer(data, dtype="<f4", offset=_IGSF_HEADER.size).astype(np.float64).reshape(dims)
