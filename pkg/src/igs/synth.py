"""Deterministic synthetic dynamic scenes with exact motion and flow ground truth.

A scene is a slab of Gaussians in front of a forward-facing arc of cameras.
Its motion program moves a tagged subset rigidly: every frame adds a constant
velocity and a constant spin about a fixed axis. The spin is composed on the
right of each orientation (rot_t = rot_0 * q(w t)) and, when a pivot is given,
also orbits positions about it. Optional events switch a subset's opacity from
a given frame onward.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from .core import Camera, GaussianSet, MotionField, quat_from_axis_angle, quat_multiply, quat_normalize, quat_to_matrix
from .render import rasterize
from .render.projection import as_params
from .render.raster import render_features


@dataclass
class SceneSpec:
    seed: int = 0
    gaussian_count: int = 500
    extent: float = 1.0  # half-width of the slab in x and y
    thickness: float = 0.1  # half-depth of the slab
    scale_range: tuple = (0.03, 0.09)
    opacity_range: tuple = (0.5, 0.95)
    sh_degree: int = 0
    frames: int = 11
    views: int = 4
    width: int = 96
    height: int = 96
    focal: float = 1.2  # focal length in units of image width
    distance: float = 4.0
    arc_degrees: float = 30.0
    heldout: bool = True
    background: tuple = (0.0, 0.0, 0.0)
    velocity: tuple = (0.02, 0.01, 0.0)  # world units per frame
    angular_velocity: float = 0.0  # radians per frame
    axis: tuple = (0.0, 0.0, 1.0)
    pivot: Optional[tuple] = None
    tagged_fraction: float = 1.0
    events: list = field(default_factory=list)  # [{"frame": t, "fraction": f, "opacity": a}]

    def __post_init__(self):
        if self.gaussian_count < 0 or self.frames < 1 or self.views < 1:
            raise ValueError("need gaussian_count >= 0, frames >= 1, views >= 1")
        if not 0.0 <= self.tagged_fraction <= 1.0:
            raise ValueError("tagged_fraction must lie in [0, 1]")

    @classmethod
    def from_dict(cls, data: dict) -> "SceneSpec":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ValueError(f"unknown scene keys: {sorted(unknown)}")
        data = {k: tuple(v) if isinstance(v, list) and k != "events" else v for k, v in data.items()}
        return cls(**data)

    @classmethod
    def load(cls, path) -> "SceneSpec":
        return cls.from_dict(yaml.safe_load(Path(path).read_text()) or {})

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in out.items()}


def camera_rig(spec: SceneSpec) -> list:
    """Cameras evenly spaced in yaw on an arc, all looking at the origin."""
    f = spec.focal * spec.width
    yaws = np.radians(np.linspace(-spec.arc_degrees / 2, spec.arc_degrees / 2, spec.views)) if spec.views > 1 else [0.0]
    return [_arc_camera(spec, y, 0.0, f) for y in yaws]


def heldout_camera(spec: SceneSpec) -> Camera:
    """A pose between rig cameras, slightly raised, never used for fitting."""
    step = spec.arc_degrees / max(spec.views - 1, 1)
    return _arc_camera(spec, np.radians(0.5 * step * 0.6), np.radians(3.0), spec.focal * spec.width)


def _arc_camera(spec: SceneSpec, yaw: float, pitch: float, f: float) -> Camera:
    d = spec.distance
    eye = d * np.array([np.sin(yaw) * np.cos(pitch), -np.sin(pitch), -np.cos(yaw) * np.cos(pitch)])
    return Camera.look_at(eye, [0.0, 0.0, 0.0], [0.0, -1.0, 0.0], f, f, spec.width, spec.height)


def _initial_arrays(spec: SceneSpec, rng: np.random.Generator) -> dict:
    n = spec.gaussian_count
    e, th = spec.extent, spec.thickness
    mu = np.column_stack([rng.uniform(-e, e, n), rng.uniform(-e, e, n), rng.uniform(-th, th, n)])
    rot = quat_normalize(rng.normal(size=(n, 4)))
    lo, hi = spec.scale_range
    scale = np.exp(rng.uniform(np.log(lo), np.log(hi), (n, 3))) * e
    opacity = rng.uniform(*spec.opacity_range, n)
    k = (spec.sh_degree + 1) ** 2
    sh = np.zeros((n, k, 3))
    sh[:, 0] = (rng.uniform(0.05, 0.95, (n, 3)) - 0.5) / 0.28209479177387814
    if k > 1:
        sh[:, 1:] = rng.normal(scale=0.1, size=(n, k - 1, 3))
    return dict(mu=mu, rot=rot, scale=scale, opacity=opacity, sh=sh)


@dataclass
class SyntheticSequence:
    spec: SceneSpec
    cameras: list
    heldout: Optional[Camera]
    base: dict  # float64 frame-0 attributes
    tagged: np.ndarray  # bool per Gaussian
    event_masks: list  # per event, bool per Gaussian

    @property
    def frame_count(self) -> int:
        return self.spec.frames

    def _check(self, t: int) -> None:
        if not 0 <= t < self.spec.frames:
            raise IndexError(f"frame {t} outside [0, {self.spec.frames})")

    def _spin(self, t: int) -> np.ndarray:
        return quat_from_axis_angle(np.asarray(self.spec.axis, dtype=np.float64), self.spec.angular_velocity * t)

    def positions(self, t: int) -> np.ndarray:
        """Exact float64 positions at frame t."""
        self._check(t)
        mu = self.base["mu"].copy()
        m = self.tagged
        if self.spec.pivot is not None and self.spec.angular_velocity != 0.0:
            c = np.asarray(self.spec.pivot, dtype=np.float64)
            r = quat_to_matrix(self._spin(t))
            mu[m] = (mu[m] - c) @ r.T + c
        mu[m] += t * np.asarray(self.spec.velocity, dtype=np.float64)
        return mu

    def gaussians(self, t: int) -> GaussianSet:
        return self._frames[t]

    @cached_property
    def _frames(self) -> list:
        out = []
        for t in range(self.spec.frames):
            rot = self.base["rot"].copy()
            if self.spec.angular_velocity != 0.0:
                rot[self.tagged] = quat_normalize(quat_multiply(rot[self.tagged], self._spin(t)))
            opacity = self.base["opacity"].copy()
            for ev, mask in zip(self.spec.events, self.event_masks):
                if t >= ev["frame"]:
                    opacity[mask] = ev["opacity"]
            out.append(GaussianSet(self.positions(t), rot, self.base["scale"], opacity, self.base["sh"], self.spec.sh_degree))
        return out

    @cached_property
    def images(self) -> list:
        """images[t][v] for the rig cameras."""
        bg = self.spec.background
        return [[rasterize(self.gaussians(t), c, bg).color for c in self.cameras] for t in range(self.spec.frames)]

    @cached_property
    def heldout_images(self) -> list:
        bg = self.spec.background
        return [rasterize(self.gaussians(t), self.heldout, bg).color for t in range(self.spec.frames)]

    def motion(self, src: int, dst: int) -> MotionField:
        """Exact per-Gaussian motion taking stored frame ``src`` to frame ``dst``."""
        self._check(src)
        self._check(dst)
        a = self.gaussians(src)
        n = a.count
        drot = np.zeros((n, 4))
        drot[:, 0] = 1.0
        dmu = np.zeros((n, 3))
        moving = src != dst and (np.any(self.spec.velocity) or self.spec.angular_velocity != 0.0)
        if not moving:
            return MotionField(dmu, drot, np.zeros(n, dtype=bool))
        m = self.tagged
        # measured from the stored float32 source so apply_motion lands on the target
        dmu[m] = self.positions(dst)[m] - a.mu[m].astype(np.float64)
        if self.spec.angular_velocity != 0.0:
            drot[m] = self._spin(dst - src)
        moved = m.copy()
        return MotionField(dmu, drot, moved)

    def flow(self, src: int, dst: int, view: int, camera: Optional[Camera] = None) -> np.ndarray:
        """Per-pixel 2D flow (H, W, 2) from frame ``src`` to ``dst``, splatted with frame ``src``'s weights."""
        cam = camera or self.cameras[view]
        gs = self.gaussians(src)
        p0, _ = cam.project(self.positions(src))
        p1, _ = cam.project(self.positions(dst))
        blended, acc = render_features(as_params(gs), cam, p1 - p0)
        return np.where(acc[..., None] > 1e-6, blended / np.maximum(acc, 1e-12)[..., None], 0.0)

    def frame_inputs(self, w: int) -> list:
        """FrameInputs whose flows run from each frame's deformation source keyframe."""
        from .stream import FrameInput

        out = []
        for t in range(self.spec.frames):
            src = (t // w) * w
            if src == t and t > 0:
                src = t - w
            flows = [self.flow(src, t, v) for v in range(len(self.cameras))]
            out.append(FrameInput(t, list(self.images[t]), flows))
        return out


def generate_sequence(spec: SceneSpec) -> SyntheticSequence:
    rng = np.random.default_rng(spec.seed)
    base = _initial_arrays(spec, rng)
    n = spec.gaussian_count
    tagged = np.zeros(n, dtype=bool)
    tagged[rng.permutation(n)[: int(round(spec.tagged_fraction * n))]] = True
    masks = []
    for ev in spec.events:
        m = np.zeros(n, dtype=bool)
        m[rng.permutation(n)[: int(round(ev.get("fraction", 0.1) * n))]] = True
        masks.append(m)
    cams = camera_rig(spec)
    held = heldout_camera(spec) if spec.heldout else None
    return SyntheticSequence(spec, cams, held, base, tagged, masks)


def oracle_motion_field(seq: SyntheticSequence, frame: int, w: int = 5) -> MotionField:
    """Ground-truth motion of ``frame`` relative to its governing keyframe (interval ``w``)."""
    seq._check(frame)
    return seq.motion((frame // w) * w, frame)


def oracle_training_pairs(spec: SceneSpec, weights, mcfg, w: int = 5) -> tuple[np.ndarray, np.ndarray]:
    """(features, targets) rows for every non-key frame of ``spec``, using oracle flow.

    Features are the interpolated per-Gaussian motion features the pipeline
    feeds its decode head; targets are the exact (dmu, drot) 7-vectors.
    """
    from .motion import (
        OracleExtractor,
        extract_motion_features,
        interpolate_motion_features,
        keyframe_anchors,
        lift_features,
        transformer_forward,
    )

    seq = generate_sequence(spec)
    grid = (mcfg.grid_height, mcfg.grid_width)
    xs, ys = [], []
    for key in range(0, spec.frames, w):
        gs = seq.gaussians(key)
        anchors = keyframe_anchors(gs, mcfg)
        depth = [rasterize(gs, c).depth for c in seq.cameras]
        for t in range(key + 1, min(key + w, spec.frames)):
            ex = OracleExtractor([seq.flow(key, t, v) for v in range(len(seq.cameras))], mcfg.channels, grid)
            maps = extract_motion_features(seq.images[key], seq.images[t], seq.cameras, depth, ex, weights.modulation)
            lifted = lift_features(anchors, maps, mcfg.strict_view_average)
            z = interpolate_motion_features(gs, transformer_forward(lifted, weights), mcfg.k, mcfg.distance_scale)
            gt = seq.motion(key, t)
            xs.append(z)
            ys.append(np.hstack([gt.dmu, gt.drot]))
    return np.vstack(xs), np.vstack(ys)


def calibrate_oracle_weights(base: SceneSpec, mcfg, layers: int = 4, heads: int = 8, sequences: int = 6,
                             speed: float = 0.03, seed: int = 5, ridge: float = 1e-9):
    """Zero-initialized attention weights whose decode head is fit by least squares.

    Calibration scenes share ``base``'s rig and sizes but use fresh seeds and
    random in-plane velocities, so the evaluation scene is never seen.
    Returns (weights, Calibration).
    """
    from .motion import AgmWeights, calibrate_head

    weights = AgmWeights.zeros(mcfg.channels, layers, heads)
    rng = np.random.default_rng(seed)
    xs, ys = [], []
    for i in range(sequences):
        v = rng.uniform(-speed, speed, 3)
        v[2] = 0.0
        spec = dataclasses.replace(base, seed=base.seed + 100 + i, velocity=tuple(v), frames=5,
                                   angular_velocity=0.0, events=[], tagged_fraction=1.0)
        x, y = oracle_training_pairs(spec, weights, mcfg, w=5)
        xs.append(x)
        ys.append(y)
    cal = calibrate_head(np.vstack(xs), np.vstack(ys), ridge)
    weights.head = cal.head
    return weights, cal
