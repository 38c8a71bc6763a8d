"""Keyframe-guided streaming: deform candidates from the governing keyframe, refine keyframes."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..core import Camera, GaussianSet, MotionField
from ..motion import (
    AgmWeights,
    AnchorSet,
    MotionConfig,
    apply_motion,
    get_extractor,
    infer_motion,
    keyframe_anchors,
)
from ..render import rasterize
from .config import RefineConfig
from .refine import refine_keyframe
from .schedule import KeyFrameSchedule


@dataclass
class FrameInput:
    """Multi-view observations of one time step.

    ``flows`` (per view, (H, W, 2) pixels, measured from the keyframe this frame is
    deformed from: the governing keyframe, or the previous one for a keyframe)
    feeds the oracle extractor; ``feature_maps`` (V, C, Hg, Wg) feeds precomputed
    embeddings. Both are optional and only read by the matching extractor.
    """

    index: int
    images: list
    flows: Optional[list] = None
    feature_maps: Optional[np.ndarray] = None


@dataclass
class KeyFrame:
    index: int
    gaussians: GaussianSet
    images: list
    cameras: list
    schedule: KeyFrameSchedule
    depth: Optional[list] = None
    anchors: Optional[AnchorSet] = None

    def prepare(self, mcfg: MotionConfig) -> "KeyFrame":
        if self.depth is None:
            self.depth = [rasterize(self.gaussians, c).depth for c in self.cameras]
        if self.anchors is None and self.gaussians.count:
            self.anchors = keyframe_anchors(self.gaussians, mcfg)
        return self


def _extractor_for(name: str, frame: FrameInput, mcfg: MotionConfig):
    grid = (mcfg.grid_height, mcfg.grid_width)
    if name == "oracle":
        if frame.flows is None:
            raise ValueError(f"frame {frame.index}: oracle extractor needs flows")
        return get_extractor("oracle", mcfg.channels, grid, flows=frame.flows)
    if name == "file":
        if frame.feature_maps is None:
            raise ValueError(f"frame {frame.index}: no precomputed feature maps")
        maps = frame.feature_maps
        return lambda prev, curr, v: maps[v]
    return get_extractor(name, mcfg.channels, grid)


def deform_frame(key: KeyFrame, frame: FrameInput, weights: AgmWeights, mcfg: MotionConfig,
                 extractor: str = "synthetic", governed: bool = True) -> tuple[GaussianSet, MotionField]:
    """Deform the keyframe toward ``frame``. ``governed=False`` admits the next keyframe
    (the prediction that refinement starts from)."""
    if governed and key.schedule.governing(frame.index) != key.index:
        raise ValueError(f"frame {frame.index} is not governed by keyframe {key.index}")
    key.prepare(mcfg)
    if key.gaussians.count == 0:
        return key.gaussians, MotionField.identity(0)
    motion = infer_motion(
        key.gaussians, key.images, frame.images, key.cameras, weights,
        _extractor_for(extractor, frame, mcfg), mcfg, depth=key.depth, anchors=key.anchors,
    )
    return apply_motion(key.gaussians, motion), motion


def deform_candidates(key: KeyFrame, frames: Sequence[FrameInput], weights: AgmWeights,
                      mcfg: Optional[MotionConfig] = None, extractor: str = "synthetic") -> list:
    """Deform every frame of the batch from the keyframe alone; outputs never feed each other."""
    mcfg = mcfg or MotionConfig()
    for f in frames:
        if key.schedule.governing(f.index) != key.index:
            raise ValueError(f"frame {f.index} is outside the span of keyframe {key.index}")
    return [deform_frame(key, f, weights, mcfg, extractor)[0] for f in frames]


@dataclass
class StreamReport:
    frame_seconds: list = field(default_factory=list)
    refinements: int = 0
    candidates: int = 0
    keyframe_predictions: int = 0

    @property
    def average_seconds(self) -> float:
        return float(np.mean(self.frame_seconds)) if self.frame_seconds else 0.0


@dataclass
class StreamResult:
    frames: list  # GaussianSet per frame
    motions: dict  # candidate frame -> MotionField relative to its keyframe
    keyframes: list
    report: StreamReport


def run_stream(
    first_frame: GaussianSet,
    video: Sequence[FrameInput],
    schedule: KeyFrameSchedule,
    weights: AgmWeights,
    cfg: RefineConfig,
    cameras: Sequence[Camera],
    mcfg: Optional[MotionConfig] = None,
    extractor: str = "synthetic",
    background=(0.0, 0.0, 0.0),
    on_frame=None,
) -> StreamResult:
    """Stream a multi-view video. Frame 0 is given; each later keyframe is the refined
    deformation of its predecessor; every candidate derives from its governing keyframe."""
    mcfg = mcfg or MotionConfig()
    if len(video) != schedule.frame_count:
        raise ValueError(f"schedule covers {schedule.frame_count} frames but video has {len(video)}")
    cameras = list(cameras)
    report = StreamReport()
    frames: list = []
    motions: dict = {}
    key = KeyFrame(0, first_frame, list(video[0].images), cameras, schedule)
    report.frame_seconds.append(0.0)
    frames.append(first_frame)
    if on_frame:
        on_frame(0, first_frame)
    for t in range(1, schedule.frame_count):
        t0 = time.perf_counter()
        frame = video[t]
        if frame.index != t:
            raise ValueError(f"video entry {t} carries index {frame.index}")
        if schedule.is_keyframe(t):
            # predicted from the previous keyframe, then refined against this frame's views
            pred, _ = deform_frame(key, frame, weights, mcfg, extractor, governed=False)
            report.keyframe_predictions += 1
            out = refine_keyframe(pred, list(zip(frame.images, cameras)), cfg, background=background)
            report.refinements += 1
            key = KeyFrame(t, out, list(frame.images), cameras, schedule)
        else:
            out, motion = deform_frame(key, frame, weights, mcfg, extractor)
            motions[t] = motion
            report.candidates += 1
        frames.append(out)
        report.frame_seconds.append(time.perf_counter() - t0)
        if on_frame:
            on_frame(t, out)
    keyframes = list(schedule.keyframe_indices)
    return StreamResult(frames, motions, keyframes, report)
