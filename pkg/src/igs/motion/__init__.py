"""Anchor-driven motion: FPS anchors, 2D features lifted to 3D, attention, KNN spread, decode."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ..core import Camera, GaussianSet, MotionField
from .attention import transformer_forward, transformer_tokens
from .decode import Calibration, apply_motion, calibrate_head, decode_motion, moved_mask
from .features import (
    FeatureError,
    FeatureMapSet,
    MapFileExtractor,
    OracleExtractor,
    SyntheticExtractor,
    extract_motion_features,
    get_extractor,
    lift_features,
    read_feature_maps,
    write_feature_maps,
)
from .fps import AnchorSet, farthest_point_indices, min_pairwise_distance, sample_anchors_fps
from .interp import interpolate_motion_features, knn_weights
from .weights import AgmWeights, DecodeHead, LayerWeights, ModulationWeights, load_weights, save_weights


@dataclass
class MotionConfig:
    anchors: int = 8192
    k: int = 8
    distance_scale: float = 1.0
    channels: int = 128
    grid_width: int = 128
    grid_height: int = 128
    views: int = 4
    strict_view_average: bool = False
    fps_seed_index: int = 0


def keyframe_anchors(keyframe: GaussianSet, cfg: MotionConfig) -> AnchorSet:
    return sample_anchors_fps(keyframe.mu, min(cfg.anchors, keyframe.count), cfg.fps_seed_index)


def infer_motion(
    keyframe: GaussianSet,
    prev: Sequence,
    curr: Sequence,
    cams: Sequence[Camera],
    weights: AgmWeights,
    extractor,
    cfg: Optional[MotionConfig] = None,
    depth: Optional[Sequence] = None,
    anchors: Optional[AnchorSet] = None,
) -> MotionField:
    """Full anchor-driven motion estimate for one frame relative to its keyframe."""
    cfg = cfg or MotionConfig()
    if keyframe.count == 0:
        return MotionField.identity(0)
    if depth is None:
        from ..render import rasterize

        depth = [rasterize(keyframe, c).depth for c in cams]
    anchors = anchors or keyframe_anchors(keyframe, cfg)
    maps = extract_motion_features(prev, curr, cams, depth, extractor, weights.modulation)
    lifted = lift_features(anchors, maps, strict=cfg.strict_view_average)
    refined = transformer_forward(lifted, weights)
    z = interpolate_motion_features(keyframe, refined, cfg.k, cfg.distance_scale)
    return decode_motion(z, weights)


__all__ = [
    "AgmWeights", "AnchorSet", "Calibration", "DecodeHead", "FeatureError", "FeatureMapSet", "LayerWeights",
    "MapFileExtractor", "ModulationWeights", "MotionConfig", "OracleExtractor", "SyntheticExtractor",
    "apply_motion", "calibrate_head", "decode_motion", "extract_motion_features", "farthest_point_indices",
    "get_extractor", "infer_motion", "interpolate_motion_features", "keyframe_anchors", "knn_weights",
    "lift_features", "load_weights", "min_pairwise_distance", "moved_mask", "read_feature_maps",
    "sample_anchors_fps", "save_weights", "transformer_forward", "transformer_tokens", "write_feature_maps",
]
