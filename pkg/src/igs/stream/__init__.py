"""Keyframe-guided streaming: schedule, loss, keyframe refinement and candidate deformation."""

from .config import IGS_L, IGS_S, PRESETS, RefineConfig, StreamConfig, config_from_dict, config_to_dict, load_config, preset
from .loss import LossResult, combine_loss, loss, ssim
from .pipeline import FrameInput, KeyFrame, StreamReport, StreamResult, deform_candidates, deform_frame, run_stream
from .refine import densify_bounded, densify_plan, image_l1, prune, refine_keyframe, scene_extent
from .schedule import KeyFrameSchedule, build_schedule

__all__ = [
    "IGS_L", "IGS_S", "PRESETS", "FrameInput", "KeyFrame", "KeyFrameSchedule", "LossResult", "RefineConfig",
    "StreamConfig", "StreamReport", "StreamResult", "build_schedule", "combine_loss", "config_from_dict",
    "config_to_dict", "deform_candidates", "deform_frame", "densify_bounded", "densify_plan", "image_l1",
    "load_config", "loss", "preset", "prune", "refine_keyframe", "run_stream", "scene_extent", "ssim",
]
