from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class KeyFrameSchedule:
    frame_count: int
    interval: int
    keyframe_indices: tuple

    def governing(self, t: int) -> int:
        """Largest keyframe index <= t."""
        if not 0 <= t < self.frame_count:
            raise IndexError(f"frame {t} outside [0, {self.frame_count})")
        return (t // self.interval) * self.interval

    def is_keyframe(self, t: int) -> bool:
        return self.governing(t) == t

    def span(self, key: int) -> range:
        """Frames governed by keyframe ``key`` (key itself included)."""
        if key not in self.keyframe_indices:
            raise ValueError(f"{key} is not a keyframe")
        return range(key, min(key + self.interval, self.frame_count))

    def candidates(self, key: int) -> range:
        return range(key + 1, min(key + self.interval, self.frame_count))

    def governing_array(self) -> np.ndarray:
        return (np.arange(self.frame_count) // self.interval) * self.interval


def build_schedule(frame_count: int, w: int = 5) -> KeyFrameSchedule:
    if w < 1:
        raise ValueError("keyframe interval must be >= 1")
    if frame_count < 1:
        raise ValueError("need at least one frame")
    return KeyFrameSchedule(int(frame_count), int(w), tuple(range(0, frame_count, w)))
