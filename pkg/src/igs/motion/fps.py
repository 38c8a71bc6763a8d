from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np


@dataclass(frozen=True)
class AnchorSet:
    """Anchor positions (M, 3) with optional per-anchor motion features (M, C)."""

    positions: np.ndarray
    features: Optional[np.ndarray] = None
    valid_view_counts: Optional[np.ndarray] = None
    source_index: Optional[np.ndarray] = None

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64)
        if pos.ndim != 2 or pos.shape[1] != 3 or pos.shape[0] < 1:
            raise ValueError("anchor positions must be (M >= 1, 3)")
        object.__setattr__(self, "positions", pos)
        if self.features is not None:
            f = np.asarray(self.features, dtype=np.float64)
            if f.ndim != 2 or f.shape[0] != pos.shape[0]:
                raise ValueError("anchor features must be (M, C)")
            if not np.isfinite(f).all():
                raise ValueError("anchor features must be finite")
            object.__setattr__(self, "features", f)

    @property
    def count(self) -> int:
        return self.positions.shape[0]

    def with_features(self, features, valid_view_counts=None) -> "AnchorSet":
        vc = self.valid_view_counts if valid_view_counts is None else valid_view_counts
        return AnchorSet(self.positions, features, vc, self.source_index)


def farthest_point_indices(positions: np.ndarray, m: int, seed_index: int = 0) -> np.ndarray:
    """Greedy farthest point sampling; ties go to the lowest index."""
    pts = np.asarray(positions, dtype=np.float64)
    n = pts.shape[0]
    if not 1 <= m <= n:
        raise ValueError(f"need 1 <= m <= N, got m={m}, N={n}")
    if not 0 <= seed_index < n:
        raise ValueError("seed_index out of range")
    chosen = np.empty(m, dtype=np.int64)
    chosen[0] = seed_index
    d2 = np.sum((pts - pts[seed_index]) ** 2, axis=1)
    d2[seed_index] = -1.0
    for i in range(1, m):
        nxt = int(np.argmax(d2))
        chosen[i] = nxt
        d2 = np.minimum(d2, np.sum((pts - pts[nxt]) ** 2, axis=1))
        d2[chosen[: i + 1]] = -1.0
    return chosen


def sample_anchors_fps(positions: np.ndarray, m: int, seed_index: int = 0) -> AnchorSet:
    idx = farthest_point_indices(positions, m, seed_index)
    return AnchorSet(np.asarray(positions, dtype=np.float64)[idx], source_index=idx)


def min_pairwise_distance(points: np.ndarray) -> float:
    from scipy.spatial.distance import pdist

    return float(pdist(np.asarray(points, dtype=np.float64)).min())
