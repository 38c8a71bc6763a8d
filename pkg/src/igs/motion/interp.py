from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

from .fps import AnchorSet


def knn_weights(query: np.ndarray, anchors: np.ndarray, k: int = 8, distance_scale: float = 1.0):
    """Indices (N, k) of the k nearest anchors and their normalized exp(-d / scale) weights."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if distance_scale <= 0:
        raise ValueError("distance_scale must be positive")
    anchors = np.asarray(anchors, dtype=np.float64)
    k = min(k, anchors.shape[0])
    dist, idx = cKDTree(anchors).query(np.asarray(query, dtype=np.float64), k=k)
    dist = dist.reshape(len(query), k)
    idx = idx.reshape(len(query), k)
    # shifting by the nearest distance cancels in the normalization and avoids underflow
    w = np.exp(-(dist - dist[:, :1]) / distance_scale)
    return idx, w / w.sum(axis=1, keepdims=True)


def interpolate_motion_features(gaussians, anchors: AnchorSet, k: int = 8, distance_scale: float = 1.0) -> np.ndarray:
    if anchors.features is None:
        raise ValueError("anchors carry no features")
    pos = getattr(gaussians, "mu", gaussians)
    pos = np.asarray(pos, dtype=np.float64).reshape(-1, 3)
    if pos.shape[0] == 0:
        return np.zeros((0, anchors.features.shape[1]))
    idx, w = knn_weights(pos, anchors.positions, k, distance_scale)
    return np.einsum("nk,nkc->nc", w, anchors.features[idx])
