from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import GaussianSet, MotionField, ValidationError, quat_angle, quat_multiply, quat_normalize
from .weights import AgmWeights, DecodeHead

MOVE_EPS = 1e-6


def moved_mask(dmu: np.ndarray, drot: np.ndarray, eps: float = MOVE_EPS) -> np.ndarray:
    """Points whose displacement exceeds eps (world units) or whose rotation exceeds eps radians."""
    dmu = np.asarray(dmu, dtype=np.float64)
    ang = quat_angle(quat_normalize(np.asarray(drot, dtype=np.float64)))
    return (np.linalg.norm(dmu, axis=-1) > eps) | (ang > eps)


def decode_motion(features: np.ndarray, weights) -> MotionField:
    head = weights.head if isinstance(weights, AgmWeights) else weights
    z = np.asarray(features, dtype=np.float64)
    if z.ndim != 2 or z.shape[1] != head.weight.shape[0]:
        raise ValueError(f"features must be (N, {head.weight.shape[0]}), got {z.shape}")
    out = z @ head.weight + head.bias
    dmu, drot = out[:, :3], out[:, 3:]
    return MotionField(dmu, drot, moved_mask(dmu, drot))


def apply_motion(gs: GaussianSet, motion: MotionField) -> GaussianSet:
    """Translate and rotate the masked points; everything else passes through bit-identical."""
    if gs.count != motion.count:
        raise ValidationError(f"motion has {motion.count} entries for {gs.count} Gaussians")
    m = motion.moved_mask
    if not m.any():
        return gs
    mu = gs.mu.copy()
    rot = gs.rot.copy()
    mu[m] = (gs.mu[m].astype(np.float64) + motion.dmu[m].astype(np.float64)).astype(np.float32)
    q = quat_multiply(quat_normalize(gs.rot[m].astype(np.float64)), quat_normalize(motion.drot[m].astype(np.float64)))
    rot[m] = quat_normalize(q).astype(np.float32)
    return gs.replace(mu=mu, rot=rot)


@dataclass(frozen=True)
class Calibration:
    head: DecodeHead
    residual: float  # RMS of the fit over all target components


def calibrate_head(features: np.ndarray, targets: np.ndarray, ridge: float = 0.0) -> Calibration:
    """Ridge fit of a linear C -> 7 head with an unpenalized bias.

    The objective is the *mean* squared error plus ridge * |W|^2, so repeating
    every sample leaves the solution unchanged.
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if x.ndim != 2 or y.shape != (x.shape[0], 7):
        raise ValueError("need features (S, C) and targets (S, 7)")
    n, c = x.shape
    if n < c:
        raise ValueError(f"need at least C={c} samples, got {n}")
    if ridge < 0:
        raise ValueError("ridge must be non-negative")
    xm, ym = x.mean(axis=0), y.mean(axis=0)
    xc, yc = x - xm, y - ym
    if ridge == 0:
        if np.linalg.matrix_rank(xc) < c:
            raise ValueError("features are rank-deficient; use ridge > 0")
        w = np.linalg.lstsq(xc, yc, rcond=None)[0]
    else:
        w = np.linalg.solve(xc.T @ xc / n + ridge * np.eye(c), xc.T @ yc / n)
    b = ym - xm @ w
    resid = float(np.sqrt(np.mean((x @ w + b - y) ** 2)))
    return Calibration(DecodeHead(w, b), resid)
