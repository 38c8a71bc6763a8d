"""Covariance construction and EWA projection of 3D Gaussians to screen space."""

from __future__ import annotations

from dataclasses import dataclass
from types import SimpleNamespace
from typing import Optional

import numpy as np

from ..core import Camera, Gaussian, GaussianSet, quat_normalize, quat_to_matrix, sh_coeff_count
from ..sh import sh_to_rgb_raw

# low-pass floor added to the 2D covariance diagonal before inversion, px^2
COV_FLOOR = 0.3
# footprint radius in standard deviations of the major axis
CULL_SIGMA = 3.0


def build_covariance(rot, scale) -> np.ndarray:
    """R diag(scale^2) R^T for unit quaternion(s) and per-axis std devs."""
    r = quat_to_matrix(quat_normalize(rot))
    s = np.asarray(scale, dtype=np.float64)
    m = r * s[..., None, :]
    return m @ np.swapaxes(m, -1, -2)


def as_params(gs: GaussianSet) -> SimpleNamespace:
    """Float64 working copy of a set's attributes (rot left un-normalized)."""
    return SimpleNamespace(
        mu=gs.mu.astype(np.float64),
        rot=gs.rot.astype(np.float64),
        scale=gs.scale.astype(np.float64),
        opacity=gs.opacity.astype(np.float64),
        sh=gs.sh.astype(np.float64),
        sh_degree=gs.sh_degree,
    )


@dataclass(frozen=True)
class Splat2D:
    mean2d: np.ndarray
    cov2d: np.ndarray
    depth: float
    alpha: float
    rgb: np.ndarray


@dataclass
class Projected:
    """Screen-space quantities for every Gaussian plus the intermediates backward needs."""

    visible: np.ndarray  # (N,) bool: passed near-plane, degeneracy and footprint culls
    t: np.ndarray  # camera-space centers (N, 3)
    mean2d: np.ndarray  # (N, 2)
    cov2d: np.ndarray  # (N, 2, 2) before the floor
    conic: np.ndarray  # (N, 3) inverse of floored cov: xx, xy, yy
    radius: np.ndarray  # (N,) px
    rect: np.ndarray  # (N, 4) inclusive pixel ranges x0, x1, y0, y1
    rgb_raw: np.ndarray  # (N, 3) before clamping
    rgb: np.ndarray  # (N, 3)
    dirs: np.ndarray  # (N, 3) unit view directions
    dist: np.ndarray  # (N,) camera-center distances
    jac: np.ndarray  # (N, 2, 3)
    sigma: np.ndarray  # (N, 3, 3)
    rotm: np.ndarray  # (N, 3, 3)
    qn: np.ndarray  # (N, 4) normalized quaternions
    degenerate: int  # count skipped for non-positive floored determinant


def project_arrays(p, cam: Camera) -> Projected:
    mu = np.asarray(p.mu, dtype=np.float64)
    n = mu.shape[0]
    qn = quat_normalize(p.rot)
    rotm = quat_to_matrix(qn)
    s = np.asarray(p.scale, dtype=np.float64)
    m = rotm * s[:, None, :]
    sigma = m @ np.swapaxes(m, 1, 2)

    w = cam.rotation
    t = mu @ w.T + cam.translation
    z = t[:, 2]
    in_front = z > cam.near
    zs = np.where(in_front, z, 1.0)
    x, y = t[:, 0], t[:, 1]
    mean2d = np.stack([cam.fx * x / zs + cam.cx, cam.fy * y / zs + cam.cy], axis=1)

    jac = np.zeros((n, 2, 3))
    jac[:, 0, 0] = cam.fx / zs
    jac[:, 0, 2] = -cam.fx * x / (zs * zs)
    jac[:, 1, 1] = cam.fy / zs
    jac[:, 1, 2] = -cam.fy * y / (zs * zs)
    tm = jac @ w
    cov2d = tm @ sigma @ np.swapaxes(tm, 1, 2)

    a = cov2d[:, 0, 0] + COV_FLOOR
    b = cov2d[:, 0, 1]
    c = cov2d[:, 1, 1] + COV_FLOOR
    det = a * c - b * b
    ok_det = det > 0
    degenerate = int(np.count_nonzero(in_front & ~ok_det))
    safe_det = np.where(ok_det, det, 1.0)
    conic = np.stack([c / safe_det, -b / safe_det, a / safe_det], axis=1)
    mid = 0.5 * (a + c)
    lam_max = mid + np.sqrt(np.maximum(mid * mid - det, 0.0))
    radius = CULL_SIGMA * np.sqrt(np.maximum(lam_max, 0.0))

    x0 = np.ceil(mean2d[:, 0] - radius)
    x1 = np.floor(mean2d[:, 0] + radius)
    y0 = np.ceil(mean2d[:, 1] - radius)
    y1 = np.floor(mean2d[:, 1] + radius)
    x0 = np.clip(x0, 0, cam.width - 1)
    x1 = np.clip(x1, -1, cam.width - 1)
    y0 = np.clip(y0, 0, cam.height - 1)
    y1 = np.clip(y1, -1, cam.height - 1)
    # the clip keeps x0 >= 0, so x1 < x0 means the footprint misses all pixel centers
    on_screen = (x1 >= x0) & (y1 >= y0) & (mean2d[:, 0] + radius >= 0) & (mean2d[:, 1] + radius >= 0)
    on_screen &= (mean2d[:, 0] - radius <= cam.width - 1) & (mean2d[:, 1] - radius <= cam.height - 1)
    visible = in_front & ok_det & on_screen & np.isfinite(mean2d).all(axis=1)
    rect = np.stack([x0, x1, y0, y1], axis=1).astype(np.int64)

    v = mu - cam.center
    dist = np.linalg.norm(v, axis=1)
    dirs = v / np.where(dist > 0, dist, 1.0)[:, None]
    rgb_raw = sh_to_rgb_raw(p.sh, dirs, p.sh_degree) if n else np.zeros((0, 3))
    rgb = np.clip(rgb_raw, 0.0, 1.0)
    return Projected(visible, t, mean2d, cov2d, conic, radius, rect, rgb_raw, rgb, dirs, dist, jac, sigma, rotm, qn, degenerate)


def project_gaussian(g: Gaussian, cam: Camera) -> Optional[Splat2D]:
    """Project one Gaussian; returns None when it is culled."""
    p = SimpleNamespace(
        mu=g.mu[None].astype(np.float64),
        rot=g.rot[None].astype(np.float64),
        scale=g.scale[None].astype(np.float64),
        opacity=np.array([g.opacity]),
        sh=g.sh[None].astype(np.float64),
        sh_degree=g.sh_degree,
    )
    pr = project_arrays(p, cam)
    if not pr.visible[0]:
        return None
    return Splat2D(pr.mean2d[0], pr.cov2d[0], float(pr.t[0, 2]), float(g.opacity), pr.rgb[0])


def empty_params(sh_degree: int = 0) -> SimpleNamespace:
    k = sh_coeff_count(sh_degree)
    return SimpleNamespace(
        mu=np.zeros((0, 3)), rot=np.zeros((0, 4)), scale=np.zeros((0, 3)),
        opacity=np.zeros(0), sh=np.zeros((0, k, 3)), sh_degree=sh_degree,
    )
