"""Domain types shared across the pipeline.

Every type validates itself on construction and stores read-only arrays, so a
value that exists is a valid value. Storage precision is float32; callers that
need to accumulate convert to float64 themselves.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

QUAT_TOL = 1e-6
ROT_TOL = 1e-6


class ValidationError(ValueError):
    """Raised when a core type is constructed from invalid data."""


def sh_coeff_count(degree: int) -> int:
    return (degree + 1) ** 2


def _frozen(a, dtype=np.float32) -> np.ndarray:
    out = np.array(a, dtype=dtype, copy=True)
    out.flags.writeable = False
    return out


# ---------------------------------------------------------------------------
# Quaternion helpers, (w, x, y, z) scalar-first
# ---------------------------------------------------------------------------

IDENTITY_QUAT = np.array([1.0, 0.0, 0.0, 0.0])


def quat_normalize(q: np.ndarray, eps: float = 1e-8) -> np.ndarray:
    """Normalize quaternions along the last axis; degenerate inputs become identity."""
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    degenerate = n < eps
    out = np.where(degenerate, IDENTITY_QUAT, q / np.where(degenerate, 1.0, n))
    return out


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product a * b, broadcasting over leading axes."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    aw, ax, ay, az = np.moveaxis(a, -1, 0)
    bw, bx, by, bz = np.moveaxis(b, -1, 0)
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def quat_conjugate(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def quat_from_axis_angle(axis, angle) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis, axis=-1, keepdims=True)
    half = 0.5 * np.asarray(angle, dtype=np.float64)[..., None]
    return np.concatenate([np.cos(half), np.sin(half) * axis], axis=-1)


def quat_angle(q: np.ndarray) -> np.ndarray:
    """Rotation angle in radians of (not necessarily unit) quaternions."""
    q = quat_normalize(q)
    return 2.0 * np.arctan2(np.linalg.norm(q[..., 1:], axis=-1), np.abs(q[..., 0]))


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    """Rotation matrices for unit quaternions, shape (..., 3, 3)."""
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = np.moveaxis(q, -1, 0)
    return np.stack(
        [
            np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], -1),
            np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], -1),
            np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], -1),
        ],
        axis=-2,
    )


def matrix_to_quat(m: np.ndarray) -> np.ndarray:
    """Unit quaternion (w >= 0) for a single rotation matrix."""
    m = np.asarray(m, dtype=np.float64)
    tr = np.trace(m)
    if tr > 0:
        s = np.sqrt(tr + 1.0) * 2
        q = [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2
        q = [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
    elif m[1, 1] > m[2, 2]:
        s = np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2
        q = [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
    else:
        s = np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2
        q = [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
    q = np.array(q)
    return q if q[0] >= 0 else -q


# ---------------------------------------------------------------------------
# Gaussians
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Validation:
    """Outcome of an invariant check. Truthy when everything holds."""

    ok: bool
    message: str = "ok"
    index: Optional[int] = None

    def __bool__(self) -> bool:
        return self.ok


def validate_gaussian_set(gs) -> Validation:
    """Check GaussianSet invariants on anything exposing the attribute arrays.

    Accepts a GaussianSet or any object with ``mu, rot, scale, opacity, sh,
    sh_degree`` attributes (e.g. a SimpleNamespace of raw arrays) and reports
    the first violation found, checked attribute by attribute.
    """
    mu = np.asarray(gs.mu)
    n = mu.shape[0] if mu.ndim == 2 else -1
    if mu.ndim != 2 or mu.shape[1] != 3:
        return Validation(False, f"mu must have shape (N, 3), got {mu.shape}")
    rot = np.asarray(gs.rot)
    scale = np.asarray(gs.scale)
    opacity = np.asarray(gs.opacity)
    sh = np.asarray(gs.sh)
    k = sh_coeff_count(int(gs.sh_degree))
    shapes = {"rot": (rot, (n, 4)), "scale": (scale, (n, 3)), "opacity": (opacity, (n,)), "sh": (sh, (n, k, 3))}
    for name, (arr, shape) in shapes.items():
        if arr.shape != shape:
            return Validation(False, f"{name} must have shape {shape}, got {arr.shape}")
    if n == 0:
        return Validation(True)
    for name, arr in (("mu", mu), ("rot", rot), ("scale", scale), ("opacity", opacity), ("sh", sh)):
        bad = ~np.isfinite(arr.reshape(n, -1)).all(axis=1)
        if bad.any():
            i = int(np.argmax(bad))
            return Validation(False, f"non-finite {name} at {i}", i)
    norms = np.linalg.norm(rot.astype(np.float64), axis=1)
    bad = np.abs(norms - 1.0) > QUAT_TOL
    if bad.any():
        i = int(np.argmax(bad))
        return Validation(False, f"non-unit quaternion at {i}", i)
    bad = ~(scale > 0).all(axis=1)
    if bad.any():
        i = int(np.argmax(bad))
        return Validation(False, f"non-positive scale at {i}", i)
    bad = (opacity < 0) | (opacity > 1)
    if bad.any():
        i = int(np.argmax(bad))
        return Validation(False, f"opacity out of range at {i}", i)
    return Validation(True)


@dataclass(frozen=True)
class Gaussian:
    mu: np.ndarray
    rot: np.ndarray
    scale: np.ndarray
    opacity: float
    sh: np.ndarray
    sh_degree: int = 0

    def __post_init__(self):
        object.__setattr__(self, "mu", _frozen(self.mu).reshape(3))
        object.__setattr__(self, "rot", _frozen(self.rot).reshape(4))
        object.__setattr__(self, "scale", _frozen(self.scale).reshape(3))
        object.__setattr__(self, "opacity", float(np.float32(self.opacity)))
        object.__setattr__(self, "sh", _frozen(self.sh).reshape(sh_coeff_count(self.sh_degree), 3))
        check = validate_gaussian_set(
            _Arrays(self.mu[None], self.rot[None], self.scale[None], np.array([self.opacity]), self.sh[None], self.sh_degree)
        )
        if not check:
            raise ValidationError(check.message)


@dataclass
class _Arrays:
    mu: np.ndarray
    rot: np.ndarray
    scale: np.ndarray
    opacity: np.ndarray
    sh: np.ndarray
    sh_degree: int


@dataclass(frozen=True)
class GaussianSet:
    """Structure-of-arrays Gaussian scene for one frame.

    Shapes: mu (N, 3), rot (N, 4) unit quaternions (w, x, y, z), scale (N, 3)
    positive standard deviations, opacity (N,) in [0, 1], sh (N, K, 3) with
    K = (sh_degree + 1)**2 coefficients per color channel.
    """

    mu: np.ndarray
    rot: np.ndarray
    scale: np.ndarray
    opacity: np.ndarray
    sh: np.ndarray
    sh_degree: int = 0

    def __post_init__(self):
        for name in ("mu", "rot", "scale", "opacity", "sh"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        object.__setattr__(self, "sh_degree", int(self.sh_degree))
        check = validate_gaussian_set(self)
        if not check:
            raise ValidationError(check.message)

    @property
    def count(self) -> int:
        return self.mu.shape[0]

    def __len__(self) -> int:
        return self.count

    def __getitem__(self, i: int) -> Gaussian:
        return Gaussian(self.mu[i], self.rot[i], self.scale[i], self.opacity[i], self.sh[i], self.sh_degree)

    @classmethod
    def empty(cls, sh_degree: int = 0) -> "GaussianSet":
        k = sh_coeff_count(sh_degree)
        return cls(np.zeros((0, 3)), np.zeros((0, 4)), np.zeros((0, 3)), np.zeros(0), np.zeros((0, k, 3)), sh_degree)

    @classmethod
    def from_gaussians(cls, gaussians, sh_degree: int = 0) -> "GaussianSet":
        gaussians = list(gaussians)
        if not gaussians:
            return cls.empty(sh_degree)
        return cls(
            np.stack([g.mu for g in gaussians]),
            np.stack([g.rot for g in gaussians]),
            np.stack([g.scale for g in gaussians]),
            np.array([g.opacity for g in gaussians]),
            np.stack([g.sh for g in gaussians]),
            gaussians[0].sh_degree,
        )

    def replace(self, **changes) -> "GaussianSet":
        fields = dict(mu=self.mu, rot=self.rot, scale=self.scale, opacity=self.opacity, sh=self.sh, sh_degree=self.sh_degree)
        fields.update(changes)
        return GaussianSet(**fields)

    def select(self, index) -> "GaussianSet":
        return GaussianSet(self.mu[index], self.rot[index], self.scale[index], self.opacity[index], self.sh[index], self.sh_degree)

    def bit_equal(self, other: "GaussianSet") -> bool:
        if self.sh_degree != other.sh_degree or self.count != other.count:
            return False
        return all(
            getattr(self, n).tobytes() == getattr(other, n).tobytes() for n in ("mu", "rot", "scale", "opacity", "sh")
        )


# ---------------------------------------------------------------------------
# Cameras and images
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Camera:
    """Pinhole camera. Pixel centers sit at integer coordinates (col, row).

    ``rotation`` and ``translation`` map world points into the camera frame
    (x right, y down, z forward): p_cam = rotation @ p_world + translation.
    """

    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray
    translation: np.ndarray
    width: int
    height: int
    near: float = 0.01
    far: float = 100.0

    def __post_init__(self):
        object.__setattr__(self, "rotation", _frozen(self.rotation, np.float64).reshape(3, 3))
        object.__setattr__(self, "translation", _frozen(self.translation, np.float64).reshape(3))
        for name in ("fx", "fy", "cx", "cy", "near", "far"):
            object.__setattr__(self, name, float(getattr(self, name)))
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))
        if not (self.fx > 0 and self.fy > 0):
            raise ValidationError("focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise ValidationError("image dimensions must be >= 1")
        if not (0 < self.near < self.far):
            raise ValidationError("require 0 < near < far")
        r = self.rotation
        if np.abs(r @ r.T - np.eye(3)).max() > ROT_TOL or np.linalg.det(r) < 0:
            raise ValidationError("rotation must be orthonormal with det +1")

    @property
    def center(self) -> np.ndarray:
        return -self.rotation.T @ self.translation

    @property
    def forward(self) -> np.ndarray:
        return self.rotation[2].copy()

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation

    def project(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Pixel coordinates (N, 2) and camera depth (N,) of world points."""
        t = self.world_to_camera(points)
        z = t[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            uv = np.stack([self.fx * t[:, 0] / z + self.cx, self.fy * t[:, 1] / z + self.cy], axis=1)
        return uv, z

    def scaled(self, width: int, height: int) -> "Camera":
        """Same pose with intrinsics resampled to a width x height grid."""
        sx = width / self.width
        sy = height / self.height
        return Camera(
            self.fx * sx,
            self.fy * sy,
            (self.cx + 0.5) * sx - 0.5,
            (self.cy + 0.5) * sy - 0.5,
            self.rotation,
            self.translation,
            width,
            height,
            self.near,
            self.far,
        )

    def translated(self, offset) -> "Camera":
        """Camera moved rigidly by a world-space offset."""
        return Camera(
            self.fx, self.fy, self.cx, self.cy, self.rotation,
            self.translation - self.rotation @ np.asarray(offset, dtype=np.float64),
            self.width, self.height, self.near, self.far,
        )

    @classmethod
    def look_at(cls, eye, target, up, fx, fy, width, height, cx=None, cy=None, near=0.01, far=100.0) -> "Camera":
        eye = np.asarray(eye, dtype=np.float64)
        z = np.asarray(target, dtype=np.float64) - eye
        z /= np.linalg.norm(z)
        x = np.cross(z, np.asarray(up, dtype=np.float64))
        x /= np.linalg.norm(x)
        y = np.cross(z, x)
        rot = np.stack([x, y, z])
        cx = (width - 1) / 2 if cx is None else cx
        cy = (height - 1) / 2 if cy is None else cy
        return cls(fx, fy, cx, cy, rot, -rot @ eye, width, height, near, far)

    def to_dict(self) -> dict:
        return {
            "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
            "rotation": self.rotation.tolist(), "translation": self.translation.tolist(),
            "width": self.width, "height": self.height, "near": self.near, "far": self.far,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Camera":
        return cls(**d)


@dataclass(frozen=True)
class Image:
    """Row-major image, values shaped (height, width, channels)."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float32)
        if v.ndim == 2:
            v = v[:, :, None]
        if v.ndim != 3 or v.shape[2] not in (1, 3) or v.shape[0] < 1 or v.shape[1] < 1:
            raise ValidationError(f"image must be (H, W, 1|3), got {v.shape}")
        if not np.isfinite(v).all():
            raise ValidationError("image values must be finite")
        object.__setattr__(self, "values", _frozen(v))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def channels(self) -> int:
        return self.values.shape[2]

    @classmethod
    def full(cls, width: int, height: int, value) -> "Image":
        value = np.atleast_1d(np.asarray(value, dtype=np.float32))
        return cls(np.broadcast_to(value, (height, width, value.shape[0])))


# ---------------------------------------------------------------------------
# Motion
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MotionField:
    """Per-Gaussian displacement, rotation delta and moved-point mask."""

    dmu: np.ndarray
    drot: np.ndarray
    moved_mask: np.ndarray = field(default=None)

    def __post_init__(self):
        dmu = _frozen(self.dmu).reshape(-1, 3)
        drot = _frozen(self.drot).reshape(-1, 4)
        if self.moved_mask is None:
            mask = np.ones(dmu.shape[0], dtype=bool)
        else:
            mask = np.asarray(self.moved_mask, dtype=bool).reshape(-1)
        mask = _frozen(mask, bool)
        if not (dmu.shape[0] == drot.shape[0] == mask.shape[0]):
            raise ValidationError("motion field arrays must share one length")
        if not (np.isfinite(dmu).all() and np.isfinite(drot).all()):
            raise ValidationError("motion field values must be finite")
        object.__setattr__(self, "dmu", dmu)
        object.__setattr__(self, "drot", drot)
        object.__setattr__(self, "moved_mask", mask)

    @property
    def count(self) -> int:
        return self.dmu.shape[0]

    @classmethod
    def identity(cls, count: int) -> "MotionField":
        drot = np.zeros((count, 4))
        drot[:, 0] = 1.0
        return cls(np.zeros((count, 3)), drot, np.zeros(count, dtype=bool))
