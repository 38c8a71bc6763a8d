"""PLY interchange using the common Gaussian-splatting property names.

Stored per vertex (float32): x y z, nx ny nz (zeros), f_dc_0..2,
f_rest_0..(3(K-1)-1) channel-major (all red coefficients, then green, then
blue), opacity as a logit, scale_0..2 as natural logs, rot_0..3 as (w, x, y, z).
Import applies sigmoid, exp and quaternion normalization.
"""

from __future__ import annotations

import numpy as np
from plyfile import PlyData, PlyElement

from ..core import GaussianSet, ValidationError, quat_normalize, validate_gaussian_set

_OPACITY_EPS = 1e-7


class PlyFormatError(ValueError):
    pass


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _logit(p):
    p = np.clip(p, _OPACITY_EPS, 1.0 - _OPACITY_EPS)
    return np.log(p) - np.log1p(-p)


def export_ply(path, gs: GaussianSet) -> None:
    n = gs.count
    k = gs.sh.shape[1]
    names = ["x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"]
    names += [f"f_rest_{i}" for i in range(3 * (k - 1))]
    names += ["opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"]
    rest = np.transpose(gs.sh[:, 1:, :], (0, 2, 1)).reshape(n, -1)
    cols = np.concatenate(
        [
            gs.mu, np.zeros((n, 3)), gs.sh[:, 0, :], rest,
            _logit(gs.opacity.astype(np.float64))[:, None], np.log(gs.scale.astype(np.float64)), gs.rot,
        ],
        axis=1,
    ).astype(np.float32)
    arr = np.empty(n, dtype=[(nm, "<f4") for nm in names])
    for i, nm in enumerate(names):
        arr[nm] = cols[:, i]
    PlyData([PlyElement.describe(arr, "vertex")], byte_order="<").write(str(path))


def import_ply(path) -> GaussianSet:
    try:
        ply = PlyData.read(str(path))
        v = ply["vertex"]
    except (OSError, ValueError, KeyError) as exc:
        raise PlyFormatError(f"cannot read PLY vertex data: {exc}") from None
    props = {p.name for p in v.properties}

    def col(name):
        if name not in props:
            raise PlyFormatError(f"missing property {name}")
        a = np.asarray(v[name], dtype=np.float64)
        if not np.isfinite(a).all():
            raise PlyFormatError(f"non-finite value in property {name}")
        return a

    mu = np.stack([col(c) for c in ("x", "y", "z")], axis=1)
    dc = np.stack([col(f"f_dc_{i}") for i in range(3)], axis=1)
    nrest = sum(1 for p in props if p.startswith("f_rest_"))
    k = nrest // 3 + 1
    degree = int(round(np.sqrt(k))) - 1
    if nrest % 3 or (degree + 1) ** 2 != k or degree > 3:
        raise PlyFormatError(f"{nrest} f_rest properties do not form an SH degree 0-3 set")
    n = mu.shape[0]
    sh = np.zeros((n, k, 3))
    sh[:, 0] = dc
    if k > 1:
        rest = np.stack([col(f"f_rest_{i}") for i in range(nrest)], axis=1)
        sh[:, 1:] = np.transpose(rest.reshape(n, 3, k - 1), (0, 2, 1))
    opacity = _sigmoid(col("opacity"))
    scale = np.exp(np.stack([col(f"scale_{i}") for i in range(3)], axis=1))
    rot = quat_normalize(np.stack([col(f"rot_{i}") for i in range(4)], axis=1))
    try:
        gs = GaussianSet(mu, rot, scale, opacity, sh, degree)
    except ValidationError as exc:
        raise PlyFormatError(str(exc)) from None
    chk = validate_gaussian_set(gs)
    if not chk.ok:
        raise PlyFormatError(chk.message)
    return gs
