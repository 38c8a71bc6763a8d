"""Brute-force per-pixel renderer used as an oracle for the tiled path.

Every splat is evaluated at every pixel, blending runs to the last splat with
no early termination, and the 2x2 inverse is taken with a general solver.
"""

from __future__ import annotations

import numpy as np

from ..core import Camera, GaussianSet, Image
from .projection import COV_FLOOR, as_params, project_arrays
from .raster import Q_MAX, RenderOutput

_E = np.exp(-0.5 * Q_MAX)


def falloff(q):
    # exp(-q/2) minus its quadratic Taylor polynomial at q = 9, normalized to 1 at q = 0
    d = q - Q_MAX
    taylor = _E * (1.0 - 0.5 * d + 0.125 * d * d)
    at_zero = _E * (1.0 + 0.5 * Q_MAX + 0.125 * Q_MAX * Q_MAX)
    return (np.exp(-0.5 * q) - taylor) / (1.0 - at_zero)


def rasterize_reference(gs: GaussianSet, cam: Camera, background=(0.0, 0.0, 0.0)) -> RenderOutput:
    p = as_params(gs)
    proj = project_arrays(p, cam)
    bg = np.broadcast_to(np.asarray(background, dtype=np.float64), (3,))
    h, w = cam.height, cam.width
    yy, xx = np.mgrid[0:h, 0:w]
    pix = np.stack([xx.ravel(), yy.ravel()], axis=1).astype(np.float64)

    in_front = proj.t[:, 2] > cam.near
    order = [i for i in np.lexsort((np.arange(gs.count), proj.t[:, 2])) if in_front[i]]

    trans = np.ones(pix.shape[0])
    color = np.zeros((pix.shape[0], 3))
    depth = np.zeros(pix.shape[0])
    touch = np.zeros(gs.count, dtype=np.int64)
    skipped = 0
    for i in order:
        cov = proj.cov2d[i] + COV_FLOOR * np.eye(2)
        if not np.linalg.det(cov) > 0:
            skipped += 1
            continue
        d = pix - proj.mean2d[i]
        q = np.einsum("pi,ij,pj->p", d, np.linalg.inv(cov), d)
        g = np.zeros_like(q)
        inner = q < Q_MAX
        g[inner] = falloff(q[inner])
        a = p.opacity[i] * g
        color += (a * trans)[:, None] * proj.rgb[i]
        depth += a * trans * proj.t[i, 2]
        touch[i] = int(np.count_nonzero(a > 0))
        trans = trans * (1.0 - a)
    color += trans[:, None] * bg
    depth += trans * cam.far
    return RenderOutput(
        Image(np.clip(color, 0.0, 1.0).reshape(h, w, 3)),
        Image((depth / cam.far).reshape(h, w, 1)),
        touch,
        {"degenerate_skipped": skipped},
    )
