"""Tile-based software splatting: forward color/depth and the analytic backward pass.

Per-pixel opacity of a splat is ``opacity * window(q)`` where ``q`` is the
squared Mahalanobis distance under the floored 2D covariance. The window is
``exp(-q/2)`` minus its second-order Taylor expansion at the 3-sigma ellipse,
rescaled to 1 at the center, so value, slope and curvature all vanish at the
footprint edge. Splats outside their 3-sigma footprint therefore contribute
nothing and the image stays C2 in every parameter.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from ..core import Camera, GaussianSet, Image
from .projection import CULL_SIGMA, Projected, as_params, project_arrays

TILE = 16
T_MIN = 1e-4
Q_MAX = CULL_SIGMA**2
_EDGE = float(np.exp(-0.5 * Q_MAX))
_NORM = 1.0 / (1.0 - _EDGE * (1.0 + 0.5 * Q_MAX + 0.125 * Q_MAX**2))
# soft cap on elements of one (tiles, pixels, splats) working block
_BLOCK_ELEMS = 1 << 21


class ForwardStateError(ValueError):
    """Backward pass called with a forward state from different inputs."""


def window(q: np.ndarray) -> np.ndarray:
    """Footprint falloff in [0, 1]; 1 at the center, flat zero from q = 9 on."""
    r = Q_MAX - q
    return np.where(q < Q_MAX, (np.exp(-0.5 * q) - _EDGE * (1.0 + 0.5 * r + 0.125 * r * r)) * _NORM, 0.0)


def window_grad(q: np.ndarray) -> np.ndarray:
    r = Q_MAX - q
    return np.where(q < Q_MAX, (-0.5 * np.exp(-0.5 * q) + _EDGE * (0.5 + 0.25 * r)) * _NORM, 0.0)


def fingerprint(p, cam: Camera, background) -> str:
    h = hashlib.blake2b(digest_size=16)
    for a in (p.mu, p.rot, p.scale, p.opacity, p.sh):
        h.update(np.ascontiguousarray(a, dtype=np.float64).tobytes())
    h.update(np.asarray(background, dtype=np.float64).tobytes())
    h.update(repr(sorted(cam.to_dict().items())).encode())
    return h.hexdigest()


@dataclass
class TileLists:
    """Depth-sorted splat indices per tile, padded with -1."""

    tiles_x: int
    tiles_y: int
    tile_ids: np.ndarray  # (T,) tiles with at least one splat, shortest list first
    index: np.ndarray  # (T, K)
    counts: np.ndarray = None  # (T,) list length per tile


@dataclass
class ForwardState:
    """Everything the backward pass needs to replay one forward render."""

    key: str
    camera: Camera
    background: np.ndarray
    proj: Projected
    tiles: TileLists


@dataclass
class RenderOutput:
    color: Image
    depth: Image
    per_gaussian_touch_count: np.ndarray
    diagnostics: dict = field(default_factory=dict)
    state: ForwardState | None = None


@dataclass
class RenderGradients:
    """Loss gradients shaped like the GaussianSet attributes.

    ``view_space_grad`` holds the norm of the screen-space mean gradient in
    NDC units, the statistic used to drive densification.
    """

    d_mu: np.ndarray
    d_rot: np.ndarray
    d_scale: np.ndarray
    d_opacity: np.ndarray
    d_sh: np.ndarray
    view_space_grad: np.ndarray
    touch_count: np.ndarray


def build_tiles(proj: Projected, cam: Camera) -> TileLists:
    tx = (cam.width + TILE - 1) // TILE
    ty = (cam.height + TILE - 1) // TILE
    vis = np.flatnonzero(proj.visible)
    if vis.size == 0:
        return TileLists(tx, ty, np.zeros(0, dtype=np.int64), np.zeros((0, 0), dtype=np.int64), np.zeros(0, dtype=np.int64))
    r = proj.rect[vis]
    tx0, tx1 = r[:, 0] // TILE, r[:, 1] // TILE
    ty0, ty1 = r[:, 2] // TILE, r[:, 3] // TILE
    nx = tx1 - tx0 + 1
    ny = ty1 - ty0 + 1
    counts = nx * ny
    owner = np.repeat(np.arange(vis.size), counts)
    local = np.arange(owner.size) - np.repeat(np.cumsum(counts) - counts, counts)
    tile = (ty0[owner] + local // nx[owner]) * tx + tx0[owner] + local % nx[owner]
    gidx = vis[owner]
    depth = proj.t[gidx, 2]
    order = np.lexsort((gidx, depth, tile))
    tile, gidx = tile[order], gidx[order]
    tile_ids, starts, per_tile = np.unique(tile, return_index=True, return_counts=True)
    kmax = int(per_tile.max())
    index = np.full((tile_ids.size, kmax), -1, dtype=np.int64)
    row = np.repeat(np.arange(tile_ids.size), per_tile)
    col = np.arange(tile.size) - np.repeat(starts, per_tile)
    index[row, col] = gidx
    # group tiles of similar list length so each batch pads only to its own maximum
    by_len = np.argsort(per_tile, kind="stable")
    return TileLists(tx, ty, tile_ids[by_len], index[by_len], per_tile[by_len])


def _tile_batches(tiles: TileLists):
    """Consecutive tile slices (lists sorted by length) and the padded width each needs."""
    t = tiles.index.shape[0]
    s = 0
    while s < t:
        e = s + 1
        # grow while the batch, padded to its last (longest) list, stays within budget
        while e < t and (e + 1 - s) * TILE * TILE * max(int(tiles.counts[e]), 1) <= _BLOCK_ELEMS:
            e += 1
        yield slice(s, e), max(int(tiles.counts[e - 1]), 1)
        s = e


def _pixel_grid(tile_ids: np.ndarray, tiles: TileLists, cam: Camera):
    ly, lx = np.divmod(np.arange(TILE * TILE), TILE)
    px = (tile_ids % tiles.tiles_x)[:, None] * TILE + lx[None, :]
    py = (tile_ids // tiles.tiles_x)[:, None] * TILE + ly[None, :]
    inside = (px < cam.width) & (py < cam.height)
    return px, py, inside


@dataclass
class _Block:
    """Per-(tile, pixel, splat) blending quantities for one batch of tiles."""

    idx: np.ndarray
    px: np.ndarray
    py: np.ndarray
    inside: np.ndarray
    dx: np.ndarray
    dy: np.ndarray
    q: np.ndarray
    alpha: np.ndarray  # after early termination
    trans: np.ndarray  # transmittance in front of each splat
    t_final: np.ndarray


def _blend_block(proj: Projected, opacity: np.ndarray, tiles: TileLists, sl: slice, cam: Camera, k: int) -> _Block:
    idx = tiles.index[sl, :k]
    valid = idx >= 0
    safe = np.where(valid, idx, 0)
    px, py, inside = _pixel_grid(tiles.tile_ids[sl], tiles, cam)
    mean = proj.mean2d[safe]
    con = proj.conic[safe]
    dx = px[:, :, None] - mean[:, None, :, 0]
    dy = py[:, :, None] - mean[:, None, :, 1]
    q = con[:, None, :, 0] * dx * dx + 2.0 * con[:, None, :, 1] * dx * dy + con[:, None, :, 2] * dy * dy
    live = valid[:, None, :] & inside[:, :, None] & (q < Q_MAX)
    a = np.zeros(q.shape)
    a[live] = (opacity[safe][:, None, :] * np.ones_like(q))[live] * window(q[live])
    t_incl = np.cumprod(1.0 - a, axis=2)
    t_excl = np.concatenate([np.ones(a.shape[:2] + (1,)), t_incl[:, :, :-1]], axis=2)
    # a splat is blended only while transmittance in front of it is still >= T_MIN
    a = np.where(t_excl >= T_MIN, a, 0.0)
    t_incl = np.cumprod(1.0 - a, axis=2)
    t_excl = np.concatenate([np.ones(a.shape[:2] + (1,)), t_incl[:, :, :-1]], axis=2)
    return _Block(idx, px, py, inside, dx, dy, q, a, t_excl, t_incl[:, :, -1])


def _forward(p, cam: Camera, background, colors=None, keep=None):
    """Shared forward pass. ``colors`` overrides the SH color with arbitrary features;
    ``keep``, when a list, collects each batch's blend block for a later backward pass."""
    proj = project_arrays(p, cam)
    tiles = build_tiles(proj, cam)
    feats = proj.rgb if colors is None else np.asarray(colors, dtype=np.float64)
    nf = feats.shape[1]
    bg = np.broadcast_to(np.asarray(background, dtype=np.float64), (nf,))
    h, w = cam.height, cam.width
    color = np.empty((h, w, nf))
    color[:] = bg
    depth = np.full((h, w), cam.far)
    acc = np.zeros((h, w))
    touch = np.zeros(proj.t.shape[0], dtype=np.int64)
    for sl, k in _tile_batches(tiles):
        blk = _blend_block(proj, np.asarray(p.opacity, dtype=np.float64), tiles, sl, cam, k)
        if keep is not None:
            keep.append(blk)
        safe = np.where(blk.idx >= 0, blk.idx, 0)
        wgt = blk.alpha * blk.trans
        c = np.einsum("tpk,tkc->tpc", wgt, feats[safe]) + blk.t_final[:, :, None] * bg
        d = np.einsum("tpk,tk->tp", wgt, proj.t[safe, 2]) + blk.t_final * cam.far
        m = blk.inside
        color[blk.py[m], blk.px[m]] = c[m]
        depth[blk.py[m], blk.px[m]] = d[m]
        acc[blk.py[m], blk.px[m]] = 1.0 - blk.t_final[m]
        hit = blk.alpha > 0
        touch += np.bincount(np.broadcast_to(safe[:, None, :], hit.shape)[hit], minlength=touch.size)
    return proj, tiles, color, depth / cam.far, acc, touch


def rasterize(gs: GaussianSet, cam: Camera, background=(0.0, 0.0, 0.0)) -> RenderOutput:
    """Render color and normalized expected depth of a GaussianSet."""
    p = as_params(gs)
    return render_params(p, cam, background)


def render_params(p, cam: Camera, background=(0.0, 0.0, 0.0)) -> RenderOutput:
    proj, tiles, color, depth, _, touch = _forward(p, cam, background)
    bg = np.asarray(background, dtype=np.float64)
    state = ForwardState(fingerprint(p, cam, bg), cam, bg, proj, tiles)
    diag = {"degenerate_skipped": proj.degenerate, "visible": int(proj.visible.sum()), "tiles": int(tiles.tile_ids.size)}
    return RenderOutput(Image(np.clip(color, 0.0, 1.0)), Image(depth), touch, diag, state)


def render_color(p, cam: Camera, background=(0.0, 0.0, 0.0)) -> np.ndarray:
    """Float64 color array (H, W, 3) without wrapping; used by optimizers and oracles."""
    return _forward(p, cam, background)[2]


def render_features(p, cam: Camera, features: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Alpha-blend per-Gaussian feature vectors; returns (blended, accumulated alpha)."""
    _, _, out, _, acc, _ = _forward(p, cam, 0.0, colors=features)
    return out, acc


def rasterize_backward(gs_or_params, cam: Camera, d_loss_d_pixels, state: ForwardState | None = None,
                       background=(0.0, 0.0, 0.0)) -> RenderGradients:
    """Reverse-mode gradients of the color image with respect to every attribute.

    ``d_loss_d_pixels`` has shape (H, W, 3). Gradients are taken with respect
    to the raw (possibly un-normalized) quaternion, the positive scales and the
    [0, 1] opacity, matching what a finite-difference probe would perturb.
    """
    p = as_params(gs_or_params) if isinstance(gs_or_params, GaussianSet) else gs_or_params
    bg = np.asarray(background, dtype=np.float64)
    if state is None:
        proj = project_arrays(p, cam)
        tiles = build_tiles(proj, cam)
    else:
        if state.key != fingerprint(p, cam, state.background):
            raise ForwardStateError("forward state does not match the inputs")
        proj, tiles, bg = state.proj, state.tiles, state.background
    g_img = np.asarray(d_loss_d_pixels, dtype=np.float64)
    if isinstance(d_loss_d_pixels, Image):
        g_img = d_loss_d_pixels.values.astype(np.float64)
    if g_img.shape != (cam.height, cam.width, 3):
        raise ValueError(f"pixel gradient must be ({cam.height}, {cam.width}, 3), got {g_img.shape}")

    return _backward(p, proj, (_blend_block(proj, np.asarray(p.opacity, dtype=np.float64), tiles, sl, cam, k)
                               for sl, k in _tile_batches(tiles)), g_img, bg, cam)


def render_and_backward(p, cam: Camera, pixel_loss, background=(0.0, 0.0, 0.0)):
    """One blend serving both passes: ``pixel_loss(color) -> (value, d value / d color)``.

    ``color`` is the unclipped float64 render. Returns (color, value, RenderGradients).
    """
    blocks: list = []
    proj, _, color, _, _, _ = _forward(p, cam, background, keep=blocks)
    value, g_img = pixel_loss(color)
    bg = np.asarray(background, dtype=np.float64)
    return color, value, _backward(p, proj, blocks, np.asarray(g_img, dtype=np.float64), bg, cam)


def _backward(p, proj: Projected, blocks, g_img: np.ndarray, bg: np.ndarray, cam: Camera) -> RenderGradients:
    n = proj.t.shape[0]
    opacity = np.asarray(p.opacity, dtype=np.float64)
    g_rgb = np.zeros((n, 3))
    g_op = np.zeros(n)
    g_mean = np.zeros((n, 2))
    g_con = np.zeros((n, 3))
    touch = np.zeros(n, dtype=np.int64)
    bg3 = np.broadcast_to(bg, (3,))

    for blk in blocks:
        safe = np.where(blk.idx >= 0, blk.idx, 0)
        col = proj.rgb[safe]  # (T, K, 3)
        g = np.where(blk.inside[:, :, None], g_img[np.minimum(blk.py, cam.height - 1), np.minimum(blk.px, cam.width - 1)], 0.0)
        d_alpha = _alpha_grads(blk, col, g, bg3)
        # everything below runs on the compressed list of (tile, pixel, splat) hits
        ti, pi, ki = np.nonzero(blk.alpha > 0)
        gi = safe[ti, ki]
        d_a = d_alpha[ti, pi, ki]
        q = blk.q[ti, pi, ki]
        d_q = d_a * opacity[gi] * window_grad(q)
        wgt = blk.alpha[ti, pi, ki] * blk.trans[ti, pi, ki]
        gp = g[ti, pi]
        for c in range(3):
            g_rgb[:, c] += np.bincount(gi, weights=wgt * gp[:, c], minlength=n)
        g_op += np.bincount(gi, weights=d_a * window(q), minlength=n)
        con = proj.conic[gi]
        dx, dy = blk.dx[ti, pi, ki], blk.dy[ti, pi, ki]
        g_mean[:, 0] += np.bincount(gi, weights=-2.0 * d_q * (con[:, 0] * dx + con[:, 1] * dy), minlength=n)
        g_mean[:, 1] += np.bincount(gi, weights=-2.0 * d_q * (con[:, 1] * dx + con[:, 2] * dy), minlength=n)
        g_con[:, 0] += np.bincount(gi, weights=d_q * dx * dx, minlength=n)
        g_con[:, 1] += np.bincount(gi, weights=d_q * 2.0 * dx * dy, minlength=n)
        g_con[:, 2] += np.bincount(gi, weights=d_q * dy * dy, minlength=n)
        touch += np.bincount(gi, minlength=n)

    grads = _chain_to_params(p, proj, cam, g_rgb, g_op, g_mean, g_con)
    grads.touch_count = touch
    return grads


def _alpha_grads(blk: _Block, col: np.ndarray, g: np.ndarray, bg3: np.ndarray) -> np.ndarray:
    """d loss / d alpha for every (tile, pixel, splat).

    With w_k = alpha_k T_k, the color behind splat j (at unit transmittance) is
    (sum_{k>j} w_k c_k + T_final bg) / (1 - alpha_j) / T_j, so one reverse
    cumulative sum replaces the sequential recurrence. Pixels holding a nearly
    opaque splat fall back to the recurrence to avoid dividing by ~0.
    """
    gc = np.einsum("tpc,tkc->tpk", g, col)
    wgc = blk.alpha * blk.trans * gc
    tail = np.cumsum(wgc[:, :, ::-1], axis=2)[:, :, ::-1]
    behind_sum = (tail - wgc) + (blk.t_final * (g @ bg3))[:, :, None]
    one_minus = 1.0 - blk.alpha
    d_alpha = blk.trans * gc - behind_sum / np.where(one_minus > 1e-3, one_minus, 1.0)
    hard = (one_minus <= 1e-3).any(axis=2)
    if hard.any():
        ti, pi = np.nonzero(hard)
        a, tr, cols = blk.alpha[ti, pi], blk.trans[ti, pi], col[ti]
        gg = g[ti, pi]
        behind = np.broadcast_to(bg3, gg.shape).copy()
        out = np.zeros(a.shape)
        for j in range(a.shape[1] - 1, -1, -1):
            cj = cols[:, j]
            out[:, j] = tr[:, j] * np.einsum("nc,nc->n", gg, cj - behind)
            aj = a[:, j, None]
            behind = aj * cj + (1.0 - aj) * behind
        d_alpha[ti, pi] = out
    return d_alpha


def _chain_to_params(p, proj: Projected, cam: Camera, g_rgb, g_op, g_mean, g_con) -> RenderGradients:
    from ..sh import sh_basis, sh_basis_grad

    n = proj.t.shape[0]
    w = cam.rotation

    # conic -> floored covariance: dL/dCov = -Q G Q
    qm = np.empty((n, 2, 2))
    qm[:, 0, 0], qm[:, 0, 1], qm[:, 1, 0], qm[:, 1, 1] = proj.conic[:, 0], proj.conic[:, 1], proj.conic[:, 1], proj.conic[:, 2]
    gq = np.empty((n, 2, 2))
    gq[:, 0, 0], gq[:, 1, 1] = g_con[:, 0], g_con[:, 2]
    gq[:, 0, 1] = gq[:, 1, 0] = 0.5 * g_con[:, 1]
    g_cov = -qm @ gq @ qm

    # cov2d = T Sigma T^T with T = J W
    tm = proj.jac @ w
    g_sigma = np.swapaxes(tm, 1, 2) @ g_cov @ tm
    g_t_mat = 2.0 * g_cov @ tm @ proj.sigma
    g_j = g_t_mat @ w.T

    x, y, z = proj.t[:, 0], proj.t[:, 1], np.where(proj.visible, proj.t[:, 2], 1.0)
    fx, fy = cam.fx, cam.fy
    g_t = np.zeros((n, 3))
    g_t[:, 0] = g_j[:, 0, 2] * (-fx / z**2) + g_mean[:, 0] * fx / z
    g_t[:, 1] = g_j[:, 1, 2] * (-fy / z**2) + g_mean[:, 1] * fy / z
    g_t[:, 2] = (
        g_j[:, 0, 0] * (-fx / z**2)
        + g_j[:, 0, 2] * (2 * fx * x / z**3)
        + g_j[:, 1, 1] * (-fy / z**2)
        + g_j[:, 1, 2] * (2 * fy * y / z**3)
        - g_mean[:, 0] * fx * x / z**2
        - g_mean[:, 1] * fy * y / z**2
    )
    d_mu = g_t @ w

    # Sigma = M M^T, M = R S
    s = np.asarray(p.scale, dtype=np.float64)
    m = proj.rotm * s[:, None, :]
    g_m = 2.0 * g_sigma @ m
    d_scale = np.einsum("nij,nij->nj", g_m, proj.rotm)
    g_r = g_m * s[:, None, :]
    d_qn = _rotation_grad_to_quat(proj.qn, g_r)
    rot = np.asarray(p.rot, dtype=np.float64)
    qnorm = np.linalg.norm(rot, axis=1)
    d_rot = (d_qn - proj.qn * np.sum(proj.qn * d_qn, axis=1, keepdims=True)) / np.where(qnorm > 0, qnorm, 1.0)[:, None]

    # SH color with clamp, then the view direction's dependence on mu
    live = (proj.rgb_raw > 0.0) & (proj.rgb_raw < 1.0)
    g_raw = g_rgb * live
    basis = sh_basis(proj.dirs, p.sh_degree)
    d_sh = basis[:, :, None] * g_raw[:, None, :]
    g_dir = np.einsum("nkc,nc,nka->na", np.asarray(p.sh, dtype=np.float64), g_raw, sh_basis_grad(proj.dirs, p.sh_degree))
    d_mu += (g_dir - proj.dirs * np.sum(proj.dirs * g_dir, axis=1, keepdims=True)) / np.where(proj.dist > 0, proj.dist, 1.0)[:, None]

    vis = proj.visible
    view_grad = np.hypot(g_mean[:, 0] * 0.5 * cam.width, g_mean[:, 1] * 0.5 * cam.height)
    out = RenderGradients(d_mu, d_rot, d_scale, g_op.copy(), d_sh, view_grad, np.zeros(n, dtype=np.int64))
    for name in ("d_mu", "d_rot", "d_scale", "d_opacity", "d_sh", "view_space_grad"):
        arr = getattr(out, name)
        arr[~vis] = 0.0
    return out


def _rotation_grad_to_quat(q: np.ndarray, g_r: np.ndarray) -> np.ndarray:
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    g = g_r
    dw = 2 * (-z * g[:, 0, 1] + y * g[:, 0, 2] + z * g[:, 1, 0] - x * g[:, 1, 2] - y * g[:, 2, 0] + x * g[:, 2, 1])
    dx = 2 * (
        y * g[:, 0, 1] + z * g[:, 0, 2] + y * g[:, 1, 0] - 2 * x * g[:, 1, 1] - w * g[:, 1, 2]
        + z * g[:, 2, 0] + w * g[:, 2, 1] - 2 * x * g[:, 2, 2]
    )
    dy = 2 * (
        -2 * y * g[:, 0, 0] + x * g[:, 0, 1] + w * g[:, 0, 2] + x * g[:, 1, 0] + z * g[:, 1, 2]
        - w * g[:, 2, 0] + z * g[:, 2, 1] - 2 * y * g[:, 2, 2]
    )
    dz = 2 * (
        -2 * z * g[:, 0, 0] - w * g[:, 0, 1] + x * g[:, 0, 2] + w * g[:, 1, 0] - 2 * z * g[:, 1, 1]
        + y * g[:, 1, 2] + x * g[:, 2, 0] + y * g[:, 2, 1]
    )
    return np.stack([dw, dx, dy, dz], axis=1)
