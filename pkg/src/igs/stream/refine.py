"""Keyframe refinement: Adam over all attributes, bounded densification, opacity pruning."""

from __future__ import annotations

from types import SimpleNamespace
from typing import Callable, Optional, Sequence

import numpy as np

from ..core import Camera, GaussianSet, Image, ValidationError, quat_normalize, quat_to_matrix, validate_gaussian_set
from ..render.raster import render_and_backward, render_color
from .config import RefineConfig
from .loss import loss

_ATTRS = ("mu", "rot", "scale", "opacity", "sh")
_ADAM_EPS = 1e-15
_LOGIT_CLIP = 1e-6


def scene_extent(gs, cfg: Optional[RefineConfig] = None) -> float:
    if cfg is not None and cfg.scene_extent:
        return float(cfg.scene_extent)
    mu = np.asarray(gs.mu, dtype=np.float64)
    if mu.shape[0] == 0:
        return 1.0
    return max(1.1 * float(np.linalg.norm(mu - mu.mean(axis=0), axis=1).max()), 1e-6)


def _arrays(gs) -> dict:
    return {a: np.array(getattr(gs, a), dtype=np.float64) for a in _ATTRS}


def _to_set(arrs: dict, sh_degree: int) -> GaussianSet:
    return GaussianSet(sh_degree=sh_degree, **arrs)


def densify_plan(arrs: dict, grads, cfg: RefineConfig, extent: float, directions=None, rng=None):
    """Densified arrays plus, per output row, the source row it carries over (-1 for new rows)."""
    n = arrs["mu"].shape[0]
    grads = np.asarray(grads, dtype=np.float64).reshape(-1)
    if grads.shape[0] != n:
        raise ValueError(f"got {grads.shape[0]} gradients for {n} Gaussians")
    headroom = max(cfg.n_max - n, 0)
    cand = np.flatnonzero(grads > cfg.grad_threshold)
    if headroom == 0 or cand.size == 0:
        return arrs, np.arange(n)
    ranked = cand[np.lexsort((cand, -grads[cand]))]
    chosen = ranked[:headroom]
    max_scale = arrs["scale"].max(axis=1)
    big = max_scale[chosen] > cfg.split_fraction * extent
    split, clone = np.sort(chosen[big]), np.sort(chosen[~big])

    # clones: a copy nudged one major-axis length down the positional gradient
    clone_arrs = {a: arrs[a][clone].copy() for a in _ATTRS}
    if directions is not None and clone.size:
        d = np.asarray(directions, dtype=np.float64)[clone]
        norm = np.linalg.norm(d, axis=1, keepdims=True)
        unit = np.where(norm > 0, d / np.where(norm > 0, norm, 1.0), 0.0)
        clone_arrs["mu"] = clone_arrs["mu"] - max_scale[clone, None] * unit

    # splits: two children inside the parent's 3-sigma ellipsoid, scale / 1.6
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    eps = rng.standard_normal((2, split.size, 3))
    en = np.linalg.norm(eps, axis=-1, keepdims=True)
    eps = np.where(en > 3.0, eps * (3.0 / np.maximum(en, 1e-12)), eps)
    rmat = quat_to_matrix(quat_normalize(arrs["rot"][split]))
    child = {a: np.concatenate([arrs[a][split]] * 2) for a in _ATTRS}
    offs = np.einsum("nij,knj->kni", rmat, eps * arrs["scale"][split][None])
    child["mu"] = (arrs["mu"][split][None] + offs).reshape(-1, 3)
    child["scale"] = child["scale"] / 1.6

    keep = np.setdiff1d(np.arange(n), split)
    out = {a: np.concatenate([arrs[a][keep], clone_arrs[a], child[a]]) for a in _ATTRS}
    src = np.concatenate([keep, np.full(clone.size + 2 * split.size, -1)])
    return out, src


def densify_bounded(gs: GaussianSet, view_space_grads, cfg: RefineConfig, extent: Optional[float] = None,
                    directions=None, rng=None) -> GaussianSet:
    """Clone or split the highest-gradient Gaussians, never exceeding ``cfg.n_max`` points."""
    if gs.count >= cfg.n_max:
        return gs
    extent = scene_extent(gs, cfg) if extent is None else extent
    arrs, src = densify_plan(_arrays(gs), view_space_grads, cfg, extent, directions, rng)
    if src.size == gs.count and (src >= 0).all():
        return gs
    return _to_set(arrs, gs.sh_degree)


def prune(gs: GaussianSet, cfg: RefineConfig) -> GaussianSet:
    keep = gs.opacity >= cfg.prune_opacity
    return gs if keep.all() else gs.select(keep)


class _Adam:
    def __init__(self, arrs: dict, beta1: float, beta2: float):
        self.b1, self.b2 = beta1, beta2
        self.m = {a: np.zeros_like(v) for a, v in arrs.items()}
        self.v = {a: np.zeros_like(v) for a, v in arrs.items()}
        self.t = 0

    def steps(self, grads: dict, lrs: dict) -> dict:
        self.t += 1
        out = {}
        for a, g in grads.items():
            self.m[a] = self.b1 * self.m[a] + (1 - self.b1) * g
            self.v[a] = self.b2 * self.v[a] + (1 - self.b2) * g * g
            mh = self.m[a] / (1 - self.b1**self.t)
            vh = self.v[a] / (1 - self.b2**self.t)
            out[a] = lrs[a] * mh / (np.sqrt(vh) + _ADAM_EPS)
        return out

    def remap(self, src: np.ndarray) -> None:
        for store in (self.m, self.v):
            for a, v in store.items():
                new = np.zeros((src.size,) + v.shape[1:])
                new[src >= 0] = v[src[src >= 0]]
                store[a] = new


def _as_views(views, cams=None):
    if cams is not None:
        views = list(zip(views, cams))
    out = []
    for img, cam in views:
        vals = np.asarray(getattr(img, "values", img), dtype=np.float64)
        if vals.shape != (cam.height, cam.width, 3):
            raise ValueError("view image does not match its camera resolution")
        out.append((vals, cam))
    if not out:
        raise ValueError("refinement needs at least one view")
    return out


def view_loss_and_grads(arrs: dict, sh_degree: int, views, lam: float, background):
    """Mean loss over views, parameter gradients, and per-Gaussian view-space gradient sums."""
    p = SimpleNamespace(sh_degree=sh_degree, **arrs)
    n = arrs["mu"].shape[0]
    total = 0.0
    g = {a: np.zeros_like(v) for a, v in arrs.items()}
    vs_sum = np.zeros(n)
    vs_hits = np.zeros(n)
    dir_sum = np.zeros((n, 3))
    nv = len(views)
    for target, cam in views:
        def pixel_loss(raw, target=target):
            # score the image as stored (clipped, float32) so a perfect fit has an exactly zero residual
            img = np.clip(raw, 0.0, 1.0).astype(np.float32).astype(np.float64)
            res = loss(img, target, lam)
            return res.value, res.grad * ((raw > 0.0) & (raw < 1.0))

        _, value, gr = render_and_backward(p, cam, pixel_loss, background)
        total += value / nv
        if n == 0:
            continue
        g["mu"] += gr.d_mu / nv
        g["rot"] += gr.d_rot / nv
        g["scale"] += gr.d_scale / nv
        g["opacity"] += gr.d_opacity / nv
        g["sh"] += gr.d_sh / nv
        seen = gr.touch_count > 0
        vs_sum += np.where(seen, gr.view_space_grad, 0.0)
        vs_hits += seen
        dir_sum += gr.d_mu
    return total, g, vs_sum, vs_hits, dir_sum


def refine_keyframe(
    initial: GaussianSet,
    views: Sequence,
    cfg: RefineConfig,
    cams: Optional[Sequence[Camera]] = None,
    background=(0.0, 0.0, 0.0),
    callback: Optional[Callable[[int, int, float], None]] = None,
) -> GaussianSet:
    """Optimize every attribute against multi-view targets.

    ``views`` is a sequence of (image, camera) pairs, or of images when
    ``cams`` is given. ``callback(iteration, count, loss)`` fires after each
    iteration, after any densify/prune step of that iteration; ``loss`` is the
    value of the state that iteration started from. With ``cfg.keep_best`` the
    lowest-loss state visited (the input included) is returned.
    """
    views = _as_views(views, cams)
    if cfg.iterations == 0:
        return initial
    if initial.count > cfg.n_max:
        raise ValidationError(f"initial set has {initial.count} points, above n_max={cfg.n_max}")
    bg = np.broadcast_to(np.asarray(background, dtype=np.float64), (3,))
    extent = scene_extent(initial, cfg)
    lrs = {"mu": cfg.lr_position * extent, "rot": cfg.lr_rotation, "scale": cfg.lr_scale,
           "opacity": cfg.lr_opacity, "sh": cfg.lr_sh}
    rng = np.random.default_rng(cfg.seed)
    deg = initial.sh_degree
    arrs = _arrays(initial)
    adam = _Adam(arrs, cfg.beta1, cfg.beta2)
    vs_sum = np.zeros(initial.count)
    vs_hits = np.zeros(initial.count)
    dir_sum = np.zeros((initial.count, 3))
    changed = False
    best_value, best = np.inf, None

    for it in range(cfg.iterations):
        value, g, vs, hits, dirs = view_loss_and_grads(arrs, deg, views, cfg.lam, bg)
        if cfg.keep_best and value < best_value:
            best_value, best = value, (None if not changed else {a: v.copy() for a, v in arrs.items()})
        vs_sum += vs
        vs_hits += hits
        dir_sum += dirs
        # optimize log-scale and logit-opacity, as positivity and [0, 1] must hold throughout
        op = np.clip(arrs["opacity"], _LOGIT_CLIP, 1 - _LOGIT_CLIP)
        g_t = dict(g, scale=g["scale"] * arrs["scale"], opacity=g["opacity"] * op * (1 - op))
        st = adam.steps(g_t, lrs)
        if any(np.any(s != 0) for s in st.values()):
            changed = True
            arrs["mu"] = arrs["mu"] - st["mu"]
            moved = np.any(st["rot"] != 0, axis=1)
            arrs["rot"][moved] = quat_normalize(arrs["rot"][moved] - st["rot"][moved])
            arrs["scale"] = arrs["scale"] * np.exp(-st["scale"])
            mov = st["opacity"] != 0
            logit = np.log(op[mov]) - np.log1p(-op[mov]) - st["opacity"][mov]
            arrs["opacity"][mov] = 1.0 / (1.0 + np.exp(-logit))
            arrs["sh"] = arrs["sh"] - st["sh"]

        if (it + 1) % cfg.densify_interval == 0:
            avg = vs_sum / np.maximum(vs_hits, 1)
            new, src = densify_plan(arrs, avg, cfg, extent, dir_sum, rng)
            keep = new["opacity"] >= cfg.prune_opacity
            if not keep.all() or src.size != arrs["mu"].shape[0] or (src < 0).any():
                changed = True
                arrs = {a: v[keep] for a, v in new.items()}
                adam.remap(src[keep])
                chk = validate_gaussian_set(_to_set(arrs, deg))
                if not chk.ok:
                    raise ValidationError(f"refinement produced an invalid set: {chk.message}")
            n = arrs["mu"].shape[0]
            vs_sum, vs_hits, dir_sum = np.zeros(n), np.zeros(n), np.zeros((n, 3))
        if callback is not None:
            callback(it, arrs["mu"].shape[0], value)

    if not changed:
        return initial
    if cfg.keep_best:
        final = view_loss(arrs, deg, views, cfg.lam, bg)
        if final >= best_value:
            return initial if best is None else _to_set(best, deg)
    return _to_set(arrs, deg)


def view_loss(arrs: dict, sh_degree: int, views, lam: float, background) -> float:
    """Mean refinement loss over views, forward pass only."""
    p = SimpleNamespace(sh_degree=sh_degree, **arrs)
    total = 0.0
    for target, cam in views:
        raw = render_color(p, cam, background)
        img = np.clip(raw, 0.0, 1.0).astype(np.float32).astype(np.float64)
        total += loss(img, target, lam).value / len(views)
    return total


def image_l1(gs: GaussianSet, views, cams=None, background=(0.0, 0.0, 0.0)) -> float:
    """Mean L1 over views of the stored render against the targets."""
    from ..render import rasterize

    vs = _as_views(views, cams)
    return float(np.mean([np.abs(rasterize(gs, cam, background).color.values - t).mean() for t, cam in vs]))
