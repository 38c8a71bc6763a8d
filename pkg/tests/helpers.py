"""Shared scene builders for the test suite."""

import numpy as np

from igs.core import Camera, GaussianSet, quat_normalize


def random_scene(rng, n, degree=1, scale=(0.05, 0.25), opacity=(0.1, 0.9), sh_std=0.4):
    mu = rng.uniform([-1, -1, -0.5], [1, 1, 0.5], (n, 3))
    rot = quat_normalize(rng.normal(size=(n, 4)))
    sc = rng.uniform(*scale, (n, 3))
    op = rng.uniform(*opacity, n)
    sh = rng.normal(scale=sh_std, size=(n, (degree + 1) ** 2, 3))
    return GaussianSet(mu, rot, sc, op, sh, degree)


def make_camera(width=64, height=None, focal=1.0):
    height = height or width
    return Camera.look_at([0.3, -0.2, -4.0], [0, 0, 0], [0, -1, 0], width * focal, width * focal, width, height)



def identity_camera(width=32, height=32, f=20.0):
    return Camera(f, f, (width - 1) / 2, (height - 1) / 2, np.eye(3), np.zeros(3), width, height)


def finite_difference_check(p, cam, weights, background, step=1e-3, rtol=1e-2, atol=1e-5):
    """Compare analytic gradients of sum(weights * render) with central differences.

    Returns {parameter: (violations, components)}.
    """
    from types import SimpleNamespace

    from igs.render import rasterize_backward, render_color

    gr = rasterize_backward(p, cam, weights, background=background)

    def objective(pp):
        return float(np.sum(weights * render_color(pp, cam, background)))

    out = {}
    for name, analytic in (("mu", gr.d_mu), ("rot", gr.d_rot), ("scale", gr.d_scale),
                           ("opacity", gr.d_opacity), ("sh", gr.d_sh)):
        base = getattr(p, name)
        bad = 0
        for idx in np.ndindex(base.shape):
            pp = SimpleNamespace(**vars(p))
            arr = base.copy()
            arr[idx] += step
            setattr(pp, name, arr)
            plus = objective(pp)
            arr = base.copy()
            arr[idx] -= step
            setattr(pp, name, arr)
            minus = objective(pp)
            fd = (plus - minus) / (2 * step)
            if abs(fd - analytic[idx]) > max(rtol * abs(fd), atol):
                bad += 1
        out[name] = (bad, base.size)
    return out


def fd_scene(rng, n, cam, degree=2, gap=1e-2, margin=1e-2):
    """Random scene on which a +-1e-3 finite-difference stencil stays smooth.

    Rendering is discontinuous where two splats swap depth order and kinked
    where a color reaches the [0, 1] clamp, so pairs closer than ``gap`` in
    camera depth and colors within ``margin`` of the clamp are resampled.
    """
    from igs.render.projection import as_params, project_arrays

    while True:
        gs = random_scene(rng, n, degree, scale=(0.1, 0.3), opacity=(0.05, 0.6), sh_std=0.3)
        pr = project_arrays(as_params(gs), cam)
        z = np.sort(pr.t[:, 2])
        rgb = pr.rgb_raw
        if (np.diff(z) > gap).all() and ((rgb > margin) & (rgb < 1 - margin)).all():
            return gs
