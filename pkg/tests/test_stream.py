import dataclasses

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from igs.core import GaussianSet, ValidationError
from igs.motion import AgmWeights, MotionConfig
from igs.render import rasterize
from igs.stream import (
    IGS_L,
    IGS_S,
    FrameInput,
    KeyFrame,
    RefineConfig,
    build_schedule,
    combine_loss,
    config_from_dict,
    config_to_dict,
    deform_candidates,
    deform_frame,
    densify_bounded,
    image_l1,
    load_config,
    loss,
    preset,
    prune,
    refine_keyframe,
    run_stream,
)
from igs.synth import SceneSpec, generate_sequence

from helpers import make_camera, random_scene

SMALL = SceneSpec(seed=4, gaussian_count=60, width=32, height=32, views=2, frames=11, heldout=False)
SMALL_MOTION = MotionConfig(anchors=16, channels=8, grid_width=32, grid_height=32, views=2)


# ---------------------------------------------------------------- schedule

@pytest.mark.parametrize("T,w,count", [(300, 5, 60), (300, 1, 300), (1, 5, 1), (11, 5, 3), (7, 10, 1)])
def test_schedule_counts(T, w, count):
    s = build_schedule(T, w)
    assert len(s.keyframe_indices) == count
    assert s.keyframe_indices[0] == 0


def test_schedule_examples():
    s = build_schedule(300, 5)
    assert s.keyframe_indices == tuple(range(0, 300, 5))
    assert s.governing(7) == 5 and s.is_keyframe(10) and not s.is_keyframe(11)
    assert list(s.candidates(295)) == [296, 297, 298, 299]
    with pytest.raises(ValueError):
        build_schedule(10, 0)
    with pytest.raises(IndexError):
        s.governing(300)


@given(st.integers(1, 400), st.integers(1, 40))
def test_schedule_totality(T, w):
    s = build_schedule(T, w)
    owners = [[k for k in s.keyframe_indices if t in s.span(k)] for t in range(T)]
    assert all(len(o) == 1 and o[0] == s.governing(t) for t, o in enumerate(owners))
    assert np.array_equal(s.governing_array(), [s.governing(t) for t in range(T)])


# ---------------------------------------------------------------- loss

def test_loss_arithmetic():
    assert abs(combine_loss(0.1, 0.05, 0.2) - 0.09) <= 1e-9


def test_loss_identical_and_endpoints(rng):
    a = rng.uniform(size=(20, 20, 3))
    b = rng.uniform(size=(20, 20, 3))
    same = loss(a, a)
    assert same.value == 0.0 and not np.any(same.grad)
    pure = loss(a, b, lam=0.0)
    assert pure.value == np.abs(a - b).mean()
    with pytest.raises(ValueError):
        loss(a, b[:10])
    with pytest.raises(ValueError):
        loss(a, b, lam=1.5)


def test_loss_gradient_matches_finite_differences(rng):
    a = rng.uniform(0.2, 0.8, size=(14, 14, 3))
    b = rng.uniform(0.2, 0.8, size=(14, 14, 3))
    res = loss(a, b, 0.2)
    for idx in [(0, 0, 0), (7, 7, 1), (13, 2, 2), (5, 11, 0)]:
        h = 1e-6
        ap, am = a.copy(), a.copy()
        ap[idx] += h
        am[idx] -= h
        fd = (loss(ap, b, 0.2).value - loss(am, b, 0.2).value) / (2 * h)
        assert fd == pytest.approx(res.grad[idx], rel=1e-4, abs=1e-9)


# ---------------------------------------------------------------- densify / prune

def test_densify_saturated_and_below_threshold(rng):
    gs = random_scene(rng, 12)
    cfg = RefineConfig(n_max=12, grad_threshold=1e-3)
    assert densify_bounded(gs, np.ones(12), cfg) is gs
    cfg = RefineConfig(n_max=100, grad_threshold=1e-3)
    assert densify_bounded(gs, np.full(12, 1e-4), cfg) is gs


def test_densify_takes_top_candidates(rng):
    n = 40
    gs = random_scene(rng, n, scale=(0.001, 0.002))  # all small: every candidate clones
    grads = np.zeros(n)
    cand = rng.choice(n, 25, replace=False)
    grads[cand] = rng.uniform(1.0, 2.0, 25)
    cfg = RefineConfig(n_max=n + 10, grad_threshold=0.5)
    out = densify_bounded(gs, grads, cfg, extent=10.0)
    assert out.count == n + 10
    top = np.argsort(-grads, kind="stable")[:10]
    assert sorted(map(tuple, out.mu[n:])) == sorted(map(tuple, gs.mu[top]))


def test_split_halves_and_respects_cap(rng):
    gs = random_scene(rng, 10, scale=(0.3, 0.4))
    cfg = RefineConfig(n_max=13, grad_threshold=0.0, seed=3)
    out = densify_bounded(gs, np.linspace(1, 2, 10), cfg, extent=1.0)
    assert out.count == 13
    # the three strongest (rows 7-9) are replaced by two children each, scales / 1.6
    assert np.allclose(out.scale[-6:], gs.scale[[7, 8, 9, 7, 8, 9]] / 1.6, rtol=1e-6)
    assert np.array_equal(out.mu[:7], gs.mu[:7])
    parents = np.tile(gs.mu[[7, 8, 9]], (2, 1)).astype(np.float64)
    offsets = np.abs(out.mu[-6:] - parents)
    assert np.all(offsets <= 3 * gs.scale[[7, 8, 9, 7, 8, 9]].max(axis=1, keepdims=True) + 1e-6)


def test_prune_drops_transparent(rng):
    gs = random_scene(rng, 6)
    op = gs.opacity.copy()
    op[[1, 4]] = 1e-3
    out = prune(gs.replace(opacity=op), RefineConfig())
    assert out.count == 4


# ---------------------------------------------------------------- refinement

def _views(gs, n=2, size=32, bg=(0, 0, 0)):
    cams = [make_camera(size), make_camera(size).translated([0.3, 0.0, 0.0])][:n]
    return [(rasterize(gs, c, bg).color.values, c) for c in cams]


def test_zero_iterations_is_identity(rng):
    gs = random_scene(rng, 10)
    assert refine_keyframe(gs, _views(gs), RefineConfig(iterations=0)) is gs


def test_self_targets_do_not_get_worse(rng):
    gs = random_scene(rng, 15)
    losses = []
    out = refine_keyframe(gs, _views(gs), RefineConfig(iterations=6, densify_interval=3),
                          callback=lambda it, n, v: losses.append(v))
    assert all(b <= a for a, b in zip(losses, losses[1:]))
    assert image_l1(out, _views(gs)) <= image_l1(gs, _views(gs))


def test_missing_gaussian_is_recovered(rng):
    target = random_scene(rng, 12, opacity=(0.6, 0.9))
    views = _views(target)
    start = target.select(np.arange(1, 12))
    cfg = RefineConfig(iterations=25, densify_interval=10, grad_threshold=1e-5, n_max=40, lr_sh=0.05)
    out = refine_keyframe(start, views, cfg)
    assert image_l1(out, views) < image_l1(start, views)


def test_refine_rejects_oversized_initial(rng):
    gs = random_scene(rng, 10)
    with pytest.raises(ValidationError):
        refine_keyframe(gs, _views(gs), RefineConfig(iterations=2, n_max=5))


@pytest.mark.parametrize("seed", range(3))
def test_point_cap_every_iteration(seed):
    rng = np.random.default_rng(seed)
    gs = random_scene(rng, 8)
    target = random_scene(rng, 8)
    cfg = RefineConfig(iterations=8, densify_interval=1, grad_threshold=0.0, split_fraction=0.0,
                       n_max=14, seed=seed, keep_best=False)
    counts = []
    out = refine_keyframe(gs, _views(target, 1, 16), cfg, callback=lambda it, n, v: counts.append(n))
    assert max(counts) <= cfg.n_max and out.count <= cfg.n_max
    assert max(counts) > gs.count


# ---------------------------------------------------------------- pipeline

@pytest.fixture(scope="module")
def small_seq():
    return generate_sequence(SMALL)


def _key(seq, t=0, sched=None):
    sched = sched or build_schedule(seq.frame_count, 5)
    return KeyFrame(t, seq.gaussians(t), list(seq.images[t]), seq.cameras, sched)


def test_static_batch_with_zero_head(small_seq):
    seq = small_seq
    key = _key(seq)
    frames = [FrameInput(t, list(seq.images[0])) for t in (1, 2, 3)]
    outs = deform_candidates(key, frames, AgmWeights.zeros(8, 1, 8), SMALL_MOTION, "synthetic")
    assert all(o.bit_equal(seq.gaussians(0)) for o in outs)


def test_batch_order_independent(small_seq):
    seq = small_seq
    fi = seq.frame_inputs(5)
    w = AgmWeights.random(8, 1, 8, seed=0, std=0.1)
    a = deform_candidates(_key(seq), [fi[1], fi[3]], w, SMALL_MOTION, "oracle")
    b = deform_candidates(_key(seq), [fi[3], fi[1]], w, SMALL_MOTION, "oracle")
    assert a[0].bit_equal(b[1]) and a[1].bit_equal(b[0])


def test_candidate_isolation(small_seq):
    seq = small_seq
    fi = seq.frame_inputs(5)
    w = AgmWeights.random(8, 1, 8, seed=1, std=0.1)
    alone, _ = deform_frame(_key(seq), fi[3], w, SMALL_MOTION, "oracle")
    key = _key(seq)
    noisy = FrameInput(2, [im for im in fi[1].images], [f + 5.0 for f in fi[2].flows])
    deform_frame(key, fi[1], w, SMALL_MOTION, "oracle")
    deform_frame(key, noisy, w, SMALL_MOTION, "oracle")
    after, _ = deform_frame(key, fi[3], w, SMALL_MOTION, "oracle")
    assert after.bit_equal(alone)


def test_frame_outside_span_rejected(small_seq):
    seq = small_seq
    fi = seq.frame_inputs(5)
    with pytest.raises(ValueError):
        deform_candidates(_key(seq), [fi[6]], AgmWeights.zeros(8, 1, 8), SMALL_MOTION, "oracle")


def test_single_frame_stream(small_seq):
    seq = small_seq
    res = run_stream(seq.gaussians(0), seq.frame_inputs(5)[:1], build_schedule(1, 5), AgmWeights.zeros(8, 1, 8),
                     IGS_S, seq.cameras, SMALL_MOTION)
    assert len(res.frames) == 1 and res.frames[0] is seq.gaussians(0)


def test_static_stream_is_noop():
    spec = dataclasses.replace(SMALL, velocity=(0, 0, 0), frames=7)
    seq = generate_sequence(spec)
    fi = seq.frame_inputs(3)
    res = run_stream(seq.gaussians(0), fi, build_schedule(7, 3), AgmWeights.zeros(8, 1, 8),
                     RefineConfig(iterations=0), seq.cameras, SMALL_MOTION, "synthetic")
    assert all(f.bit_equal(seq.gaussians(0)) for f in res.frames)


def test_eleven_frame_trace(small_seq):
    seq = small_seq
    res = run_stream(seq.gaussians(0), seq.frame_inputs(5), build_schedule(11, 5), AgmWeights.zeros(8, 1, 8),
                     dataclasses.replace(IGS_S, iterations=1), seq.cameras, SMALL_MOTION, "oracle")
    assert res.report.refinements == 2 and res.report.candidates == 8
    assert sorted(res.motions) == [1, 2, 3, 4, 6, 7, 8, 9]
    assert len(res.report.frame_seconds) == 11


def test_stream_length_mismatch(small_seq):
    seq = small_seq
    with pytest.raises(ValueError):
        run_stream(seq.gaussians(0), seq.frame_inputs(5)[:4], build_schedule(11, 5), AgmWeights.zeros(8, 1, 8),
                   IGS_S, seq.cameras, SMALL_MOTION)


# ---------------------------------------------------------------- configuration

def test_presets():
    assert IGS_S.iterations == 50 and IGS_L.iterations == 100
    assert IGS_S.densify_interval == 20 and IGS_S.lam == 0.2
    assert preset("IGS-L").iterations == 100
    with pytest.raises(ValueError):
        preset("igs-xl")


def test_config_file(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text("preset: igs-l\nw: 3\nrefine:\n  lambda: 0.5\n  n_max: 99\nmotion:\n  k: 4\n  m_anchors: 32\n")
    cfg = load_config(path)
    assert cfg.w == 3 and cfg.refine.iterations == 100 and cfg.refine.lam == 0.5 and cfg.refine.n_max == 99
    assert cfg.motion.k == 4 and cfg.motion.anchors == 32
    assert load_config(path, "igs-s").refine.iterations == 50
    again = config_from_dict(config_to_dict(cfg))
    assert again == cfg
    with pytest.raises(ValueError):
        config_from_dict({"refine": {"bogus": 1}})
    with pytest.raises(ValueError):
        config_from_dict({"w": 0})
