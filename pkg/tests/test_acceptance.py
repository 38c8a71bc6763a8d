"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v`` (or ``scripts/run_acceptance.py``).
"""

import dataclasses
import time

import numpy as np
import pytest

from igs.codec import StreamFile, candidate_size, decode_stream, encode_stream, psnr
from igs.codec.stream_format import encode_candidate, encode_keyframe
from igs.core import MotionField
from igs.motion import (
    AgmWeights,
    MotionConfig,
    apply_motion,
    farthest_point_indices,
    knn_weights,
    min_pairwise_distance,
    transformer_tokens,
)
from igs.render import rasterize, rasterize_reference
from igs.render.projection import as_params
from igs.stream import (
    IGS_S,
    KeyFrame,
    RefineConfig,
    build_schedule,
    combine_loss,
    deform_frame,
    loss,
    refine_keyframe,
    run_stream,
)
from igs.synth import SceneSpec, calibrate_oracle_weights, generate_sequence

from helpers import fd_scene, finite_difference_check, make_camera, random_scene


@pytest.fixture
def report(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\n[acceptance {number:2d}] {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, detail

    return emit


def test_01_renderer_matches_reference(report):
    bg = (0.1, 0.2, 0.3)
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(50):
        rng = np.random.default_rng(seed)
        gs = random_scene(rng, int(rng.integers(1, 101)))
        cam = make_camera(64)
        a = rasterize(gs, cam, bg).color.values
        b = rasterize_reference(gs, cam, bg).color.values
        worst = max(worst, float(np.abs(a - b).max()))
    dt = time.perf_counter() - t0
    report(1, worst <= 1e-5 and dt < 30.0, f"renderer vs reference: max dev {worst:.2e} (<=1e-5), {dt:.1f}s (<30s)")


def test_02_gradients_match_finite_differences(report):
    cam = make_camera(32, focal=1.25)
    totals = {}
    for seed in range(10):
        rng = np.random.default_rng(100 + seed)
        gs = fd_scene(rng, int(rng.integers(1, 11)), cam)
        res = finite_difference_check(as_params(gs), cam, rng.normal(size=(32, 32, 3)), (0.2, 0.1, 0.0),
                                      step=1e-3, rtol=1e-2, atol=1e-5)
        for name, (bad, n) in res.items():
            b0, n0 = totals.get(name, (0, 0))
            totals[name] = (b0 + bad, n0 + n)
    bad = sum(b for b, _ in totals.values())
    detail = ", ".join(f"{k} {b}/{n}" for k, (b, n) in totals.items())
    ok = bad == 0 and set(totals) == {"mu", "rot", "scale", "opacity", "sh"}
    report(2, ok, f"central differences step 1e-3, rel 1e-2 abs 1e-5: misses {detail}")


def test_03_fps_beats_random_subsets(report):
    worst_margin = np.inf
    failures = 0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        pts = rng.uniform(size=(10_000, 3))
        fps = min_pairwise_distance(pts[farthest_point_indices(pts, 256)])
        best = max(min_pairwise_distance(pts[rng.choice(10_000, 256, replace=False)]) for _ in range(1000))
        failures += fps < best
        worst_margin = min(worst_margin, fps - best)
    report(3, failures == 0, f"FPS min distance >= best of 1000 random subsets: {20 - failures}/20, "
                             f"smallest margin {worst_margin:.4f}")


def test_04_interpolation_weights(report):
    rng = np.random.default_rng(4)
    anchors = rng.normal(size=(256, 3))
    _, w = knn_weights(rng.normal(size=(5000, 3)), anchors, 8)
    dev = float(np.abs(w.sum(axis=1) - 1.0).max())
    _, w2 = knn_weights(np.zeros((1, 3)), np.array([[0.0, 0, 0], [1, 0, 0]]), 2)
    err = float(np.abs(w2[0] - [0.7311, 0.2689]).max())
    report(4, dev <= 1e-6 and err <= 1e-4, f"partition of unity dev {dev:.1e} (<=1e-6), two-anchor case err {err:.1e} (<=1e-4)")


def test_05_attention_equivariance(report):
    rng = np.random.default_rng(5)
    w = AgmWeights.random(32, 2, 8, seed=5, std=0.2)
    f = rng.normal(size=(128, 32))
    z = transformer_tokens(f, w)
    same = 0
    for _ in range(10):
        p = rng.permutation(128)
        same += bool(np.array_equal(transformer_tokens(f[p], w), z[p]))
    ident = bool(np.array_equal(transformer_tokens(f, AgmWeights.zeros(32, 4, 8)), f))
    report(5, same == 10 and ident, f"permutations bit-identical {same}/10, zero-weight identity {ident}")


def test_06_schedule(report):
    k300 = len(build_schedule(300, 5).keyframe_indices)
    k1 = len(build_schedule(300, 1).keyframe_indices)
    spec = SceneSpec(seed=4, gaussian_count=40, width=32, height=32, views=2, frames=11, heldout=False)
    mcfg = MotionConfig(anchors=16, channels=8, grid_width=32, grid_height=32, views=2)
    seq = generate_sequence(spec)
    res = run_stream(seq.gaussians(0), seq.frame_inputs(5), build_schedule(11, 5), AgmWeights.zeros(8, 1, 8),
                     dataclasses.replace(IGS_S, iterations=1), seq.cameras, mcfg, "oracle")
    r = res.report
    ok = k300 == 60 and k1 == 300 and r.refinements == 2 and r.candidates == 8
    report(6, ok, f"T=300 w=5 -> {k300} keyframes, w=1 -> {k1}, 11-frame trace -> "
                  f"{r.refinements} refinements + {r.candidates} candidates")


def test_07_point_cap(report):
    violations = 0
    peak_growth = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        gs = random_scene(rng, 8)
        target = random_scene(rng, 8)
        cam = make_camera(16)
        views = [(rasterize(target, cam).color.values, cam)]
        cfg = RefineConfig(iterations=6, densify_interval=1, grad_threshold=0.0, split_fraction=0.0,
                           n_max=14, seed=seed, keep_best=False)
        counts = []
        out = refine_keyframe(gs, views, cfg, callback=lambda it, n, v: counts.append(n))
        violations += sum(n > cfg.n_max for n in counts) + (out.count > cfg.n_max)
        peak_growth = max(peak_growth, max(counts) - gs.count)
    report(7, violations == 0 and peak_growth > 0,
           f"100 aggressive densification runs, n_max=14: {violations} violations, densification added up to {peak_growth}")


def _stream(seed, frames=11, w=5):
    rng = np.random.default_rng(seed)
    degree = int(rng.integers(0, 4))
    sf = StreamFile(frames, w, degree)
    n = 0
    for t in range(frames):
        if t % w == 0:
            n = int(rng.integers(1, 60))
            sf.add_keyframe(t, random_scene(rng, n, degree))
        else:
            mask = rng.uniform(size=n) < rng.uniform()
            drot = np.tile([1.0, 0, 0, 0], (n, 1)) + rng.normal(scale=0.05, size=(n, 4)) * mask[:, None]
            sf.add_candidate(t, MotionField(rng.normal(scale=0.05, size=(n, 3)) * mask[:, None], drot, mask))
    return sf


def test_08_codec(report):
    exact = 0
    for seed in range(200):
        sf = _stream(seed)
        data = encode_stream(sf)
        back = decode_stream(data)
        a, b = sf.decode(), back.decode()
        exact += encode_stream(back) == data and sorted(a) == sorted(b) and all(a[t].bit_equal(b[t]) for t in a)
    smaller = 0
    for seed in range(200):
        rng = np.random.default_rng(10_000 + seed)
        n = int(rng.integers(1, 2000))
        gs = random_scene(rng, n, int(rng.integers(0, 4)))
        mask = np.zeros(n, bool)
        mask[rng.choice(n, int(rng.integers(0, (n + 1) // 2)), replace=False)] = True  # under half moved
        mf = MotionField(rng.normal(size=(n, 3)) * mask[:, None], np.tile([1.0, 0, 0, 0], (n, 1)), mask)
        cand = encode_candidate(mf)
        smaller += len(cand) == candidate_size(n, int(mask.sum())) and len(cand) < len(encode_keyframe(gs))
    report(8, exact == 200 and smaller == 200,
           f"round trip bit-exact {exact}/200, candidate < keyframe below 50% moved {smaller}/200")


@pytest.fixture(scope="module")
def oracle_run():
    spec = SceneSpec(seed=1)  # 500 Gaussians, 4 views, 96x96, 11 frames, rigid translation
    seq = generate_sequence(spec)
    mcfg = MotionConfig(anchors=256, channels=8, grid_width=96, grid_height=96, views=4)
    weights, _ = calibrate_oracle_weights(spec, mcfg)
    sched = build_schedule(spec.frames, 5)
    cfg = dataclasses.replace(IGS_S, n_max=525)
    res = run_stream(seq.gaussians(0), seq.frame_inputs(5), sched, weights, cfg, seq.cameras, mcfg, "oracle")
    return seq, sched, weights, mcfg, res


def test_09_end_to_end_oracle(report, oracle_run):
    seq, sched, _, _, res = oracle_run
    rows = []
    for t in range(seq.frame_count):
        if sched.is_keyframe(t):
            continue
        p = psnr(rasterize(res.frames[t], seq.heldout).color, seq.heldout_images[t])
        s = psnr(rasterize(res.frames[sched.governing(t)], seq.heldout).color, seq.heldout_images[t])
        rows.append((t, p, s))
    ok = all(p >= 40.0 and p > s for _, p, s in rows)
    worst = min(rows, key=lambda r: r[1])
    report(9, ok, f"held-out PSNR on {len(rows)} candidates: min {worst[1]:.2f} dB at frame {worst[0]} "
                  f"(>=40), static baseline max {max(s for _, _, s in rows):.2f} dB")


def test_10_candidates_do_not_accumulate(report, oracle_run):
    seq, sched, weights, mcfg, res = oracle_run
    fi = seq.frame_inputs(5)
    identical = 0
    checked = 0
    for key_t in sched.keyframe_indices:
        key_gs = res.frames[key_t]
        cands = list(sched.candidates(key_t))
        for t in cands:
            fresh = KeyFrame(key_t, key_gs, list(seq.images[key_t]), seq.cameras, sched)
            alone, _ = deform_frame(fresh, fi[t], weights, mcfg, "oracle")
            warm = KeyFrame(key_t, key_gs, list(seq.images[key_t]), seq.cameras, sched)
            for u in cands:
                if u < t:
                    deform_frame(warm, fi[u], weights, mcfg, "oracle")
            after, _ = deform_frame(warm, fi[t], weights, mcfg, "oracle")
            identical += alone.bit_equal(after) and alone.bit_equal(res.frames[t])
            checked += 1
    report(10, checked > 0 and identical == checked,
           f"candidate output independent of earlier candidates: {identical}/{checked} bit-identical")


def test_11_quaternion_integrity(report):
    worst = 0.0
    applications = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        n = 10_000
        gs = random_scene(rng, n, 0)
        mag = 10.0 ** rng.uniform(-3, 3, (n, 1))
        mf = MotionField(rng.normal(size=(n, 3)), rng.normal(size=(n, 4)) * mag)
        out = apply_motion(gs, mf)
        worst = max(worst, float(np.abs(1.0 - np.linalg.norm(out.rot.astype(np.float64), axis=1)).max()))
        applications += n
    report(11, worst <= 1e-6 and applications >= 10**6,
           f"{applications} quaternion applications, max |1-|q|| {worst:.2e} (<=1e-6)")


def test_12_loss_arithmetic(report):
    rng = np.random.default_rng(12)
    x, y = rng.uniform(size=(2, 24, 24, 3))
    r = loss(x, y, lam=0.0)
    l1 = float(np.mean(np.abs(x - y)))
    value = combine_loss(0.1, 0.05, 0.2)
    grad_l1 = np.sign(x - y) / x.size
    ok = r.value == l1 and np.array_equal(r.grad, grad_l1) and abs(value - 0.09) <= 1e-9
    report(12, ok, f"lambda=0 loss {r.value!r} == L1 {l1!r} (gradient too); "
                   f"combine(0.1, 0.05, 0.2) = {value!r} (0.09 +- 1e-9)")
