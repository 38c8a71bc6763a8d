import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from igs.core import Camera, GaussianSet, Image, MotionField, ValidationError, quat_from_axis_angle
from igs.motion import (
    AgmWeights,
    AnchorSet,
    FeatureError,
    FeatureMapSet,
    OracleExtractor,
    SyntheticExtractor,
    apply_motion,
    calibrate_head,
    decode_motion,
    extract_motion_features,
    farthest_point_indices,
    get_extractor,
    interpolate_motion_features,
    knn_weights,
    lift_features,
    load_weights,
    min_pairwise_distance,
    moved_mask,
    read_feature_maps,
    sample_anchors_fps,
    save_weights,
    transformer_forward,
    transformer_tokens,
    write_feature_maps,
)
from igs.motion.attention import gelu, layer_norm
from igs.motion.features import bilinear_sample
from igs.motion.weights import DecodeHead, ModulationWeights, WeightsFormatError, decode_weights, encode_weights

from helpers import identity_camera, make_camera, random_scene


# ---------------------------------------------------------------- FPS

def test_fps_line_example():
    pts = np.array([[0.0, 0, 0], [1, 0, 0], [10, 0, 0]])
    assert set(farthest_point_indices(pts, 2)) == {0, 2}
    assert list(farthest_point_indices(pts, 1, seed_index=1)) == [1]


def test_fps_exhaustive(rng):
    pts = rng.normal(size=(30, 3))
    assert sorted(farthest_point_indices(pts, 30)) == list(range(30))
    with pytest.raises(ValueError):
        farthest_point_indices(pts, 31)


def test_fps_ties_take_lowest_index():
    # 1 and 2 are equally far from 0
    pts = np.array([[0.0, 0, 0], [1, 0, 0], [-1, 0, 0], [0.5, 0, 0]])
    assert list(farthest_point_indices(pts, 2)) == [0, 1]


def test_fps_beats_random_subsets(rng):
    pts = rng.uniform(size=(2000, 3))
    fps = min_pairwise_distance(pts[farthest_point_indices(pts, 64)])
    best = max(min_pairwise_distance(pts[rng.choice(2000, 64, replace=False)]) for _ in range(100))
    assert fps >= best


@given(hnp.arrays(np.float64, (25, 3), elements=st.floats(-10, 10)), st.integers(1, 25))
def test_fps_greedy_invariant(pts, m):
    idx = farthest_point_indices(pts, m)
    assert len(set(idx.tolist())) == m and idx[0] == 0
    # each pick is a farthest remaining point from those chosen before it
    for j in range(1, m):
        d = np.min(np.linalg.norm(pts[:, None] - pts[idx[:j]][None], axis=2), axis=1)
        assert d[idx[j]] == pytest.approx(d.max())


def test_anchor_set_records_source(rng):
    pts = rng.normal(size=(40, 3))
    a = sample_anchors_fps(pts, 8)
    assert a.count == 8 and np.array_equal(a.positions, pts[a.source_index])


# ---------------------------------------------------------------- features

def test_static_pair_gives_zero_flow(rng):
    img = rng.uniform(size=(32, 32, 3))
    ex = SyntheticExtractor(8, (16, 16))
    out = ex(img, img, 0)
    assert out.shape == (8, 16, 16)
    assert not np.any(out[:2])


def test_synthetic_extractor_finds_shift(rng):
    from scipy.ndimage import gaussian_filter

    base = gaussian_filter(rng.uniform(size=(40, 40)), 1.5)
    img = np.repeat(base[..., None], 3, axis=2)
    moved = np.roll(img, (1, 2), axis=(0, 1))  # content moves +2 px in x, +1 in y
    flow = SyntheticExtractor(4, (40, 40)).flow(img, moved)
    core = flow[:, 8:-8, 8:-8]
    assert np.median(core[0]) == 2 and np.median(core[1]) == 1


def test_oracle_constant_flow():
    flows = [np.broadcast_to([1.5, -0.5], (24, 32, 2))]
    out = OracleExtractor(flows, 6, (12, 16))(None, None, 0)
    assert np.allclose(out[0], 1.5) and np.allclose(out[1], -0.5) and not np.any(out[2:])


def test_identity_modulation_passes_embedding(rng):
    cam = make_camera(16)
    imgs = [Image(rng.uniform(size=(16, 16, 3)))]
    depth = [Image(rng.uniform(size=(16, 16)))]
    flows = [rng.normal(size=(16, 16, 2))]
    ex = OracleExtractor(flows, 8, (16, 16))
    raw = extract_motion_features(imgs, imgs, [cam], depth, ex, None).values
    mod = extract_motion_features(imgs, imgs, [cam], depth, ex, ModulationWeights.identity(8)).values
    assert np.array_equal(raw, mod)


def test_resolution_mismatch_raises(rng):
    cam = make_camera(16)
    small = [Image(np.zeros((8, 8, 3)))]
    with pytest.raises(FeatureError):
        extract_motion_features(small, small, [cam], [Image(np.zeros((8, 8)))], SyntheticExtractor(4, (8, 8)))
    with pytest.raises(FeatureError):
        get_extractor("nope")


def _maps(values, cams):
    return FeatureMapSet(np.asarray(values, dtype=np.float64), cams)


def test_lift_constant_field(rng):
    cams = [make_camera(16), identity_camera(16, 16, 10.0)]
    vals = np.broadcast_to(np.array([2.0, -1.0, 0.5])[None, :, None, None], (2, 3, 16, 16))
    anchors = AnchorSet(rng.uniform(-0.2, 0.2, (10, 3)) + [0, 0, 0.3])
    lifted = lift_features(anchors, _maps(vals, cams))
    assert np.allclose(lifted.features, [2.0, -1.0, 0.5])


def test_lift_exact_hit_and_midpoint():
    cam = Camera(8.0, 8.0, 3.5, 3.5, np.eye(3), np.zeros(3), 8, 8)
    vals = np.zeros((1, 1, 8, 8))
    vals[0, 0, 2, 5] = 3.0
    vals[0, 0, 2, 6] = 7.0
    # grid cell (col 5, row 2) sits at u = 5, v = 2 -> x = (5 - 3.5) / 8, y = (2 - 3.5) / 8 at z = 1
    hit = AnchorSet(np.array([[1.5 / 8, -1.5 / 8, 1.0]]))
    assert np.allclose(lift_features(hit, _maps(vals, [cam])).features, [[3.0]])
    mid = AnchorSet(np.array([[2.0 / 8, -1.5 / 8, 1.0]]))
    assert np.allclose(lift_features(mid, _maps(vals, [cam])).features, [[5.0]])


def test_lift_out_of_view_renormalizes():
    cam = Camera(8.0, 8.0, 3.5, 3.5, np.eye(3), np.zeros(3), 8, 8)
    behind = Camera(8.0, 8.0, 3.5, 3.5, np.diag([-1.0, 1.0, -1.0]), np.zeros(3), 8, 8)
    vals = np.stack([np.full((1, 8, 8), 4.0), np.full((1, 8, 8), 100.0)])
    a = AnchorSet(np.array([[0.0, 0.0, 1.0]]))
    soft = lift_features(a, _maps(vals, [cam, behind]))
    assert np.allclose(soft.features, [[4.0]]) and soft.valid_view_counts[0] == 1
    strict = lift_features(a, _maps(vals, [cam, behind]), strict=True)
    assert np.allclose(strict.features, [[2.0]])


@given(st.floats(0, 6.999), st.floats(0, 4.999))
def test_bilinear_partition_of_unity(x, y):
    field = np.ones((1, 5, 7))
    assert bilinear_sample(field, np.array([x]), np.array([y]))[0, 0] == pytest.approx(1.0, abs=1e-6)


def test_feature_file_round_trip(tmp_path, rng):
    maps = rng.normal(size=(2, 3, 4, 5)).astype(np.float32)
    write_feature_maps(tmp_path / "m.igsf", maps)
    assert np.array_equal(read_feature_maps(tmp_path / "m.igsf"), maps)
    ex = get_extractor(str(tmp_path / "m.igsf"))
    assert np.array_equal(ex(None, None, 1), maps[1])


# ---------------------------------------------------------------- attention

def test_zero_weights_are_residual_identity(rng):
    f = rng.normal(size=(20, 16))
    assert np.array_equal(transformer_tokens(f, AgmWeights.zeros(16, 4, 8)), f)


def test_single_token_closed_form(rng):
    w = AgmWeights.random(16, 1, 8, seed=2, std=0.3)
    x = rng.normal(size=(1, 16))
    L = w.layers[0]
    h = layer_norm(x, L.ln1_gain, L.ln1_bias)
    x1 = x + (h @ L.wv) @ L.wo
    h2 = layer_norm(x1, L.ln2_gain, L.ln2_bias)
    x2 = x1 + gelu(h2 @ L.ff1 + L.ff1_bias) @ L.ff2 + L.ff2_bias
    assert np.allclose(transformer_tokens(x, w), x2, atol=1e-12)


def test_permutation_equivariance_bit_exact(rng):
    w = AgmWeights.random(16, 2, 8, seed=1, std=0.2)
    f = rng.normal(size=(40, 16))
    z = transformer_tokens(f, w)
    for _ in range(3):
        p = rng.permutation(40)
        assert np.array_equal(transformer_tokens(f[p], w), z[p])


def test_transformer_dimension_mismatch(rng):
    a = AnchorSet(rng.normal(size=(4, 3)), rng.normal(size=(4, 8)))
    with pytest.raises(ValueError):
        transformer_forward(a, AgmWeights.zeros(16, 1, 8))


def test_weights_round_trip(tmp_path):
    w = AgmWeights.random(16, 2, 4, seed=3)
    save_weights(tmp_path / "w.igsw", w)
    back = load_weights(tmp_path / "w.igsw")
    assert encode_weights(back) == encode_weights(w)
    assert back.channels == 16 and back.heads == 4 and back.num_layers == 2
    data = encode_weights(w)
    with pytest.raises(WeightsFormatError):
        decode_weights(b"XXXX" + data[4:])
    with pytest.raises(WeightsFormatError):
        decode_weights(data[:-3])


# ---------------------------------------------------------------- interpolation

def test_two_anchor_weights():
    _, w = knn_weights(np.zeros((1, 3)), np.array([[0.0, 0, 0], [1, 0, 0]]), 2)
    assert np.allclose(w, [[0.7311, 0.2689]], atol=1e-4)


def test_k1_copies_nearest(rng):
    anchors = AnchorSet(rng.normal(size=(10, 3)), rng.normal(size=(10, 4)))
    q = rng.normal(size=(30, 3))
    z = interpolate_motion_features(q, anchors, k=1)
    nearest = np.argmin(np.linalg.norm(q[:, None] - anchors.positions[None], axis=2), axis=1)
    assert np.array_equal(z, anchors.features[nearest])


def test_constant_field_and_clamped_k(rng):
    anchors = AnchorSet(rng.normal(size=(3, 3)), np.full((3, 2), 0.25))
    z = interpolate_motion_features(anchors.positions[:1], anchors, k=8)
    assert np.allclose(z, 0.25)


@given(st.integers(0, 10_000), st.integers(1, 12))
def test_weights_partition_and_hull(seed, k):
    rng = np.random.default_rng(seed)
    anchors = AnchorSet(rng.normal(size=(9, 3)) * 3, rng.normal(size=(9, 1)))
    q = rng.normal(size=(15, 3)) * 3
    idx, w = knn_weights(q, anchors.positions, k)
    assert np.allclose(w.sum(axis=1), 1.0, atol=1e-6)
    z = interpolate_motion_features(q, anchors, k)[:, 0]
    f = anchors.features[idx, 0]
    assert np.all(z >= f.min(axis=1) - 1e-12) and np.all(z <= f.max(axis=1) + 1e-12)


# ---------------------------------------------------------------- decode / apply

def test_zero_head_is_identity_motion(rng):
    mf = decode_motion(rng.normal(size=(6, 8)), DecodeHead.zeros(8))
    assert not mf.moved_mask.any()
    gs = random_scene(rng, 6)
    assert apply_motion(gs, mf).bit_equal(gs)


def test_selector_head(rng):
    w = np.zeros((8, 7))
    w[0, 0] = w[1, 1] = w[2, 2] = 1.0
    head = DecodeHead(w, np.array([0, 0, 0, 1.0, 0, 0, 0]))
    z = rng.normal(size=(5, 8))
    mf = decode_motion(z, head)
    assert np.allclose(mf.dmu, z[:, :3], atol=1e-7)


def test_calibrated_head_reproduces_linear_motion(rng):
    z = rng.normal(size=(200, 12))
    true = rng.normal(size=(12, 7)) * 0.1
    bias = np.array([0, 0, 0, 1, 0, 0, 0.0])
    cal = calibrate_head(z, z @ true + bias, ridge=0.0)
    assert np.abs(cal.head.weight - true).max() < 1e-6
    mf = decode_motion(z, cal.head)
    assert np.abs(mf.dmu - (z @ true + bias)[:, :3]).max() < 1e-4


def test_calibration_edge_cases(rng):
    z = rng.normal(size=(50, 6))
    zero = calibrate_head(z, np.zeros((50, 7)), ridge=0.1)
    assert not np.any(zero.head.weight) and not np.any(zero.head.bias)
    y = rng.normal(size=(50, 7))
    once = calibrate_head(z, y, ridge=0.05)
    twice = calibrate_head(np.vstack([z, z]), np.vstack([y, y]), ridge=0.05)
    assert np.allclose(once.head.weight, twice.head.weight, atol=1e-12)
    with pytest.raises(ValueError):
        calibrate_head(np.hstack([z, z[:, :1]]), y, ridge=0.0)
    with pytest.raises(ValueError):
        calibrate_head(z[:3], y[:3])


def test_apply_translation_and_rotation_composition():
    gs = GaussianSet(np.zeros((2, 3)), np.tile(quat_from_axis_angle([0, 0, 1], np.pi / 2), (2, 1)),
                     np.ones((2, 3)), [0.5, 0.5], np.zeros((2, 1, 3)))
    drot = np.tile(quat_from_axis_angle([0, 0, 1], np.pi / 2), (2, 1))
    out = apply_motion(gs, MotionField(np.tile([1.0, 0, 0], (2, 1)), drot))
    assert np.allclose(out.mu, [[1, 0, 0]] * 2)
    target = quat_from_axis_angle([0, 0, 1], np.pi)
    assert np.all(np.abs(np.abs(out.rot @ target) - 1.0) < 1e-6)
    assert np.array_equal(out.scale, gs.scale) and np.array_equal(out.sh, gs.sh)
    with pytest.raises(ValidationError):
        apply_motion(gs, MotionField.identity(3))


def test_moved_mask_threshold():
    dmu = np.array([[2e-6, 0, 0], [5e-7, 0, 0], [0, 0, 0]])
    drot = np.tile([1.0, 0, 0, 0], (3, 1))
    drot[2] = quat_from_axis_angle([1, 0, 0], 1e-5)
    assert list(moved_mask(dmu, drot)) == [True, False, True]


def test_unmoved_points_bit_identical(rng):
    gs = random_scene(rng, 10)
    dmu = rng.normal(size=(10, 3)) * 0.1
    drot = np.tile([1.0, 0, 0, 0], (10, 1))
    mask = np.zeros(10, dtype=bool)
    mask[::3] = True
    out = apply_motion(gs, MotionField(dmu, drot, mask))
    assert np.array_equal(out.mu[~mask], gs.mu[~mask]) and np.array_equal(out.rot[~mask], gs.rot[~mask])


@given(st.integers(0, 2**31 - 1))
def test_apply_keeps_unit_quaternions(seed):
    rng = np.random.default_rng(seed)
    gs = random_scene(rng, 16)
    mf = MotionField(rng.normal(size=(16, 3)), rng.normal(size=(16, 4)) * rng.uniform(1e-3, 1e3))
    out = apply_motion(gs, mf)
    assert np.abs(1 - np.linalg.norm(out.rot.astype(np.float64), axis=1)).max() <= 1e-6
