import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import ndimage

from layerforge.assets import AssetCatalog, AssetError
from layerforge.geometry import Homography, Transform
from layerforge.scene import (
    DistRow,
    FrameSequence,
    HomographyImage,
    Layer,
    MotionScript,
    SceneError,
    SceneOptions,
    SceneSpec,
    UnsupportedBackgroundError,
    build_scene,
    clip_background,
    deserialize_scene,
    make_occluder,
    object_motion,
    polygon_shape,
    schedule_stationary,
    serialize_scene,
    texture_sprite,
)

T = 30


def static_bg(t=T, size=(64, 80)):
    img = np.zeros(size + (3,), dtype=np.uint8)
    return HomographyImage(img, tuple(Homography.identity() for _ in range(t)))


def translating_bg(dx=2.0, dy=0.0, t=T, size=(64, 80)):
    img = np.zeros(size + (3,), dtype=np.uint8)
    return HomographyImage(img, tuple(Homography.translation(dx * i, dy * i) for i in range(t)))


def simple_sprite(rng, catalog, radius=10.0):
    mask, poly, anchor = polygon_shape(rng, radius)
    return texture_sprite(mask, catalog.textures[0], rng, False, poly, anchor)


# --------------------------------------------------------------------- build_scene


def test_homography_polygon_row(catalog):
    row = DistRow("homo-bg", "homo", "polygon")
    spec = build_scene(row, catalog, np.random.default_rng(0), 1)
    assert spec.n_layers == 1
    assert spec.layers[0].sprite.kind == "polygon"
    assert all(tr.tps is None for tr in spec.layers[0].script.per_frame)
    assert isinstance(spec.background, HomographyImage)
    assert len(spec.background.per_frame_h) == spec.seq_len == 30
    assert spec.frame_size == (128, 224)


def test_real_background_tps_silhouette_row(catalog):
    row = DistRow("real-bg", "homo+tps", "real-obj")
    spec = build_scene(row, catalog, np.random.default_rng(1), 3)
    assert spec.n_layers == 3
    for layer in spec.layers:
        assert layer.sprite.kind == "silhouette"
        assert all(tr.tps is not None for tr in layer.script.per_frame)
    assert isinstance(spec.background, FrameSequence)
    assert sorted(spec.depth_order) == [0, 1, 2]


def test_build_scene_deterministic(catalog):
    row = DistRow("homo-bg", "homo+tps", "real-obj")
    opts = SceneOptions(stationary_prob=0.5, occluder_prob=0.5)
    a = build_scene(row, catalog, np.random.default_rng(7), 2, opts, seed=7)
    b = build_scene(row, catalog, np.random.default_rng(7), 2, opts, seed=7)
    assert serialize_scene(a) == serialize_scene(b)


@settings(max_examples=12)
@given(st.integers(0, 2**32 - 1), st.sampled_from(["homo-bg", "real-bg"]), st.sampled_from(["homo", "homo+tps"]),
       st.sampled_from(["polygon", "real-obj"]), st.integers(1, 3))
def test_serialization_round_trip(catalog, seed, bg, motion, objects, n):
    opts = SceneOptions(stationary_prob=0.5, occluder_prob=0.5)
    spec = build_scene(DistRow(bg, motion, objects), catalog, np.random.default_rng(seed), n, opts, seed=seed)
    data = serialize_scene(spec)
    back = deserialize_scene(data)
    assert serialize_scene(back) == data
    assert back.digest() == spec.digest()


@settings(max_examples=15)
@given(st.integers(0, 2**32 - 1), st.sampled_from(["polygon", "real-obj"]))
def test_sprites_placed_in_frame_and_bounded(catalog, seed, objects):
    spec = build_scene(DistRow("homo-bg", "homo", objects), catalog, np.random.default_rng(seed), 3)
    h, w = spec.frame_size
    for k, layer in enumerate(spec.layers):
        sp = layer.sprite
        rows, cols = np.nonzero(sp.mask)
        box_area = (np.ptp(rows) + 1) * (np.ptp(cols) + 1)
        assert box_area <= 0.4 * h * w
        pos = spec.meta["sprites"][k]["position"]
        anchor = np.asarray(sp.anchor) + np.asarray(sp.origin)
        np.testing.assert_allclose(layer.script[0].forward(anchor), pos, atol=1e-9)
        assert 0 <= pos[0] <= w and 0 <= pos[1] <= h
        if sp.kind == "silhouette":
            lab, n = ndimage.label(sp.mask, structure=np.ones((3, 3)))
            assert n >= 1


def test_missing_asset_kind_rejected(tmp_path):
    (tmp_path / "textures").mkdir()
    empty = AssetCatalog.load(tmp_path)
    with pytest.raises(AssetError):
        build_scene(DistRow("homo-bg", "homo", "polygon"), empty, np.random.default_rng(0), 1)


def test_occluder_only_with_several_objects(catalog):
    opts = SceneOptions(occluder_prob=1.0)
    one = build_scene(DistRow("homo-bg", "homo", "polygon"), catalog, np.random.default_rng(0), 1, opts)
    two = build_scene(DistRow("homo-bg", "homo", "polygon"), catalog, np.random.default_rng(0), 2, opts)
    assert one.occluder is None and two.occluder is not None


def test_stationary_only_on_homography_backgrounds(catalog):
    opts = SceneOptions(stationary_prob=1.0)
    real = build_scene(DistRow("real-bg", "homo", "polygon"), catalog, np.random.default_rng(0), 2, opts)
    homo = build_scene(DistRow("homo-bg", "homo", "polygon"), catalog, np.random.default_rng(0), 2, opts)
    assert not any(l.script.stationary_intervals for l in real.layers)
    assert sum(bool(l.script.stationary_intervals) for l in homo.layers) == 1


# --------------------------------------------------------------------- validation


def test_occluder_motion_must_match_background(catalog):
    rng = np.random.default_rng(0)
    spec = build_scene(DistRow("homo-bg", "homo", "polygon"), catalog, rng, 2, SceneOptions(occluder_prob=1.0))
    occ = spec.occluder
    bad = MotionScript(tuple(Transform(Homography.translation(1, 0)) for _ in range(spec.seq_len)))
    with pytest.raises(SceneError):
        SceneSpec(spec.seq_len, spec.frame_size, spec.layers, spec.background, spec.depth_order,
                  occluder=Layer(occ.sprite, bad))


def test_depth_order_must_be_permutation(catalog):
    spec = build_scene(DistRow("homo-bg", "homo", "polygon"), catalog, np.random.default_rng(0), 2)
    with pytest.raises(SceneError):
        SceneSpec(spec.seq_len, spec.frame_size, spec.layers, spec.background, (0, 0))


# --------------------------------------------------------------------- texture_sprite


def test_constant_red_texture():
    red = np.zeros((40, 40, 3), dtype=np.uint8)
    red[..., 0] = 255
    sp = texture_sprite(np.ones((10, 12), dtype=bool), red, np.random.default_rng(0), jitter=False)
    assert np.all(sp.texture == [255, 0, 0])
    jittered = texture_sprite(np.ones((10, 12), dtype=bool), red, np.random.default_rng(0), jitter=True)
    assert len(np.unique(jittered.texture.reshape(-1, 3), axis=0)) == 1


def test_crop_is_exact_subrectangle():
    rng = np.random.default_rng(3)
    tex = rng.integers(0, 256, size=(50, 60, 3), dtype=np.uint8)
    sp = texture_sprite(np.ones((11, 17), dtype=bool), tex, rng, jitter=False)
    oy, ox = sp.crop_offset
    assert np.array_equal(sp.texture, tex[oy : oy + 11, ox : ox + 17])


def test_crop_offsets_golden(golden):
    rng = np.random.default_rng(42)
    tex = np.zeros((100, 120, 3), dtype=np.uint8)
    mask = np.ones((20, 30), dtype=bool)
    offsets = [list(texture_sprite(mask, tex, rng, jitter=False).crop_offset) for _ in range(5)]
    assert offsets == golden("crop_offsets_seed42")["offsets"]


def test_crop_offsets_cover_full_range():
    rng = np.random.default_rng(4)
    tex = np.zeros((12, 13, 3), dtype=np.uint8)
    seen = {texture_sprite(np.ones((10, 10), dtype=bool), tex, rng, False).crop_offset for _ in range(300)}
    assert seen == {(y, x) for y in range(3) for x in range(4)}


def test_texture_too_small():
    with pytest.raises(SceneError):
        texture_sprite(np.ones((10, 10), dtype=bool), np.zeros((5, 20, 3), dtype=np.uint8), np.random.default_rng(0))


# --------------------------------------------------------------------- stationary


def _script(rng, catalog, tps=True):
    sprite = simple_sprite(rng, catalog)
    return object_motion(rng, sprite, (40.0, 30.0), SceneOptions(frame_size=(64, 80)), tps)


def test_static_background_freezes_object(catalog):
    rng = np.random.default_rng(0)
    script = _script(rng, catalog)
    out = schedule_stationary(rng, script, static_bg())
    (t1, t2), = out.stationary_intervals
    assert 1 <= t2 - t1 <= 5
    for t in range(t1, t2 + 1):
        assert out[t] == out[t1]


def test_translating_background_carries_object(catalog):
    rng = np.random.default_rng(1)
    script = _script(rng, catalog)
    out = schedule_stationary(rng, script, translating_bg(2.0, 0.0))
    (t1, t2), = out.stationary_intervals
    pts = rng.uniform(0, 20, size=(30, 2))
    for t in range(t1, t2):
        step = out[t + 1].forward(pts) - out[t].forward(pts)
        np.testing.assert_allclose(step, np.tile([2.0, 0.0], (30, 1)), atol=1e-9)


def test_trajectory_resumes_without_jump(catalog):
    rng = np.random.default_rng(2)
    script = _script(rng, catalog, tps=False)
    bg = translating_bg(1.5, -0.5)
    out = schedule_stationary(rng, script, bg)
    (t1, t2), = out.stationary_intervals
    length = t2 - t1
    pts = rng.uniform(0, 20, size=(10, 2))
    hold = bg.per_frame_h[t2] @ bg.per_frame_h[t1].inverse()
    for t in range(t2 + 1, T):
        np.testing.assert_allclose(out[t].forward(pts), hold.apply(script[t - length].forward(pts)), atol=1e-9)
    # first step after the hold equals the original step out of t1
    if t2 + 1 < T:
        after = out[t2 + 1].forward(pts) - out[t2].forward(pts)
        orig = hold.apply(script[t1 + 1].forward(pts)) - hold.apply(script[t1].forward(pts))
        np.testing.assert_allclose(after, orig, atol=1e-9)
    for t in range(t1 + 1):
        assert out[t] == script[t]


def test_stationary_golden(catalog, golden):
    from golden_cases import case_stationary

    assert case_stationary(catalog) == golden("stationary_seed42")


def test_stationary_rejects_frame_sequence(catalog):
    rng = np.random.default_rng(3)
    script = _script(rng, catalog)
    bg = FrameSequence(np.zeros((40, 64, 80, 3), dtype=np.uint8), 0, 1)
    with pytest.raises(UnsupportedBackgroundError):
        schedule_stationary(rng, script, bg)


# --------------------------------------------------------------------- occluder and clips


def test_occluder_static_on_identity_background(catalog):
    occ = make_occluder(np.random.default_rng(0), static_bg(), catalog, SceneOptions(frame_size=(64, 80)))
    assert all(tr == occ.script[0] for tr in occ.script.per_frame)


def test_occluder_translates_with_background(catalog):
    bg = translating_bg(3.0, 1.0)
    occ = make_occluder(np.random.default_rng(1), bg, catalog, SceneOptions(frame_size=(64, 80)))
    pts = occ.sprite.shape_points()
    for t in range(T):
        assert occ.script[t].homography is bg.per_frame_h[t]
        np.testing.assert_allclose(occ.script[t].forward(pts), pts + [3.0 * t, 1.0 * t], atol=1e-9)


def test_occluder_golden(catalog, golden):
    from golden_cases import case_occluder

    got = case_occluder(catalog)
    g = golden("occluder_seed42")
    np.testing.assert_allclose(got["vertices"], g["vertices"], atol=1e-12)
    np.testing.assert_allclose(got["origin"], g["origin"], atol=1e-9)
    assert got["mask_sha256"] == g["mask_sha256"]


def test_clip_background_indices(catalog):
    rng = np.random.default_rng(5)
    opts = SceneOptions()
    strides = set()
    for _ in range(40):
        bg, info = clip_background(rng, catalog.bg_clips[0], opts)
        strides.add(bg.stride)
        idx = [bg.index(t) for t in range(opts.seq_len)]
        assert min(idx) >= 0 and max(idx) < len(bg.frames)
        assert abs(bg.stride) in (1, 2, 3)
        assert bg.frames.shape[1:3] == opts.frame_size
    assert any(s < 0 for s in strides) and any(s > 0 for s in strides)
