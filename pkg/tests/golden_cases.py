"""Fixed-seed cases whose outputs are frozen under tests/golden/.

Regenerate with ``python scripts/regen_golden.py`` after an intentional change.
"""
import hashlib

import numpy as np

from layerforge.assets import AssetCatalog
from layerforge.compositor import render_sequence
from layerforge.geometry import (
    HomographyRanges,
    grid_control_points,
    perturb_control_points,
    sample_homography,
    sample_polygon,
)
from layerforge.scene import (
    DistRow,
    SceneOptions,
    build_scene,
    homography_background,
    make_occluder,
    object_motion,
    polygon_shape,
    schedule_stationary,
    texture_sprite,
)

SEED = 42
FIVE_POINTS = np.array([[0.0, 0.0], [10.0, 0.0], [0.0, 7.0], [12.0, 9.0], [5.0, 4.0]])


def crescent_mask(size: int = 32) -> np.ndarray:
    yy, xx = np.mgrid[:size, :size]
    outer = (xx - 15.5) ** 2 + (yy - 15.5) ** 2 <= 12.0**2
    inner = (xx - 20.5) ** 2 + (yy - 15.5) ** 2 <= 10.0**2
    return outer & ~inner


def case_homography():
    h = sample_homography(np.random.default_rng(SEED), HomographyRanges.for_frame((128, 224)))
    return {"matrix": h.m.tolist()}


def case_polygons():
    rng = np.random.default_rng(SEED)
    out = {}
    for convex in (False, True):
        p = sample_polygon(rng, 6, 8.0, 40.0, convex)
        out["convex" if convex else "nonconvex"] = p.vertices.tolist()
    return out


def case_perturbation():
    disp = perturb_control_points(np.random.default_rng(SEED), FIVE_POINTS, 0.6)
    return {"points": FIVE_POINTS.tolist(), "displacements": disp.tolist()}


def case_crescent_grid():
    return {"spacing": 4, "points": grid_control_points(crescent_mask(), 4).tolist()}


def case_crop_offsets():
    rng = np.random.default_rng(SEED)
    tex = np.zeros((100, 120, 3), dtype=np.uint8)
    mask = np.ones((20, 30), dtype=bool)
    return {"offsets": [list(texture_sprite(mask, tex, rng, jitter=False).crop_offset) for _ in range(5)]}


def _bg(assets: AssetCatalog, opts: SceneOptions, rng):
    return homography_background(rng, assets.bg_images[0], opts)[0]


def case_stationary(assets: AssetCatalog):
    rng = np.random.default_rng(SEED)
    opts = SceneOptions()
    bg = _bg(assets, opts, rng)
    mask, poly, anchor = polygon_shape(rng, 15.0)
    sprite = texture_sprite(mask, assets.textures[0], rng, False, poly, anchor)
    script = object_motion(rng, sprite, (100.0, 60.0), opts, with_tps=True)
    out = schedule_stationary(rng, script, bg)
    return {"intervals": [list(iv) for iv in out.stationary_intervals]}


def case_occluder(assets: AssetCatalog):
    rng = np.random.default_rng(SEED)
    opts = SceneOptions()
    bg = _bg(assets, opts, rng)
    occ = make_occluder(rng, bg, assets, opts)
    return {
        "vertices": np.asarray(occ.sprite.polygon.vertices).tolist(),
        "origin": list(occ.sprite.origin),
        "mask_sha256": hashlib.sha256(np.packbits(occ.sprite.mask).tobytes()).hexdigest(),
    }


def record_digest(rec) -> str:
    h = hashlib.sha256()
    for arr in (rec.rgb, rec.amodal, rec.modal, rec.surface):
        h.update(np.ascontiguousarray(arr).tobytes())
    for g in sorted(rec.flows):
        h.update(np.ascontiguousarray(rec.flows[g], dtype="<f4").tobytes())
        h.update(rec.flow_valid[g].tobytes())
    return h.hexdigest()


def case_render(assets: AssetCatalog):
    opts = SceneOptions(stationary_prob=1.0, occluder_prob=1.0)
    row = DistRow("homo-bg", "homo+tps", "polygon")
    spec = build_scene(row, assets, np.random.default_rng(SEED), 2, opts, seed=SEED)
    rec = render_sequence(spec, gaps=(1, -1))
    return {"scene_digest": spec.digest(), "record_sha256": record_digest(rec)}


PURE_CASES = {
    "homography_seed42": case_homography,
    "polygons_seed42": case_polygons,
    "perturbation_seed42": case_perturbation,
    "crescent_grid": case_crescent_grid,
    "crop_offsets_seed42": case_crop_offsets,
}
ASSET_CASES = {
    "stationary_seed42": case_stationary,
    "occluder_seed42": case_occluder,
    "render_seed42": case_render,
}
