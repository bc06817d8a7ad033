"""Deterministic scene construction: sprites, motion scripts, backgrounds, occluders.

A :class:`SceneSpec` fully describes one synthetic sequence; rendering it is a
pure function (see :mod:`layerforge.compositor`).
"""
from __future__ import annotations

import base64
import hashlib
import json
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from PIL import Image
from scipy import ndimage
from skimage.draw import polygon2mask

from .assets import AssetCatalog, AssetError
from .geometry import (
    Homography,
    HomographyParams,
    HomographyRanges,
    Polygon,
    TpsWarp,
    Transform,
    fit_tps,
    grid_control_points,
    invert,
    perturb_control_points,
    sample_homography_params,
    sample_polygon,
    GeometryError,
)

BACKGROUND_KINDS = ("homo-bg", "real-bg")
MOTION_KINDS = ("homo", "homo+tps")
OBJECT_KINDS = ("polygon", "real-obj")


class SceneError(ValueError):
    pass


class UnsupportedBackgroundError(SceneError):
    pass


# --------------------------------------------------------------------------
# Types
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Sprite:
    """Textured shape in canonical sprite coordinates.

    ``mask`` and ``texture`` are rasters whose pixel ``(r, c)`` sits at
    canonical point ``origin + (c, r)``.
    """

    mask: np.ndarray
    texture: np.ndarray
    anchor: Tuple[float, float]
    polygon: Optional[Polygon] = None
    origin: Tuple[float, float] = (0.0, 0.0)
    crop_offset: Tuple[int, int] = (0, 0)

    def __post_init__(self):
        if self.mask.ndim != 2 or not self.mask.any():
            raise SceneError("sprite mask must be a non-empty 2-D array")
        if self.texture.shape[:2] != self.mask.shape or self.texture.shape[2:] != (3,):
            raise SceneError("sprite texture must be (h, w, 3) matching the mask")

    @property
    def kind(self) -> str:
        return "polygon" if self.polygon is not None else "silhouette"

    def shape_points(self, max_points: int = 400) -> np.ndarray:
        """Canonical coordinates of (a deterministic subset of) shape pixels."""
        rows, cols = np.nonzero(self.mask)
        step = max(1, len(rows) // max_points)
        return np.stack([cols[::step], rows[::step]], axis=1) + np.asarray(self.origin)


@dataclass(frozen=True, eq=False)
class MotionScript:
    per_frame: Tuple[Transform, ...]
    stationary_intervals: Tuple[Tuple[int, int], ...] = ()

    def __len__(self):
        return len(self.per_frame)

    def __getitem__(self, t: int) -> Transform:
        return self.per_frame[t]


@dataclass(frozen=True, eq=False)
class HomographyImage:
    """Background image warped by ``per_frame_h[t]`` (image coords -> frame t)."""

    image: np.ndarray
    per_frame_h: Tuple[Homography, ...]

    kind = "homo-bg"

    def motion(self) -> Tuple[Homography, ...]:
        return self.per_frame_h


@dataclass(frozen=True, eq=False)
class FrameSequence:
    """Real clip background; frame t is ``frames[start + stride * t]``."""

    frames: np.ndarray  # (N, H, W, 3)
    start: int
    stride: int

    kind = "real-bg"

    def index(self, t: int) -> int:
        return self.start + self.stride * t

    def motion(self) -> Tuple[Homography, ...]:
        return ()


BackgroundSource = Union[HomographyImage, FrameSequence]


@dataclass(frozen=True, eq=False)
class Layer:
    sprite: Sprite
    script: MotionScript


@dataclass(frozen=True, eq=False)
class SceneSpec:
    seq_len: int
    frame_size: Tuple[int, int]
    layers: Tuple[Layer, ...]
    background: BackgroundSource
    depth_order: Tuple[int, ...]
    seed: int = 0
    occluder: Optional[Layer] = None
    meta: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        validate_scene(self)

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    def to_bytes(self) -> bytes:
        return serialize_scene(self)

    def digest(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()


def validate_scene(spec: SceneSpec, max_layers: int = 8) -> None:
    t = spec.seq_len
    if not 1 <= len(spec.layers) <= max_layers:
        raise SceneError(f"layer count {len(spec.layers)} outside 1..{max_layers}")
    if sorted(spec.depth_order) != list(range(len(spec.layers))):
        raise SceneError(f"depth_order {spec.depth_order} is not a permutation")
    for k, layer in enumerate(spec.layers):
        if len(layer.script) != t:
            raise SceneError(f"layer {k} motion script has {len(layer.script)} frames, expected {t}")
    bg = spec.background
    if isinstance(bg, HomographyImage):
        if len(bg.per_frame_h) != t:
            raise SceneError("background homography count differs from seq_len")
    elif isinstance(bg, FrameSequence):
        last = bg.index(t - 1)
        if not (0 <= bg.start < len(bg.frames) and 0 <= last < len(bg.frames)):
            raise SceneError("frame sequence indices leave the source clip")
        if bg.frames.shape[1:3] != tuple(spec.frame_size):
            raise SceneError("background frames differ from frame_size")
    else:
        raise SceneError(f"unknown background type {type(bg).__name__}")
    if spec.occluder is not None:
        bg_motion = bg.motion()
        for tt, tr in enumerate(spec.occluder.script.per_frame):
            expected = bg_motion[tt] if bg_motion else Homography.identity()
            if tr.tps is not None or tr.homography != expected:
                raise SceneError("occluder motion must equal background motion")


# --------------------------------------------------------------------------
# Distribution rows and options
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class DistRow:
    background: str
    motion: str
    objects: str
    counts: Tuple[int, ...] = (0, 0, 0)

    def __post_init__(self):
        if self.background not in BACKGROUND_KINDS:
            raise SceneError(f"unknown background kind {self.background!r}")
        if self.motion not in MOTION_KINDS:
            raise SceneError(f"unknown motion kind {self.motion!r}")
        if self.objects not in OBJECT_KINDS:
            raise SceneError(f"unknown object kind {self.objects!r}")
        if any(c < 0 for c in self.counts):
            raise SceneError("sequence counts must be non-negative")

    @property
    def name(self) -> str:
        return f"{self.background}_{self.motion}_{self.objects}".replace("+", "-")

    @property
    def total(self) -> int:
        return int(sum(self.counts))


@dataclass(frozen=True)
class SceneOptions:
    seq_len: int = 30
    frame_size: Tuple[int, int] = (128, 224)
    stationary_prob: float = 0.0
    stationary_len: Tuple[int, int] = (1, 5)
    occluder_prob: float = 0.0
    occluder_min_objects: int = 2
    sprite_area: Tuple[float, float] = (0.04, 0.16)
    tps_subset_fraction: float = 0.5
    tps_regularization: float = 1e-6
    color_jitter: bool = True
    bg_rotation_deg: float = 15.0
    bg_scale: Tuple[float, float] = (0.9, 1.1)
    bg_translation: float = 0.10
    bg_perspective: float = 0.05
    obj_rotation_deg: float = 30.0
    obj_scale: Tuple[float, float] = (0.8, 1.25)
    obj_translation: float = 0.25
    obj_perspective: float = 0.05
    bg_margin: float = 0.25


# --------------------------------------------------------------------------
# Sprites and textures
# --------------------------------------------------------------------------


def color_jitter(img: np.ndarray, brightness: float, contrast: float, saturation: float) -> np.ndarray:
    x = img.astype(np.float64) * brightness
    gray = x @ np.array([0.299, 0.587, 0.114])
    x = (x - gray.mean()) * contrast + gray.mean()
    gray = x @ np.array([0.299, 0.587, 0.114])
    x = gray[..., None] + (x - gray[..., None]) * saturation
    return np.clip(np.rint(x), 0, 255).astype(np.uint8)


def sample_jitter(rng: np.random.Generator) -> Tuple[float, float, float, bool]:
    b, c, s = rng.uniform(0.8, 1.2, size=3)
    flip = bool(rng.integers(0, 2))
    return float(b), float(c), float(s), flip


def texture_sprite(
    mask: np.ndarray,
    texture_image: np.ndarray,
    rng: np.random.Generator,
    jitter: bool = True,
    polygon: Optional[Polygon] = None,
    anchor: Optional[Tuple[float, float]] = None,
) -> Sprite:
    """Cut a uniformly placed crop of ``texture_image`` to cover ``mask``."""
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    th, tw = texture_image.shape[:2]
    if th < h or tw < w:
        raise SceneError(f"texture {th}x{tw} smaller than sprite box {h}x{w}")
    oy = int(rng.integers(0, th - h + 1))
    ox = int(rng.integers(0, tw - w + 1))
    tex = np.ascontiguousarray(texture_image[oy : oy + h, ox : ox + w, :3]).astype(np.uint8)
    if jitter:
        b, c, s, flip = sample_jitter(rng)
        if flip:
            tex = tex[:, ::-1]
        tex = color_jitter(tex, b, c, s)
    if anchor is None:
        anchor = ((w - 1) / 2.0, (h - 1) / 2.0)
    return Sprite(mask, np.ascontiguousarray(tex), tuple(anchor), polygon, (0.0, 0.0), (oy, ox))


def _ensure_size(img: np.ndarray, h: int, w: int) -> np.ndarray:
    ih, iw = img.shape[:2]
    if ih >= h and iw >= w:
        return img
    f = max(h / ih, w / iw)
    size = (int(np.ceil(iw * f)), int(np.ceil(ih * f)))
    return np.asarray(Image.fromarray(img).resize(size, Image.BILINEAR))


def polygon_shape(rng: np.random.Generator, radius: float, convex: Optional[bool] = None):
    n = int(rng.integers(3, 9))
    if convex is None:
        convex = bool(rng.integers(0, 2))
    poly = sample_polygon(rng, n, 0.2 * radius, radius, convex)
    off = np.ceil(radius) + 1
    verts = poly.vertices + off
    verts.setflags(write=False)
    poly = Polygon(verts, poly.is_convex)
    size = int(2 * off + 1)
    mask = polygon2mask((size, size), verts[:, ::-1])
    if not mask.any():
        raise SceneError("polygon rasterised to an empty mask")
    return mask, poly, (float(off), float(off))


def silhouette_shape(rng: np.random.Generator, source: np.ndarray, target_area: float):
    rows, cols = np.nonzero(source)
    m = source[rows.min() : rows.max() + 1, cols.min() : cols.max() + 1]
    angle = float(rng.uniform(-180.0, 180.0))
    im = Image.fromarray((m * 255).astype(np.uint8), mode="L").rotate(angle, resample=Image.NEAREST, expand=True)
    m = np.asarray(im) > 127
    rows, cols = np.nonzero(m)
    m = m[rows.min() : rows.max() + 1, cols.min() : cols.max() + 1]
    f = np.sqrt(target_area / m.size)
    size = (max(3, int(round(m.shape[1] * f))), max(3, int(round(m.shape[0] * f))))
    m = np.asarray(Image.fromarray((m * 255).astype(np.uint8), mode="L").resize(size, Image.NEAREST)) > 127
    lab, n = ndimage.label(m, structure=np.ones((3, 3)))
    if n == 0:
        raise SceneError("silhouette vanished after resizing")
    sizes = ndimage.sum(m, lab, range(1, n + 1))
    m = lab == (1 + int(np.argmax(sizes)))
    rows, cols = np.nonzero(m)
    m = np.pad(m[rows.min() : rows.max() + 1, cols.min() : cols.max() + 1], 1)
    h, w = m.shape
    return m, ((w - 1) / 2.0, (h - 1) / 2.0)


# --------------------------------------------------------------------------
# Motion
# --------------------------------------------------------------------------


def _frac(t: int, seq_len: int) -> float:
    return t / (seq_len - 1) if seq_len > 1 else 0.0


def relative_motion(per_frame_h: Sequence[Homography], t_from: int, t_to: int) -> Homography:
    """Background motion taking frame ``t_from`` coordinates to frame ``t_to``."""
    a, b = per_frame_h[t_from], per_frame_h[t_to]
    if a == b:
        return Homography.identity()
    return b @ invert(a)


def control_points_for(sprite: Sprite) -> np.ndarray:
    if sprite.polygon is not None:
        return np.asarray(sprite.polygon.vertices, dtype=np.float64) + np.asarray(sprite.origin)
    h, w = sprite.mask.shape
    spacing = max(2, int(round(max(h, w) / 4)))
    while True:
        pts = grid_control_points(sprite.mask, spacing)
        if len(pts) >= 3:
            centred = pts - pts.mean(axis=0)
            sv = np.linalg.svd(centred, compute_uv=False)
            if sv[1] > 1e-6 * max(sv[0], 1.0):
                return pts + np.asarray(sprite.origin)
        if spacing == 2:
            raise SceneError("silhouette too thin for TPS control points")
        spacing -= 1


def tps_schedule(
    rng: np.random.Generator, ctrl: np.ndarray, seq_len: int, subset_fraction: float, regularization: float
) -> List[TpsWarp]:
    """Per-frame TPS warps with control displacement ``d * sin(w t + phase)``."""
    amp = perturb_control_points(rng, ctrl, subset_fraction)
    cycles = rng.uniform(0.5, 1.5)
    phase = rng.uniform(0.0, 2 * np.pi)
    out = []
    for t in range(seq_len):
        s = np.sin(2 * np.pi * cycles * _frac(t, seq_len) + phase)
        out.append(fit_tps(ctrl, ctrl + s * amp, regularization))
    return out


def object_motion(
    rng: np.random.Generator,
    sprite: Sprite,
    position: Tuple[float, float],
    opts: SceneOptions,
    with_tps: bool,
) -> MotionScript:
    h, w = opts.frame_size
    sh, sw = sprite.mask.shape
    ranges = HomographyRanges(
        rotation_deg=(-opts.obj_rotation_deg, opts.obj_rotation_deg),
        scale=opts.obj_scale,
        tx=(-opts.obj_translation * w, opts.obj_translation * w),
        ty=(-opts.obj_translation * h, opts.obj_translation * h),
        perspective=(-opts.obj_perspective * max(sh, sw), opts.obj_perspective * max(sh, sw)),
        center=(0.0, 0.0),
        extent=(float(sw), float(sh)),
    )
    params = sample_homography_params(rng, ranges)
    ax, ay = sprite.anchor
    place = Homography.translation(position[0], position[1])
    to_anchor = Homography.translation(-ax - sprite.origin[0], -ay - sprite.origin[1])
    tps: List[Optional[TpsWarp]] = [None] * opts.seq_len
    if with_tps:
        tps = tps_schedule(rng, control_points_for(sprite), opts.seq_len, opts.tps_subset_fraction, opts.tps_regularization)
    frames = []
    for t in range(opts.seq_len):
        m = params.scaled(_frac(t, opts.seq_len)).to_homography()
        frames.append(Transform(place @ m @ to_anchor, tps[t]))
    return MotionScript(tuple(frames))


def schedule_stationary(
    rng: np.random.Generator,
    script: MotionScript,
    bg: BackgroundSource,
    len_range: Tuple[int, int] = (1, 5),
) -> MotionScript:
    """Make the object move with the background for one interval of 1..5 steps.

    Within the interval ``[t1, t2]`` the pose at ``t1`` is carried by the
    background motion. Afterwards the original trajectory resumes from the
    frozen pose (time-shifted by the interval length) so there is no jump.
    """
    if not isinstance(bg, HomographyImage):
        raise UnsupportedBackgroundError("stationary objects need a homography background")
    n = len(script)
    lo, hi = len_range
    hi = min(hi, n - 1)
    if hi < lo:
        raise SceneError(f"sequence of {n} frames too short for a stationary interval")
    length = int(rng.integers(lo, hi + 1))
    t1 = int(rng.integers(0, n - 1 - length + 1))
    t2 = t1 + length
    frames = list(script.per_frame[: t1 + 1])
    base = script.per_frame[t1]
    for t in range(t1 + 1, t2 + 1):
        g = relative_motion(bg.per_frame_h, t1, t)
        frames.append(Transform(g @ base.homography, base.tps))
    hold = relative_motion(bg.per_frame_h, t1, t2)
    for t in range(t2 + 1, n):
        src = script.per_frame[t - length]
        frames.append(Transform(hold @ src.homography, src.tps))
    return MotionScript(tuple(frames), tuple(script.stationary_intervals) + ((t1, t2),))


# --------------------------------------------------------------------------
# Backgrounds and occluders
# --------------------------------------------------------------------------


def homography_background(
    rng: np.random.Generator, image: np.ndarray, opts: SceneOptions
) -> Tuple[HomographyImage, Dict[str, Any]]:
    h, w = opts.frame_size
    m = int(np.ceil(opts.bg_margin * max(h, w)))
    ch, cw = h + 2 * m, w + 2 * m
    img = _ensure_size(image, ch, cw)
    oy = int(rng.integers(0, img.shape[0] - ch + 1))
    ox = int(rng.integers(0, img.shape[1] - cw + 1))
    canvas = img[oy : oy + ch, ox : ox + cw, :3]
    if opts.color_jitter:
        b, c, s, flip = sample_jitter(rng)
        if flip:
            canvas = canvas[:, ::-1]
        canvas = color_jitter(canvas, b, c, s)
    ranges = HomographyRanges.for_frame(
        opts.frame_size, opts.bg_rotation_deg, opts.bg_scale, opts.bg_translation, opts.bg_perspective
    )
    params = sample_homography_params(rng, ranges)
    shift = Homography.translation(-m, -m)
    per_frame = []
    for t in range(opts.seq_len):
        cam = params.scaled(_frac(t, opts.seq_len)).to_homography()
        per_frame.append(shift if cam.is_identity() else cam @ shift)
    bg = HomographyImage(np.ascontiguousarray(canvas, dtype=np.uint8), tuple(per_frame))
    return bg, {"margin": m, "crop": [oy, ox]}


def clip_background(
    rng: np.random.Generator, clip: np.ndarray, opts: SceneOptions
) -> Tuple[FrameSequence, Dict[str, Any]]:
    """Sample a forward or reverse run through ``clip`` at stride 1, 2 or 3."""
    h, w = opts.frame_size
    n = len(clip)
    span = opts.seq_len - 1
    strides = [s for s in (1, 2, 3) if s * span < n]
    if not strides:
        raise AssetError(f"background clip of {n} frames is shorter than {opts.seq_len}")
    stride = int(strides[int(rng.integers(0, len(strides)))])
    reverse = bool(rng.integers(0, 2))
    first = int(rng.integers(0, n - stride * span))
    idx = first + stride * np.arange(opts.seq_len)
    if reverse:
        idx = idx[::-1]
    lo, hi = int(idx.min()), int(idx.max())
    fh, fw = clip.shape[1:3]
    if fh < h or fw < w:
        f = max(h / fh, w / fw)
        size = (int(np.ceil(fw * f)), int(np.ceil(fh * f)))
        sub = np.stack([np.asarray(Image.fromarray(fr).resize(size, Image.BILINEAR)) for fr in clip[lo : hi + 1]])
    else:
        sub = clip[lo : hi + 1]
    oy = int(rng.integers(0, sub.shape[1] - h + 1))
    ox = int(rng.integers(0, sub.shape[2] - w + 1))
    sub = sub[:, oy : oy + h, ox : ox + w]
    if opts.color_jitter:
        b, c, s, flip = sample_jitter(rng)
        if flip:
            sub = sub[:, :, ::-1]
        sub = np.stack([color_jitter(fr, b, c, s) for fr in sub])
    start = int(idx[0]) - lo
    bg = FrameSequence(np.ascontiguousarray(sub, dtype=np.uint8), start, -stride if reverse else stride)
    return bg, {"clip_start": int(idx[0]), "stride": bg.stride, "crop": [oy, ox]}


def make_occluder(
    rng: np.random.Generator, bg: BackgroundSource, assets: AssetCatalog, opts: SceneOptions
) -> Layer:
    """A textured polygon glued to the background: same per-frame motion."""
    assets.require("textures")
    h, w = opts.frame_size
    radius = float(rng.uniform(0.12, 0.22)) * min(h, w)
    mask, poly, anchor = polygon_shape(rng, radius, convex=bool(rng.integers(0, 2)))
    tex_idx = int(rng.integers(0, len(assets.textures)))
    tex = _ensure_size(assets.textures[tex_idx], *mask.shape)
    sprite = texture_sprite(mask, tex, rng, opts.color_jitter, poly, anchor)
    pos = np.array([rng.uniform(0, w), rng.uniform(0, h)])
    motion = bg.motion()
    if motion:
        canon = invert(motion[0]).apply(pos)
        per_frame = tuple(Transform(hm) for hm in motion)
    else:
        canon = pos
        ident = Homography.identity()
        per_frame = tuple(Transform(ident) for _ in range(opts.seq_len))
    origin = (float(canon[0] - anchor[0]), float(canon[1] - anchor[1]))
    sprite = replace(sprite, origin=origin)
    return Layer(sprite, MotionScript(per_frame))


# --------------------------------------------------------------------------
# Scene assembly
# --------------------------------------------------------------------------


def visible_somewhere(sprite: Sprite, script: MotionScript, frame_size: Tuple[int, int]) -> bool:
    h, w = frame_size
    pts = sprite.shape_points()
    for tr in script.per_frame:
        q = tr.forward(pts)
        inside = (q[:, 0] >= 0) & (q[:, 0] <= w - 1) & (q[:, 1] >= 0) & (q[:, 1] <= h - 1)
        if inside.any():
            return True
    return False


def build_scene(
    dist_row: DistRow,
    assets: AssetCatalog,
    rng: np.random.Generator,
    n_objects: int = 1,
    options: Optional[SceneOptions] = None,
    seed: int = 0,
) -> SceneSpec:
    """Sample a complete scene of kind ``dist_row`` with ``n_objects`` sprites."""
    opts = options or SceneOptions()
    if n_objects < 1:
        raise SceneError("need at least one object")
    h, w = opts.frame_size
    # flags first, so they depend only on the stream head
    stationary = bool(rng.uniform() < opts.stationary_prob) and dist_row.background == "homo-bg"
    occluded = bool(rng.uniform() < opts.occluder_prob) and n_objects >= opts.occluder_min_objects

    meta: Dict[str, Any] = {
        "row": dist_row.name,
        "background": dist_row.background,
        "motion": dist_row.motion,
        "objects": dist_row.objects,
        "n_objects": n_objects,
        "assets_digest": assets.digest,
    }
    if dist_row.background == "homo-bg":
        assets.require("bg_images")
        i = int(rng.integers(0, len(assets.bg_images)))
        bg, info = homography_background(rng, assets.bg_images[i], opts)
        info["image"] = assets.name("bg_images", i)
    else:
        assets.require("bg_clips")
        i = int(rng.integers(0, len(assets.bg_clips)))
        bg, info = clip_background(rng, assets.bg_clips[i], opts)
        info["clip"] = assets.name("bg_clips", i)
    meta["background_info"] = info

    assets.require("textures")
    if dist_row.objects == "real-obj":
        assets.require("silhouettes")
    layers = []
    sprites_meta = []
    for k in range(n_objects):
        area = float(rng.uniform(*opts.sprite_area)) * h * w
        if dist_row.objects == "polygon":
            mask, poly, anchor = polygon_shape(rng, np.sqrt(area) / 2.0)
            src_name = None
        else:
            si = int(rng.integers(0, len(assets.silhouettes)))
            mask, anchor = silhouette_shape(rng, assets.silhouettes[si], area)
            poly = None
            src_name = assets.name("silhouettes", si)
        ti = int(rng.integers(0, len(assets.textures)))
        tex = _ensure_size(assets.textures[ti], *mask.shape)
        sprite = texture_sprite(mask, tex, rng, opts.color_jitter, poly, anchor)
        for _ in range(50):
            pos = (float(rng.uniform(0, w)), float(rng.uniform(0, h)))
            script = object_motion(rng, sprite, pos, opts, dist_row.motion == "homo+tps")
            if visible_somewhere(sprite, script, opts.frame_size):
                break
        else:
            raise SceneError(f"object {k} never enters the frame")
        layers.append(Layer(sprite, script))
        sprites_meta.append(
            {
                "kind": sprite.kind,
                "texture": assets.name("textures", ti),
                "silhouette": src_name,
                "crop_offset": list(sprite.crop_offset),
                "n_vertices": None if poly is None else len(poly),
                "position": list(pos),
            }
        )
    meta["sprites"] = sprites_meta

    if stationary:
        k = int(rng.integers(0, n_objects))
        layer = layers[k]
        layers[k] = Layer(layer.sprite, schedule_stationary(rng, layer.script, bg, opts.stationary_len))
        meta["stationary_layer"] = k
    depth_order = tuple(int(r) for r in rng.permutation(n_objects))
    occluder = make_occluder(rng, bg, assets, opts) if occluded else None
    meta["stationary"] = stationary
    meta["occluder"] = occluded
    return SceneSpec(
        seq_len=opts.seq_len,
        frame_size=tuple(opts.frame_size),
        layers=tuple(layers),
        background=bg,
        depth_order=depth_order,
        seed=int(seed),
        occluder=occluder,
        meta=meta,
    )


# --------------------------------------------------------------------------
# Serialisation
# --------------------------------------------------------------------------


def _enc(a: np.ndarray) -> Dict[str, Any]:
    a = np.ascontiguousarray(a)
    return {"dtype": a.dtype.str, "shape": list(a.shape), "data": base64.b64encode(a.tobytes()).decode("ascii")}


def _dec(d: Dict[str, Any]) -> np.ndarray:
    a = np.frombuffer(base64.b64decode(d["data"]), dtype=np.dtype(d["dtype"])).reshape(d["shape"]).copy()
    a.setflags(write=False)
    return a


def _enc_tps(t: Optional[TpsWarp]):
    if t is None:
        return None
    return {
        "src": _enc(t.control_src),
        "dst": _enc(t.control_dst),
        "affine": _enc(t.affine),
        "w": _enc(t.kernel_weights),
        "reg": t.regularization,
    }


def _dec_tps(d) -> Optional[TpsWarp]:
    if d is None:
        return None
    return TpsWarp(_dec(d["src"]), _dec(d["dst"]), _dec(d["affine"]), _dec(d["w"]), float(d["reg"]))


def _enc_script(s: MotionScript, pool: Dict[int, int], tps_list: list, h_list: list) -> Dict[str, Any]:
    frames = []
    for tr in s.per_frame:
        frames.append([_ref(tr.homography, pool, h_list), None if tr.tps is None else _ref(tr.tps, pool, tps_list)])
    return {"frames": frames, "stationary": [list(iv) for iv in s.stationary_intervals]}


def _ref(obj, pool: Dict[int, int], lst: list) -> int:
    # shared transform objects stay shared after a round trip
    key = id(obj)
    if key not in pool:
        pool[key] = len(lst)
        lst.append(obj)
    return pool[key]


def _enc_layer(layer: Layer, pool, tps_list, h_list) -> Dict[str, Any]:
    sp = layer.sprite
    return {
        "mask": _enc(sp.mask),
        "texture": _enc(sp.texture),
        "anchor": list(sp.anchor),
        "origin": list(sp.origin),
        "crop_offset": list(sp.crop_offset),
        "polygon": None if sp.polygon is None else {"vertices": _enc(sp.polygon.vertices), "convex": sp.polygon.is_convex},
        "script": _enc_script(layer.script, pool, tps_list, h_list),
    }


def serialize_scene(spec: SceneSpec) -> bytes:
    pool: Dict[int, int] = {}
    h_list: list = []
    tps_list: list = []
    bg = spec.background
    if isinstance(bg, HomographyImage):
        bgd = {"kind": "homo-bg", "image": _enc(bg.image), "h": [_ref(hm, pool, h_list) for hm in bg.per_frame_h]}
    else:
        bgd = {"kind": "real-bg", "frames": _enc(bg.frames), "start": bg.start, "stride": bg.stride}
    layers = [_enc_layer(l, pool, tps_list, h_list) for l in spec.layers]
    occ = None if spec.occluder is None else _enc_layer(spec.occluder, pool, tps_list, h_list)
    doc = {
        "version": 1,
        "seq_len": spec.seq_len,
        "frame_size": list(spec.frame_size),
        "seed": spec.seed,
        "depth_order": list(spec.depth_order),
        "background": bgd,
        "layers": layers,
        "occluder": occ,
        "homographies": [_enc(hm.m) for hm in h_list],
        "tps": [_enc_tps(t) for t in tps_list],
        "meta": spec.meta,
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("utf-8")


def _dec_layer(d, hs, tpss) -> Layer:
    poly = None
    if d["polygon"] is not None:
        poly = Polygon(_dec(d["polygon"]["vertices"]), bool(d["polygon"]["convex"]))
    sprite = Sprite(
        _dec(d["mask"]),
        _dec(d["texture"]),
        tuple(d["anchor"]),
        poly,
        tuple(d["origin"]),
        tuple(d["crop_offset"]),
    )
    frames = tuple(Transform(hs[hi], None if ti is None else tpss[ti]) for hi, ti in d["script"]["frames"])
    intervals = tuple(tuple(iv) for iv in d["script"]["stationary"])
    return Layer(sprite, MotionScript(frames, intervals))


def deserialize_scene(data: bytes) -> SceneSpec:
    doc = json.loads(data.decode("utf-8"))
    hs = [Homography(_dec(m)) for m in doc["homographies"]]
    tpss = [_dec_tps(t) for t in doc["tps"]]
    b = doc["background"]
    if b["kind"] == "homo-bg":
        bg: BackgroundSource = HomographyImage(_dec(b["image"]), tuple(hs[i] for i in b["h"]))
    else:
        bg = FrameSequence(_dec(b["frames"]), int(b["start"]), int(b["stride"]))
    return SceneSpec(
        seq_len=int(doc["seq_len"]),
        frame_size=tuple(doc["frame_size"]),
        layers=tuple(_dec_layer(l, hs, tpss) for l in doc["layers"]),
        background=bg,
        depth_order=tuple(doc["depth_order"]),
        seed=int(doc["seed"]),
        occluder=None if doc["occluder"] is None else _dec_layer(doc["occluder"], hs, tpss),
        meta=doc["meta"],
    )
