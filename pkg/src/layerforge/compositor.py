"""Rasterisation of layered scenes: RGB frames, amodal/modal masks and GT flow."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from .geometry import Homography, Transform
from .scene import FrameSequence, HomographyImage, Layer, SceneSpec, Sprite, relative_motion

BACKGROUND = -1


class CompositionError(ValueError):
    pass


# --------------------------------------------------------------------------
# Modal composition
# --------------------------------------------------------------------------


def _check_binary(a: np.ndarray) -> None:
    if a.dtype == bool:
        return
    if not np.all((a == 0) | (a == 1)):
        raise CompositionError("amodal masks must be binary (0/1)")


def _check_rank(depth_rank, k: int) -> np.ndarray:
    rank = np.asarray(depth_rank, dtype=np.int64).reshape(-1)
    if len(rank) != k or sorted(rank.tolist()) != list(range(k)):
        raise CompositionError(f"depth rank {rank.tolist()} is not a permutation of {k} layers")
    return rank


def compose_modal(amodal, depth_rank, return_alpha: bool = False):
    """Front-to-back modal composition of binary amodal masks.

    ``amodal`` has the layer axis first (``K x ...``); ``depth_rank[k]`` is the
    rank of layer ``k`` (0 = front). The accumulated opacity starts at zero and
    each visible mask is ``(1 - alpha) * A``. Output keeps the input layer order.
    """
    a = np.asarray(amodal)
    _check_binary(a)
    a = a.astype(np.uint8)
    rank = _check_rank(depth_rank, a.shape[0])
    out = np.zeros_like(a)
    alphas = np.zeros_like(a)
    alpha = np.zeros(a.shape[1:], dtype=np.uint8)
    prev = np.zeros(a.shape[1:], dtype=np.uint8)
    for k in np.argsort(rank, kind="stable"):
        alpha = np.clip(alpha + prev, 0, 1)
        prev = (1 - alpha) * a[k]
        out[k] = prev
        alphas[k] = alpha
    if return_alpha:
        return out, alphas
    return out


def compose_modal_stack(amodal, depth_rank) -> np.ndarray:
    """:func:`compose_modal` over a ``T x K x H x W`` stack."""
    a = np.asarray(amodal)
    if a.ndim != 4:
        raise CompositionError("expected a T x K x H x W stack")
    return np.swapaxes(compose_modal(np.swapaxes(a, 0, 1), depth_rank), 0, 1)


# --------------------------------------------------------------------------
# Layer rasterisation
# --------------------------------------------------------------------------


@dataclass
class LayerRaster:
    """One layer rendered into one frame.

    ``canon`` holds the canonical sprite coordinate sampled at each covered
    pixel and is NaN outside the amodal mask.
    """

    rgb: np.ndarray
    amodal: np.ndarray
    canon: np.ndarray

    def __iter__(self):
        return iter((self.rgb, self.amodal, self.canon))


def _outline(mask: np.ndarray) -> np.ndarray:
    inner = ndimage.binary_erosion(mask, border_value=0)
    rows, cols = np.nonzero(mask & ~inner)
    return np.stack([cols, rows], axis=1).astype(np.float64)


def _footprint(sprite: Sprite, tr: Transform, frame_size, margin: int = 3):
    h, w = frame_size
    pts = _outline(sprite.mask) + np.asarray(sprite.origin)
    q = tr.forward(pts)
    x0 = int(np.floor(q[:, 0].min())) - margin
    x1 = int(np.ceil(q[:, 0].max())) + margin + 1
    y0 = int(np.floor(q[:, 1].min())) - margin
    y1 = int(np.ceil(q[:, 1].max())) + margin + 1
    x0, y0 = max(x0, 0), max(y0, 0)
    x1, y1 = min(x1, w), min(y1, h)
    if x0 >= x1 or y0 >= y1:
        return None
    return y0, y1, x0, x1


def _bilinear(img: np.ndarray, rows: np.ndarray, cols: np.ndarray, mode: str) -> np.ndarray:
    coords = np.stack([rows.ravel(), cols.ravel()])
    if img.ndim == 2:
        out = ndimage.map_coordinates(img, coords, order=1, mode=mode, cval=0.0)
        return out.reshape(rows.shape)
    chans = [ndimage.map_coordinates(img[..., c], coords, order=1, mode=mode, cval=0.0) for c in range(img.shape[2])]
    return np.stack(chans, axis=-1).reshape(rows.shape + (img.shape[2],))


def to_uint8(x: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(x), 0, 255).astype(np.uint8)


def _mask_distance(sprite: Sprite) -> np.ndarray:
    dist = getattr(sprite, "_mask_distance", None)
    if dist is None:
        dist = ndimage.distance_transform_edt(~sprite.mask)
        object.__setattr__(sprite, "_mask_distance", dist)
    return dist


def _invert_tps_near_mask(sprite: Sprite, tps, v: np.ndarray) -> np.ndarray:
    """Inverse TPS, refined to full accuracy only where the sprite may be hit.

    The swapped-control-point fit is off by an amount comparable to its
    forward residual, so pixels whose first guess lands well outside the
    mask (beyond a margin scaled by that residual) cannot be covered and
    keep the first guess.
    """
    s0 = tps.inverse.apply(v)
    resid = np.hypot(*np.moveaxis(tps.apply(s0) - v, -1, 0))
    dist = _mask_distance(sprite)
    h, w = dist.shape
    cx = s0[..., 0] - sprite.origin[0]
    cy = s0[..., 1] - sprite.origin[1]
    ix = np.clip(np.rint(cx), 0, w - 1).astype(np.int64)
    iy = np.clip(np.rint(cy), 0, h - 1).astype(np.int64)
    outside = np.hypot(cx - ix, cy - iy)
    near = dist[iy, ix] + outside <= 4.0 * resid + 2.0
    s = s0.copy()
    if near.any():
        s[near] = tps.apply_inverse(v[near], start=s0[near])
    return s


def rasterize_layer(sprite: Sprite, phi_t: Transform, frame_size: Tuple[int, int]) -> LayerRaster:
    """Backward-warp a sprite into the frame through ``phi_t``.

    Amodal coverage is the bilinearly sampled shape mask thresholded at 0.5.
    """
    h, w = frame_size
    rgb = np.zeros((h, w, 3), dtype=np.uint8)
    amodal = np.zeros((h, w), dtype=bool)
    canon = np.full((h, w, 2), np.nan)
    box = _footprint(sprite, phi_t, frame_size)
    if box is None:
        return LayerRaster(rgb, amodal, canon)
    y0, y1, x0, x1 = box
    gx, gy = np.meshgrid(np.arange(x0, x1, dtype=np.float64), np.arange(y0, y1, dtype=np.float64))
    x = np.stack([gx, gy], axis=-1)
    v = phi_t.inverse_homography.apply(x)
    ox, oy = sprite.origin
    if phi_t.tps is not None:
        s = _invert_tps_near_mask(sprite, phi_t.tps, v)
    else:
        s = v
    rows, cols = s[..., 1] - oy, s[..., 0] - ox
    alpha = _bilinear(sprite.mask.astype(np.float64), rows, cols, "constant")
    cov = alpha >= 0.5
    if not cov.any():
        return LayerRaster(rgb, amodal, canon)
    tex = _bilinear(sprite.texture.astype(np.float64), rows[cov], cols[cov], "nearest")
    sub = (slice(y0, y1), slice(x0, x1))
    amodal[sub] = cov
    rgb[sub][cov] = to_uint8(tex)
    canon[sub][cov] = s[cov]
    return LayerRaster(rgb, amodal, canon)


def background_frame(bg, t: int, frame_size: Tuple[int, int]) -> np.ndarray:
    h, w = frame_size
    if isinstance(bg, FrameSequence):
        return np.asarray(bg.frames[bg.index(t)], dtype=np.uint8)
    if isinstance(bg, HomographyImage):
        gx, gy = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
        src = bg.per_frame_h[t].inverse().apply(np.stack([gx, gy], axis=-1))
        return to_uint8(_bilinear(bg.image.astype(np.float64), src[..., 1], src[..., 0], "mirror"))
    raise CompositionError(f"unknown background {type(bg).__name__}")


def compose_rgb(background_frame: np.ndarray, layers: Sequence[Tuple[np.ndarray, np.ndarray]]) -> np.ndarray:
    """Opaque over-compositing; ``layers`` is ordered back to front."""
    out = np.array(background_frame, copy=True)
    for rgb, mask in layers:
        if rgb.shape != out.shape or mask.shape != out.shape[:2]:
            raise CompositionError(f"layer size {rgb.shape} does not match background {out.shape}")
        m = np.asarray(mask, dtype=bool)
        out[m] = rgb[m]
    return out


# --------------------------------------------------------------------------
# Frames, flow and full sequences
# --------------------------------------------------------------------------


@dataclass
class FrameRasters:
    t: int
    layers: List[LayerRaster]
    occluder: Optional[LayerRaster]
    surface: np.ndarray  # front-most layer id per pixel; K = occluder, -1 = background


def _front_to_back(spec: SceneSpec) -> List[int]:
    return [int(k) for k in np.argsort(np.asarray(spec.depth_order), kind="stable")]


def rasterize_frame(spec: SceneSpec, t: int) -> FrameRasters:
    size = tuple(spec.frame_size)
    layers = [rasterize_layer(l.sprite, l.script[t], size) for l in spec.layers]
    occ = None
    if spec.occluder is not None:
        occ = rasterize_layer(spec.occluder.sprite, spec.occluder.script[t], size)
    surface = np.full(size, BACKGROUND, dtype=np.int16)
    order = _front_to_back(spec)
    if occ is not None:
        order = [len(spec.layers)] + order
    for k in reversed(order):
        mask = occ.amodal if k == len(spec.layers) else layers[k].amodal
        surface[mask] = k
    return FrameRasters(t, layers, occ, surface)


def _relative_flow(g: Homography, pts: np.ndarray) -> np.ndarray:
    if g.is_identity():
        return np.zeros_like(pts)
    return g.apply(pts) - pts


def _flow_from_rasters(spec: SceneSpec, fr: FrameRasters, gap: int) -> Tuple[np.ndarray, np.ndarray]:
    t, t2 = fr.t, fr.t + gap
    h, w = spec.frame_size
    gx, gy = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    grid = np.stack([gx, gy], axis=-1)
    flow = np.zeros((h, w, 2))
    valid = np.ones((h, w), dtype=bool)
    bg = spec.background
    sel = fr.surface == BACKGROUND
    if isinstance(bg, HomographyImage):
        flow[sel] = _relative_flow(relative_motion(bg.per_frame_h, t, t2), grid[sel])
    else:
        valid[sel] = False
    surfaces = [(l.script, r) for l, r in zip(spec.layers, fr.layers)]
    if spec.occluder is not None:
        surfaces.append((spec.occluder.script, fr.occluder))
    for k, (script, r) in enumerate(surfaces):
        sel = fr.surface == k
        if not sel.any():
            continue
        tr_a, tr_b = script[t], script[t2]
        if tr_a.tps == tr_b.tps:
            # unchanged deformation cancels; the motion is the relative homography
            g = relative_motion([tr_a.homography, tr_b.homography], 0, 1)
            flow[sel] = _relative_flow(g, grid[sel])
        else:
            flow[sel] = tr_b.forward(r.canon[sel]) - grid[sel]
    return flow, valid


def gt_flow(spec: SceneSpec, t: int, gap: int = 1, rasters: Optional[FrameRasters] = None) -> np.ndarray:
    """Ground-truth flow from frame ``t`` to ``t + gap`` (negative gaps allowed).

    Each pixel moves with the front-most surface covering it at frame ``t``;
    the destination may be occluded at ``t + gap``.
    """
    return gt_flow_with_validity(spec, t, gap, rasters)[0]


def gt_flow_with_validity(spec: SceneSpec, t: int, gap: int = 1, rasters: Optional[FrameRasters] = None):
    if gap == 0 or not (0 <= t < spec.seq_len and 0 <= t + gap < spec.seq_len):
        raise CompositionError(f"flow gap {gap} from frame {t} leaves the sequence of {spec.seq_len} frames")
    fr = rasters if rasters is not None else rasterize_frame(spec, t)
    return _flow_from_rasters(spec, fr, gap)


def flow_frames(seq_len: int, gap: int) -> range:
    """Source frame indices for which a flow with ``gap`` exists."""
    return range(max(0, -gap), seq_len - max(0, gap))


@dataclass
class SequenceRecord:
    rgb: np.ndarray  # T x H x W x 3 uint8
    amodal: np.ndarray  # T x K x H x W uint8
    modal: np.ndarray  # T x K x H x W uint8
    depth_rank: Tuple[int, ...]
    flows: Dict[int, np.ndarray]  # gap -> (n, H, W, 2) float64, frames flow_frames(T, gap)
    flow_valid: Dict[int, np.ndarray]
    surface: np.ndarray  # T x H x W
    spec: SceneSpec = field(repr=False)

    def flow(self, t: int, gap: int = 1) -> np.ndarray:
        return self.flows[gap][t - flow_frames(len(self.rgb), gap).start]


def render_sequence(spec: SceneSpec, gaps: Sequence[int] = (1,)) -> SequenceRecord:
    """Render every frame, mask and requested flow of ``spec``."""
    t_len = spec.seq_len
    h, w = spec.frame_size
    k = spec.n_layers
    rasters = [rasterize_frame(spec, t) for t in range(t_len)]
    amodal = np.zeros((t_len, k, h, w), dtype=np.uint8)
    rgb = np.zeros((t_len, h, w, 3), dtype=np.uint8)
    order = _front_to_back(spec)
    for t, fr in enumerate(rasters):
        for i, r in enumerate(fr.layers):
            amodal[t, i] = r.amodal
        back_to_front = [(fr.layers[i].rgb, fr.layers[i].amodal) for i in reversed(order)]
        if fr.occluder is not None:
            back_to_front.append((fr.occluder.rgb, fr.occluder.amodal))
        rgb[t] = compose_rgb(background_frame(spec.background, t, (h, w)), back_to_front)
    modal = compose_modal_stack(amodal, spec.depth_order)
    flows, valid = {}, {}
    for g in gaps:
        fl, va = [], []
        for t in flow_frames(t_len, g):
            f, v = _flow_from_rasters(spec, rasters[t], g)
            fl.append(f)
            va.append(v)
        flows[g] = np.stack(fl) if fl else np.zeros((0, h, w, 2))
        valid[g] = np.stack(va) if va else np.zeros((0, h, w), dtype=bool)
    surface = np.stack([fr.surface for fr in rasters])
    return SequenceRecord(rgb, amodal, modal, tuple(spec.depth_order), flows, valid, surface, spec)
