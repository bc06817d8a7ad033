"""Segmentation metrics: region similarity J, contour accuracy F, box success rate."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage
from scipy.optimize import linear_sum_assignment

SR_THRESHOLDS = (0.5, 0.6, 0.7, 0.8, 0.9)


class EvalError(ValueError):
    pass


def _pair(a, b) -> Tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a).astype(bool)
    b = np.asarray(b).astype(bool)
    if a.shape != b.shape:
        raise EvalError(f"mask shapes differ: {a.shape} vs {b.shape}")
    return a, b


def iou(a, b) -> float:
    """Intersection over union; two empty masks score 1."""
    a, b = _pair(a, b)
    union = np.count_nonzero(a | b)
    if union == 0:
        return 1.0
    return np.count_nonzero(a & b) / union


def default_tolerance(shape: Sequence[int]) -> int:
    return int(math.ceil(0.008 * math.hypot(shape[-2], shape[-1])))


def contour_pixels(mask) -> np.ndarray:
    """Mask pixels with a 4-neighbour outside the mask; the image edge is not a contour."""
    m = np.asarray(mask).astype(bool)
    cross = ndimage.generate_binary_structure(2, 1)
    return m & ~ndimage.binary_erosion(m, structure=cross, border_value=1)


def contour_f(pred, gt, tol: Optional[float] = None) -> float:
    """Boundary F-measure with a Euclidean pixel tolerance."""
    p, g = _pair(pred, gt)
    tol = default_tolerance(p.shape) if tol is None else tol
    bp, bg = contour_pixels(p), contour_pixels(g)
    n_p, n_g = np.count_nonzero(bp), np.count_nonzero(bg)
    if n_p == 0 and n_g == 0:
        return 1.0
    if n_p == 0 or n_g == 0:
        return 0.0
    dist_to_g = ndimage.distance_transform_edt(~bg)
    dist_to_p = ndimage.distance_transform_edt(~bp)
    precision = np.count_nonzero(dist_to_g[bp] <= tol) / n_p
    recall = np.count_nonzero(dist_to_p[bg] <= tol) / n_g
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


# --------------------------------------------------------------------------
# Layer assignment and sequence evaluation
# --------------------------------------------------------------------------


def _frames(annotated, t_len: int) -> np.ndarray:
    if annotated is None:
        return np.arange(t_len)
    ann = np.asarray(annotated)
    if ann.dtype == bool:
        return np.nonzero(ann)[0]
    return ann.astype(np.int64)


def mean_iou_matrix(pred, gt, annotated=None) -> np.ndarray:
    """``M[k, j]``: mean IoU over annotated frames of layer k against object j."""
    p = np.asarray(pred).astype(bool)
    g = np.asarray(gt).astype(bool)
    frames = _frames(annotated, p.shape[0])
    out = np.zeros((p.shape[1], g.shape[1]))
    for k in range(p.shape[1]):
        for j in range(g.shape[1]):
            out[k, j] = np.mean([iou(p[t, k], g[t, j]) for t in frames]) if len(frames) else 0.0
    return out


def assign_layers(pred, gt, annotated=None) -> List[Optional[int]]:
    """Map each predicted layer to an object index (or None), maximising total mean IoU.

    ``pred`` is ``T x K x H x W``, ``gt`` is ``T x N x H x W``.
    """
    p = np.asarray(pred)
    g = np.asarray(gt)
    if p.shape[0] != g.shape[0] or p.shape[2:] != g.shape[2:]:
        raise EvalError(f"prediction {p.shape} and ground truth {g.shape} are not aligned")
    mapping: List[Optional[int]] = [None] * p.shape[1]
    if p.shape[1] == 0 or g.shape[1] == 0:
        return mapping
    rows, cols = linear_sum_assignment(mean_iou_matrix(p, g, annotated), maximize=True)
    for k, j in zip(rows, cols):
        mapping[int(k)] = int(j)
    return mapping


@dataclass
class ObjectScore:
    object_id: int
    layer: Optional[int]
    j_mean: float
    f_mean: float


@dataclass
class EvalReport:
    per_object: List[ObjectScore] = field(default_factory=list)
    j_mean: float = 0.0
    f_mean: Optional[float] = None
    assignment: List[Optional[int]] = field(default_factory=list)
    sr: Optional[Dict[str, float]] = None
    name: str = ""

    @property
    def jf_mean(self) -> Optional[float]:
        if self.f_mean is None:
            return None
        return (self.j_mean + self.f_mean) / 2.0

    def to_dict(self) -> Dict:
        d = asdict(self)
        d["jf_mean"] = self.jf_mean
        return d


def eval_multi(pred, gt, tol: Optional[float] = None, annotated=None, name: str = "") -> EvalReport:
    """Per-object J and F over annotated frames after Hungarian layer assignment."""
    p = np.asarray(pred).astype(bool)
    g = np.asarray(gt).astype(bool)
    frames = _frames(annotated, g.shape[0])
    if len(frames) == 0:
        raise EvalError("no annotated frames")
    mapping = assign_layers(p, g, frames)
    layer_of = {j: k for k, j in enumerate(mapping) if j is not None}
    empty = np.zeros(g.shape[2:], dtype=bool)
    scores = []
    for j in range(g.shape[1]):
        k = layer_of.get(j)
        js, fs = [], []
        for t in frames:
            pm = p[t, k] if k is not None else empty
            js.append(iou(pm, g[t, j]))
            fs.append(contour_f(pm, g[t, j], tol))
        scores.append(ObjectScore(j, k, float(np.mean(js)), float(np.mean(fs))))
    j_mean = float(np.mean([s.j_mean for s in scores])) if scores else 0.0
    f_mean = float(np.mean([s.f_mean for s in scores])) if scores else 0.0
    return EvalReport(scores, j_mean, f_mean, mapping, None, name)


def eval_single_grouped(pred, gt_foreground, annotated=None) -> float:
    """Mean IoU of the union of all predicted layers against the foreground mask."""
    p = np.asarray(pred).astype(bool)
    g = np.asarray(gt_foreground).astype(bool)
    union = p.any(axis=1) if p.ndim == 4 else p
    if union.shape != g.shape:
        raise EvalError(f"union shape {union.shape} differs from foreground {g.shape}")
    frames = _frames(annotated, g.shape[0])
    if len(frames) == 0:
        return 0.0
    return float(np.mean([iou(union[t], g[t]) for t in frames]))


# --------------------------------------------------------------------------
# Boxes
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class BoundingBox:
    """Half-open pixel box ``[x0, x1) x [y0, y1)``."""

    x0: int
    y0: int
    x1: int
    y1: int

    def __post_init__(self):
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise EvalError(f"degenerate box {self}")

    @property
    def area(self) -> int:
        return (self.x1 - self.x0) * (self.y1 - self.y0)

    def as_tuple(self) -> Tuple[int, int, int, int]:
        return (self.x0, self.y0, self.x1, self.y1)


def bbox_from_mask(mask) -> Optional[BoundingBox]:
    m = np.asarray(mask).astype(bool)
    if not m.any():
        return None
    rows = np.nonzero(m.any(axis=1))[0]
    cols = np.nonzero(m.any(axis=0))[0]
    return BoundingBox(int(cols[0]), int(rows[0]), int(cols[-1]) + 1, int(rows[-1]) + 1)


def box_iou(a: BoundingBox, b: BoundingBox) -> float:
    iw = min(a.x1, b.x1) - max(a.x0, b.x0)
    ih = min(a.y1, b.y1) - max(a.y0, b.y0)
    inter = max(iw, 0) * max(ih, 0)
    return inter / (a.area + b.area - inter)


def detection_success_rate(
    pred_boxes: Sequence[Optional[BoundingBox]],
    gt_boxes: Sequence[Optional[BoundingBox]],
    thresholds: Sequence[float] = SR_THRESHOLDS,
) -> Dict[str, float]:
    """Fraction of annotated frames whose box IoU reaches each threshold, and their mean.

    Frames with no ground-truth box are not annotated; a missing prediction on
    an annotated frame is a failure.
    """
    if len(pred_boxes) != len(gt_boxes):
        raise EvalError("prediction and ground-truth box lists differ in length")
    ious = [
        0.0 if p is None else box_iou(p, g)
        for p, g in zip(pred_boxes, gt_boxes)
        if g is not None
    ]
    out: Dict[str, float] = {}
    for th in thresholds:
        out[f"{th:g}"] = float(np.mean([v >= th for v in ious])) if ious else 0.0
    out["mean"] = float(np.mean([out[f"{th:g}"] for th in thresholds]))
    return out
