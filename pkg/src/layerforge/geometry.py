"""Planar transforms: homographies, thin-plate splines, polygons and control points.

Points are ``(x, y)`` pairs in pixel units, with pixel ``(row, col)`` centred at
``(x=col, y=row)``. All sampling functions take an explicit
``numpy.random.Generator`` and are pure functions of its state.
"""
from __future__ import annotations

import functools
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from scipy import ndimage
from scipy.special import xlogy

DET_EPS = 1e-8
W_EPS = 1e-12


class GeometryError(ValueError):
    pass


class SingularSystemError(GeometryError):
    pass


class PointAtInfinityError(GeometryError):
    pass


def _as_points(p) -> np.ndarray:
    arr = np.asarray(p, dtype=np.float64)
    if arr.shape[-1] != 2:
        raise GeometryError(f"expected (..., 2) points, got shape {arr.shape}")
    return arr


# --------------------------------------------------------------------------
# Homographies
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Homography:
    """Invertible 3x3 projective map, stored with ``m[2, 2] == 1``."""

    m: np.ndarray

    def __post_init__(self):
        m = np.array(self.m, dtype=np.float64)
        if m.shape != (3, 3):
            raise GeometryError(f"homography must be 3x3, got {m.shape}")
        if not np.all(np.isfinite(m)):
            raise GeometryError("homography has non-finite entries")
        if abs(m[2, 2]) < W_EPS:
            raise GeometryError("homography with m[2,2] == 0 cannot be normalised")
        m = m / m[2, 2]
        if abs(np.linalg.det(m)) < DET_EPS:
            raise GeometryError(f"homography is singular (det={np.linalg.det(m):.3e})")
        m.setflags(write=False)
        object.__setattr__(self, "m", m)

    @classmethod
    def identity(cls) -> "Homography":
        return cls(np.eye(3))

    @classmethod
    def translation(cls, tx: float, ty: float) -> "Homography":
        return cls(np.array([[1.0, 0.0, tx], [0.0, 1.0, ty], [0.0, 0.0, 1.0]]))

    @classmethod
    def scaling(cls, sx: float, sy: Optional[float] = None) -> "Homography":
        sy = sx if sy is None else sy
        return cls(np.diag([sx, sy, 1.0]))

    def __matmul__(self, other: "Homography") -> "Homography":
        """``(self @ other)(p) == self(other(p))``."""
        return Homography(self.m @ other.m)

    def __eq__(self, other) -> bool:
        return isinstance(other, Homography) and np.array_equal(self.m, other.m)

    def __hash__(self):
        return hash(self.m.tobytes())

    def __repr__(self):
        return f"Homography({self.m.tolist()!r})"

    def apply(self, p) -> np.ndarray:
        pts = _as_points(p)
        m = self.m
        x, y = pts[..., 0], pts[..., 1]
        w = m[2, 0] * x + m[2, 1] * y + m[2, 2]
        if np.any(np.abs(w) < W_EPS):
            raise PointAtInfinityError("point maps to infinity under homography")
        u = (m[0, 0] * x + m[0, 1] * y + m[0, 2]) / w
        v = (m[1, 0] * x + m[1, 1] * y + m[1, 2]) / w
        return np.stack([u, v], axis=-1)

    def inverse(self) -> "Homography":
        return invert(self)

    def is_identity(self) -> bool:
        return bool(np.array_equal(self.m, np.eye(3)))


def invert(h: Homography) -> Homography:
    if abs(np.linalg.det(h.m)) < DET_EPS:
        raise GeometryError("cannot invert near-singular homography")
    return Homography(np.linalg.inv(h.m))


def homography_from_points(src, dst) -> Homography:
    """Exact homography taking four source points onto four destination points."""
    src = _as_points(src).reshape(-1, 2)
    dst = _as_points(dst).reshape(-1, 2)
    if src.shape != (4, 2) or dst.shape != (4, 2):
        raise GeometryError("need exactly four point correspondences")
    a = np.zeros((8, 8))
    b = np.zeros(8)
    for i, ((x, y), (u, v)) in enumerate(zip(src, dst)):
        a[2 * i] = [x, y, 1, 0, 0, 0, -u * x, -u * y]
        a[2 * i + 1] = [0, 0, 0, x, y, 1, -v * x, -v * y]
        b[2 * i] = u
        b[2 * i + 1] = v
    try:
        h = np.linalg.solve(a, b)
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError("degenerate four-point configuration") from exc
    return Homography(np.append(h, 1.0).reshape(3, 3))


@dataclass(frozen=True)
class HomographyRanges:
    """Sampling bounds for :func:`sample_homography`.

    Rotation and scale act about ``center``; ``perspective`` bounds the
    independent displacement (px) of each corner of the ``extent`` rectangle
    around ``center``.
    """

    rotation_deg: Tuple[float, float] = (-15.0, 15.0)
    scale: Tuple[float, float] = (0.9, 1.1)
    tx: Tuple[float, float] = (0.0, 0.0)
    ty: Tuple[float, float] = (0.0, 0.0)
    perspective: Tuple[float, float] = (0.0, 0.0)
    center: Tuple[float, float] = (0.0, 0.0)
    extent: Tuple[float, float] = (1.0, 1.0)

    @classmethod
    def for_frame(
        cls,
        frame_size: Tuple[int, int],
        rotation_deg: float = 15.0,
        scale: Tuple[float, float] = (0.9, 1.1),
        translation: float = 0.10,
        perspective: float = 0.05,
    ) -> "HomographyRanges":
        h, w = frame_size
        return cls(
            rotation_deg=(-rotation_deg, rotation_deg),
            scale=tuple(scale),
            tx=(-translation * w, translation * w),
            ty=(-translation * h, translation * h),
            perspective=(-perspective * max(h, w), perspective * max(h, w)),
            center=(w / 2.0, h / 2.0),
            extent=(float(w), float(h)),
        )

    @classmethod
    def identity(cls) -> "HomographyRanges":
        return cls(rotation_deg=(0.0, 0.0), scale=(1.0, 1.0))


@dataclass(frozen=True, eq=False)
class HomographyParams:
    """A point in the sampled homography family; ``scaled(0)`` is the identity."""

    rotation_deg: float = 0.0
    scale: float = 1.0
    tx: float = 0.0
    ty: float = 0.0
    corner_jitter: np.ndarray = field(default_factory=lambda: np.zeros((4, 2)))
    center: Tuple[float, float] = (0.0, 0.0)
    extent: Tuple[float, float] = (1.0, 1.0)

    def scaled(self, f: float) -> "HomographyParams":
        return HomographyParams(
            rotation_deg=self.rotation_deg * f,
            scale=1.0 + f * (self.scale - 1.0),
            tx=self.tx * f,
            ty=self.ty * f,
            corner_jitter=np.asarray(self.corner_jitter) * f,
            center=self.center,
            extent=self.extent,
        )

    def to_homography(self) -> Homography:
        cx, cy = self.center
        th = np.deg2rad(self.rotation_deg)
        c, s = np.cos(th) * self.scale, np.sin(th) * self.scale
        # translate(center + t) . rotate-scale . translate(-center)
        a = np.array(
            [
                [c, -s, cx + self.tx - (c * cx - s * cy)],
                [s, c, cy + self.ty - (s * cx + c * cy)],
                [0.0, 0.0, 1.0],
            ]
        )
        h = Homography(a)
        jitter = np.asarray(self.corner_jitter, dtype=np.float64)
        if np.any(jitter != 0):
            ex, ey = self.extent
            corners = np.array(
                [
                    [cx - ex / 2, cy - ey / 2],
                    [cx + ex / 2, cy - ey / 2],
                    [cx + ex / 2, cy + ey / 2],
                    [cx - ex / 2, cy + ey / 2],
                ]
            )
            moved = h.apply(corners)
            h = homography_from_points(moved, moved + jitter) @ h
        return h


def sample_homography_params(rng: np.random.Generator, ranges: HomographyRanges) -> HomographyParams:
    rot = rng.uniform(*ranges.rotation_deg)
    scale = rng.uniform(*ranges.scale)
    tx = rng.uniform(*ranges.tx)
    ty = rng.uniform(*ranges.ty)
    jitter = rng.uniform(ranges.perspective[0], ranges.perspective[1], size=(4, 2))
    return HomographyParams(rot, scale, tx, ty, jitter, tuple(ranges.center), tuple(ranges.extent))


def sample_homography(
    rng: np.random.Generator, ranges: Optional[HomographyRanges] = None, max_tries: int = 100
) -> Homography:
    """Draw a random homography from the family bounded by ``ranges``.

    Degenerate draws (``|det| < 1e-8``) are redrawn, up to ``max_tries`` times.
    """
    ranges = ranges or HomographyRanges()
    for _ in range(max_tries):
        params = sample_homography_params(rng, ranges)
        try:
            return params.to_homography()
        except GeometryError:
            continue
    raise GeometryError(f"no invertible homography after {max_tries} draws")


# --------------------------------------------------------------------------
# Thin-plate splines
# --------------------------------------------------------------------------


def tps_kernel(r2: np.ndarray) -> np.ndarray:
    """U(r) = r^2 log r^2, written in terms of r^2, with U(0) = 0."""
    return xlogy(r2, r2)


def _sqdist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = a[:, None, :] - b[None, :, :]
    return np.einsum("ijk,ijk->ij", d, d)


@dataclass(frozen=True, eq=False)
class TpsWarp:
    """Thin-plate spline ``f(p) = A [p; 1] + sum_i w_i U(|p - c_i|)``."""

    control_src: np.ndarray
    control_dst: np.ndarray
    affine: np.ndarray  # 2x3: [linear | translation]
    kernel_weights: np.ndarray  # (n, 2)
    regularization: float = 0.0

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, TpsWarp)
            and self.regularization == other.regularization
            and np.array_equal(self.control_src, other.control_src)
            and np.array_equal(self.control_dst, other.control_dst)
        )

    def __hash__(self):
        return hash((self.control_src.tobytes(), self.control_dst.tobytes(), self.regularization))

    def apply(self, p) -> np.ndarray:
        pts = _as_points(p)
        flat = pts.reshape(-1, 2)
        out = flat @ self.affine[:, :2].T + self.affine[:, 2]
        if len(flat):
            out = out + tps_kernel(_sqdist(flat, self.control_src)) @ self.kernel_weights
        return out.reshape(pts.shape)

    def _value_and_jacobian(self, flat: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        d = flat[:, None, :] - self.control_src[None, :, :]
        r2 = np.einsum("ijk,ijk->ij", d, d)
        val = flat @ self.affine[:, :2].T + self.affine[:, 2] + xlogy(r2, r2) @ self.kernel_weights
        # dU/dp = 2 (p - c) (log r^2 + 1), which tends to 0 as r -> 0
        g = np.where(r2 > 0, 2.0 * (np.log(np.where(r2 > 0, r2, 1.0)) + 1.0), 0.0)
        jac = np.empty((len(flat), 2, 2))
        for b in range(2):
            gd = g * d[:, :, b]
            jac[:, :, b] = self.affine[:, b] + gd @ self.kernel_weights
        return val, jac

    def jacobian(self, p) -> np.ndarray:
        """Per-point 2x2 derivative ``d f / d p``."""
        pts = _as_points(p)
        return self._value_and_jacobian(pts.reshape(-1, 2))[1].reshape(pts.shape[:-1] + (2, 2))

    @functools.cached_property
    def inverse(self) -> "TpsWarp":
        """Approximate inverse, fitted with source and destination swapped."""
        return fit_tps(self.control_dst, self.control_src, self.regularization)

    def apply_inverse(self, x, tol: float = 1e-6, max_iter: int = 12, start=None) -> np.ndarray:
        """Solve ``f(p) = x`` for ``p``.

        Starts from ``start`` or the swapped-control-point fit and refines with Newton
        steps on the forward spline, halving a step that does not reduce the
        residual. Points that stop improving (fold-overs) keep their best
        estimate.
        """
        shape = _as_points(x).shape
        target = _as_points(x).reshape(-1, 2)
        p = self.inverse.apply(target) if start is None else _as_points(start).reshape(-1, 2).copy()
        idx = np.arange(len(target))
        val, jac = self._value_and_jacobian(p)
        res = val - target
        err = np.hypot(res[:, 0], res[:, 1])
        keep = err > tol
        idx, res, jac, err = idx[keep], res[keep], jac[keep], err[keep]
        scale = np.ones(len(idx))
        for _ in range(max_iter):
            if not len(idx):
                break
            det = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
            ok = np.abs(det) > 1e-12
            safe = np.where(ok, det, 1.0)
            step = np.stack(
                [(jac[:, 1, 1] * res[:, 0] - jac[:, 0, 1] * res[:, 1]) / safe,
                 (-jac[:, 1, 0] * res[:, 0] + jac[:, 0, 0] * res[:, 1]) / safe],
                axis=1,
            )
            cand = p[idx] - scale[:, None] * step
            cval, cjac = self._value_and_jacobian(cand)
            cres = cval - target[idx]
            cerr = np.hypot(cres[:, 0], cres[:, 1])
            better = ok & (cerr < err)
            p[idx[better]] = cand[better]
            res[better], jac[better], err[better] = cres[better], cjac[better], cerr[better]
            scale = np.where(better, 1.0, 0.5 * scale)
            alive = ok & (err > tol) & (scale > 0.1)
            idx, res, jac, err, scale = idx[alive], res[alive], jac[alive], err[alive], scale[alive]
        return p.reshape(shape)


def _check_control_points(src: np.ndarray) -> None:
    n = len(src)
    if n < 3:
        raise SingularSystemError(f"need at least 3 control points, got {n}")
    d2 = _sqdist(src, src)
    iu = np.triu_indices(n, 1)
    dup = d2[iu] < 1e-18
    if np.any(dup):
        pairs = [(int(i), int(j)) for i, j in zip(iu[0][dup], iu[1][dup])]
        raise SingularSystemError(f"duplicate control points at indices {pairs}")
    centred = src - src.mean(axis=0)
    sv = np.linalg.svd(centred, compute_uv=False)
    if sv[1] <= 1e-10 * max(sv[0], 1.0):
        raise SingularSystemError(
            f"control points are collinear: {src.tolist()}"
        )


def fit_tps(control_src, control_dst, regularization: float = 0.0) -> TpsWarp:
    src = _as_points(control_src).reshape(-1, 2).copy()
    dst = _as_points(control_dst).reshape(-1, 2).copy()
    if src.shape != dst.shape:
        raise GeometryError("control_src and control_dst differ in length")
    if regularization < 0:
        raise GeometryError("regularization must be non-negative")
    _check_control_points(src)
    n = len(src)
    sys_mat = np.zeros((n + 3, n + 3))
    sys_mat[:n, :n] = tps_kernel(_sqdist(src, src)) + regularization * np.eye(n)
    sys_mat[:n, n] = 1.0
    sys_mat[:n, n + 1 :] = src
    sys_mat[n, :n] = 1.0
    sys_mat[n + 1 :, :n] = src.T
    rhs = np.zeros((n + 3, 2))
    rhs[:n] = dst
    try:
        sol = np.linalg.solve(sys_mat, rhs)
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError(f"singular TPS system for points {src.tolist()}") from exc
    w = sol[:n]
    a = sol[n:]  # rows: constant, x, y
    affine = np.column_stack([a[1], a[2], a[0]])
    for arr in (src, dst, w, affine):
        arr.setflags(write=False)
    return TpsWarp(src, dst, affine, w, float(regularization))


# --------------------------------------------------------------------------
# Composite transforms and evaluation
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Transform:
    """Canonical sprite coordinates -> image coordinates: ``homography(tps(p))``."""

    homography: Homography
    tps: Optional[TpsWarp] = None

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Transform)
            and self.homography == other.homography
            and self.tps == other.tps
        )

    def __hash__(self):
        return hash((self.homography, self.tps))

    def forward(self, p) -> np.ndarray:
        q = _as_points(p)
        if self.tps is not None:
            q = self.tps.apply(q)
        return self.homography.apply(q)

    @functools.cached_property
    def inverse_homography(self) -> Homography:
        return invert(self.homography)

    def backward(self, x) -> np.ndarray:
        v = self.inverse_homography.apply(x)
        if self.tps is not None:
            v = self.tps.apply_inverse(v)
        return v


Warp = Union[Homography, TpsWarp, Transform]


def apply_warp(warp: Warp, p) -> np.ndarray:
    if isinstance(warp, Transform):
        return warp.forward(p)
    return warp.apply(p)


# --------------------------------------------------------------------------
# Polygons and control points
# --------------------------------------------------------------------------


def _cross(o, a, b) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def _segments_intersect(p1, p2, q1, q2) -> bool:
    d1, d2 = _cross(q1, q2, p1), _cross(q1, q2, p2)
    d3, d4 = _cross(p1, p2, q1), _cross(p1, p2, q2)
    if d1 * d2 < 0 and d3 * d4 < 0:
        return True

    def on_seg(a, b, c):
        return min(a[0], b[0]) <= c[0] <= max(a[0], b[0]) and min(a[1], b[1]) <= c[1] <= max(a[1], b[1])

    return (
        (d1 == 0 and on_seg(q1, q2, p1))
        or (d2 == 0 and on_seg(q1, q2, p2))
        or (d3 == 0 and on_seg(p1, p2, q1))
        or (d4 == 0 and on_seg(p1, p2, q2))
    )


def is_simple_polygon(vertices) -> bool:
    v = np.asarray(vertices, dtype=np.float64)
    n = len(v)
    if n < 3:
        return False
    for i in range(n):
        a1, a2 = v[i], v[(i + 1) % n]
        for j in range(i + 1, n):
            if j == i or (j + 1) % n == i or j == (i + 1) % n:
                continue
            if _segments_intersect(a1, a2, v[j], v[(j + 1) % n]):
                return False
    return True


def is_convex_polygon(vertices) -> bool:
    v = np.asarray(vertices, dtype=np.float64)
    e = np.roll(v, -1, axis=0) - v
    cr = e[:, 0] * np.roll(e, -1, axis=0)[:, 1] - e[:, 1] * np.roll(e, -1, axis=0)[:, 0]
    return bool(np.all(cr > 0) or np.all(cr < 0))


def polygon_area(vertices) -> float:
    v = np.asarray(vertices, dtype=np.float64)
    x, y = v[:, 0], v[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


@dataclass(frozen=True, eq=False)
class Polygon:
    vertices: np.ndarray
    is_convex: bool

    def __eq__(self, other) -> bool:
        return isinstance(other, Polygon) and np.array_equal(self.vertices, other.vertices)

    def __len__(self):
        return len(self.vertices)

    def min_vertex_distance(self) -> float:
        d2 = _sqdist(self.vertices, self.vertices)
        np.fill_diagonal(d2, np.inf)
        return float(np.sqrt(d2.min()))


def sample_polygon(
    rng: np.random.Generator,
    n_vertices: int,
    min_vertex_dist: float,
    radius: float,
    convex: bool,
    max_attempts: int = 1000,
) -> Polygon:
    """Random simple polygon centred on the origin.

    Vertices sit at sorted random angles; radii are ``radius`` for convex
    polygons and uniform in ``[0.5, 1] * radius`` otherwise. Draws violating
    the minimum vertex distance or self-intersecting are rejected.
    """
    if not 3 <= n_vertices <= 8:
        raise GeometryError(f"n_vertices must be in 3..8, got {n_vertices}")
    if not 0 <= min_vertex_dist < radius:
        raise GeometryError("need 0 <= min_vertex_dist < radius")
    for _ in range(max_attempts):
        angles = np.sort(rng.uniform(0.0, 2 * np.pi, size=n_vertices))
        if convex:
            radii = np.full(n_vertices, float(radius))
        else:
            radii = rng.uniform(0.5, 1.0, size=n_vertices) * radius
        verts = np.stack([radii * np.cos(angles), radii * np.sin(angles)], axis=1)
        d2 = _sqdist(verts, verts)
        np.fill_diagonal(d2, np.inf)
        if np.sqrt(d2.min()) < min_vertex_dist:
            continue
        if abs(polygon_area(verts)) < 1e-6 * radius * radius:
            continue
        if not is_simple_polygon(verts):
            continue
        convex_now = is_convex_polygon(verts)
        if convex and not convex_now:
            continue
        verts.setflags(write=False)
        return Polygon(verts, convex_now)
    raise GeometryError(
        f"could not sample a polygon with n={n_vertices}, min_dist={min_vertex_dist}, "
        f"radius={radius} in {max_attempts} attempts"
    )


def nearest_neighbour_distances(points) -> np.ndarray:
    pts = _as_points(points).reshape(-1, 2)
    d2 = _sqdist(pts, pts)
    np.fill_diagonal(d2, np.inf)
    return np.sqrt(d2.min(axis=1))


def perturb_control_points(
    rng: np.random.Generator, points, subset_fraction: float
) -> np.ndarray:
    """Displace a random subset of points by ``d_i`` with ``0 < |d_i| < D_i / 2``.

    ``D_i`` is the distance from point ``i`` to its nearest neighbour. The
    subset has ``max(1, round(subset_fraction * n))`` members; directions are
    isotropic. Returns an ``(n, 2)`` displacement array.
    """
    pts = _as_points(points).reshape(-1, 2)
    n = len(pts)
    if n < 2:
        raise GeometryError("need at least two control points")
    if not 0 < subset_fraction <= 1:
        raise GeometryError("subset_fraction must lie in (0, 1]")
    d2 = _sqdist(pts, pts)
    np.fill_diagonal(d2, np.inf)
    iu = np.triu_indices(n, 1)
    coincident = d2[iu] == 0
    if np.any(coincident):
        pairs = [(int(i), int(j)) for i, j in zip(iu[0][coincident], iu[1][coincident])]
        raise GeometryError(f"coincident control points at indices {pairs}")
    dmin = np.sqrt(d2.min(axis=1))
    k = min(n, max(1, int(round(subset_fraction * n))))
    chosen = rng.choice(n, size=k, replace=False)
    disp = np.zeros((n, 2))
    for i in np.sort(chosen):
        u = 0.0
        while u == 0.0:
            u = rng.uniform(0.0, 1.0)
        u = min(u, 1.0 - 1e-9)
        theta = rng.uniform(0.0, 2 * np.pi)
        mag = u * dmin[i] / 2.0
        disp[i] = [mag * np.cos(theta), mag * np.sin(theta)]
    return disp


def grid_control_points(mask, spacing: int) -> np.ndarray:
    """Regular lattice over the mask's bounding box, kept near the mask.

    The lattice starts at the box's top-left pixel and extends over the box's
    continuous extent ``[x0, x1 + 1] x [y0, y1 + 1]``; a lattice point is kept
    when it lies within Chebyshev distance ``spacing`` of a mask pixel.
    Returns ``(m, 2)`` integer-valued ``(x, y)`` points.
    """
    mask = np.asarray(mask).astype(bool)
    if spacing < 2:
        raise GeometryError("spacing must be >= 2")
    if not mask.any():
        raise GeometryError("empty mask")
    rows, cols = np.nonzero(mask)
    y0, y1, x0, x1 = rows.min(), rows.max(), cols.min(), cols.max()
    xs = x0 + spacing * np.arange((x1 + 1 - x0) // spacing + 1)
    ys = y0 + spacing * np.arange((y1 + 1 - y0) // spacing + 1)
    pad = spacing + 1
    padded = np.pad(mask, pad)
    dist = ndimage.distance_transform_cdt(~padded, metric="chessboard")
    gx, gy = np.meshgrid(xs, ys)
    keep = dist[gy + pad, gx + pad] <= spacing
    return np.stack([gx[keep], gy[keep]], axis=1).astype(np.float64)
