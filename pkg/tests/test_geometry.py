import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from shapely.geometry import Polygon as ShapelyPolygon

from golden_cases import FIVE_POINTS, crescent_mask
from layerforge.geometry import (
    GeometryError,
    Homography,
    HomographyParams,
    HomographyRanges,
    PointAtInfinityError,
    SingularSystemError,
    Transform,
    apply_warp,
    fit_tps,
    grid_control_points,
    homography_from_points,
    invert,
    is_convex_polygon,
    is_simple_polygon,
    perturb_control_points,
    sample_homography,
    sample_polygon,
    tps_kernel,
)

FRAME = HomographyRanges.for_frame((128, 224))


def grid(n=50, lo=0.0, hi=100.0):
    xs = np.linspace(lo, hi, n)
    return np.stack(np.meshgrid(xs, xs), axis=-1).reshape(-1, 2)


def brute_nn(points):
    pts = np.asarray(points, dtype=float)
    out = []
    for i, p in enumerate(pts):
        out.append(min(float(np.hypot(*(p - q))) for j, q in enumerate(pts) if j != i))
    return np.array(out)


# --------------------------------------------------------------------- homography


def test_zero_width_ranges_give_identity():
    h = sample_homography(np.random.default_rng(0), HomographyRanges.identity())
    assert np.array_equal(h.m, np.eye(3))


def test_translation_only_range():
    ranges = HomographyRanges(rotation_deg=(0, 0), scale=(1, 1), tx=(3, 3), ty=(-2, -2))
    h = sample_homography(np.random.default_rng(1), ranges)
    assert np.allclose(h.apply([0.0, 0.0]), [3.0, -2.0], atol=1e-12)


def test_homography_seed42_golden(golden):
    h = sample_homography(np.random.default_rng(42), FRAME)
    np.testing.assert_allclose(h.m, golden("homography_seed42")["matrix"], rtol=0, atol=1e-12)


def test_homography_normalised_and_invertible():
    rng = np.random.default_rng(3)
    for _ in range(200):
        h = sample_homography(rng, FRAME)
        assert h.m[2, 2] == 1.0
        assert abs(np.linalg.det(h.m)) > 1e-8


def test_same_seed_same_bits():
    a = sample_homography(np.random.default_rng(9), FRAME)
    b = sample_homography(np.random.default_rng(9), FRAME)
    assert a.m.tobytes() == b.m.tobytes()


def test_singular_matrix_rejected():
    with pytest.raises(GeometryError):
        Homography(np.diag([1.0, 0.0, 1.0]))


def test_apply_warp_examples():
    assert np.array_equal(apply_warp(Homography.identity(), [5.0, 7.0]), [5.0, 7.0])
    assert np.array_equal(apply_warp(Homography.translation(3, -2), [0.0, 0.0]), [3.0, -2.0])


def test_point_at_infinity():
    h = Homography(np.array([[1.0, 0, 0], [0, 1.0, 0], [1.0, 0, 1.0]]))
    with pytest.raises(PointAtInfinityError):
        h.apply([-1.0, 0.0])


def test_invert_examples():
    assert invert(Homography.identity()) == Homography.identity()
    np.testing.assert_allclose(invert(Homography.scaling(2.0)).m, np.diag([0.5, 0.5, 1.0]), atol=1e-15)


def test_invert_composition_unit_square():
    rng = np.random.default_rng(4)
    square = np.array([[0, 0], [1, 0], [0, 1], [1, 1], [0.5, 0.5]], dtype=float)
    for _ in range(100):
        h = sample_homography(rng, FRAME)
        assert np.abs((h @ invert(h)).apply(square) - square).max() < 1e-9


def test_round_trip_over_image_rectangle_1000_samples():
    rng = np.random.default_rng(5)
    corners = grid(9, 0, 1) * [224, 128]
    worst = 0.0
    for _ in range(1000):
        h = sample_homography(rng, FRAME)
        worst = max(worst, np.abs(apply_warp(invert(h), apply_warp(h, corners)) - corners).max())
    assert worst < 1e-9


def test_four_point_homography_is_exact():
    rng = np.random.default_rng(6)
    h = sample_homography(rng, FRAME)
    src = np.array([[0, 0], [224, 0], [224, 128], [0, 128]], dtype=float)
    est = homography_from_points(src, h.apply(src))
    np.testing.assert_allclose(est.m, h.m, atol=1e-9)


def test_scaled_params_interpolate_from_identity():
    rng = np.random.default_rng(8)
    from layerforge.geometry import sample_homography_params

    p = sample_homography_params(rng, FRAME)
    assert p.scaled(0.0).to_homography().is_identity()
    np.testing.assert_allclose(p.scaled(1.0).to_homography().m, p.to_homography().m, atol=1e-12)


# --------------------------------------------------------------------- TPS


def test_tps_kernel_values():
    r2 = np.array([0.0, 1.0, 4.0])
    np.testing.assert_allclose(tps_kernel(r2), [0.0, 0.0, 4.0 * np.log(4.0)])


def test_tps_zero_displacement_is_identity():
    rng = np.random.default_rng(10)
    src = rng.uniform(0, 100, size=(12, 2))
    pts = grid()
    assert np.abs(fit_tps(src, src).apply(pts) - pts).max() < 1e-9


def test_tps_affine_reduction():
    rng = np.random.default_rng(11)
    pts = grid()
    for _ in range(20):
        src = rng.uniform(0, 100, size=(int(rng.integers(3, 15)), 2))
        a = np.eye(2) + rng.normal(scale=0.3, size=(2, 2))
        b = rng.normal(scale=10, size=2)
        warp = fit_tps(src, src @ a.T + b)
        assert np.abs(warp.apply(pts) - (pts @ a.T + b)).max() < 1e-6


def test_unit_square_corner_displacement():
    src = np.array([[0, 0], [1, 0], [0, 1], [1, 1]], dtype=float)
    dst = src.copy()
    dst[3] += [0.5, 0.0]
    warp = fit_tps(src, dst)
    assert np.abs(warp.apply(src[3]) - [1.5, 1.0]).max() < 1e-6


@given(st.integers(0, 2**32 - 1), st.integers(3, 20))
def test_tps_interpolates_and_side_conditions(seed, n):
    rng = np.random.default_rng(seed)
    src = rng.uniform(0, 100, size=(n, 2))
    dst = src + rng.normal(scale=3.0, size=(n, 2))
    warp = fit_tps(src, dst)
    assert np.abs(warp.apply(src) - dst).max() < 1e-6
    w = warp.kernel_weights
    assert np.abs(w.sum(axis=0)).max() < 1e-8
    assert np.abs(w.T @ src).max() < 1e-8 * max(1.0, np.abs(w).max() * 100 * n)


def test_tps_regularised_still_close():
    rng = np.random.default_rng(12)
    src = rng.uniform(0, 50, size=(8, 2))
    dst = src + rng.normal(size=(8, 2))
    warp = fit_tps(src, dst, regularization=1e-6)
    assert np.abs(warp.apply(src) - dst).max() < 1e-3


def test_tps_collinear_error_names_points():
    src = np.array([[0, 0], [1, 1], [2, 2], [3, 3]], dtype=float)
    with pytest.raises(SingularSystemError, match="collinear"):
        fit_tps(src, src)


def test_tps_duplicate_error_names_indices():
    src = np.array([[0, 0], [1, 0], [0, 1], [1, 0]], dtype=float)
    with pytest.raises(SingularSystemError, match=r"\(1, 3\)"):
        fit_tps(src, src)


def test_tps_inverse_round_trip():
    rng = np.random.default_rng(13)
    src = grid(4, 0, 60)
    dst = src + perturb_control_points(rng, src, 0.5)
    warp = fit_tps(src, dst)
    pts = rng.uniform(5, 55, size=(500, 2))
    err = np.hypot(*(warp.apply_inverse(warp.apply(pts)) - pts).T)
    assert np.quantile(err, 0.99) < 0.5
    # the swapped-control-point fit alone is only a starting guess
    rough = np.hypot(*(warp.inverse.apply(warp.apply(pts)) - pts).T)
    assert err.max() <= rough.max()


def test_transform_composes_tps_then_homography():
    rng = np.random.default_rng(14)
    src = rng.uniform(0, 40, size=(6, 2))
    tps = fit_tps(src, src + perturb_control_points(rng, src, 0.5))
    h = sample_homography(rng, FRAME)
    tr = Transform(h, tps)
    p = rng.uniform(0, 40, size=(20, 2))
    np.testing.assert_allclose(tr.forward(p), h.apply(tps.apply(p)))
    assert np.abs(tr.backward(tr.forward(p)) - p).max() < 1e-5


def test_tps_jacobian_matches_finite_differences():
    rng = np.random.default_rng(15)
    src = rng.uniform(0, 50, size=(7, 2))
    warp = fit_tps(src, src + rng.normal(size=(7, 2)))
    p = rng.uniform(0, 50, size=(10, 2))
    h = 1e-6
    num = np.stack(
        [(warp.apply(p + [h, 0]) - warp.apply(p - [h, 0])) / (2 * h),
         (warp.apply(p + [0, h]) - warp.apply(p - [0, h])) / (2 * h)],
        axis=-1,
    )
    np.testing.assert_allclose(warp.jacobian(p), num, atol=1e-6)


# --------------------------------------------------------------------- polygons


def test_triangle_is_simple():
    p = sample_polygon(np.random.default_rng(0), 3, 5.0, 30.0, convex=False)
    assert len(p) == 3 and is_simple_polygon(p.vertices)


def test_convex_octagon_cross_products_share_sign():
    p = sample_polygon(np.random.default_rng(1), 8, 5.0, 30.0, convex=True)
    v = p.vertices
    signs = set()
    for i in range(8):
        e1 = v[(i + 1) % 8] - v[i]
        e2 = v[(i + 2) % 8] - v[(i + 1) % 8]
        signs.add(np.sign(e1[0] * e2[1] - e1[1] * e2[0]))
    assert len(signs) == 1 and 0 not in signs


def test_polygon_golden(golden):
    g = golden("polygons_seed42")
    rng = np.random.default_rng(42)
    np.testing.assert_allclose(sample_polygon(rng, 6, 8.0, 40.0, False).vertices, g["nonconvex"], atol=1e-12)
    np.testing.assert_allclose(sample_polygon(rng, 6, 8.0, 40.0, True).vertices, g["convex"], atol=1e-12)


@given(st.integers(0, 2**32 - 1), st.integers(3, 8), st.booleans())
def test_polygon_invariants(seed, n, convex):
    radius = 40.0
    min_dist = 0.2 * radius
    p = sample_polygon(np.random.default_rng(seed), n, min_dist, radius, convex)
    assert 3 <= len(p) <= 8 and len(p) == n
    d = [np.hypot(*(a - b)) for a, b in itertools.combinations(p.vertices, 2)]
    assert min(d) >= min_dist
    shp = ShapelyPolygon(p.vertices)
    assert shp.is_valid and shp.exterior.is_simple
    assert is_simple_polygon(p.vertices)
    if convex:
        assert abs(shp.convex_hull.area - shp.area) < 1e-6 * shp.area
        assert is_convex_polygon(p.vertices)


def test_infeasible_polygon_fails():
    with pytest.raises(GeometryError):
        sample_polygon(np.random.default_rng(0), 8, 45.0, 40.0, convex=True)


# --------------------------------------------------------------------- perturbation


def test_tiny_subset_rounds_up_to_one():
    pts = np.array([[0, 0], [10, 0], [0, 10], [10, 10]], dtype=float)
    disp = perturb_control_points(np.random.default_rng(0), pts, 1e-6)
    assert np.count_nonzero(np.hypot(*disp.T)) == 1


def test_two_points_bound():
    pts = np.array([[0.0, 0.0], [10.0, 0.0]])
    rng = np.random.default_rng(1)
    for _ in range(200):
        d = np.hypot(*perturb_control_points(rng, pts, 1.0).T)
        assert np.all(d < 5.0) and np.all(d > 0)


def test_perturbation_golden(golden):
    g = golden("perturbation_seed42")
    disp = perturb_control_points(np.random.default_rng(42), FIVE_POINTS, 0.6)
    np.testing.assert_allclose(disp, g["displacements"], atol=1e-12)
    mag = np.hypot(*np.asarray(g["displacements"]).T)
    nn = brute_nn(g["points"])
    moved = mag > 0
    assert moved.sum() == 3
    assert np.all(mag[moved] < nn[moved] / 2)


@given(st.integers(0, 2**32 - 1), st.integers(2, 15), st.floats(0.01, 1.0))
def test_perturbation_bound_property(seed, n, frac):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(0, 100, size=(n, 2))
    disp = perturb_control_points(rng, pts, frac)
    mag = np.hypot(*disp.T)
    nn = brute_nn(pts)
    moved = mag > 0
    assert moved.sum() == min(n, max(1, int(round(frac * n))))
    assert np.all(mag[moved] < nn[moved] / 2)


def test_coincident_points_named():
    pts = np.array([[0, 0], [1, 1], [0, 0]], dtype=float)
    with pytest.raises(GeometryError, match=r"\(0, 2\)"):
        perturb_control_points(np.random.default_rng(0), pts, 0.5)


# --------------------------------------------------------------------- grid


def brute_lattice(mask, spacing):
    """Scan every lattice point over the box against every mask pixel."""
    rows, cols = np.nonzero(mask)
    x0, x1, y0, y1 = cols.min(), cols.max(), rows.min(), rows.max()
    out = []
    y = y0
    while y <= y1 + 1:
        x = x0
        while x <= x1 + 1:
            if any(max(abs(x - c), abs(y - r)) <= spacing for r, c in zip(rows, cols)):
                out.append((x, y))
            x += spacing
        y += spacing
    return sorted(out)


def test_full_mask_lattice():
    pts = grid_control_points(np.ones((10, 10), dtype=bool), 5)
    assert len(pts) == 9
    assert sorted(map(tuple, pts.astype(int).tolist())) == [(x, y) for x in (0, 5, 10) for y in (0, 5, 10)]
    np.testing.assert_allclose(brute_nn(pts), 5.0)


def test_single_pixel_mask():
    m = np.zeros((9, 9), dtype=bool)
    m[4, 6] = True
    pts = grid_control_points(m, 3)
    assert pts.tolist() == [[6, 4]]


def test_crescent_grid_golden_and_brute_force(golden):
    g = golden("crescent_grid")
    pts = grid_control_points(crescent_mask(), 4)
    assert pts.tolist() == g["points"]
    assert sorted(map(tuple, pts.astype(int).tolist())) == brute_lattice(crescent_mask(), 4)


def test_grid_empty_mask_rejected():
    with pytest.raises(GeometryError):
        grid_control_points(np.zeros((5, 5), dtype=bool), 2)
