"""Headless property checks shared by the ``selftest`` subcommand and CI."""
from __future__ import annotations

import tempfile
from pathlib import Path
from typing import Callable, List, Tuple

import numpy as np

from . import dataio, evaluation, geometry, losses
from .compositor import compose_modal, compose_modal_stack

Check = Callable[[np.random.Generator], Tuple[bool, str]]


def _random_stack(rng, k, h=12, w=14):
    return (rng.uniform(size=(k, h, w)) < rng.uniform(0.2, 0.7)).astype(np.uint8)


def set_difference_modal(amodal, depth_rank):
    """Closed form: a layer is visible where no layer in front of it is present."""
    a = np.asarray(amodal).astype(bool)
    out = np.zeros_like(a)
    for k in range(len(a)):
        front = [j for j in range(len(a)) if depth_rank[j] < depth_rank[k]]
        covered = np.any(a[front], axis=0) if front else np.zeros(a.shape[1:], dtype=bool)
        out[k] = a[k] & ~covered
    return out.astype(np.uint8)


def check_composition(rng) -> Tuple[bool, str]:
    for _ in range(200):
        k = int(rng.integers(1, 6))
        a = _random_stack(rng, k)
        rank = rng.permutation(k)
        m = compose_modal(a, rank)
        if not np.array_equal(m, set_difference_modal(a, rank)):
            return False, "differs from set-difference closed form"
        if m.sum(axis=0).max() > 1 or np.any(m > a):
            return False, "disjointness or containment violated"
        front = int(np.argmin(rank))
        if not np.array_equal(m[front], a[front]):
            return False, "front layer is not its amodal mask"
    return True, "200 random stacks"


def check_homography(rng) -> Tuple[bool, str]:
    ranges = geometry.HomographyRanges.for_frame((128, 224))
    worst = 0.0
    for _ in range(1000):
        h = geometry.sample_homography(rng, ranges)
        p = rng.uniform([0, 0], [224, 128], size=(4, 2))
        worst = max(worst, float(np.abs(h.inverse().apply(h.apply(p)) - p).max()))
    return worst < 1e-9, f"max round-trip error {worst:.2e}"


def check_tps(rng) -> Tuple[bool, str]:
    src = rng.uniform(0, 100, size=(8, 2))
    pts = rng.uniform(0, 100, size=(50, 2))
    ident = np.abs(geometry.fit_tps(src, src).apply(pts) - pts).max()
    a = rng.normal(size=(2, 2)) * 0.2 + np.eye(2)
    b = rng.normal(size=2) * 5
    aff = np.abs(geometry.fit_tps(src, src @ a.T + b).apply(pts) - (pts @ a.T + b)).max()
    ok = ident < 1e-9 and aff < 1e-6
    return ok, f"identity {ident:.2e}, affine {aff:.2e}"


def check_perturbation(rng) -> Tuple[bool, str]:
    for _ in range(100):
        pts = rng.uniform(0, 50, size=(int(rng.integers(3, 12)), 2))
        disp = geometry.perturb_control_points(rng, pts, float(rng.uniform(0.1, 1.0)))
        d = np.hypot(*disp.T)
        nn = np.array([min(np.hypot(*(pts[i] - pts[j])) for j in range(len(pts)) if j != i) for i in range(len(pts))])
        moved = d > 0
        if not moved.any() or np.any(d[moved] >= nn[moved] / 2):
            return False, "displacement bound violated"
    return True, "100 point sets"


def check_losses(rng) -> Tuple[bool, str]:
    gt = (rng.uniform(size=(2, 2, 9, 9)) < 0.5).astype(float)
    perfect = losses.loss_amodal(gt, gt)
    half = losses.loss_bce(np.full((9, 9), 0.5), gt[0, 0])
    rel = losses.OrderRelation(((0, 1), (2, 1)))
    eq = losses.loss_order(np.zeros(3), rel, tau=float(rng.uniform(0.1, 5)))
    ok = perfect < 1e-6 and abs(half - np.log(2)) < 1e-9 and abs(eq - np.log(2)) < 1e-9
    return ok, f"perfect {perfect:.2e}, uniform {half:.12f}, equal scores {eq:.12f}"


def check_gradients(rng) -> Tuple[bool, str]:
    worst = losses.gradcheck_suite(trials=20, seed=int(rng.integers(1 << 31)))
    return max(worst.values()) < 1e-4, ", ".join(f"{k} {v:.1e}" for k, v in worst.items())


def check_hungarian(rng) -> Tuple[bool, str]:
    for _ in range(200):
        k = int(rng.integers(2, 6))
        cost = rng.uniform(size=(k, k))
        perm = losses.solve_assignment(cost)
        if losses.assignment_cost(cost, perm) != losses.brute_force_assignment(cost)[1]:
            return False, "suboptimal assignment"
    return True, "200 instances"


def check_metrics(rng) -> Tuple[bool, str]:
    m = rng.uniform(size=(16, 16)) < 0.4
    empty = np.zeros_like(m)
    ok = evaluation.iou(m, m) == 1 and evaluation.contour_f(m, m) == 1
    ok &= evaluation.iou(m, ~m) == 0 and evaluation.iou(empty, m) == 0 and evaluation.contour_f(empty, m) == 0
    box = evaluation.BoundingBox(0, 0, 10, 10)
    third = evaluation.BoundingBox(0, 0, 20, 10)
    sr1 = evaluation.detection_success_rate([box], [box])["mean"]
    sr0 = evaluation.detection_success_rate([third], [evaluation.BoundingBox(10, 0, 30, 10)])["mean"]
    ok &= sr1 == 1.0 and sr0 == 0.0
    return bool(ok), "J, F and SR trivial cases"


def check_formats(rng) -> Tuple[bool, str]:
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        flow = rng.normal(size=(5, 7, 2)).astype(np.float32)
        dataio.write_flo(flow, tmp / "f.flo")
        back = dataio.read_flo(tmp / "f.flo")
        ok = back.tobytes() == flow.tobytes()
        amodal = np.stack([_random_stack(rng, 3, 6, 8) for _ in range(4)])
        rank = [int(r) for r in rng.permutation(3)]
        modal = compose_modal_stack(amodal, rank)
        dataio.write_masks(modal, amodal, rank, tmp / "modal", tmp / "amodal")
        m2, a2, r2 = dataio.read_masks(tmp / "modal", tmp / "amodal")
        ok &= np.array_equal(m2, modal) and np.array_equal(a2, amodal) and r2 == rank
    return bool(ok), "flo and mask round trips"


CHECKS: List[Tuple[str, Check]] = [
    ("composition", check_composition),
    ("homography", check_homography),
    ("tps", check_tps),
    ("perturbation", check_perturbation),
    ("losses", check_losses),
    ("gradients", check_gradients),
    ("hungarian", check_hungarian),
    ("metrics", check_metrics),
    ("formats", check_formats),
]


def run_selftest(seed: int = 0) -> List[Tuple[str, bool, str]]:
    results = []
    for name, fn in CHECKS:
        rng = np.random.default_rng([seed, len(results)])
        try:
            ok, detail = fn(rng)
        except Exception as exc:  # a crash is a failed check, reported like the others
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        results.append((name, bool(ok), detail))
    return results
