"""Training objectives over predicted soft amodal masks and layer depth scores.

Every loss comes with an analytic gradient (``*_grad``) with respect to its
prediction argument, checked against central differences by :func:`gradcheck`.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage
from scipy.optimize import linear_sum_assignment

EPS = 1e-7


class LossError(ValueError):
    pass


@dataclass(frozen=True)
class LossWeights:
    bce: float = 1.0
    bound: float = 0.2
    order: float = 0.05
    strip_width: int = 3
    tau: float = 1.0


def _clamp(p: np.ndarray) -> np.ndarray:
    return np.clip(np.asarray(p, dtype=np.float64), EPS, 1.0 - EPS)


def _pixel_bce(p: np.ndarray, g: np.ndarray) -> np.ndarray:
    p = _clamp(p)
    return -(g * np.log(p) + (1.0 - g) * np.log1p(-p))


def _pixel_bce_grad(p: np.ndarray, g: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    inside = (p > EPS) & (p < 1.0 - EPS)
    pc = _clamp(p)
    return np.where(inside, -g / pc + (1.0 - g) / (1.0 - pc), 0.0)


def _check_shapes(pred, gt) -> Tuple[np.ndarray, np.ndarray]:
    p = np.asarray(pred, dtype=np.float64)
    g = np.asarray(gt, dtype=np.float64)
    if p.shape != g.shape:
        raise LossError(f"prediction shape {p.shape} != ground truth shape {g.shape}")
    return p, g


# --------------------------------------------------------------------------
# Pixelwise and boundary losses
# --------------------------------------------------------------------------


def loss_bce(pred, gt) -> float:
    """Mean pixelwise binary cross-entropy, probabilities clamped to [eps, 1-eps]."""
    p, g = _check_shapes(pred, gt)
    return float(_pixel_bce(p, g).mean())


def loss_bce_grad(pred, gt) -> np.ndarray:
    p, g = _check_shapes(pred, gt)
    return _pixel_bce_grad(p, g) / p.size


def mask_boundary(gt) -> np.ndarray:
    """Pixels on either side of the mask edge (4-adjacency).

    Pixels outside the image count as background, so mask pixels on the image
    border are boundary pixels.
    """
    m = np.asarray(gt).astype(bool)
    cross = ndimage.generate_binary_structure(2, 1)
    inner = ndimage.binary_erosion(m, structure=cross, border_value=0)
    outer = ndimage.binary_dilation(m, structure=cross)
    return (m & ~inner) | (outer & ~m)


def boundary_strip(gt, width: int = 3) -> np.ndarray:
    """Band of pixels within ``width`` of the mask edge.

    The edge lies between boundary pixels, half a pixel from each, so a pixel
    is in the band when its Chebyshev distance to a boundary pixel is at most
    ``width - 1``.
    """
    if width < 1:
        raise LossError("strip width must be >= 1")
    b = mask_boundary(gt)
    if width == 1 or not b.any():
        return b
    return ndimage.binary_dilation(b, structure=np.ones((2 * width - 1, 2 * width - 1), dtype=bool))


def loss_bound(pred, gt, width: int = 3) -> float:
    """BCE averaged over the boundary strip of ``gt``; 0 for an empty strip."""
    p, g = _check_shapes(pred, gt)
    strip = boundary_strip(g, width)
    n = strip.sum()
    if n == 0:
        return 0.0
    return float(_pixel_bce(p[strip], g[strip]).sum() / n)


def loss_bound_grad(pred, gt, width: int = 3) -> np.ndarray:
    p, g = _check_shapes(pred, gt)
    strip = boundary_strip(g, width)
    out = np.zeros_like(p)
    n = strip.sum()
    if n:
        out[strip] = _pixel_bce_grad(p[strip], g[strip]) / n
    return out


# --------------------------------------------------------------------------
# Amodal loss and matching
# --------------------------------------------------------------------------


def _check_perm(assignment, k: int) -> np.ndarray:
    perm = np.asarray(assignment, dtype=np.int64).reshape(-1)
    if len(perm) != k or sorted(perm.tolist()) != list(range(k)):
        raise LossError(f"assignment {perm.tolist()} is not a permutation of {k}")
    return perm


def _stacks(pred, gt) -> Tuple[np.ndarray, np.ndarray]:
    p = np.asarray(pred, dtype=np.float64)
    g = np.asarray(gt, dtype=np.float64)
    if p.ndim != 4 or p.shape != g.shape:
        raise LossError(f"expected matching T x K x H x W stacks, got {p.shape} and {g.shape}")
    return p, g


def loss_amodal(
    pred,
    gt,
    assignment=None,
    lambda_bce: float = 1.0,
    lambda_bound: float = 0.2,
    strip_width: int = 3,
) -> float:
    """Weighted BCE + boundary loss averaged over layers and frames.

    ``assignment[k]`` is the ground-truth layer matched to predicted layer
    ``k`` (identity when omitted).
    """
    p, g = _stacks(pred, gt)
    t_len, k_len = p.shape[:2]
    perm = _check_perm(np.arange(k_len) if assignment is None else assignment, k_len)
    total = 0.0
    for k in range(k_len):
        for t in range(t_len):
            a, b = p[t, k], g[t, perm[k]]
            total += lambda_bce * loss_bce(a, b)
            if lambda_bound:
                total += lambda_bound * loss_bound(a, b, strip_width)
    return total / (k_len * t_len)


def loss_amodal_grad(pred, gt, assignment=None, lambda_bce=1.0, lambda_bound=0.2, strip_width=3) -> np.ndarray:
    p, g = _stacks(pred, gt)
    t_len, k_len = p.shape[:2]
    perm = _check_perm(np.arange(k_len) if assignment is None else assignment, k_len)
    out = np.zeros_like(p)
    for k in range(k_len):
        for t in range(t_len):
            a, b = p[t, k], g[t, perm[k]]
            out[t, k] = lambda_bce * loss_bce_grad(a, b)
            if lambda_bound:
                out[t, k] += lambda_bound * loss_bound_grad(a, b, strip_width)
    return out / (k_len * t_len)


def match_cost_matrix(pred, gt) -> np.ndarray:
    """``C[k, j]``: sequence-summed pixelwise BCE of predicted layer k against GT layer j."""
    p, g = _stacks(pred, gt)
    k_len = p.shape[1]
    cost = np.zeros((k_len, k_len))
    for k in range(k_len):
        for j in range(k_len):
            cost[k, j] = _pixel_bce(p[:, k], g[:, j]).sum()
    return cost


def solve_assignment(cost, maximize: bool = False) -> np.ndarray:
    """Optimal row -> column assignment for a square cost matrix."""
    c = np.asarray(cost, dtype=np.float64)
    rows, cols = linear_sum_assignment(c, maximize=maximize)
    perm = np.empty(len(rows), dtype=np.int64)
    perm[rows] = cols
    return perm


def hungarian_match(pred, gt) -> np.ndarray:
    """Permutation ``perm`` minimising ``sum_k C[k, perm[k]]`` over BCE costs."""
    return solve_assignment(match_cost_matrix(pred, gt))


def assignment_cost(cost, perm) -> float:
    c = np.asarray(cost)
    return float(sum(c[k, j] for k, j in enumerate(perm)))


def brute_force_assignment(cost, maximize: bool = False) -> Tuple[Tuple[int, ...], float]:
    """Exhaustive search over all permutations (small K only)."""
    c = np.asarray(cost)
    best, best_val = None, None
    for perm in itertools.permutations(range(c.shape[0])):
        v = assignment_cost(c, perm)
        if best_val is None or (v > best_val if maximize else v < best_val):
            best, best_val = perm, v
    return best, best_val


# --------------------------------------------------------------------------
# Ordering loss
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class OrderRelation:
    """Pairs ``(i, j)`` asserting depth ``r_i > r_j``: layer i is behind layer j."""

    pairs: Tuple[Tuple[int, int], ...] = ()

    def __post_init__(self):
        s = set(self.pairs)
        for i, j in s:
            if i == j or (j, i) in s:
                raise LossError(f"order relation is not antisymmetric at ({i}, {j})")

    def __len__(self):
        return len(self.pairs)

    def permuted(self, mapping: Sequence[int]) -> "OrderRelation":
        """Relabel layers: index ``i`` becomes ``mapping[i]``."""
        return OrderRelation(tuple((int(mapping[i]), int(mapping[j])) for i, j in self.pairs))


def order_relation(amodal, depth_rank) -> OrderRelation:
    """Pairs of non-empty layers whose amodal masks overlap in some frame.

    ``amodal`` is ``T x K x H x W``; ``depth_rank[k]`` is 0 for the front layer.
    """
    a = np.asarray(amodal).astype(bool)
    rank = np.asarray(depth_rank)
    k_len = a.shape[1]
    pairs = []
    for i in range(k_len):
        for j in range(i + 1, k_len):
            if not (a[:, i].any() and a[:, j].any()):
                continue
            if np.any(a[:, i] & a[:, j]):
                pairs.append((i, j) if rank[i] > rank[j] else (j, i))
    return OrderRelation(tuple(pairs))


def loss_order(r, rel: OrderRelation, tau: float = 1.0) -> float:
    """Mean over pairs of ``-log sigmoid((r_i - r_j) / tau)``; 0 without pairs."""
    if tau <= 0:
        raise LossError("temperature must be positive")
    if len(rel) == 0:
        return 0.0
    r = np.asarray(r, dtype=np.float64)
    i, j = np.array(rel.pairs).T
    z = (r[i] - r[j]) / tau
    return float(np.logaddexp(0.0, -z).mean())


def loss_order_grad(r, rel: OrderRelation, tau: float = 1.0) -> np.ndarray:
    if tau <= 0:
        raise LossError("temperature must be positive")
    r = np.asarray(r, dtype=np.float64)
    out = np.zeros_like(r)
    if len(rel) == 0:
        return out
    i, j = np.array(rel.pairs).T
    z = (r[i] - r[j]) / tau
    # d/dz softplus(-z) = -sigmoid(-z)
    s = 0.5 * (1.0 - np.tanh(0.5 * z))
    coef = s / (tau * len(rel))
    np.add.at(out, i, -coef)
    np.add.at(out, j, coef)
    return out


def loss_total(pred, gt, r, rel: OrderRelation, weights: Optional[LossWeights] = None, assignment=None) -> float:
    """Matched amodal loss plus weighted ordering loss.

    ``rel`` indexes ground-truth layers; scores ``r`` index predicted layers
    and are carried onto the ground truth through the matching.
    """
    w = weights or LossWeights()
    perm = hungarian_match(pred, gt) if assignment is None else _check_perm(assignment, np.asarray(pred).shape[1])
    amodal = loss_amodal(pred, gt, perm, w.bce, w.bound, w.strip_width)
    if w.order == 0:
        return amodal
    return amodal + w.order * loss_order(scores_on_gt(r, perm), rel, w.tau)


def scores_on_gt(r, perm) -> np.ndarray:
    """Reindex predicted scores so entry ``j`` belongs to GT layer ``j``."""
    r = np.asarray(r, dtype=np.float64)
    out = np.empty_like(r)
    out[np.asarray(perm)] = r
    return out


# --------------------------------------------------------------------------
# Gradient check
# --------------------------------------------------------------------------


def gradcheck(
    loss: Callable[[np.ndarray], float],
    grad: Callable[[np.ndarray], np.ndarray],
    point,
    h: float = 1e-5,
) -> float:
    """Max relative error between ``grad`` and central differences of ``loss``.

    The denominator per component is ``max(|analytic|, |numeric|, 1e-8)``.
    """
    x = np.array(point, dtype=np.float64)
    f0 = loss(x)
    if not np.isfinite(f0):
        raise LossError("loss is not finite at the check point")
    analytic = np.asarray(grad(x), dtype=np.float64)
    if analytic.shape != x.shape:
        raise LossError("gradient shape differs from input shape")
    numeric = np.zeros_like(x)
    flat, nflat = x.reshape(-1), numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = loss(x)
        flat[i] = orig - h
        fm = loss(x)
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise LossError("loss is not finite in the step neighbourhood")
        nflat[i] = (fp - fm) / (2 * h)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))


def random_order_relation(rng: np.random.Generator, k: int) -> OrderRelation:
    """Relation from a random depth ranking over a random subset of layer pairs."""
    rank = rng.permutation(k)
    pairs = []
    for i, j in itertools.combinations(range(k), 2):
        if rng.uniform() < 0.7:
            pairs.append((i, j) if rank[i] > rank[j] else (j, i))
    if not pairs:
        i, j = 0, 1
        pairs.append((i, j) if rank[i] > rank[j] else (j, i))
    return OrderRelation(tuple(pairs))


def gradcheck_suite(trials: int = 100, seed: int = 0, wrong_gradient: bool = False) -> dict:
    """Max relative gradient error of each loss over ``trials`` random instances.

    ``wrong_gradient`` scales every analytic gradient by 1.01, which the check
    must catch.
    """
    rng = np.random.default_rng(seed)
    fudge = 1.01 if wrong_gradient else 1.0
    worst = {"bce": 0.0, "bound": 0.0, "order": 0.0}
    for _ in range(trials):
        h, w = (int(v) for v in rng.integers(6, 11, size=2))
        gt = (rng.uniform(size=(h, w)) < rng.uniform(0.2, 0.8)).astype(np.float64)
        p0 = rng.uniform(0.05, 0.95, size=(h, w))
        width = int(rng.integers(1, 4))
        worst["bce"] = max(worst["bce"], gradcheck(lambda x: loss_bce(x, gt), lambda x: fudge * loss_bce_grad(x, gt), p0))
        worst["bound"] = max(
            worst["bound"],
            gradcheck(lambda x: loss_bound(x, gt, width), lambda x: fudge * loss_bound_grad(x, gt, width), p0),
        )
        k = int(rng.integers(2, 6))
        rel = random_order_relation(rng, k)
        tau = float(rng.uniform(0.25, 4.0))
        r0 = rng.normal(scale=2.0, size=k)
        worst["order"] = max(
            worst["order"], gradcheck(lambda x: loss_order(x, rel, tau), lambda x: fudge * loss_order_grad(x, rel, tau), r0)
        )
    return worst
