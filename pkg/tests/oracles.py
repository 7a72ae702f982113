"""Independent reference implementations used to pin expected values.

Everything here is deliberately slow and literal (loops, enumeration) and
stays independent of the library code it checks.
"""

import itertools
import math

import numpy as np


def brute_force_assignment(cost: np.ndarray):
    """Minimum-cost one-to-one assignment by exhaustive enumeration.

    cost: (N, G). Returns (best_cost, pairs) with pairs sorted by target."""
    cost = np.asarray(cost, dtype=np.float64)
    n, g = cost.shape
    best = (math.inf, None)
    if n >= g:
        for rows in itertools.permutations(range(n), g):
            total = sum(cost[r, c] for c, r in enumerate(rows))
            if total < best[0]:
                best = (total, [(r, c) for c, r in enumerate(rows)])
    else:
        for cols in itertools.permutations(range(g), n):
            total = sum(cost[r, c] for r, c in enumerate(cols))
            if total < best[0]:
                best = (total, sorted(((r, c) for r, c in enumerate(cols)), key=lambda rc: rc[1]))
    return best


def huber_ref(x: float, y: float) -> float:
    d = abs(x - y)
    return 0.5 * d * d if d <= 1.0 else d - 0.5


def dist_loss_ref(E: np.ndarray, E_prime: np.ndarray) -> float:
    """Unordered-pair relational distance loss, mean over pairs, per-set mean
    normalization."""
    n = E.shape[0]
    if n < 2:
        return 0.0
    pairs = list(itertools.combinations(range(n), 2))

    def norm_dists(X):
        d = [np.linalg.norm(X[i] - X[j]) for i, j in pairs]
        mu = max(np.mean(d), 1e-8)
        return [v / mu for v in d]

    da, db = norm_dists(E), norm_dists(E_prime)
    return float(np.mean([huber_ref(a, b) for a, b in zip(da, db)]))


def angle_loss_ref(E: np.ndarray, E_prime: np.ndarray) -> float:
    """Unordered-triple relational angle loss (vertex at the middle index)."""
    n = E.shape[0]
    if n < 3:
        return 0.0
    triples = list(itertools.combinations(range(n), 3))

    def cosines(X):
        out = []
        for i, j, k in triples:
            a = X[i] - X[j]
            b = X[k] - X[j]
            na, nb = np.linalg.norm(a), np.linalg.norm(b)
            out.append(0.0 if na < 1e-12 or nb < 1e-12 else float(a @ b / (na * nb)))
        return out

    ca, cb = cosines(E), cosines(E_prime)
    return float(np.mean([huber_ref(a, b) for a, b in zip(ca, cb)]))


def random_similarity_transform(rng, dim: int):
    """Random scale in (0.1, 10), orthogonal matrix, translation."""
    scale = rng.uniform(0.1, 10.0)
    q, _ = np.linalg.qr(rng.normal(size=(dim, dim)))
    t = rng.normal(size=dim) * rng.uniform(0.0, 5.0)
    return lambda X: scale * (X @ q.T) + t


def giou_ref(box1, box2) -> float:
    """GIoU for xyxy boxes, literal formula."""
    x1, y1, x2, y2 = box1
    a1, b1, a2, b2 = box2
    iw = max(0.0, min(x2, a2) - max(x1, a1))
    ih = max(0.0, min(y2, b2) - max(y1, b1))
    inter = iw * ih
    area1 = (x2 - x1) * (y2 - y1)
    area2 = (a2 - a1) * (b2 - b1)
    union = area1 + area2 - inter
    ex = max(x2, a2) - min(x1, a1)
    ey = max(y2, b2) - min(y1, b1)
    enclosure = ex * ey
    return inter / union - (enclosure - union) / enclosure


def iou_ref(mask1: np.ndarray, mask2: np.ndarray) -> float:
    m1, m2 = mask1.astype(bool), mask2.astype(bool)
    union = np.logical_or(m1, m2).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(m1, m2).sum() / union)


def boundary_f_ref(pred: np.ndarray, gt: np.ndarray, radius: int) -> float:
    """Boundary F-measure via explicit pixel distance checks."""
    pred = pred.astype(bool)
    gt = gt.astype(bool)
    if not pred.any() and not gt.any():
        return 1.0
    if pred.any() != gt.any():
        return 0.0

    def boundary(mask):
        pts = []
        H, W = mask.shape
        for r in range(H):
            for c in range(W):
                if not mask[r, c]:
                    continue
                for dr, dc in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                    rr, cc = r + dr, c + dc
                    if not (0 <= rr < H and 0 <= cc < W) or not mask[rr, cc]:
                        pts.append((r, c))
                        break
        return pts

    pb, gb = boundary(pred), boundary(gt)

    def matched(points, others):
        hits = 0
        for r, c in points:
            if any((r - rr) ** 2 + (c - cc) ** 2 <= radius * radius for rr, cc in others):
                hits += 1
        return hits

    precision = matched(pb, gb) / len(pb)
    recall = matched(gb, pb) / len(gb)
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)
