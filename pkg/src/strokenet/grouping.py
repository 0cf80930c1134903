"""Group linked proposals into text instances and score them against ground truth."""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from typing import Iterable, List, Sequence, Tuple

import numpy as np
from shapely.geometry import Polygon as ShapelyPolygon

from .proposals import Proposal

log = logging.getLogger(__name__)


@dataclass
class TextInstance:
    ordered_nodes: List[Proposal]
    polygon: np.ndarray
    score: float

    def __post_init__(self):
        if not self.ordered_nodes:
            raise ValueError("instance needs at least one node")
        if len(self.polygon) < 4:
            raise ValueError("instance polygon needs at least 4 vertices")


@dataclass
class EvalReport:
    recall: float
    precision: float
    hmean: float
    matches: List[Tuple[int, int, float]] = field(default_factory=list)


def group_bfs(n_nodes: int, links: Iterable[Tuple[int, int]]) -> List[List[int]]:
    """Connected components of the accepted-link graph, breadth first.

    Components are listed by their smallest member; nodes within a component
    come out sorted.
    """
    adj: List[List[int]] = [[] for _ in range(n_nodes)]
    for u, v in links:
        adj[u].append(v)
        adj[v].append(u)
    seen = [False] * n_nodes
    components = []
    for start in range(n_nodes):
        if seen[start]:
            continue
        seen[start] = True
        queue = [start]
        comp = [start]
        while queue:
            nxt = []
            for u in queue:
                for v in adj[u]:
                    if not seen[v]:
                        seen[v] = True
                        comp.append(v)
                        nxt.append(v)
            queue = nxt
        components.append(sorted(comp))
    return components


def _path_length(points: np.ndarray, order: Sequence[int]) -> float:
    diffs = points[list(order)][1:] - points[list(order)][:-1]
    return float(np.sqrt((diffs * diffs).sum(axis=1)).sum())


def _held_karp(points: np.ndarray) -> List[int]:
    n = len(points)
    dist = np.sqrt(((points[:, None, :] - points[None, :, :]) ** 2).sum(-1))
    full = (1 << n) - 1
    dp = np.full((1 << n, n), np.inf)
    parent = np.full((1 << n, n), -1, dtype=np.int64)
    for j in range(n):
        dp[1 << j, j] = 0.0
    for mask in range(1 << n):
        for j in range(n):
            if not mask & (1 << j) or not np.isfinite(dp[mask, j]):
                continue
            base = dp[mask, j]
            for k in range(n):
                if mask & (1 << k):
                    continue
                cand = base + dist[j, k]
                if cand < dp[mask | (1 << k), k] - 1e-15:
                    dp[mask | (1 << k), k] = cand
                    parent[mask | (1 << k), k] = j
    end = int(np.argmin(dp[full]))
    order = [end]
    mask = full
    while parent[mask, order[-1]] >= 0:
        prev = int(parent[mask, order[-1]])
        mask ^= 1 << order[-1]
        order.append(prev)
    return order[::-1]


def _two_opt(points: np.ndarray) -> List[int]:
    n = len(points)
    start = int(np.lexsort((points[:, 1], points[:, 0]))[0])
    remaining = set(range(n)) - {start}
    order = [start]
    while remaining:
        last = points[order[-1]]
        nxt = min(remaining,
                  key=lambda i: (float(np.hypot(*(points[i] - last))), i))
        order.append(nxt)
        remaining.remove(nxt)
    improved = True
    guard = 0
    while improved and guard < 200:
        improved = False
        guard += 1
        for i in range(n - 1):
            for j in range(i + 1, n):
                cand = order[:i] + order[i:j + 1][::-1] + order[j + 1:]
                if _path_length(points, cand) < _path_length(points, order) - 1e-12:
                    order = cand
                    improved = True
    return order


def order_min_path(props: Sequence[Proposal], exact_limit: int = 10) -> List[int]:
    """Ordering of a component minimizing total consecutive center distance.

    Exact dynamic programming up to exact_limit nodes, nearest-neighbor with
    2-opt refinement beyond. The result is canonical: it starts at the
    endpoint with the smaller (x, y) and does not depend on input order.
    """
    n = len(props)
    if n == 0:
        raise ValueError("empty component")
    if n == 1:
        return [0]
    centers = np.array([p.center for p in props], dtype=np.float64)
    # work in a geometrically sorted frame so input order cannot matter
    frame = np.lexsort((np.arange(n), centers[:, 1], centers[:, 0]))
    pts = centers[frame]
    order = _held_karp(pts) if n <= exact_limit else _two_opt(pts)
    first, last = pts[order[0]], pts[order[-1]]
    if (last[0], last[1]) < (first[0], first[1]):
        order = order[::-1]
    return [int(frame[i]) for i in order]


def reconstruct_boundary(ordered: Sequence[Proposal]) -> np.ndarray:
    """Polygon through top and bottom midpoints of ordered nodes.

    Each node stands for a rectangle reaching half a width along the writing
    direction, so the chain is closed with an end-cap pair per side; without
    them the outline would stop at the terminal centers. A single node
    contributes its full quadrilateral. A self-intersecting chain falls back
    to its convex hull (logged).
    """
    if not ordered:
        raise ValueError("empty node sequence")
    if len(ordered) == 1:
        return ordered[0].quad()
    tops, bottoms = [], []
    for p in ordered:
        c = np.asarray(p.center)
        u = np.array([p.sin, -p.cos])
        tops.append(c + p.h1 * u)
        bottoms.append(c - p.h2 * u)

    def cap(p: Proposal, away: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        t = np.array([p.cos, p.sin])
        if np.hypot(*away) > 1e-9 and float(t @ away) < 0:
            t = -t
        c = np.asarray(p.center) + 0.5 * p.width * t
        u = np.array([p.sin, -p.cos])
        return c + p.h1 * u, c - p.h2 * u

    centers = np.asarray([p.center for p in ordered])
    top_head, bot_head = cap(ordered[0], centers[0] - centers[1])
    top_tail, bot_tail = cap(ordered[-1], centers[-1] - centers[-2])
    tops = [top_head] + tops + [top_tail]
    bottoms = [bot_head] + bottoms + [bot_tail]
    poly = np.vstack([tops, bottoms[::-1]])
    shp = ShapelyPolygon(poly)
    if not shp.is_valid:
        log.warning("self-intersecting boundary for %d nodes, using convex hull",
                    len(ordered))
        hull = shp.convex_hull.exterior.coords
        poly = np.asarray(hull[:-1], dtype=np.float64)
    return poly


def polygon_iou(poly_a: np.ndarray, poly_b: np.ndarray) -> float:
    a = ShapelyPolygon(poly_a)
    b = ShapelyPolygon(poly_b)
    if not a.is_valid:
        a = a.buffer(0)
    if not b.is_valid:
        b = b.buffer(0)
    inter = a.intersection(b).area
    union = a.area + b.area - inter
    return inter / union if union > 0 else 0.0


def evaluate(pred_polygons: Sequence[np.ndarray],
             gt_polygons: Sequence[np.ndarray],
             iou_thresh: float = 0.5) -> EvalReport:
    """Greedy one-to-one matching by descending IoU at the given threshold."""
    pairs = []
    for gi, gt in enumerate(gt_polygons):
        for pi, pred in enumerate(pred_polygons):
            iou = polygon_iou(pred, gt)
            if iou >= iou_thresh:
                center = np.asarray(pred, dtype=np.float64).mean(axis=0)
                pairs.append((-iou, gi, float(center[0]), float(center[1]), pi))
    pairs.sort()
    used_gt, used_pred = set(), set()
    matches = []
    for neg_iou, gi, _, _, pi in pairs:
        if gi in used_gt or pi in used_pred:
            continue
        used_gt.add(gi)
        used_pred.add(pi)
        matches.append((pi, gi, -neg_iou))
    m = len(matches)
    precision = m / len(pred_polygons) if pred_polygons else 0.0
    recall = m / len(gt_polygons) if gt_polygons else 0.0
    hmean = 2 * precision * recall / (precision + recall) \
        if precision + recall > 0 else 0.0
    return EvalReport(recall=recall, precision=precision, hmean=hmean,
                      matches=matches)
