import itertools

import numpy as np
import pytest
from shapely.geometry import Polygon as ShapelyPolygon

from strokenet.grouping import (
    EvalReport,
    TextInstance,
    evaluate,
    group_bfs,
    order_min_path,
    polygon_iou,
    reconstruct_boundary,
)
from strokenet.proposals import Proposal


def make_prop(x, y, **kw):
    base = dict(h1=4.0, h2=4.0, sin=0.0, cos=1.0, width=8.0)
    base.update(kw)
    return Proposal(center=(float(x), float(y)), **base)


def rect(x0, y0, x1, y1):
    return np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]], dtype=np.float64)


class DisjointSet:
    def __init__(self, n):
        self.parent = list(range(n))

    def find(self, x):
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[ra] = rb


def test_bfs_no_links():
    comps = group_bfs(4, [])
    assert comps == [[0], [1], [2], [3]]


def test_bfs_two_chains():
    comps = group_bfs(6, [(0, 1), (1, 2), (3, 4), (4, 5)])
    assert comps == [[0, 1, 2], [3, 4, 5]]


def test_bfs_matches_union_find():
    rng = np.random.default_rng(3)
    for _ in range(100):
        n = int(rng.integers(2, 41))
        m = int(rng.integers(0, n * 2))
        links = [(int(rng.integers(0, n)), int(rng.integers(0, n)))
                 for _ in range(m)]
        got = group_bfs(n, links)
        dsu = DisjointSet(n)
        for u, v in links:
            dsu.union(u, v)
        oracle = {}
        for i in range(n):
            oracle.setdefault(dsu.find(i), []).append(i)
        expected = sorted(sorted(v) for v in oracle.values())
        assert sorted(got) == expected
        flat = sorted(i for comp in got for i in comp)
        assert flat == list(range(n))  # partition covers every node once


def test_min_path_single():
    assert order_min_path([make_prop(5, 5)]) == [0]


def test_min_path_collinear_canonical():
    props = [make_prop(30, 10), make_prop(10, 10), make_prop(20, 10)]
    order = order_min_path(props)
    assert order == [1, 2, 0]  # left to right, starting at smaller x
    # reversing the input yields the same canonical order of points
    rev = list(reversed(props))
    order_rev = order_min_path(rev)
    assert [rev[i].center for i in order_rev] == [props[i].center for i in order]


def test_min_path_matches_bruteforce():
    rng = np.random.default_rng(7)
    for trial in range(50):
        n = int(rng.integers(2, 8))
        props = [make_prop(x, y) for x, y in rng.uniform(0, 100, size=(n, 2))]
        order = order_min_path(props)
        pts = np.array([p.center for p in props])
        got_len = float(np.sqrt(
            ((pts[order][1:] - pts[order][:-1]) ** 2).sum(-1)).sum())
        best = min(
            float(np.sqrt(((pts[list(perm)][1:] - pts[list(perm)][:-1]) ** 2)
                          .sum(-1)).sum())
            for perm in itertools.permutations(range(n)))
        assert got_len == pytest.approx(best, abs=1e-9)


def test_min_path_heuristic_branch():
    rng = np.random.default_rng(11)
    # 12 points on a gentle arc: 2-opt must find the arc order
    t = np.sort(rng.uniform(0, np.pi / 2, size=12))
    pts = np.stack([100 * np.cos(t), 100 * np.sin(t)], axis=1)
    props = [make_prop(x, y) for x, y in pts]
    shuffled = [props[i] for i in rng.permutation(12)]
    order = order_min_path(shuffled)
    ordered_x = [shuffled[i].center[0] for i in order]
    assert ordered_x == sorted(ordered_x, reverse=ordered_x[0] > ordered_x[-1])


def test_reconstruct_single_node_quad():
    p = make_prop(20, 10, h1=3, h2=5, width=12)
    poly = reconstruct_boundary([p])
    assert poly.shape == (4, 2)
    assert np.allclose(poly, p.quad())


def test_reconstruct_three_collinear():
    # default width 8: end caps extend the outline 4 px past both terminal
    # centers, matching the rect extent of the terminal nodes
    props = [make_prop(10, 20, h1=4, h2=4), make_prop(20, 20, h1=4, h2=4),
             make_prop(30, 20, h1=4, h2=4)]
    poly = reconstruct_boundary(props)
    assert poly.shape == (10, 2)
    expected = np.array([[6, 16], [10, 16], [20, 16], [30, 16], [34, 16],
                         [34, 24], [30, 24], [20, 24], [10, 24], [6, 24]],
                        dtype=np.float64)
    assert np.allclose(poly, expected)


def test_reconstruct_quarter_circle_simple():
    angles = np.linspace(0, np.pi / 2, 7)
    props = []
    for a in angles:
        cx, cy = 100 * np.cos(a), 100 * np.sin(a)
        # writing direction tangent to the circle
        props.append(make_prop(cx, cy, sin=float(np.cos(a)),
                               cos=float(-np.sin(a))))
    poly = reconstruct_boundary(props)
    assert ShapelyPolygon(poly).is_valid
    assert ShapelyPolygon(poly).area > 0


def test_reconstruct_positive_area():
    poly = reconstruct_boundary([make_prop(5, 5), make_prop(15, 5)])
    assert ShapelyPolygon(poly).area > 0


def test_evaluate_exact_match():
    gt = [rect(0, 0, 10, 10), rect(20, 0, 30, 10)]
    report = evaluate(gt, gt)
    assert report.precision == 1.0 and report.recall == 1.0
    assert report.hmean == 1.0
    assert len(report.matches) == 2


def test_evaluate_no_predictions():
    report = evaluate([], [rect(0, 0, 10, 10)])
    assert report.precision == 0.0
    assert report.recall == 0.0
    assert report.hmean == 0.0


def test_evaluate_half_recall():
    gts = [rect(0, 0, 10, 10), rect(20, 0, 30, 10)]
    report = evaluate([rect(0, 0, 10, 10)], gts)
    assert report.precision == 1.0
    assert report.recall == 0.5
    assert report.hmean == pytest.approx(2 / 3)


def test_evaluate_permutation_invariance():
    rng = np.random.default_rng(13)
    gts = [rect(i * 20, 0, i * 20 + 15, 12) for i in range(5)]
    preds = [rect(i * 20 + 1, 1, i * 20 + 14, 11) for i in range(5)]
    base = evaluate(preds, gts)
    for _ in range(5):
        perm = rng.permutation(5)
        shuffled = [preds[i] for i in perm]
        rep = evaluate(shuffled, gts)
        assert rep.precision == base.precision
        assert rep.recall == base.recall
        assert rep.hmean == base.hmean


def test_evaluate_one_to_one():
    # two predictions covering one gt: only one may match
    gt = [rect(0, 0, 10, 10)]
    preds = [rect(0, 0, 10, 10), rect(1, 0, 10, 10)]
    report = evaluate(preds, gt)
    assert len(report.matches) == 1
    assert report.precision == 0.5
    assert report.recall == 1.0


def test_polygon_iou_known():
    assert polygon_iou(rect(0, 0, 10, 10), rect(5, 0, 15, 10)) == \
        pytest.approx(50 / 150)


def test_text_instance_validation():
    with pytest.raises(ValueError):
        TextInstance(ordered_nodes=[], polygon=rect(0, 0, 1, 1), score=0.5)
