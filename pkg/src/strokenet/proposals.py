"""Rotated-box proposals from geometry maps: extraction, NMS, boundary filtering."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np
from skimage.measure import label as cc_label
from skimage.morphology import skeletonize

from .geometry import GeometryMaps, rasterize_polygon

TEXT = "text"
STROKE = "stroke"


@dataclass
class Proposal:
    """One rotated quadrilateral component of a text instance."""

    center: Tuple[float, float]
    h1: float
    h2: float
    sin: float
    cos: float
    width: float
    level: str = TEXT
    score: float = 1.0
    component: int = -1  # id of the source connected component

    def __post_init__(self):
        if self.h1 <= 0 or self.h2 <= 0 or self.width <= 0:
            raise ValueError("proposal dimensions must be positive")
        norm = float(np.hypot(self.sin, self.cos))
        if abs(norm - 1.0) > 1e-6:
            self.sin, self.cos = self.sin / norm, self.cos / norm

    @property
    def height(self) -> float:
        return self.h1 + self.h2

    def quad(self) -> np.ndarray:
        """Corners (tl, tr, br, bl); top edge leads, writing direction left to right."""
        cx, cy = self.center
        d = np.array([self.cos, self.sin])      # writing direction
        u = np.array([self.sin, -self.cos])     # toward the upper edge
        c = np.array([cx, cy])
        half = 0.5 * self.width
        return np.array([
            c + self.h1 * u - half * d,
            c + self.h1 * u + half * d,
            c - self.h2 * u + half * d,
            c - self.h2 * u - half * d,
        ])

    def scaled(self, factor: float) -> "Proposal":
        return replace(self, h1=self.h1 * factor, h2=self.h2 * factor,
                       width=self.width * factor, level=STROKE)


def _skeleton_path(mask: np.ndarray) -> List[Tuple[int, int]]:
    """Longest geodesic through the skeleton of a component, as (row, col) steps."""
    skel = skeletonize(mask)
    pts = list(zip(*np.nonzero(skel)))
    if not pts:
        return []
    index = {p: i for i, p in enumerate(pts)}
    adj: List[List[int]] = [[] for _ in pts]
    for (r, c), i in index.items():
        for dr in (-1, 0, 1):
            for dc in (-1, 0, 1):
                if dr == dc == 0:
                    continue
                j = index.get((r + dr, c + dc))
                if j is not None:
                    adj[i].append(j)

    def bfs(start: int):
        dist = {start: 0.0}
        parent = {start: -1}
        queue = [start]
        far = start
        while queue:
            nxt = []
            for u in queue:
                for v in adj[u]:
                    if v not in dist:
                        dist[v] = dist[u] + np.hypot(pts[v][0] - pts[u][0],
                                                     pts[v][1] - pts[u][1])
                        parent[v] = u
                        nxt.append(v)
                        if dist[v] > dist[far]:
                            far = v
            queue = nxt
        return far, parent

    end_a, _ = bfs(0)
    end_b, parent = bfs(end_a)
    path = []
    node = end_b
    while node != -1:
        path.append(pts[node])
        node = parent[node]
    return path


def _plane_at(plane: np.ndarray, pt: Tuple[float, float]) -> float:
    r = min(max(int(round(pt[0])), 0), plane.shape[0] - 1)
    c = min(max(int(round(pt[1])), 0), plane.shape[1] - 1)
    return float(plane[r, c])


def _tip_direction(path: Sequence[Tuple[float, float]], head: bool,
                   sin_plane: np.ndarray,
                   cos_plane: np.ndarray) -> Optional[np.ndarray]:
    """Outward (row, col) unit step at a path end, from the angle maps.

    The writing direction at the tip pixel is reliable where skeleton
    tangents fork; its sign is disambiguated against the coarse tangent.
    """
    if len(path) < 2:
        return None
    tip = path[0] if head else path[-1]
    back = min(4, len(path) - 1)
    inner = path[back] if head else path[-1 - back]
    tangent = np.array([tip[0] - inner[0], tip[1] - inner[1]], dtype=np.float64)
    d = np.array([_plane_at(sin_plane, tip), _plane_at(cos_plane, tip)],
                 dtype=np.float64)
    if np.hypot(*d) < 1e-9:
        d = tangent
    n = np.hypot(*d)
    if n < 1e-12:
        return None
    d = d / n
    if float(d @ tangent) < 0:
        d = -d
    return d


def _extend_to_mask(path: List[Tuple[float, float]], mask: np.ndarray,
                    sin_plane: np.ndarray, cos_plane: np.ndarray,
                    extend_mask: Optional[np.ndarray] = None,
                    max_steps: Optional[int] = None,
                    ) -> Tuple[List[Tuple[float, float]], int, int]:
    """Grow both path ends along the writing direction to the mask edge.

    Morphological skeletons stop about half a band-height short of the
    component tips; marching outward in unit float steps recovers the lost
    ends without re-introducing pixel-grid wobble. The march stays inside
    extend_mask (the full text area when the band is a shrunk center region)
    and is capped at max_steps pixels per end. Returns the grown path plus
    the number of points added at the head and at the tail.
    """
    if not path:
        return path, 0, 0
    walk = mask if extend_mask is None else extend_mask
    h, w = walk.shape
    out = list(path)
    grown = {True: 0, False: 0}
    for head in (True, False):
        if len(out) >= 2:
            d = _tip_direction(out, head, sin_plane, cos_plane)
        else:
            # single-point band: the angle map alone fixes the axis, march
            # both signed directions
            d = np.array([_plane_at(sin_plane, out[0]),
                          _plane_at(cos_plane, out[0])], dtype=np.float64)
            n = np.hypot(*d)
            d = d / n if n > 1e-12 else None
            if d is not None and head:
                d = -d
        if d is None:
            continue
        end = out[0] if head else out[-1]
        pos = np.array(end, dtype=np.float64)
        budget = max(h, w) if max_steps is None else max_steps
        while budget > 0:
            pos = pos + d
            r, c = int(round(pos[0])), int(round(pos[1]))
            if not (0 <= r < h and 0 <= c < w) or not walk[r, c]:
                break
            pt = (float(pos[0]), float(pos[1]))
            if head:
                out.insert(0, pt)
                grown[True] += 1
            else:
                out.append(pt)
                grown[False] += 1
            budget -= 1
    return out, grown[True], grown[False]


def extract_text_proposals(pred: GeometryMaps, ta_thresh: float = 0.5,
                           tca_thresh: float = 0.5) -> List[Proposal]:
    """Walk TCA component skeletons, sampling one proposal per half-height stride."""
    if not (0.0 < ta_thresh < 1.0 and 0.0 < tca_thresh < 1.0):
        raise ValueError("thresholds must lie in (0, 1)")
    ta = np.asarray(pred.ta, dtype=np.float64)
    tca = np.asarray(pred.tca, dtype=np.float64)
    seed = (tca >= tca_thresh) & (ta >= ta_thresh)
    if not seed.any():
        return []
    labels = cc_label(seed, connectivity=2)
    ta_mask = ta >= ta_thresh
    props: List[Proposal] = []
    h_img, w_img = seed.shape
    for comp_id in range(1, labels.max() + 1):
        comp = labels == comp_id
        band_rows, band_cols = np.nonzero(comp)
        path = _skeleton_path(comp)
        if len(path) < 2:
            path = [(int(round(band_rows.mean())), int(round(band_cols.mean())))]
        comp_start = len(props)

        def nearest_band_pixel(ri: int, ci: int) -> Tuple[int, int]:
            # geometry planes are only reliable inside the band
            if comp[ri, ci]:
                return ri, ci
            d2 = (band_rows - ri) ** 2 + (band_cols - ci) ** 2
            k = int(np.argmin(d2))
            return int(band_rows[k]), int(band_cols[k])
        # project skeleton cells onto the instance midline: rectangle
        # skeletons grow diagonal corner branches, and the (h1-h2)/2 normal
        # shift collapses them so arc positions measure distance along the
        # true axis
        pts: List[Tuple[float, float]] = []
        for (r0, c0) in path:
            mr0, mc0 = nearest_band_pixel(r0, c0)
            half = 0.5 * (float(pred.h1[mr0, mc0]) - float(pred.h2[mr0, mc0]))
            sn, cs = float(pred.sin_theta[mr0, mc0]), float(pred.cos_theta[mr0, mc0])
            # edge normal (x, y) = (sin, -cos), stored as (row, col)
            pts.append((r0 - half * cs, c0 + half * sn))
        # the band is a center region; the instance runs on through the text
        # area for up to ~one height at each end
        mean_h = float(np.mean(pred.h1[band_rows, band_cols]
                               + pred.h2[band_rows, band_cols]))
        cap = int(np.ceil(max(mean_h, 2.0))) + 2
        pts, n_head, n_tail = _extend_to_mask(
            pts, comp, pred.sin_theta, pred.cos_theta,
            extend_mask=ta_mask, max_steps=cap)
        arcs = [0.0]
        for (r0, c0), (r1, c1) in zip(pts[:-1], pts[1:]):
            arcs.append(arcs[-1] + np.hypot(r1 - r0, c1 - c0))
        total = arcs[-1]
        arcs_np = np.asarray(arcs)

        def sample_at(pos: float) -> Tuple[Proposal, float]:
            k = int(np.searchsorted(arcs_np, pos, side="right") - 1)
            k = min(max(k, 0), len(pts) - 1)
            if k + 1 < len(pts) and arcs_np[k + 1] > arcs_np[k]:
                f = (pos - arcs_np[k]) / (arcs_np[k + 1] - arcs_np[k])
                r = pts[k][0] + f * (pts[k + 1][0] - pts[k][0])
                c = pts[k][1] + f * (pts[k + 1][1] - pts[k][1])
            else:
                r, c = float(pts[k][0]), float(pts[k][1])
            ri = min(max(int(round(r)), 0), h_img - 1)
            ci = min(max(int(round(c)), 0), w_img - 1)
            mr, mc = nearest_band_pixel(ri, ci)
            h1 = float(pred.h1[mr, mc])
            h2 = float(pred.h2[mr, mc])
            if h1 <= 0 or h2 <= 0:  # degenerate map pixel, clamp
                h1, h2 = max(h1, 0.5), max(h2, 0.5)
            # the center sits on the midline, so the edges are equidistant
            half_h = 0.5 * (h1 + h2)
            stride = max(half_h, 1.0)
            return Proposal(
                center=(c + 0.5, r + 0.5),
                h1=half_h, h2=half_h,
                sin=float(pred.sin_theta[mr, mc]),
                cos=float(pred.cos_theta[mr, mc]),
                width=stride,
                level=TEXT,
                score=float(tca[mr, mc]),
                component=comp_id,
            ), stride

        # stride walk covers the band arc; the grown tips only relocate the
        # terminal samples, so the count stays band_length / stride
        ext_lo = float(arcs_np[n_head])
        ext_hi = float(arcs_np[len(pts) - 1 - n_tail])
        pos = ext_lo
        while True:
            p, stride = sample_at(pos)
            props.append(p)
            pos += stride
            if pos > ext_hi:
                break
        # cover the far band tip when the stride walk stopped short of it
        if ext_hi - (pos - stride) > 1e-6:
            p, _ = sample_at(ext_hi)
            props.append(p)
        # terminal samples sit half a width inside the instance tips so their
        # rects (and the reconstruction end caps) end exactly at the tips
        if len(props) - comp_start >= 2:
            mid = 0.5 * total
            for head, idx in ((True, comp_start), (False, len(props) - 1)):
                w_end = props[idx].width
                if head:
                    target = min(0.5 * w_end, mid)
                    cur = ext_lo
                else:
                    target = max(total - 0.5 * w_end, mid)
                    cur = ext_hi
                if abs(target - cur) > 1e-6:
                    props[idx] = sample_at(target)[0]
            # half-pixel rasterization slack: mask pixel centers sit half a
            # pixel inside the true instance edge
            if len(pts) >= 2:
                for head, idx in ((True, comp_start), (False, len(props) - 1)):
                    d = _tip_direction(pts, head, pred.sin_theta,
                                       pred.cos_theta)
                    if d is None:
                        continue
                    p = props[idx]
                    props[idx] = replace(p, center=(p.center[0] + 0.5 * d[1],
                                                    p.center[1] + 0.5 * d[0]))
    return props


def mean_inside_quad(plane: np.ndarray, quad: np.ndarray) -> float:
    """Mean plane value over pixels whose center falls inside the quad."""
    h, w = plane.shape
    mask = rasterize_polygon(quad, (w, h))
    if not mask.any():
        return 0.0
    return float(plane[mask].mean())


def shrink_to_stroke_proposals(text_props: Sequence[Proposal],
                               stroke_map: np.ndarray,
                               shrink: float = 0.5,
                               keep_thresh: float = 0.5) -> List[Proposal]:
    """Scale each text proposal down and keep it where the stroke map is active."""
    if not 0.0 < shrink < 1.0:
        raise ValueError("shrink must lie in (0, 1)")
    stroke_map = np.asarray(stroke_map, dtype=np.float64)
    kept = []
    for p in text_props:
        s = p.scaled(shrink)
        if mean_inside_quad(stroke_map, s.quad()) > keep_thresh:
            kept.append(s)
    return kept


def clip_polygon(subject: np.ndarray, clip: np.ndarray) -> np.ndarray:
    """Sutherland-Hodgman clip of a polygon by a convex clip polygon."""
    def inside(p, a, b):
        return (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]) >= 0

    def intersect(p1, p2, a, b):
        d1 = p2 - p1
        d2 = b - a
        denom = d1[0] * d2[1] - d1[1] * d2[0]
        if abs(denom) < 1e-12:
            return p2
        t = ((a[0] - p1[0]) * d2[1] - (a[1] - p1[1]) * d2[0]) / denom
        return p1 + t * d1

    # ensure counter-clockwise clip winding in image coords (positive shoelace)
    area2 = 0.0
    for i in range(len(clip)):
        j = (i + 1) % len(clip)
        area2 += clip[i][0] * clip[j][1] - clip[j][0] * clip[i][1]
    if area2 < 0:
        clip = clip[::-1]

    output = [np.asarray(v, dtype=np.float64) for v in subject]
    for i in range(len(clip)):
        a, b = np.asarray(clip[i]), np.asarray(clip[(i + 1) % len(clip)])
        if not output:
            break
        inputs, output = output, []
        prev = inputs[-1]
        for cur in inputs:
            if inside(cur, a, b):
                if not inside(prev, a, b):
                    output.append(intersect(prev, cur, a, b))
                output.append(cur)
            elif inside(prev, a, b):
                output.append(intersect(prev, cur, a, b))
            prev = cur
    return np.asarray(output, dtype=np.float64).reshape(-1, 2)


def _shoelace(poly: np.ndarray) -> float:
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return float(abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))) / 2.0)


def quad_iou(quad_a: np.ndarray, quad_b: np.ndarray) -> float:
    """Intersection over union of two convex quadrilaterals."""
    inter = _shoelace(clip_polygon(quad_a, quad_b))
    union = _shoelace(quad_a) + _shoelace(quad_b) - inter
    if union <= 0:
        return 0.0
    return inter / union


def nms(props: Sequence[Proposal], iou_thresh: float = 0.3) -> List[Proposal]:
    """Greedy descending-score suppression with rotated-quad IoU.

    Tie-break is (score desc, center x, center y, input index) so the output
    is deterministic for equal scores.
    """
    if not 0.0 < iou_thresh < 1.0:
        raise ValueError("iou_thresh must lie in (0, 1)")
    order = sorted(range(len(props)),
                   key=lambda i: (-props[i].score, props[i].center[0],
                                  props[i].center[1], i))
    quads = [props[i].quad() for i in range(len(props))]
    kept: List[int] = []
    for i in order:
        if all(quad_iou(quads[i], quads[j]) <= iou_thresh for j in kept):
            kept.append(i)
    return [props[i] for i in kept]


def boundary_filter(props: Sequence[Proposal], image_size: Tuple[int, int],
                    max_outside: float = 0.2) -> List[Proposal]:
    """Drop proposals whose quad leaves the image by more than max_outside area."""
    w, h = image_size
    window = np.array([[0.0, 0.0], [w, 0.0], [w, h], [0.0, h]])
    kept = []
    for p in props:
        q = p.quad()
        area = _shoelace(q)
        if area <= 0:
            continue
        inside = _shoelace(clip_polygon(q, window))
        if (area - inside) / area <= max_outside:
            kept.append(p)
    return kept
