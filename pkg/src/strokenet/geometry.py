"""Per-pixel geometry targets for text regions: TA/TCA planes, heights and angles."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np

log = logging.getLogger(__name__)

# Pixel (i, j) samples at (j + 0.5, i + 0.5); every distance below is measured
# from pixel centers.
PIXEL_CENTER = 0.5


@dataclass
class TextAnnotation:
    """One text instance: polygon in pixel coords, top edge first in vertex order."""

    polygon: np.ndarray  # (2m, 2) float, first m vertices trace the top edge
    word: str = ""

    def __post_init__(self):
        self.polygon = np.asarray(self.polygon, dtype=np.float64)
        if self.polygon.ndim != 2 or self.polygon.shape[1] != 2:
            raise ValueError("polygon must be an (n, 2) vertex array")
        if len(self.polygon) < 4 or len(self.polygon) % 2 != 0:
            raise ValueError("polygon needs an even vertex count of at least 4")

    def top_line(self) -> np.ndarray:
        m = len(self.polygon) // 2
        return self.polygon[:m]

    def bottom_line(self) -> np.ndarray:
        """Bottom polyline, reversed so index i pairs with top_line()[i]."""
        m = len(self.polygon) // 2
        return self.polygon[m:][::-1]


@dataclass
class GeometryMaps:
    """TA/TCA classification planes plus h1/h2/angle regression planes.

    Ground truth and predictions share this container; predicted maps may also
    carry the raw classification logits used by the losses.
    """

    ta: np.ndarray          # in [0, 1]
    tca: np.ndarray         # in [0, 1]
    h1: np.ndarray          # px, distance to the upper edge
    h2: np.ndarray          # px, distance to the lower edge
    sin_theta: np.ndarray   # unit pair with cos_theta on valid pixels
    cos_theta: np.ndarray
    height: np.ndarray      # h1 + h2
    valid_mask: np.ndarray  # bool, pixels where regression targets exist
    instance_ids: Optional[np.ndarray] = None  # int32, 0 = background
    ta_logits: Optional[object] = field(default=None, repr=False)
    tca_logits: Optional[object] = field(default=None, repr=False)

    @property
    def shape(self) -> Tuple[int, int]:
        return tuple(self.ta.shape)


def polygon_area(polygon: np.ndarray) -> float:
    """Absolute shoelace area."""
    p = np.asarray(polygon, dtype=np.float64)
    if len(p) < 3:
        return 0.0
    x, y = p[:, 0], p[:, 1]
    return float(abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))) / 2.0)


def rasterize_polygon(polygon: np.ndarray, image_size: Tuple[int, int]) -> np.ndarray:
    """Even-odd scanline fill; a pixel is set iff its center lies inside.

    image_size is (width, height); returns a bool (height, width) plane.
    """
    w, h = int(image_size[0]), int(image_size[1])
    mask = np.zeros((h, w), dtype=bool)
    poly = np.asarray(polygon, dtype=np.float64)
    if len(poly) < 3:
        return mask
    x1, y1 = poly[:, 0], poly[:, 1]
    x2, y2 = np.roll(x1, -1), np.roll(y1, -1)
    row_lo = max(0, int(np.floor(poly[:, 1].min() - 0.5)))
    row_hi = min(h - 1, int(np.ceil(poly[:, 1].max())))
    for i in range(row_lo, row_hi + 1):
        yc = i + PIXEL_CENTER
        # half-open span [min, max) avoids double counting shared vertices
        crossing = (np.minimum(y1, y2) <= yc) & (yc < np.maximum(y1, y2))
        if not crossing.any():
            continue
        xa, ya = x1[crossing], y1[crossing]
        xb, yb = x2[crossing], y2[crossing]
        xs = np.sort(xa + (yc - ya) * (xb - xa) / (yb - ya))
        for k in range(0, len(xs) - 1, 2):
            j0 = int(np.ceil(xs[k] - PIXEL_CENTER))
            j1 = int(np.ceil(xs[k + 1] - PIXEL_CENTER))  # exclusive
            if j1 > 0 and j0 < w:
                mask[i, max(j0, 0):min(j1, w)] = True
    return mask


def _point_to_segments(points: np.ndarray, segs_a: np.ndarray, segs_b: np.ndarray):
    """Distance from each point to each segment a->b; returns (dist, t) arrays."""
    d = segs_b - segs_a                                      # (S, 2)
    len2 = np.maximum((d * d).sum(axis=1), 1e-12)            # (S,)
    rel = points[:, None, :] - segs_a[None, :, :]            # (P, S, 2)
    t = np.clip((rel * d[None]).sum(axis=2) / len2[None], 0.0, 1.0)
    proj = segs_a[None] + t[..., None] * d[None]
    diff = points[:, None, :] - proj
    return np.sqrt((diff * diff).sum(axis=2)), t


def polyline_distance(points: np.ndarray, line: np.ndarray):
    """Min distance from points (P,2) to polyline (V,2); also nearest segment index."""
    if len(line) < 2:
        diff = points - line[0]
        d = np.sqrt((diff * diff).sum(axis=1))
        return d, np.zeros(len(points), dtype=np.int64)
    dist, _ = _point_to_segments(points, line[:-1], line[1:])
    return dist.min(axis=1), dist.argmin(axis=1)


def normalize_angle(raw_sin: float, raw_cos: float) -> Tuple[float, float]:
    """Project an angle pair onto the unit circle, preserving direction."""
    norm = float(np.hypot(raw_sin, raw_cos))
    if norm < 1e-8:
        raise ValueError("undefined orientation: angle pair is zero")
    return raw_sin / norm, raw_cos / norm


def normalize_angle_planes(sin_plane, cos_plane, fallback=(0.0, 1.0)):
    """Per-pixel unit normalization; near-zero pairs fall back to horizontal.

    Works for numpy arrays and torch tensors alike.
    """
    norm = (sin_plane * sin_plane + cos_plane * cos_plane) ** 0.5
    degenerate = norm < 1e-8
    safe = norm + degenerate * 1.0
    s = sin_plane / safe
    c = cos_plane / safe
    s = s * (~degenerate) + fallback[0] * degenerate
    c = c * (~degenerate) + fallback[1] * degenerate
    return s, c


def outer_rectangle(region) -> Tuple[float, float, float, float]:
    """Tightest axis-aligned (x0, y0, x1, y1) around a binary plane or a polygon."""
    region = np.asarray(region)
    if region.ndim == 2 and region.shape[1] == 2:  # polygon vertices
        if len(region) == 0:
            raise ValueError("empty region has no outer rectangle")
        return (float(region[:, 0].min()), float(region[:, 1].min()),
                float(region[:, 0].max()), float(region[:, 1].max()))
    rows, cols = np.nonzero(region)
    if len(rows) == 0:
        raise ValueError("empty region has no outer rectangle")
    return (float(cols.min()), float(rows.min()),
            float(cols.max() + 1), float(rows.max() + 1))


def shrink_to_tca(polygon: np.ndarray, shrink_ratio: float,
                  end_trim: float = 0.5) -> np.ndarray:
    """Shrink a text polygon perpendicular to the writing direction.

    Each top/bottom vertex pair moves toward the other by shrink_ratio of the
    local height, and both ends are trimmed along the writing direction by
    end_trim times the local height. Returns an empty (0, 2) array when the
    region collapses.
    """
    if not 0.0 <= shrink_ratio < 0.5:
        raise ValueError("shrink_ratio must lie in [0, 0.5)")
    poly = np.asarray(polygon, dtype=np.float64)
    m = len(poly) // 2
    top = poly[:m]
    bot = poly[m:][::-1]

    t_new = top + shrink_ratio * (bot - top)
    b_new = bot + shrink_ratio * (top - bot)
    if end_trim <= 0.0:
        return np.concatenate([t_new, b_new[::-1]])

    mid = (top + bot) / 2.0
    heights = np.linalg.norm(top - bot, axis=1)
    seg = np.linalg.norm(np.diff(mid, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    s_lo = end_trim * heights[0]
    s_hi = s[-1] - end_trim * heights[-1]
    if s_lo >= s_hi:
        return np.zeros((0, 2), dtype=np.float64)

    def cut(arc):
        k = int(np.searchsorted(s, arc, side="right") - 1)
        k = min(max(k, 0), m - 2)
        f = (arc - s[k]) / max(s[k + 1] - s[k], 1e-12)
        return (t_new[k] + f * (t_new[k + 1] - t_new[k]),
                b_new[k] + f * (b_new[k + 1] - b_new[k]))

    t_lo, b_lo = cut(s_lo)
    t_hi, b_hi = cut(s_hi)
    inner = (s > s_lo) & (s < s_hi)
    tops = np.vstack([t_lo, t_new[inner], t_hi])
    bots = np.vstack([b_lo, b_new[inner], b_hi])
    return np.concatenate([tops, bots[::-1]])


def make_geometry_maps(annotations: Sequence[TextAnnotation],
                       image_size: Tuple[int, int],
                       shrink_ratio: float = 0.3,
                       end_trim: float = 0.5) -> GeometryMaps:
    """Build ground-truth geometry planes from polygon annotations.

    Degenerate polygons (area below 1 px^2) are skipped with a warning.
    Later instances overwrite earlier ones on the rare overlapping pixel.
    """
    w, h = int(image_size[0]), int(image_size[1])
    if w <= 0 or h <= 0:
        raise ValueError("image_size must be positive")
    ta = np.zeros((h, w), dtype=bool)
    tca = np.zeros((h, w), dtype=bool)
    h1 = np.zeros((h, w), dtype=np.float64)
    h2 = np.zeros((h, w), dtype=np.float64)
    sin_t = np.zeros((h, w), dtype=np.float64)
    cos_t = np.ones((h, w), dtype=np.float64)
    ids = np.zeros((h, w), dtype=np.int32)

    for idx, ann in enumerate(annotations):
        poly = np.asarray(ann.polygon, dtype=np.float64).copy()
        poly[:, 0] = np.clip(poly[:, 0], 0, w)
        poly[:, 1] = np.clip(poly[:, 1], 0, h)
        if polygon_area(poly) < 1.0:
            log.warning("skipping degenerate polygon (area < 1 px^2): %s", ann.word)
            continue
        mask = rasterize_polygon(poly, (w, h))
        if not mask.any():
            continue
        clipped = TextAnnotation(poly, ann.word)
        top, bot = clipped.top_line(), clipped.bottom_line()
        rows, cols = np.nonzero(mask)
        centers = np.stack([cols + PIXEL_CENTER, rows + PIXEL_CENTER], axis=1)
        d_top, seg_idx = polyline_distance(centers, top)
        d_bot, _ = polyline_distance(centers, bot)
        seg_dir = top[seg_idx + 1] - top[seg_idx]
        norms = np.maximum(np.linalg.norm(seg_dir, axis=1), 1e-12)
        h1[rows, cols] = d_top
        h2[rows, cols] = d_bot
        cos_t[rows, cols] = seg_dir[:, 0] / norms
        sin_t[rows, cols] = seg_dir[:, 1] / norms
        ids[rows, cols] = idx + 1
        ta |= mask

        tca_poly = shrink_to_tca(poly, shrink_ratio, end_trim)
        if len(tca_poly) >= 3:
            tca |= rasterize_polygon(tca_poly, (w, h)) & mask

    sin_t, cos_t = normalize_angle_planes(sin_t, cos_t)
    return GeometryMaps(
        ta=ta.astype(np.float64),
        tca=tca.astype(np.float64),
        h1=h1, h2=h2,
        sin_theta=sin_t, cos_theta=cos_t,
        height=h1 + h2,
        valid_mask=ta,
        instance_ids=ids,
    )
