"""Embedded vector-stroke font: polyline skeletons for A-Z and 0-9.

Glyphs live on a unit cell, x in [0, 0.7], y in [0, 1] with y pointing down.
Words render as stroked polylines with round caps, so the exact stroke mask
falls out of the rasterizer for free.
"""

from __future__ import annotations

import math
from typing import Dict, List, Sequence, Tuple

Point = Tuple[float, float]
Polyline = List[Point]

GLYPH_WIDTH = 0.7
ADVANCE = 1.0  # glyph width plus inter-character gap, in cell units


def _ellipse(cx: float, cy: float, rx: float, ry: float, n: int = 12,
             a0: float = 0.0, a1: float = 2 * math.pi, closed: bool = True) -> Polyline:
    pts = []
    for i in range(n + 1):
        a = a0 + (a1 - a0) * i / n
        pts.append((cx + rx * math.cos(a), cy + ry * math.sin(a)))
    if closed and (a1 - a0) >= 2 * math.pi - 1e-9:
        pts[-1] = pts[0]
    return pts


GLYPHS: Dict[str, List[Polyline]] = {
    "A": [[(0.0, 1.0), (0.35, 0.0), (0.7, 1.0)], [(0.14, 0.62), (0.56, 0.62)]],
    "B": [[(0.0, 0.0), (0.0, 1.0)],
          [(0.0, 0.0), (0.45, 0.0), (0.6, 0.12), (0.6, 0.36), (0.45, 0.48), (0.0, 0.48)],
          [(0.0, 0.48), (0.5, 0.48), (0.65, 0.62), (0.65, 0.85), (0.5, 1.0), (0.0, 1.0)]],
    "C": [_ellipse(0.4, 0.5, 0.35, 0.5, n=10, a0=0.6, a1=2 * math.pi - 0.6,
                   closed=False)],
    "D": [[(0.0, 0.0), (0.0, 1.0)],
          [(0.0, 0.0), (0.4, 0.0), (0.65, 0.2), (0.65, 0.8), (0.4, 1.0), (0.0, 1.0)]],
    "E": [[(0.6, 0.0), (0.0, 0.0), (0.0, 1.0), (0.6, 1.0)],
          [(0.0, 0.5), (0.45, 0.5)]],
    "F": [[(0.6, 0.0), (0.0, 0.0), (0.0, 1.0)], [(0.0, 0.5), (0.45, 0.5)]],
    "G": [_ellipse(0.4, 0.5, 0.35, 0.5, n=10, a0=0.6, a1=2 * math.pi - 0.6,
                   closed=False),
          [(0.42, 0.55), (0.7, 0.55), (0.7, 0.85)]],
    "H": [[(0.0, 0.0), (0.0, 1.0)], [(0.7, 0.0), (0.7, 1.0)],
          [(0.0, 0.5), (0.7, 0.5)]],
    "I": [[(0.35, 0.0), (0.35, 1.0)], [(0.1, 0.0), (0.6, 0.0)],
          [(0.1, 1.0), (0.6, 1.0)]],
    "J": [[(0.6, 0.0), (0.6, 0.8), (0.45, 1.0), (0.15, 1.0), (0.0, 0.8)]],
    "K": [[(0.0, 0.0), (0.0, 1.0)], [(0.65, 0.0), (0.0, 0.55)],
          [(0.22, 0.38), (0.65, 1.0)]],
    "L": [[(0.0, 0.0), (0.0, 1.0), (0.6, 1.0)]],
    "M": [[(0.0, 1.0), (0.0, 0.0), (0.35, 0.6), (0.7, 0.0), (0.7, 1.0)]],
    "N": [[(0.0, 1.0), (0.0, 0.0), (0.7, 1.0), (0.7, 0.0)]],
    "O": [_ellipse(0.35, 0.5, 0.33, 0.5, n=12)],
    "P": [[(0.0, 1.0), (0.0, 0.0), (0.5, 0.0), (0.65, 0.15), (0.65, 0.35),
           (0.5, 0.5), (0.0, 0.5)]],
    "Q": [_ellipse(0.35, 0.5, 0.33, 0.5, n=12), [(0.4, 0.65), (0.68, 0.98)]],
    "R": [[(0.0, 1.0), (0.0, 0.0), (0.5, 0.0), (0.65, 0.15), (0.65, 0.35),
           (0.5, 0.5), (0.0, 0.5)], [(0.3, 0.5), (0.65, 1.0)]],
    "S": [[(0.65, 0.12), (0.5, 0.0), (0.2, 0.0), (0.05, 0.12), (0.05, 0.32),
           (0.2, 0.45), (0.5, 0.55), (0.65, 0.68), (0.65, 0.88), (0.5, 1.0),
           (0.2, 1.0), (0.05, 0.88)]],
    "T": [[(0.0, 0.0), (0.7, 0.0)], [(0.35, 0.0), (0.35, 1.0)]],
    "U": [[(0.0, 0.0), (0.0, 0.8), (0.15, 1.0), (0.55, 1.0), (0.7, 0.8),
           (0.7, 0.0)]],
    "V": [[(0.0, 0.0), (0.35, 1.0), (0.7, 0.0)]],
    "W": [[(0.0, 0.0), (0.15, 1.0), (0.35, 0.35), (0.55, 1.0), (0.7, 0.0)]],
    "X": [[(0.0, 0.0), (0.7, 1.0)], [(0.7, 0.0), (0.0, 1.0)]],
    "Y": [[(0.0, 0.0), (0.35, 0.5), (0.7, 0.0)], [(0.35, 0.5), (0.35, 1.0)]],
    "Z": [[(0.0, 0.0), (0.7, 0.0), (0.0, 1.0), (0.7, 1.0)]],
    "0": [_ellipse(0.35, 0.5, 0.3, 0.5, n=12)],
    "1": [[(0.15, 0.2), (0.4, 0.0), (0.4, 1.0)], [(0.15, 1.0), (0.65, 1.0)]],
    "2": [[(0.05, 0.15), (0.2, 0.0), (0.5, 0.0), (0.65, 0.15), (0.65, 0.35),
           (0.0, 1.0), (0.65, 1.0)]],
    "3": [[(0.05, 0.1), (0.2, 0.0), (0.5, 0.0), (0.65, 0.12), (0.65, 0.32),
           (0.5, 0.45), (0.25, 0.45)],
          [(0.5, 0.45), (0.65, 0.6), (0.65, 0.85), (0.5, 1.0), (0.2, 1.0),
           (0.05, 0.9)]],
    "4": [[(0.5, 1.0), (0.5, 0.0), (0.0, 0.7), (0.7, 0.7)]],
    "5": [[(0.6, 0.0), (0.1, 0.0), (0.05, 0.45), (0.45, 0.4), (0.65, 0.55),
           (0.65, 0.85), (0.45, 1.0), (0.15, 1.0), (0.05, 0.9)]],
    "6": [[(0.6, 0.08), (0.45, 0.0), (0.25, 0.0), (0.08, 0.2), (0.05, 0.6),
           (0.1, 0.9), (0.3, 1.0), (0.5, 1.0), (0.65, 0.85), (0.65, 0.62),
           (0.5, 0.5), (0.25, 0.5), (0.08, 0.62)]],
    "7": [[(0.0, 0.0), (0.7, 0.0), (0.25, 1.0)]],
    "8": [_ellipse(0.35, 0.26, 0.26, 0.26, n=10),
          _ellipse(0.35, 0.74, 0.3, 0.26, n=10)],
    "9": [[(0.1, 0.92), (0.25, 1.0), (0.45, 1.0), (0.62, 0.8), (0.65, 0.4),
           (0.6, 0.1), (0.4, 0.0), (0.2, 0.0), (0.05, 0.15), (0.05, 0.38),
           (0.2, 0.5), (0.45, 0.5), (0.62, 0.38)]],
}

ALPHABET = "ABCDEFGHIJKLMNOPQRSTUVWXYZ"
DIGITS = "0123456789"


def word_segments(word: str) -> List[Tuple[Point, Point]]:
    """All stroke segments of a word in cell units, characters advanced in x."""
    if not word:
        raise ValueError("cannot render an empty word")
    segments = []
    for i, ch in enumerate(word.upper()):
        glyph = GLYPHS.get(ch)
        if glyph is None:
            raise ValueError(f"no glyph for character {ch!r}")
        dx = i * ADVANCE
        for line in glyph:
            for (x0, y0), (x1, y1) in zip(line[:-1], line[1:]):
                segments.append(((x0 + dx, y0), (x1 + dx, y1)))
    return segments
