"""Stroke-assisted scene text detection with hierarchical graph reasoning."""

__version__ = "0.1.0"

from .geometry import (  # noqa: F401
    GeometryMaps,
    TextAnnotation,
    make_geometry_maps,
    normalize_angle,
    outer_rectangle,
    shrink_to_tca,
)
