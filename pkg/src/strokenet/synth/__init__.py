"""Synthetic stroke-text dataset generation."""

from .font import ALPHABET, DIGITS, GLYPH_WIDTH, ADVANCE, word_segments
from .gen import (
    GenConfig,
    SceneSample,
    default_subsets,
    easy_config,
    generate_dataset,
    generate_sample,
    load_dataset,
    render_word,
)

__all__ = [
    "ALPHABET",
    "DIGITS",
    "GLYPH_WIDTH",
    "ADVANCE",
    "word_segments",
    "GenConfig",
    "SceneSample",
    "default_subsets",
    "easy_config",
    "generate_dataset",
    "generate_sample",
    "load_dataset",
    "render_word",
]
