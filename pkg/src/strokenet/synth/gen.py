"""Synthetic scene-text generator with exact stroke masks.

Every sample is a pure function of (config, seed): procedural background,
vector-stroke words placed by rejection sampling, hard-ink blending with a
luminance contrast floor.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image

from ..geometry import TextAnnotation
from ..proposals import clip_polygon, _shoelace
from .font import ALPHABET, DIGITS, word_segments

log = logging.getLogger(__name__)

STROKE_WIDTH_RATIO = 0.12
MIN_CONTRAST = 30.0


@dataclass
class GenConfig:
    font_set: Tuple[str, ...] = ("hershey",)
    angle_range: Tuple[float, float] = (0.0, 360.0)
    size_range: Tuple[float, float] = (5.0, 80.0)
    max_word_len: int = 8
    alpha_count: int = 10
    digit_count: int = 10
    words_per_image: Tuple[int, int] = (1, 5)
    canvas: Tuple[int, int] = (256, 256)
    background_complexity: int = 2  # 0 = plain gradient
    config_id: str = "default"

    def __post_init__(self):
        for lo, hi in (self.angle_range, self.size_range, self.words_per_image):
            if lo > hi:
                raise ValueError("range lower bound exceeds upper bound")
        if not 0.0 <= self.angle_range[0] <= self.angle_range[1] <= 360.0:
            raise ValueError("angle_range must sit inside [0, 360]")
        if not 5.0 <= self.size_range[0] <= self.size_range[1] <= 80.0:
            raise ValueError("size_range must sit inside [5, 80]")
        if self.alpha_count < 0 or self.alpha_count > len(ALPHABET):
            raise ValueError("alpha_count out of range")
        if self.digit_count < 0 or self.digit_count > len(DIGITS):
            raise ValueError("digit_count out of range")
        if self.alpha_count + self.digit_count == 0:
            raise ValueError("charset is empty")

    @property
    def charset(self) -> str:
        return ALPHABET[:self.alpha_count] + DIGITS[:self.digit_count]


@dataclass
class SceneSample:
    image: np.ndarray        # (H, W, 3) uint8
    stroke_mask: np.ndarray  # (H, W) bool
    instances: List[TextAnnotation]
    seed: int
    config_id: str


def _rotation(angle_deg: float) -> Tuple[float, float]:
    """Cos/sin of an angle, exact for multiples of 90 degrees."""
    rem = angle_deg % 90.0
    if rem < 1e-12 or 90.0 - rem < 1e-12:
        quarter = int(round(angle_deg / 90.0)) % 4
        return ((1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0))[quarter]
    rad = math.radians(angle_deg)
    return math.cos(rad), math.sin(rad)


def render_word(word: str, font: str, size: float,
                angle: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Rasterize a word onto a local grid.

    Returns (ink raster uint8, stroke mask bool, quad in local pixel coords).
    The quad's first two vertices trace the top edge in writing order.
    """
    if font != "hershey":
        raise ValueError(f"unknown font {font!r}")
    segs_cell = word_segments(word)
    width = STROKE_WIDTH_RATIO * size
    cos_a, sin_a = _rotation(angle)

    pts = np.array([[p for p in seg] for seg in segs_cell],
                   dtype=np.float64) * size        # (S, 2, 2)
    rot = np.array([[cos_a, -sin_a], [sin_a, cos_a]])
    flat = pts.reshape(-1, 2)
    # unrotated tight bounds for the quad, inflated by the stroke radius
    ux0, uy0 = flat[:, 0].min() - width / 2, flat[:, 1].min() - width / 2
    ux1, uy1 = flat[:, 0].max() + width / 2, flat[:, 1].max() + width / 2
    quad_unrot = np.array([[ux0, uy0], [ux1, uy0], [ux1, uy1], [ux0, uy1]])
    rotated = flat @ rot.T
    quad = quad_unrot @ rot.T

    pad = width / 2 + 1.0
    min_xy = rotated.min(axis=0)
    max_xy = rotated.max(axis=0)
    span = max_xy - min_xy + 2 * pad
    w_px = int(math.ceil(span[0] - 1e-9))
    h_px = int(math.ceil(span[1] - 1e-9))
    # center the content so a 180-degree flip lands back on pixel centers
    offset = min_xy - pad - (np.array([w_px, h_px]) - span) / 2.0

    segs = rotated.reshape(-1, 2, 2) - offset
    quad_local = quad - offset
    ys, xs = np.mgrid[0:h_px, 0:w_px]
    samples = np.stack([xs + 0.5, ys + 0.5], axis=-1).reshape(-1, 2)
    a = segs[:, 0]
    d = segs[:, 1] - segs[:, 0]
    len2 = np.maximum((d * d).sum(axis=1), 1e-12)
    rel = samples[:, None, :] - a[None]
    t = np.clip((rel * d[None]).sum(-1) / len2[None], 0.0, 1.0)
    proj = a[None] + t[..., None] * d[None]
    diff = samples[:, None, :] - proj
    dist2 = (diff * diff).sum(-1).min(axis=1)
    mask = (dist2 <= (width / 2) ** 2).reshape(h_px, w_px)
    raster = (mask * np.uint8(255))
    return raster, mask, quad_local


def _background(cfg: GenConfig, rng: np.random.Generator) -> np.ndarray:
    w, h = cfg.canvas
    c0 = rng.uniform(40, 216, size=3)
    c1 = rng.uniform(40, 216, size=3)
    ramp_x = np.linspace(0, 1, w)[None, :, None]
    ramp_y = np.linspace(0, 1, h)[:, None, None]
    mix = rng.uniform()
    ramp = mix * ramp_x + (1 - mix) * ramp_y
    img = c0[None, None] * (1 - ramp) + c1[None, None] * ramp
    if cfg.background_complexity > 0:
        coarse = rng.uniform(-18, 18, size=(h // 16 + 1, w // 16 + 1, 3))
        noise = np.kron(coarse, np.ones((16, 16, 1)))[:h, :w]
        img = img + noise * min(cfg.background_complexity, 3)
        for _ in range(cfg.background_complexity):
            x0, y0 = rng.integers(0, w), rng.integers(0, h)
            bw, bh = rng.integers(10, w // 2), rng.integers(10, h // 2)
            shade = rng.uniform(-30, 30, size=3)
            img[y0:y0 + bh, x0:x0 + bw] += shade
    return np.clip(img, 0, 255)


def _luminance(rgb: np.ndarray) -> float:
    return float(0.299 * rgb[..., 0].mean() + 0.587 * rgb[..., 1].mean()
                 + 0.114 * rgb[..., 2].mean())


def _pick_ink(bg_patch: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    bg_lum = _luminance(bg_patch)
    for _ in range(20):
        color = rng.uniform(0, 255, size=3)
        lum = 0.299 * color[0] + 0.587 * color[1] + 0.114 * color[2]
        if abs(lum - bg_lum) >= MIN_CONTRAST:
            return color
    return np.array([0.0, 0.0, 0.0]) if bg_lum >= 128 \
        else np.array([255.0, 255.0, 255.0])


def _quads_overlap(quad_a: np.ndarray, quad_b: np.ndarray) -> bool:
    return _shoelace(clip_polygon(quad_a, quad_b)) > 1e-9


def generate_sample(cfg: GenConfig, seed: int) -> SceneSample:
    """One deterministic sample: background, placed words, exact stroke mask."""
    rng = np.random.default_rng(seed)
    w, h = cfg.canvas
    image = _background(cfg, rng)
    stroke_mask = np.zeros((h, w), dtype=bool)
    instances: List[TextAnnotation] = []
    placed_quads: List[np.ndarray] = []

    n_words = int(rng.integers(cfg.words_per_image[0],
                               cfg.words_per_image[1] + 1))
    for _ in range(n_words):
        length = int(rng.integers(1, cfg.max_word_len + 1))
        word = "".join(rng.choice(list(cfg.charset)) for _ in range(length))
        size = float(rng.uniform(*cfg.size_range))
        angle = float(rng.uniform(*cfg.angle_range))
        font = str(rng.choice(list(cfg.font_set)))
        raster, mask, quad_local = render_word(word, font, size, angle)
        mh, mw = mask.shape
        if mw >= w or mh >= h:
            log.info("word %r too large for canvas, skipped", word)
            continue
        placed = False
        for _attempt in range(100):
            tx = int(rng.integers(0, w - mw))
            ty = int(rng.integers(0, h - mh))
            quad = quad_local + np.array([tx, ty], dtype=np.float64)
            if any(_quads_overlap(quad, q) for q in placed_quads):
                continue
            ink = _pick_ink(image[ty:ty + mh, tx:tx + mw], rng)
            image[ty:ty + mh, tx:tx + mw][mask] = ink
            stroke_mask[ty:ty + mh, tx:tx + mw] |= mask
            placed_quads.append(quad)
            instances.append(TextAnnotation(quad, word))
            placed = True
            break
        if not placed:
            log.info("placement failed after 100 rejections for %r", word)

    return SceneSample(image=image.astype(np.uint8), stroke_mask=stroke_mask,
                       instances=instances, seed=seed, config_id=cfg.config_id)


def default_subsets() -> List[GenConfig]:
    """Five configs spanning size, angle and word-length bands."""
    return [
        GenConfig(size_range=(5, 15), angle_range=(0, 0), max_word_len=5,
                  config_id="small-flat"),
        GenConfig(size_range=(15, 40), angle_range=(0, 0), max_word_len=8,
                  config_id="mid-flat"),
        GenConfig(size_range=(40, 80), angle_range=(0, 0), max_word_len=4,
                  words_per_image=(1, 2), config_id="large-flat"),
        GenConfig(size_range=(15, 40), angle_range=(0, 360), max_word_len=6,
                  config_id="mid-rotated"),
        GenConfig(size_range=(5, 40), angle_range=(315, 360), max_word_len=10,
                  config_id="long-tilted"),
    ]


def easy_config(canvas: Tuple[int, int] = (128, 128)) -> GenConfig:
    """Plain backgrounds, one to three horizontal words, mid sizes."""
    return GenConfig(size_range=(15, 40), angle_range=(0, 0),
                     words_per_image=(1, 3), max_word_len=5,
                     background_complexity=0, canvas=canvas,
                     config_id="easy")


def _annotation_record(index: int, sample: SceneSample) -> dict:
    return {
        "image": f"images/{index:06d}.png",
        "mask": f"masks/{index:06d}.png",
        "instances": [
            {"polygon": [[round(float(x), 6), round(float(y), 6)]
                         for x, y in ann.polygon],
             "word": ann.word}
            for ann in sample.instances
        ],
        "seed": sample.seed,
        "config_id": sample.config_id,
    }


def generate_dataset(configs: Sequence[GenConfig], count_per_config: int,
                     out_dir, base_seed: int = 0) -> dict:
    """Write images/, masks/, annotations.jsonl and manifest.json."""
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    records = []
    index = 0
    for cfg in configs:
        for _ in range(count_per_config):
            sample = generate_sample(cfg, base_seed + index)
            Image.fromarray(sample.image).save(out / f"images/{index:06d}.png")
            Image.fromarray(sample.stroke_mask.astype(np.uint8) * 255).save(
                out / f"masks/{index:06d}.png")
            records.append(_annotation_record(index, sample))
            index += 1
    with open(out / "annotations.jsonl", "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    manifest = {
        "base_seed": base_seed,
        "count_per_config": count_per_config,
        "total": index,
        "configs": [dataclasses.asdict(c) for c in configs],
        "layout": {"images": "images/", "masks": "masks/",
                   "annotations": "annotations.jsonl"},
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return manifest


def load_dataset(root) -> List[dict]:
    """Read annotations.jsonl records from a generated dataset."""
    root = Path(root)
    records = []
    with open(root / "annotations.jsonl") as fh:
        for line in fh:
            records.append(json.loads(line))
    return records
