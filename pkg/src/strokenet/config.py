"""Declarative INI configuration with named presets.

Three sections are recognized: [generate], [train] and [inference]. Every key
is optional (defaults apply) but unknown sections or keys are hard errors, so
typos cannot silently fall back to defaults.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Dict, Tuple, Union

from .losses import LossWeights
from .synth import GenConfig
from .train import TrainConfig

PRESETS = ("easy", "desk", "paper")

# ini key -> (type, GenConfig field); pair fields are assembled afterwards
_GEN_KEYS: Dict[str, Tuple[type, str]] = {
    "config_id": (str, "config_id"),
    "size_min": (float, ""),
    "size_max": (float, ""),
    "angle_min": (float, ""),
    "angle_max": (float, ""),
    "words_min": (int, ""),
    "words_max": (int, ""),
    "max_word_len": (int, "max_word_len"),
    "alpha_count": (int, "alpha_count"),
    "digit_count": (int, "digit_count"),
    "canvas_width": (int, ""),
    "canvas_height": (int, ""),
    "background_complexity": (int, "background_complexity"),
}

_TRAIN_KEYS: Dict[str, type] = {
    "input_size": int, "batch_size": int, "steps": int, "lr": float,
    "phase2_steps": int, "phase2_lr": float, "phase2_decay": float,
    "phase2_decay_every": int, "flip_prob": float, "seed": int,
    "shrink_ratio": float, "end_trim": float, "grad_clip": float,
    "lambda_link": float,
    "l1": float, "l2": float, "l3": float, "l4": float, "l5": float,
}

_INFER_KEYS: Dict[str, type] = {
    "score_thresh": float, "link_thresh": float, "nms_iou": float,
    "stroke_shrink": float, "stroke_keep": float, "eval_iou": float,
    "max_stroke_crops": int, "max_stroke_regions": int, "max_pivots": int,
}


@dataclass
class AppConfig:
    generate: GenConfig
    train: TrainConfig
    source: str


def resolve_config(name_or_path: Union[str, Path]) -> Path:
    """A preset name maps to the packaged INI; anything else is a path."""
    text = str(name_or_path)
    if text in PRESETS:
        ref = resources.files("strokenet") / "configs" / f"{text}.ini"
        return Path(str(ref))
    path = Path(name_or_path)
    if not path.exists():
        raise FileNotFoundError(
            f"config {text!r} is neither a preset {PRESETS} nor an existing file")
    return path


def _parse_section(parser: configparser.ConfigParser, section: str,
                   allowed: Dict[str, type]) -> Dict[str, object]:
    out: Dict[str, object] = {}
    if not parser.has_section(section):
        return out
    for key, raw in parser.items(section):
        if key not in allowed:
            raise ValueError(f"unknown key {key!r} in section [{section}]")
        typ = allowed[key][0] if isinstance(allowed[key], tuple) else allowed[key]
        try:
            out[key] = typ(raw)
        except ValueError as exc:
            raise ValueError(
                f"key {key!r} in [{section}]: cannot parse {raw!r} as "
                f"{typ.__name__}") from exc
    return out


def load_config(name_or_path: Union[str, Path]) -> AppConfig:
    path = resolve_config(name_or_path)
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    with open(path) as fh:
        parser.read_file(fh)
    known_sections = {"generate", "train", "inference"}
    extra = set(parser.sections()) - known_sections
    if extra:
        raise ValueError(f"unknown config sections: {sorted(extra)}")

    gen_raw = _parse_section(parser, "generate", _GEN_KEYS)
    gen_kwargs: Dict[str, object] = {}
    for key, value in gen_raw.items():
        field = _GEN_KEYS[key][1]
        if field:
            gen_kwargs[field] = value
    defaults = GenConfig()
    gen_kwargs["size_range"] = (
        float(gen_raw.get("size_min", defaults.size_range[0])),
        float(gen_raw.get("size_max", defaults.size_range[1])))
    gen_kwargs["angle_range"] = (
        float(gen_raw.get("angle_min", defaults.angle_range[0])),
        float(gen_raw.get("angle_max", defaults.angle_range[1])))
    gen_kwargs["words_per_image"] = (
        int(gen_raw.get("words_min", defaults.words_per_image[0])),
        int(gen_raw.get("words_max", defaults.words_per_image[1])))
    gen_kwargs["canvas"] = (
        int(gen_raw.get("canvas_width", defaults.canvas[0])),
        int(gen_raw.get("canvas_height", defaults.canvas[1])))
    gen = GenConfig(**gen_kwargs)

    train_raw = _parse_section(parser, "train", _TRAIN_KEYS)
    weights = LossWeights(
        l1=float(train_raw.pop("l1", 1.0)), l2=float(train_raw.pop("l2", 1.0)),
        l3=float(train_raw.pop("l3", 1.0)), l4=float(train_raw.pop("l4", 1.0)),
        l5=float(train_raw.pop("l5", 1.0)))
    infer_raw = _parse_section(parser, "inference", _INFER_KEYS)
    train = TrainConfig(loss_weights=weights, **train_raw, **infer_raw)
    return AppConfig(generate=gen, train=train, source=str(path))
