"""The stroke-assisted prediction network: backbone, text head, TFD and SCF."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .geometry import GeometryMaps

PREDICTED = "predicted"
GROUND_TRUTH = "ground_truth"


@dataclass
class FeatureMap:
    planes: torch.Tensor  # (C, H, W) or (B, C, H, W)
    stride: int

    def __post_init__(self):
        if self.stride < 1:
            raise ValueError("stride must be >= 1")


@dataclass
class StrokeMap:
    values: torch.Tensor  # probability plane, (H, W) or (1, H, W)
    role: str = PREDICTED


@dataclass
class HeadOutput:
    """Raw text-head planes at backbone stride; all tensors share (B, H, W)."""

    ta_logits: torch.Tensor   # (B, 2, H, W)
    tca_logits: torch.Tensor  # (B, 2, H, W)
    h1: torch.Tensor          # positive, image px
    h2: torch.Tensor
    sin: torch.Tensor         # unit pair with cos
    cos: torch.Tensor
    stride: int

    @property
    def ta_prob(self) -> torch.Tensor:
        return F.softmax(self.ta_logits, dim=1)[:, 1]

    @property
    def tca_prob(self) -> torch.Tensor:
        return F.softmax(self.tca_logits, dim=1)[:, 1]


def _block(cin: int, cout: int, stride: int = 1) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(cin, cout, 3, stride=stride, padding=1),
        nn.GroupNorm(min(8, cout), cout),
        nn.ReLU(inplace=True),
    )


class Backbone(nn.Module):
    """Four strided conv blocks producing 32-channel features at stride 4."""

    def __init__(self, out_channels: int = 32, stride: int = 4):
        super().__init__()
        if stride != 4:
            raise ValueError("only stride 4 is wired up")
        self.stride = stride
        self.out_channels = out_channels
        self.blocks = nn.Sequential(
            _block(3, 16, stride=1),
            _block(16, 32, stride=2),
            _block(32, 32, stride=2),
            _block(32, out_channels, stride=1),
        )

    def forward(self, image: torch.Tensor) -> FeatureMap:
        squeeze = image.dim() == 3
        if squeeze:
            image = image[None]
        if image.shape[-1] % self.stride or image.shape[-2] % self.stride:
            raise ValueError(
                f"image dims {tuple(image.shape[-2:])} not divisible by stride {self.stride}")
        out = self.blocks(image)
        if squeeze:
            out = out[0]
        return FeatureMap(out, self.stride)


class TextHead(nn.Module):
    """Two conv layers; 4 classification channels + 4 geometry channels."""

    def __init__(self, in_channels: int = 32):
        super().__init__()
        self.reduce = nn.Conv2d(in_channels, 16, 3, padding=1)
        self.project = nn.Conv2d(16, 8, 3, padding=1)
        with torch.no_grad():
            # start near horizontal text of ~7 px half-heights
            self.project.bias[4:6].fill_(1.0)
            self.project.bias[6].fill_(1.0)   # cos
            self.project.bias[7].fill_(0.0)   # sin

    def forward(self, features: FeatureMap) -> HeadOutput:
        x = features.planes
        squeeze = x.dim() == 3
        if squeeze:
            x = x[None]
        raw = self.project(F.relu(self.reduce(x)))
        h1 = torch.exp(raw[:, 4])
        h2 = torch.exp(raw[:, 5])
        cos_raw, sin_raw = raw[:, 6], raw[:, 7]
        norm = torch.sqrt(sin_raw * sin_raw + cos_raw * cos_raw)
        bad = norm < 1e-8
        safe = norm + bad.to(norm.dtype)
        sin = torch.where(bad, torch.zeros_like(sin_raw), sin_raw / safe)
        cos = torch.where(bad, torch.ones_like(cos_raw), cos_raw / safe)
        return HeadOutput(
            ta_logits=raw[:, 0:2], tca_logits=raw[:, 2:4],
            h1=h1, h2=h2, sin=sin, cos=cos, stride=features.stride,
        )


def head_to_geometry_maps(out: HeadOutput, image_size: Tuple[int, int],
                          batch_index: int = 0,
                          ta_thresh: float = 0.5) -> GeometryMaps:
    """Upsample one batch item's head planes to image resolution (numpy)."""
    w, h = image_size

    def up(plane: torch.Tensor) -> np.ndarray:
        t = plane[batch_index][None, None].detach()
        t = F.interpolate(t.float(), size=(h, w), mode="bilinear",
                          align_corners=False)
        return t[0, 0].cpu().numpy().astype(np.float64)

    ta = up(out.ta_prob)
    tca = up(out.tca_prob)
    sin, cos = up(out.sin), up(out.cos)
    norm = np.sqrt(sin * sin + cos * cos)
    bad = norm < 1e-8
    norm[bad] = 1.0
    sin, cos = sin / norm, cos / norm
    sin[bad], cos[bad] = 0.0, 1.0
    h1, h2 = up(out.h1), up(out.h2)
    return GeometryMaps(ta=ta, tca=tca, h1=h1, h2=h2, sin_theta=sin,
                        cos_theta=cos, height=h1 + h2,
                        valid_mask=ta >= ta_thresh)


def feature_crop_bounds(ota: Tuple[float, float, float, float], stride: int,
                        fm_shape: Tuple[int, int]) -> Tuple[int, int, int, int]:
    """Feature-cell index range covering an image-space rect; at least one cell."""
    x0, y0, x1, y1 = ota
    fh, fw = fm_shape
    fx0 = min(max(int(math.floor(x0 / stride)), 0), fw - 1)
    fy0 = min(max(int(math.floor(y0 / stride)), 0), fh - 1)
    fx1 = min(max(int(math.ceil(x1 / stride)), fx0 + 1), fw)
    fy1 = min(max(int(math.ceil(y1 / stride)), fy0 + 1), fh)
    return fx0, fy0, fx1, fy1


class TextFeatureDistiller(nn.Module):
    """Channel-attention distillation of backbone features over an OTA crop."""

    def __init__(self, in_channels: int = 32, width: int = 32, reduction: int = 4):
        super().__init__()
        self.width = width
        self.convs = nn.Sequential(_block(in_channels, width), _block(width, width))
        self.mlp = nn.Sequential(
            nn.Linear(width, width // reduction),
            nn.ReLU(inplace=True),
            nn.Linear(width // reduction, width),
        )

    def forward(self, features: FeatureMap,
                ota: Tuple[float, float, float, float],
                force_attention: Optional[torch.Tensor] = None) -> FeatureMap:
        planes = features.planes
        if planes.dim() == 3:
            planes = planes[None]
        x0, y0, x1, y1 = ota
        if x1 <= x0 or y1 <= y0:
            raise ValueError("OTA must span at least one feature cell")
        fx0, fy0, fx1, fy1 = feature_crop_bounds(ota, features.stride,
                                                 planes.shape[-2:])
        crop = planes[:, :, fy0:fy1, fx0:fx1]
        trunk = self.convs(crop)
        pooled = trunk.mean(dim=(-2, -1))
        att = torch.sigmoid(self.mlp(pooled)) if force_attention is None \
            else force_attention
        out_h = max(int(round(y1)) - int(round(y0)), 1)
        out_w = max(int(round(x1)) - int(round(x0)), 1)
        branch1 = F.interpolate(trunk, size=(out_h, out_w), mode="bilinear",
                                align_corners=False)
        out = branch1 * att[:, :, None, None]
        return FeatureMap(out[0] if features.planes.dim() == 3 else out, 1)


class StrokeCuesFilter(nn.Module):
    """Orthogonal multi-scale convs over OTA RGB gate the rough stroke cues."""

    def __init__(self, cue_channels: int = 32, scales: Sequence[int] = (3, 5, 7),
                 branch_channels: int = 8):
        super().__init__()
        self.orth = nn.ModuleList()
        for k in scales:
            self.orth.append(nn.Conv2d(3, branch_channels, (1, k),
                                       padding=(0, k // 2),
                                       padding_mode="replicate"))
            self.orth.append(nn.Conv2d(3, branch_channels, (k, 1),
                                       padding=(k // 2, 0),
                                       padding_mode="replicate"))
        self.att_proj = nn.Conv2d(branch_channels * 2 * len(scales), 1, 1)
        self.out_proj = nn.Conv2d(cue_channels, 1, 1)

    def forward(self, rough_cues: FeatureMap, ota_rgb: torch.Tensor,
                force_attention: Optional[torch.Tensor] = None) -> StrokeMap:
        cues = rough_cues.planes
        squeeze = cues.dim() == 3
        if squeeze:
            cues = cues[None]
        rgb = ota_rgb[None] if ota_rgb.dim() == 3 else ota_rgb
        if cues.shape[-2:] != rgb.shape[-2:]:
            raise ValueError(
                f"rough cues {tuple(cues.shape[-2:])} and RGB "
                f"{tuple(rgb.shape[-2:])} are not aligned")
        responses = torch.cat([conv(rgb) for conv in self.orth], dim=1)
        att = torch.sigmoid(self.att_proj(responses)) if force_attention is None \
            else force_attention
        merged = att * cues + cues
        values = torch.sigmoid(self.out_proj(merged))[:, 0]
        if squeeze:
            values = values[0]
        return StrokeMap(values=values, role=PREDICTED)


class Sapn(nn.Module):
    """Backbone + text head + stroke branch, evaluated per image."""

    def __init__(self, channels: int = 32, width: int = 32):
        super().__init__()
        self.backbone = Backbone(out_channels=channels)
        self.head = TextHead(in_channels=channels)
        self.tfd = TextFeatureDistiller(in_channels=channels, width=width)
        self.scf = StrokeCuesFilter(cue_channels=width)

    def forward(self, image: torch.Tensor) -> Tuple[HeadOutput, FeatureMap]:
        features = self.backbone(image)
        return self.head(features), features

    def stroke_crop(self, features: FeatureMap, image: torch.Tensor,
                    ota: Tuple[float, float, float, float]) -> StrokeMap:
        """Predicted stroke map over one OTA crop of a single image."""
        rough = self.tfd(features, ota)
        x0, y0, x1, y1 = (int(round(v)) for v in ota)
        img = image if image.dim() == 3 else image[0]
        rgb = img[:, y0:y0 + rough.planes.shape[-2], x0:x0 + rough.planes.shape[-1]]
        return self.scf(rough, rgb)

    def stroke_map_full(self, features: FeatureMap, image: torch.Tensor,
                        otas: List[Tuple[float, float, float, float]]) -> torch.Tensor:
        """Assemble per-OTA stroke crops into an image-wide plane (max blend)."""
        img = image if image.dim() == 3 else image[0]
        h, w = img.shape[-2:]
        full = torch.zeros(h, w, dtype=img.dtype, device=img.device)
        for ota in otas:
            crop = self.stroke_crop(features, image, ota)
            x0, y0 = int(round(ota[0])), int(round(ota[1]))
            ch, cw = crop.values.shape[-2:]
            y1, x1 = min(y0 + ch, h), min(x0 + cw, w)
            region = crop.values[:y1 - y0, :x1 - x0]
            full[y0:y1, x0:x1] = torch.maximum(full[y0:y1, x0:x1], region)
        return full
